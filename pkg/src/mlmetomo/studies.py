"""Reproducible study harnesses: qubit benchmark, photon-counting study, SH sweep.

Every harness is a deterministic function of its config. Independent cells
(a true state, a party) draw from their own generator derived from
``(seed, cell index)``, so results do not depend on the order cells run in.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import EngineConfig, reconstruct
from .measurement import (
    Dataset,
    Pom,
    hermitian_rank,
    random_complete_pom,
    random_imperfect_pom,
    simulate_counts,
)
from .operators import fidelity, pad_to, random_hs_state, random_unitary, trace_distance
from .quasiprob import PhaseSpaceGrid, QuasiProbSurface, nonclassicality_depth, wigner
from .shackhartmann import (
    ApertureArray,
    IntensityRecord,
    LgBasis,
    build_sensor_pom,
    hex_aperture_array,
    simulate_intensities,
    superposition_state,
)
from .tmd import (
    SplitterChain,
    cat_state,
    displaced_pom,
    laser_state,
    ring_alphas,
    tmd_pom,
    working_dim,
)


def cell_rng(seed: int, *index: int) -> np.random.Generator:
    """Generator for one study cell, independent of every other cell."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in index)))


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    err = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), err


@dataclass
class StudyReport:
    """Per-run records, aggregates derived from them, and the config that made them."""

    study: str
    config: dict
    seed: int
    records: list[dict]
    aggregates: dict
    # quasiprobability surfaces keyed by estimator; emitted as CSV, not JSON
    surfaces: dict[str, QuasiProbSurface] = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return _jsonable(
            {
                "study": self.study,
                "seed": self.seed,
                "config": self.config,
                "records": self.records,
                "aggregates": self.aggregates,
                "surfaces": sorted(self.surfaces),
            }
        )


def aggregate(study: str, records: list[dict]) -> dict:
    """Aggregates of a study, recomputed from its records alone."""
    if study == "qubit-benchmark":
        return _aggregate_benchmark(records)
    if study == "tmd":
        return _aggregate_tmd(records)
    if study == "sh-sweep":
        return _aggregate_sweep(records)
    raise ValueError(f"unknown study {study!r}")


# ---------------------------------------------------------------------------
# qubit benchmark


@dataclass(frozen=True)
class BenchmarkConfig:
    n_true_states: int = 50
    n_experiments_per_state: int = 20
    copies: int = 5000
    engine: EngineConfig = EngineConfig()
    rng_seed: int = 0
    # (ignore imperfection, account for it)
    modes: tuple[str, str] = ("perfect", "lossy")
    complete_poms: bool = False
    dim: int = 2
    n_outcomes: int = 2

    def __post_init__(self):
        if min(self.n_true_states, self.n_experiments_per_state, self.copies) < 1:
            raise ValueError("state, experiment and copy counts must be positive")


def run_qubit_benchmark(cfg: BenchmarkConfig) -> StudyReport:
    """Reconstruct every simulated run both ignoring and accounting for losses.

    Each true state gets its own random POM; the records hold the trace
    distance of every (state, run, mode) estimate.
    """
    records = []
    for s in range(cfg.n_true_states):
        rng = cell_rng(cfg.rng_seed, s)
        rho = random_hs_state(cfg.dim, rng)
        if cfg.complete_poms:
            pom = random_complete_pom(cfg.dim, cfg.n_outcomes, rng)
        else:
            pom = random_imperfect_pom(cfg.dim, cfg.n_outcomes, rng)
        for r in range(cfg.n_experiments_per_state):
            data = simulate_counts(rho, pom, cfg.copies, rng)
            if data.total == 0:
                continue
            for mode in cfg.modes:
                rep = reconstruct(data, pom, cfg.engine, mode=mode)
                records.append(
                    {
                        "state": s,
                        "run": r,
                        "mode": mode,
                        "trace_distance": trace_distance(rep.estimator, rho),
                        "converged": rep.converged,
                        "iterations": rep.iterations_used,
                    }
                )
    return StudyReport("qubit-benchmark", _jsonable(cfg), cfg.rng_seed, records, _aggregate_benchmark(records))


def _aggregate_benchmark(records: list[dict]) -> dict:
    modes = sorted({r["mode"] for r in records})
    states = sorted({r["state"] for r in records})
    per_state = {
        m: [float(np.mean([r["trace_distance"] for r in records if r["mode"] == m and r["state"] == s])) for s in states]
        for m in modes
    }
    out = {"states": states, "state_mean_trace_distance": per_state, "non_converged": sum(not r["converged"] for r in records)}
    for m in modes:
        out[f"mean_{m}"], out[f"stderr_{m}"] = _mean_stderr(per_state[m])
    if {"perfect", "lossy"} <= set(modes) and states:
        wins = [l < p for l, p in zip(per_state["lossy"], per_state["perfect"])]
        out["lossy_better_fraction"] = float(np.mean(wins))
    return out


# ---------------------------------------------------------------------------
# time-multiplexed photon counting


def default_chain() -> SplitterChain:
    """Four balanced output ports with 90% efficient detectors."""
    return SplitterChain((0.75, 2.0 / 3.0, 0.5, 0.5), (0.9, 0.9, 0.9, 0.9))


@dataclass(frozen=True)
class TmdStudyConfig:
    true_state: str = "laser"
    mu: float = 4.0
    alpha_prime: float = 5.0
    # truncation of the true state; None picks 20 (laser) or 110 (cat)
    true_dim: int | None = None
    chain: SplitterChain = field(default_factory=default_chain)
    alphas: tuple[complex, ...] = tuple(ring_alphas())
    d_rec_list: tuple[int, ...] = (5, 8, 11)
    copies: int = 100_000
    engine: EngineConfig = EngineConfig()
    rng_seed: int = 0
    # None picks -6:6:0.05 (laser) or -10:10:0.1 (cat)
    grid: str | None = None
    tau_tolerance: float = 1e-3
    # None picks 1e-9 (laser) or 1e-14 (cat: its negativities near tau = 1
    # are genuine but only ~1e-12 deep)
    negativity_floor: float | None = None
    include_truth: bool = True
    emit_surfaces: bool = True

    def __post_init__(self):
        if self.true_state not in ("laser", "cat"):
            raise ValueError("true_state must be 'laser' or 'cat'")
        if not self.d_rec_list or min(self.d_rec_list) < 1:
            raise ValueError("d_rec_list must hold positive dimensions")

    def resolved_true_dim(self) -> int:
        if self.true_dim is not None:
            return self.true_dim
        return 20 if self.true_state == "laser" else 110

    def resolved_floor(self) -> float:
        if self.negativity_floor is not None:
            return self.negativity_floor
        return 1e-9 if self.true_state == "laser" else 1e-14

    def resolved_grid(self) -> PhaseSpaceGrid:
        text = self.grid or ("-6:6:0.05" if self.true_state == "laser" else "-10:10:0.1")
        return PhaseSpaceGrid.parse(text)


def fringe_contrast(surface: QuasiProbSurface) -> float:
    """Peak-to-peak of the surface along the grid column nearest ``x = 0``.

    For a cat with real amplitude the interference fringes run along ``p``
    there.
    """
    i = int(np.argmin(np.abs(surface.grid.x_values)))
    col = surface.values[i]
    return float(col.max() - col.min())


def _true_state(cfg: TmdStudyConfig) -> np.ndarray:
    dim = cfg.resolved_true_dim()
    if cfg.true_state == "laser":
        return laser_state(cfg.mu, dim)
    return cat_state(cfg.alpha_prime, dim)


def run_tmd_study(cfg: TmdStudyConfig) -> StudyReport:
    """Simulate displaced click data once, reconstruct at each ``D_rec``.

    A reconstruction space is treated with plain ML when the displaced
    effects span its Hermitian operators, and with MLME (the engine's
    ``lam``) otherwise.
    """
    truth = _true_state(cfg)
    grid = cfg.resolved_grid()
    true_dim = truth.shape[0]
    d_work = max(working_dim(max(cfg.d_rec_list), cfg.alphas), true_dim)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = tmd_pom(cfg.chain, d_work)
        sim_pom = displaced_pom(base, cfg.alphas, d_work)
    rng = cell_rng(cfg.rng_seed, 0)
    data = simulate_counts(pad_to(truth, d_work), sim_pom, cfg.copies, rng)

    def depth(rho):
        return nonclassicality_depth(rho, grid, cfg.tau_tolerance, cfg.resolved_floor())

    records, surfaces = [], {}
    if cfg.include_truth:
        w = wigner(truth, grid)
        records.append(
            {"d_rec": None, "estimator": "truth", "tau": depth(truth), "fringe_contrast": fringe_contrast(w)}
        )
        if cfg.emit_surfaces:
            surfaces["truth"] = w
    for d in cfg.d_rec_list:
        pom = displaced_pom(base, cfg.alphas, d)
        complete = hermitian_rank(pom.effects) >= d * d
        engine = replace(cfg.engine, lam=0.0) if complete else cfg.engine
        rep = reconstruct(Dataset(data.counts, pom.labels), pom, engine, mode="lossy")
        w = wigner(rep.estimator, grid)
        big = max(d, true_dim)
        records.append(
            {
                "d_rec": d,
                "estimator": "ML" if complete else "MLME",
                "lam": engine.lam,
                "tau": depth(rep.estimator),
                "fringe_contrast": fringe_contrast(w),
                "trace_distance": trace_distance(pad_to(rep.estimator, big), pad_to(truth, big)),
                "g_deficit": float(1.0 - np.linalg.eigvalsh(pom.group_sum())[0]),
                "converged": rep.converged,
                "iterations": rep.iterations_used,
            }
        )
        if cfg.emit_surfaces:
            surfaces[f"D{d}"] = w
    report = StudyReport("tmd", _jsonable(cfg), cfg.rng_seed, records, _aggregate_tmd(records))
    report.surfaces.update(surfaces)
    return report


def _aggregate_tmd(records: list[dict]) -> dict:
    out = {"tau": {}, "fringe_contrast": {}}
    for r in records:
        key = "truth" if r["d_rec"] is None else str(r["d_rec"])
        out["tau"][key] = r["tau"]
        out["fringe_contrast"][key] = r["fringe_contrast"]
    return out


# ---------------------------------------------------------------------------
# Shack-Hartmann basis sweep


@dataclass(frozen=True)
class SweepConfig:
    n_parties: int = 50
    # inclusive range of orbital indices spanned by the party bases
    l_range: tuple[int, int] = (0, 7)
    d_sub_list: tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    rng_seed: int = 0
    engine: EngineConfig = EngineConfig(lam=1e-4)
    noise: float = 0.0
    effective_total: float = 1e4

    def __post_init__(self):
        lo, hi = self.l_range
        if lo < 0 or hi < lo:
            raise ValueError("l_range must be a nonnegative interval")
        span = hi - lo + 1
        if not self.d_sub_list or min(self.d_sub_list) < 1 or max(self.d_sub_list) > span:
            raise ValueError(f"d_sub_list must lie within 1..{span}")
        if self.n_parties < 1:
            raise ValueError("n_parties must be positive")


def run_sh_basis_sweep(
    cfg: SweepConfig,
    basis: LgBasis | None = None,
    array: ApertureArray | None = None,
    data: IntensityRecord | None = None,
) -> StudyReport:
    """Each party rotates the LG span by a Haar unitary and reconstructs on its first ``D_sub`` vectors.

    Without ``data``, intensities are simulated from the superposition state
    (with the configured relative noise). The estimate is embedded back into
    the full mode space and compared with the superposition state.
    """
    basis = basis or LgBasis()
    array = array or hex_aperture_array()
    spom = build_sensor_pom(basis, array)
    target = superposition_state(basis)
    if data is None:
        # the synthetic exposure uses the cell after the last party
        data = simulate_intensities(target, spom, cfg.noise, cell_rng(cfg.rng_seed, cfg.n_parties))
    dataset = data.to_dataset(spom, cfg.effective_total)
    lo, hi = cfg.l_range
    try:
        span = [basis.l_values.index(l) for l in range(lo, hi + 1)]
    except ValueError as exc:
        raise ValueError(f"basis does not contain every l in {cfg.l_range}") from exc

    records = []
    for party in range(cfg.n_parties):
        rng = cell_rng(cfg.rng_seed, party)
        u = np.zeros((basis.dim, len(span)), dtype=complex)
        u[span, :] = random_unitary(len(span), rng)
        for d in cfg.d_sub_list:
            v = u[:, :d]
            pom = spom.restricted(v)
            complete = hermitian_rank(pom.effects) >= d * d
            engine = replace(cfg.engine, lam=0.0) if complete else cfg.engine
            rep = reconstruct(dataset, pom, engine, mode="lossy")
            est = v @ rep.estimator @ v.conj().T
            records.append(
                {
                    "party": party,
                    "d_sub": d,
                    "estimator": "ML" if complete else "MLME",
                    "fidelity": fidelity(est, target),
                    "converged": rep.converged,
                    "iterations": rep.iterations_used,
                }
            )
    return StudyReport("sh-sweep", _jsonable(cfg), cfg.rng_seed, records, _aggregate_sweep(records))


def _aggregate_sweep(records: list[dict]) -> dict:
    out = {"mean_fidelity": {}, "stderr_fidelity": {}, "spread_fidelity": {}, "estimator": {}}
    for d in sorted({r["d_sub"] for r in records}):
        vals = [r["fidelity"] for r in records if r["d_sub"] == d]
        key = str(d)
        out["mean_fidelity"][key], out["stderr_fidelity"][key] = _mean_stderr(vals)
        out["spread_fidelity"][key] = float(np.std(vals))
        out["estimator"][key] = sorted({r["estimator"] for r in records if r["d_sub"] == d})
    return out

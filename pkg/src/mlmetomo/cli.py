"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 a
reconstruction did not converge and ``--strict`` was given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .engine import EngineConfig, lambda_sweep, reconstruct
from .measurement import (
    pom_from_json,
    pom_to_json,
    read_dataset_csv,
    simulate_counts,
    state_from_json,
    state_to_json,
    validate_pom,
    write_dataset_csv,
)
from .operators import density_matrix
from .quasiprob import PhaseSpaceGrid, nonclassicality_depth, r_function, wigner
from .shackhartmann import (
    ApertureArray,
    LgBasis,
    build_sensor_pom,
    hex_aperture_array,
    ingest_ccd_csv,
)
from .studies import (
    BenchmarkConfig,
    SweepConfig,
    TmdStudyConfig,
    default_chain,
    run_qubit_benchmark,
    run_sh_basis_sweep,
    run_tmd_study,
)
from .tmd import SplitterChain, displaced_pom, ring_alphas, tmd_pom, working_dim

log = logging.getLogger("mlmetomo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# shared helpers


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _engine_args(p: argparse.ArgumentParser, lam: float | None = None) -> None:
    d = EngineConfig()
    g = p.add_argument_group("engine")
    g.add_argument("--lambda", dest="lam", type=float, default=d.lam if lam is None else lam, help="entropy weight")
    g.add_argument("--epsilon", type=float, default=d.epsilon, help="base step size")
    g.add_argument("--max-iterations", type=int, default=d.max_iterations)
    g.add_argument("--tol", dest="gradient_tolerance", type=float, default=d.gradient_tolerance,
                   help="convergence threshold on ||rho r||_F")
    g.add_argument("--eigenvalue-floor", type=float, default=d.eigenvalue_floor)
    g.add_argument("--step-shrink", type=float, default=d.step_shrink)
    g.add_argument("--step-growth", type=float, default=d.step_growth,
                   help="step growth after an accepted step (1 = fixed step)")
    g.add_argument("--max-epsilon", type=float, default=d.max_epsilon)


def _engine_from(args) -> EngineConfig:
    return EngineConfig(**{f.name: getattr(args, f.name) for f in fields(EngineConfig)})


def _out_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, help="output directory (created if needed)")
    p.add_argument("--strict", action="store_true", help="exit 3 if a reconstruction did not converge")


class _Outputs:
    """Collects files written under ``--out`` and finishes with a manifest."""

    def __init__(self, out: Path | None, command: str, argv: list[str]):
        self.out, self.command, self.argv = out, command, argv
        self.files: list[str] = []
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, obj) -> None:
        if self.out is None:
            return
        (self.out / name).write_text(json.dumps(obj, indent=2) + "\n")
        self.files.append(name)

    def path(self, name: str) -> Path | None:
        if self.out is None:
            return None
        self.files.append(name)
        return self.out / name

    def finish(self, status: str) -> None:
        if self.out is None:
            return
        entries = []
        for name in self.files:
            digest = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
            entries.append({"name": name, "sha256": digest})
        manifest = {
            "tool": "mlmetomo",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "status": status,
            "files": entries,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _config_from(cls, path, overrides: dict):
    """Dataclass config from an optional JSON file, then explicit CLI overrides."""
    values = _load_json(path) if path else {}
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if isinstance(values.get("engine"), dict):
        values["engine"] = EngineConfig(**values["engine"])
    for key in ("d_rec_list", "d_sub_list", "l_range", "modes"):
        if key in values:
            values[key] = tuple(values[key])
    if "alphas" in values:
        values["alphas"] = tuple(complex(*a) if isinstance(a, list) else complex(a) for a in values["alphas"])
    if isinstance(values.get("chain"), dict):
        values["chain"] = SplitterChain.from_json(values["chain"])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def _read_alphas(path) -> list[complex]:
    raw = _load_json(path)
    return [complex(a[0], a[1]) for a in raw]


# ---------------------------------------------------------------------------
# subcommands


def cmd_reconstruct(args, out: _Outputs) -> int:
    pom = pom_from_json(_load_json(args.pom))
    data = read_dataset_csv(args.data)
    rho0 = density_matrix(state_from_json(_load_json(args.rho0))) if args.rho0 else None
    rep = reconstruct(data, pom, _engine_from(args), mode=args.mode, rho0=rho0)
    out.json("report.json", rep.to_json())
    out.json("estimator.json", state_to_json(rep.estimator))
    print(
        f"converged={rep.converged} iterations={rep.iterations_used} mode={rep.mode} "
        f"gradient_norm={rep.final_gradient_norm:.3e} loglik={rep.final_log_likelihood:.6g} "
        f"entropy={rep.final_entropy:.6g}"
    )
    return EXIT_NONCONVERGED if args.strict and not rep.converged else EXIT_OK


def cmd_validate_pom(args, out: _Outputs) -> int:
    pom = pom_from_json(_load_json(args.pom))
    rep = validate_pom(pom)
    obj = {
        "dim": pom.dim,
        "n_outcomes": pom.n_outcomes,
        "min_effect_eigenvalue": rep.min_effect_eigenvalue,
        "g_max_eigenvalue": rep.g_max_eigenvalue,
        "complete": rep.complete,
        "linearly_independent_count": rep.linearly_independent_count,
        "informationally_complete": rep.linearly_independent_count >= pom.dim**2,
    }
    out.json("report.json", obj)
    print(json.dumps(obj))
    return EXIT_OK


def cmd_simulate(args, out: _Outputs) -> int:
    rho = density_matrix(state_from_json(_load_json(args.state)))
    pom = pom_from_json(_load_json(args.pom))
    data = simulate_counts(rho, pom, args.copies, np.random.default_rng(args.seed))
    path = out.path("counts.csv")
    if path is None:
        print("label,count")
        for lab, c in zip(data.labels, data.counts):
            print(f"{lab},{c!r}")
    else:
        write_dataset_csv(data, path)
    return EXIT_OK


def cmd_tmd_pom(args, out: _Outputs) -> int:
    chain = SplitterChain.from_json(_load_json(args.chain)) if args.chain else default_chain()
    alphas = _read_alphas(args.alphas) if args.alphas else ring_alphas()
    d_work = args.d_work or working_dim(args.d_rec, alphas)
    if d_work < args.d_rec:
        raise ValueError("--d-work must not be below --d-rec")
    pom = displaced_pom(tmd_pom(chain, d_work), alphas, args.d_rec)
    out.json("pom.json", pom_to_json(pom))
    rep = validate_pom(pom)
    print(f"outcomes={pom.n_outcomes} dim={pom.dim} d_work={d_work} g_max={rep.g_max_eigenvalue:.6g} "
          f"independent={rep.linearly_independent_count}")
    return EXIT_OK


def _sh_geometry(args):
    basis = LgBasis(l_values=tuple(range(args.l_max + 1)))
    array = ApertureArray.from_json(_load_json(args.geometry)) if args.geometry else hex_aperture_array()
    return basis, array


def cmd_sh_pom(args, out: _Outputs) -> int:
    basis, array = _sh_geometry(args)
    ref = density_matrix(state_from_json(_load_json(args.reference))) if args.reference else None
    spom = build_sensor_pom(basis, array, ref)
    out.json("pom.json", pom_to_json(spom.pom))
    out.json("geometry.json", array.to_json())
    out.json(
        "pixels.json",
        [{"aperture": int(a), "pixel_x": int(x), "pixel_y": int(y)} for a, (x, y) in zip(spom.apertures, spom.pixels)],
    )
    rep = validate_pom(spom.pom)
    print(f"outcomes={spom.pom.n_outcomes} dim={spom.pom.dim} g_max={rep.g_max_eigenvalue:.6g} "
          f"independent={rep.linearly_independent_count}")
    return EXIT_OK


def cmd_wigner(args, out: _Outputs) -> int:
    rho = density_matrix(state_from_json(_load_json(args.state)))
    grid = PhaseSpaceGrid.parse(args.grid)
    surf = wigner(rho, grid) if args.tau == 0.5 else r_function(rho, grid, args.tau)
    path = out.path("surface.csv")
    if path is None:
        surf.to_csv(sys.stdout)
    else:
        surf.to_csv(path)
    print(f"min={np.nanmin(surf.values):.6g} max={np.nanmax(surf.values):.6g}", file=sys.stderr)
    return EXIT_OK


def cmd_depth(args, out: _Outputs) -> int:
    rho = density_matrix(state_from_json(_load_json(args.state)))
    tau = nonclassicality_depth(rho, PhaseSpaceGrid.parse(args.grid), args.tol, args.floor)
    out.json("report.json", {"tau": tau, "grid": args.grid, "tolerance": args.tol, "negativity_floor": args.floor})
    print(f"{tau:.6g}")
    return EXIT_OK


def _study_exit(report, args) -> int:
    bad = [r for r in report.records if r.get("converged") is False]
    if bad:
        log.warning("%d reconstruction(s) did not converge", len(bad))
    return EXIT_NONCONVERGED if args.strict and bad else EXIT_OK


def cmd_bench_qubit(args, out: _Outputs) -> int:
    cfg = _config_from(
        BenchmarkConfig,
        args.config,
        {
            "n_true_states": args.states,
            "n_experiments_per_state": args.runs,
            "copies": args.N,
            "rng_seed": args.seed,
            "complete_poms": True if args.complete else None,
            "engine": _engine_from(args) if args.config is None else None,
        },
    )
    report = run_qubit_benchmark(cfg)
    out.json("report.json", report.to_json())
    a = report.aggregates
    print(f"mean_trace_distance perfect={a['mean_perfect']:.4f} lossy={a['mean_lossy']:.4f} "
          f"lossy_better_fraction={a['lossy_better_fraction']:.3f}")
    return _study_exit(report, args)


def cmd_study_tmd(args, out: _Outputs) -> int:
    cfg = _config_from(
        TmdStudyConfig,
        args.config,
        {
            "true_state": args.state,
            "d_rec_list": tuple(args.d_rec) if args.d_rec else None,
            "copies": args.copies,
            "rng_seed": args.seed,
            "grid": args.grid,
            "chain": SplitterChain.from_json(_load_json(args.chain)) if args.chain else None,
            "alphas": tuple(_read_alphas(args.alphas)) if args.alphas else None,
            "engine": _engine_from(args) if args.config is None else None,
        },
    )
    report = run_tmd_study(cfg)
    out.json("report.json", report.to_json())
    for name, surf in report.surfaces.items():
        path = out.path(f"wigner_{name}.csv")
        if path is not None:
            surf.to_csv(path)
    for r in report.records:
        label = "truth" if r["d_rec"] is None else f"D_rec={r['d_rec']} {r['estimator']}"
        print(f"{label}: tau={r['tau']:.4f} fringe_contrast={r['fringe_contrast']:.4f}")
    return _study_exit(report, args)


def cmd_sweep_sh(args, out: _Outputs) -> int:
    engine = _engine_from(args) if args.config is None else None
    cfg = _config_from(
        SweepConfig,
        args.config,
        {
            "n_parties": args.parties,
            "d_sub_list": tuple(args.d_sub) if args.d_sub else None,
            "rng_seed": args.seed,
            "noise": args.noise,
            "engine": engine,
        },
    )
    basis, array = _sh_geometry(args)
    data = ingest_ccd_csv(args.data) if args.data else None
    report = run_sh_basis_sweep(cfg, basis, array, data)
    out.json("report.json", report.to_json())
    for d, m in report.aggregates["mean_fidelity"].items():
        est = "/".join(report.aggregates["estimator"][d])
        print(f"D_sub={d} {est}: mean fidelity {m:.4f} +- {report.aggregates['stderr_fidelity'][d]:.4f}")
    return _study_exit(report, args)


def cmd_lambda_sweep(args, out: _Outputs) -> int:
    pom = pom_from_json(_load_json(args.pom))
    data = read_dataset_csv(args.data)
    rows = lambda_sweep(data, pom, _engine_from(args), args.lambdas, mode=args.mode)
    out.json("report.json", [{"lambda": l, "entropy": s, "log_likelihood": ll} for l, s, ll in rows])
    for l, s, ll in rows:
        print(f"lambda={l:.3g} entropy={s:.6g} loglik={ll:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlmetomo", description="Maximum-likelihood maximum-entropy tomography toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("reconstruct", help="estimate a state from counts and a POM")
    s.add_argument("--pom", required=True)
    s.add_argument("--data", required=True, help="label,count CSV")
    s.add_argument("--mode", choices=("auto", "perfect", "lossy"), default="auto")
    s.add_argument("--rho0", help="starting state JSON (default: maximally mixed)")
    _engine_args(s)
    _out_args(s)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("validate-pom", help="check positivity, completeness and rank")
    s.add_argument("--pom", required=True)
    _out_args(s)
    s.set_defaults(func=cmd_validate_pom)

    s = sub.add_parser("simulate", help="draw multinomial counts")
    s.add_argument("--state", required=True)
    s.add_argument("--pom", required=True)
    s.add_argument("--copies", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    _out_args(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("tmd-pom", help="displaced click-pattern POM")
    s.add_argument("--chain", help="JSON {transmissions, efficiencies} (default: 4 balanced ports)")
    s.add_argument("--alphas", help="JSON list of [re, im] (default: two staggered rings)")
    s.add_argument("--d-rec", type=int, required=True)
    s.add_argument("--d-work", type=int)
    _out_args(s)
    s.set_defaults(func=cmd_tmd_pom)

    s = sub.add_parser("sh-pom", help="Shack-Hartmann sensor POM")
    s.add_argument("--geometry", help="JSON {apertures: [{cx, cy, r}], scale}")
    s.add_argument("--l-max", type=int, default=8)
    s.add_argument("--reference", help="state JSON selecting the kept pixels")
    _out_args(s)
    s.set_defaults(func=cmd_sh_pom)

    s = sub.add_parser("wigner", help="Wigner (tau = 1/2) or R-function surface")
    s.add_argument("--state", required=True)
    s.add_argument("--grid", default="-6:6:0.05", help="lo:hi:step")
    s.add_argument("--tau", type=float, default=0.5)
    _out_args(s)
    s.set_defaults(func=cmd_wigner)

    s = sub.add_parser("depth", help="nonclassicality depth")
    s.add_argument("--state", required=True)
    s.add_argument("--grid", default="-6:6:0.05", help="lo:hi:step")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--floor", type=float, default=1e-9, help="negativity tolerated as numerical noise")
    _out_args(s)
    s.set_defaults(func=cmd_depth)

    s = sub.add_parser("bench-qubit", help="lossy vs loss-ignoring qubit benchmark")
    s.add_argument("--config", help="JSON with BenchmarkConfig fields")
    s.add_argument("--states", type=int)
    s.add_argument("--runs", type=int)
    s.add_argument("--N", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--complete", action="store_true", help="use POMs with G = 1")
    _engine_args(s)
    _out_args(s)
    s.set_defaults(func=cmd_bench_qubit)

    s = sub.add_parser("study-tmd", help="photon-counting reconstruction study")
    s.add_argument("--config", help="JSON with TmdStudyConfig fields")
    s.add_argument("--state", choices=("laser", "cat"))
    s.add_argument("--d-rec", type=int, nargs="+")
    s.add_argument("--copies", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--grid")
    s.add_argument("--chain")
    s.add_argument("--alphas")
    _engine_args(s)
    _out_args(s)
    s.set_defaults(func=cmd_study_tmd)

    s = sub.add_parser("sweep-sh", help="Shack-Hartmann random-basis sweep")
    s.add_argument("--config", help="JSON with SweepConfig fields")
    s.add_argument("--parties", type=int)
    s.add_argument("--d-sub", type=int, nargs="+")
    s.add_argument("--seed", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--data", help="CCD CSV aperture,pixel_x,pixel_y,intensity (default: synthetic)")
    s.add_argument("--geometry")
    s.add_argument("--l-max", type=int, default=8)
    _engine_args(s, lam=SweepConfig().engine.lam)
    _out_args(s)
    s.set_defaults(func=cmd_sweep_sh)

    s = sub.add_parser("lambda-sweep", help="entropy and likelihood across entropy weights")
    s.add_argument("--pom", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--lambdas", type=float, nargs="+", required=True)
    s.add_argument("--mode", choices=("auto", "perfect", "lossy"), default="auto")
    _engine_args(s)
    _out_args(s)
    s.set_defaults(func=cmd_lambda_sweep)
    return p


def _attach_negative_values(argv: list[str]) -> list[str]:
    """Rewrite ``--grid -6:6:0.05`` as ``--grid=-6:6:0.05``.

    argparse would otherwise read a grid with a negative lower bound as an
    option flag.
    """
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--grid" and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"--grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_attach_negative_values(argv))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    out = _Outputs(getattr(args, "out", None), args.command, argv)
    try:
        code = args.func(args, out)
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        out.finish("error")
        return EXIT_DATA
    out.finish({EXIT_OK: "ok", EXIT_NONCONVERGED: "not converged"}.get(code, "error"))
    return code


if __name__ == "__main__":
    sys.exit(main())

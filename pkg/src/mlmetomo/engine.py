"""Joint maximum-likelihood / maximum-entropy (MLME) reconstruction.

The estimator maximizes

    I(rho) = sum_j f_j log(p_j / eta) + lam * S(rho)

over statistical operators, where ``eta = tr(rho G)`` is the detection
efficiency (``eta = 1`` for a POM without losses). The ascent uses the
congruence update

    rho <- (1 + eps r) rho (1 + eps r) / tr(...)

with the gradient operator ``r = R - G/eta - lam (log rho - tr(rho log rho))``
and ``R = sum_j (f_j / p_j) Pi_j``, so every iterate stays positive. A step
that lowers ``I`` is retried with a smaller ``eps``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
import scipy.linalg as la

from .measurement import Dataset, Pom, PomError, frequencies, matrix_to_json
from .operators import entropy_of_spectrum

log = logging.getLogger(__name__)

Mode = Literal["auto", "perfect", "lossy"]

PROBABILITY_FLOOR = 1e-14
# relative slack when comparing objectives of consecutive iterates
_ACCEPT_SLACK = 1e-14


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    """Solver knobs. ``lam`` is the entropy weight, ``epsilon`` the base step."""

    lam: float = 1e-3
    epsilon: float = 0.1
    max_iterations: int = 50_000
    gradient_tolerance: float = 1e-8
    eigenvalue_floor: float = 1e-12
    step_shrink: float = 0.5
    # step_growth = 1 restarts every iteration from ``epsilon``
    step_growth: float = 1.5
    max_epsilon: float = 1e3

    def __post_init__(self):
        if self.lam < 0:
            raise EngineError("lam must be nonnegative")
        if self.epsilon <= 0 or self.gradient_tolerance <= 0 or self.eigenvalue_floor <= 0:
            raise EngineError("epsilon, gradient_tolerance and eigenvalue_floor must be positive")
        if not 0 < self.step_shrink < 1:
            raise EngineError("step_shrink must lie in (0, 1)")
        if self.step_growth < 1:
            raise EngineError("step_growth must be >= 1")
        if self.max_iterations < 0:
            raise EngineError("max_iterations must be nonnegative")


@dataclass
class IterationState:
    rho: np.ndarray
    objective: float
    gradient_norm: float
    iteration: int
    eta: float = 1.0
    epsilon: float = 0.0
    step_cap: float = np.inf
    # cached spectrum of rho, ascending as returned by eigh
    eigenvalues: np.ndarray | None = field(default=None, repr=False)
    eigenvectors: np.ndarray | None = field(default=None, repr=False)
    gradient: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ReconstructionReport:
    estimator: np.ndarray
    converged: bool
    iterations_used: int
    final_gradient_norm: float
    final_log_likelihood: float
    final_entropy: float
    objective_trace: list[float]
    mode: str = "perfect"
    final_eta: float = 1.0
    floor_hits: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["estimator"] = {"dim": int(self.estimator.shape[0]), "matrix": matrix_to_json(self.estimator)}
        return d


# ---------------------------------------------------------------------------
# scalar functionals


def normalized_log_likelihood(f, p, eta: float = 1.0) -> float:
    """``sum_j f_j log(p_j / eta)``; ``-inf`` if an observed outcome has ``p_j <= 0``."""
    f = np.asarray(f, dtype=float)
    p = np.asarray(p, dtype=float)
    seen = f > 0
    if np.any(p[seen] <= 0):
        bad = np.flatnonzero(seen & (p <= 0))
        log.debug("state assigns zero probability to observed outcomes %s", bad.tolist())
        return -np.inf
    return float(np.sum(f[seen] * np.log(p[seen] / eta)))


def relative_entropy(f, p) -> float:
    """``sum_j f_j log(f_j / p_j)`` over the support of ``f``."""
    f = np.asarray(f, dtype=float)
    p = np.asarray(p, dtype=float)
    seen = f > 0
    if np.any(p[seen] <= 0):
        return np.inf
    return float(np.sum(f[seen] * np.log(f[seen] / p[seen])))


# ---------------------------------------------------------------------------
# operators


class _Problem:
    """Frequencies and effects flattened for fast repeated evaluation."""

    def __init__(self, f: np.ndarray, pom: Pom, mode: str):
        self.f = f
        self.dim = pom.dim
        self.mode = mode
        self.seen = np.flatnonzero(f > 0)
        self.f_seen = f[self.seen]
        # rows are conj(Pi_j) flattened so that rows @ vec(rho) = tr(rho Pi_j)
        self.rows = pom.effects.reshape(pom.n_outcomes, -1).conj()[self.seen]
        self.flat = pom.effects.reshape(pom.n_outcomes, -1)[self.seen]
        self.g = pom.group_sum()
        self.g_rows = self.g.reshape(-1).conj()
        self.floor_hits = 0

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.real(self.rows @ rho.reshape(-1))

    def eta(self, rho: np.ndarray) -> float:
        if self.mode != "lossy":
            return 1.0
        return float(np.real(self.g_rows @ rho.reshape(-1)))

    def log_likelihood(self, rho: np.ndarray, eta: float) -> float:
        p = self.probabilities(rho)
        if np.any(p <= 0):
            return -np.inf
        return float(np.dot(self.f_seen, np.log(p / eta)))

    def r_operator(self, rho: np.ndarray) -> np.ndarray:
        p = self.probabilities(rho)
        low = p < PROBABILITY_FLOOR
        if np.any(low):
            self.floor_hits += int(low.sum())
            p = np.maximum(p, PROBABILITY_FLOOR)
        return (self.f_seen / p @ self.flat).reshape(self.dim, self.dim)


def _gradient_operator(problem: _Problem, rho, vals, vecs, eta, cfg: EngineConfig) -> np.ndarray:
    r = problem.r_operator(rho)
    if problem.mode == "lossy":
        r = r - problem.g / eta
    else:
        r = r - np.eye(problem.dim)
    if cfg.lam:
        logs = np.log(np.maximum(vals, cfg.eigenvalue_floor))
        shift = float(np.dot(np.clip(vals, 0, None), logs))
        r = r - cfg.lam * ((vecs * (logs - shift)) @ vecs.conj().T)
    return 0.5 * (r + r.conj().T)


def r_operator(f, p, pom: Pom) -> np.ndarray:
    """``R = sum_j (f_j / p_j) Pi_j``, skipping outcomes with ``f_j = 0``."""
    f = np.asarray(f, dtype=float)
    p = np.asarray(p, dtype=float)
    seen = f > 0
    w = np.zeros_like(f)
    w[seen] = f[seen] / np.maximum(p[seen], PROBABILITY_FLOOR)
    r = np.tensordot(w, pom.effects, axes=1)
    return 0.5 * (r + r.conj().T)


def resolve_mode(pom: Pom, mode: Mode = "auto") -> str:
    if mode == "auto":
        return "perfect" if pom.is_complete() else "lossy"
    if mode not in ("perfect", "lossy"):
        raise EngineError(f"unknown mode {mode!r}")
    return mode


def script_r(rho, f, pom: Pom, config: EngineConfig = EngineConfig(), mode: Mode = "auto") -> np.ndarray:
    """The gradient operator whose product with ``rho`` vanishes at the optimum."""
    rho = np.asarray(rho, dtype=complex)
    problem = _Problem(np.asarray(f, dtype=float), pom, resolve_mode(pom, mode))
    vals, vecs = la.eigh(rho)
    eta = problem.eta(rho)
    if problem.mode == "lossy" and eta <= 1e-12:
        raise PomError(f"detection efficiency {eta:.3e}: no outcome can fire")
    return _gradient_operator(problem, rho, vals, vecs, eta, config)


# ---------------------------------------------------------------------------
# iteration


def _evaluate(problem: _Problem, rho: np.ndarray, cfg: EngineConfig):
    vals, vecs = la.eigh(rho)
    eta = problem.eta(rho)
    obj = problem.log_likelihood(rho, eta)
    if cfg.lam:
        obj += cfg.lam * entropy_of_spectrum(vals)
    return obj, eta, vals, vecs


def _make_state(problem: _Problem, rho: np.ndarray, cfg: EngineConfig, iteration: int = 0) -> IterationState:
    obj, eta, vals, vecs = _evaluate(problem, rho, cfg)
    r = _gradient_operator(problem, rho, vals, vecs, eta, cfg)
    return IterationState(
        rho=rho,
        objective=obj,
        gradient_norm=float(np.linalg.norm(rho @ r)),
        iteration=iteration,
        eta=eta,
        epsilon=cfg.epsilon,
        eigenvalues=vals,
        eigenvectors=vecs,
        gradient=r,
    )


def _step(problem: _Problem, state: IterationState, cfg: EngineConfig) -> tuple[IterationState, bool]:
    """One accepted ascent step; returns ``(new_state, moved)``."""
    rho = state.rho
    r = state.gradient
    if r is None:
        vals, vecs = la.eigh(rho)
        r = _gradient_operator(problem, rho, vals, vecs, state.eta, cfg)
    eps = state.epsilon or cfg.epsilon
    ident = np.eye(problem.dim)
    slack = _ACCEPT_SLACK * max(1.0, abs(state.objective))
    cap = min(state.step_cap, cfg.max_epsilon)
    while eps > cfg.epsilon * 1e-14:
        m = ident + eps * r
        cand = m @ rho @ m.conj().T
        tr = np.trace(cand).real
        assert tr > 0, "normalization trace must be positive"
        cand = cand / tr
        cand = 0.5 * (cand + cand.conj().T)
        obj, eta, c_vals, c_vecs = _evaluate(problem, cand, cfg)
        if obj >= state.objective - slack:
            r_new = _gradient_operator(problem, cand, c_vals, c_vecs, eta, cfg)
            nxt = IterationState(
                rho=cand,
                objective=obj,
                gradient_norm=float(np.linalg.norm(cand @ r_new)),
                iteration=state.iteration + 1,
                eta=eta,
                epsilon=min(eps * cfg.step_growth, cap) if cfg.step_growth > 1 else cfg.epsilon,
                step_cap=cap,
                eigenvalues=c_vals,
                eigenvectors=c_vecs,
                gradient=r_new,
            )
            return nxt, True
        # a rejected step size is never tried again, but the base step stays allowed
        cap = max(min(cap, eps * cfg.step_shrink), cfg.epsilon)
        eps *= cfg.step_shrink
    return state, False


def mlme_step(
    state: IterationState,
    f,
    pom: Pom,
    config: EngineConfig = EngineConfig(),
    mode: Mode = "auto",
) -> IterationState:
    """Advance ``state`` by one accepted step (unchanged if no step can ascend)."""
    problem = _Problem(np.asarray(f, dtype=float), pom, resolve_mode(pom, mode))
    if state.eigenvalues is None or not np.isfinite(state.objective):
        state = _make_state(problem, np.asarray(state.rho, dtype=complex), config, state.iteration)
    return _step(problem, state, config)[0]


def initial_state(f, pom: Pom, config: EngineConfig = EngineConfig(), mode: Mode = "auto", rho=None) -> IterationState:
    problem = _Problem(np.asarray(f, dtype=float), pom, resolve_mode(pom, mode))
    rho = np.eye(pom.dim, dtype=complex) / pom.dim if rho is None else np.asarray(rho, dtype=complex)
    return _make_state(problem, rho, config)


def reconstruct(
    data: Dataset,
    pom: Pom,
    config: EngineConfig = EngineConfig(),
    mode: Mode = "auto",
    rho0=None,
) -> ReconstructionReport:
    """MLME estimator for ``data`` measured with ``pom``.

    ``mode="auto"`` uses the lossy likelihood iff the effects do not sum to
    the identity; ``"perfect"`` forces the loss-unaware likelihood. The
    iteration starts from the maximally mixed state unless ``rho0`` is given.
    Non-convergence is reported, not raised.
    """
    if data.counts.size != pom.n_outcomes:
        raise EngineError(f"{data.counts.size} counts for {pom.n_outcomes} outcomes")
    f = frequencies(data)
    problem = _Problem(f, pom, resolve_mode(pom, mode))
    rho = np.eye(pom.dim, dtype=complex) / pom.dim if rho0 is None else np.asarray(rho0, dtype=complex)
    if problem.mode == "lossy" and problem.eta(rho) <= 1e-12:
        raise PomError("detection efficiency vanishes at the starting state")
    state = _make_state(problem, rho, config)
    trace = [state.objective]
    converged = state.gradient_norm <= config.gradient_tolerance
    while not converged and state.iteration < config.max_iterations:
        state, moved = _step(problem, state, config)
        if not moved:
            log.debug("step size underflow at iteration %d", state.iteration)
            break
        trace.append(state.objective)
        converged = state.gradient_norm <= config.gradient_tolerance
    vals = state.eigenvalues
    return ReconstructionReport(
        estimator=state.rho,
        converged=bool(converged),
        iterations_used=state.iteration,
        final_gradient_norm=state.gradient_norm,
        final_log_likelihood=problem.log_likelihood(state.rho, state.eta),
        final_entropy=entropy_of_spectrum(vals),
        objective_trace=trace,
        mode=problem.mode,
        final_eta=state.eta,
        floor_hits=problem.floor_hits,
    )


def lambda_sweep(
    data: Dataset,
    pom: Pom,
    base_config: EngineConfig,
    lambdas: Sequence[float],
    mode: Mode = "auto",
) -> list[tuple[float, float, float]]:
    """``(lam, entropy, log_likelihood)`` of the estimator for each weight, ascending in ``lam``."""
    if not len(lambdas):
        raise EngineError("lambda list is empty")
    out = []
    for lam in sorted(float(v) for v in lambdas):
        rep = reconstruct(data, pom, replace(base_config, lam=lam), mode)
        out.append((lam, rep.final_entropy, rep.final_log_likelihood))
    return out

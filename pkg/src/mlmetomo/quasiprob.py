"""Phase-space quasi-probabilities and the nonclassicality depth.

Conventions: a phase-space point is ``alpha = x + i p`` with dimensionless
quadratures, the Wigner function of the vacuum is ``2 exp(-(x^2 + p^2))`` and
integrates to ``2 pi``. ``R(x, p, tau)`` interpolates between the (smoothed)
Glauber-Sudarshan function at ``tau -> 0``, the Wigner function at
``tau = 1/2`` and the Husimi function at ``tau -> 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import gammaln

from .operators import OperatorError

# rescale the Laguerre recurrence whenever a value exceeds this magnitude
_RESCALE_AT = 1e150


class QuasiProbError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform rectangular grid of quadrature values."""

    x_values: np.ndarray
    p_values: np.ndarray

    def __post_init__(self):
        for name in ("x_values", "p_values"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or v.size < 1:
                raise QuasiProbError(f"{name} must be a nonempty 1-D array")
            if v.size > 1:
                d = np.diff(v)
                if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-6, atol=1e-12):
                    raise QuasiProbError(f"{name} must be strictly increasing and uniform")
            object.__setattr__(self, name, v)

    @classmethod
    def square(cls, lo: float, hi: float, step: float) -> "PhaseSpaceGrid":
        n = int(round((hi - lo) / step)) + 1
        v = np.linspace(lo, hi, n)
        return cls(v, v.copy())

    @classmethod
    def parse(cls, text: str) -> "PhaseSpaceGrid":
        """Parse ``"lo:hi:step"`` into a square grid."""
        try:
            lo, hi, step = (float(t) for t in text.split(":"))
        except ValueError as exc:
            raise QuasiProbError(f"grid spec must be lo:hi:step, got {text!r}") from exc
        return cls.square(lo, hi, step)

    @property
    def step(self) -> tuple[float, float]:
        dx = self.x_values[1] - self.x_values[0] if self.x_values.size > 1 else 0.0
        dp = self.p_values[1] - self.p_values[0] if self.p_values.size > 1 else 0.0
        return float(dx), float(dp)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x_values.size, self.p_values.size

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``(X, P)`` indexed ``[i_x, i_p]``."""
        return np.meshgrid(self.x_values, self.p_values, indexing="ij")


@dataclass(frozen=True)
class QuasiProbSurface:
    grid: PhaseSpaceGrid
    values: np.ndarray
    tau: float
    kind: Literal["wigner", "r_function"]

    def to_csv(self, path) -> None:
        x, p = self.grid.mesh()
        table = np.column_stack([x.ravel(), p.ravel(), self.values.ravel()])
        np.savetxt(path, table, delimiter=",", header="x,p,value", comments="")


def associated_laguerre(n: int, nu: int, y):
    """``L_n^{(nu)}(y)`` by the three-term recurrence in ``n``."""
    if n < 0 or nu < 0:
        raise ValueError("n and nu must be nonnegative")
    y = np.asarray(y, dtype=float)
    prev = np.ones_like(y)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = 1.0 + nu - y
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 + nu - y) * cur - (k + nu) * prev) / (k + 1)
    return cur if cur.ndim else float(cur)


def _hermitian_input(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise OperatorError(f"expected a square matrix, got shape {rho.shape}")
    return rho


def _surface_sum(rho: np.ndarray, x: np.ndarray, p: np.ndarray, tau: float) -> np.ndarray:
    """Real part of the double Fock sum for ``R(x, p, tau)``.

    Only ``m <= n`` terms are evaluated; the ``m > n`` terms are their complex
    conjugates for Hermitian ``rho``. Magnitudes are carried in log space so
    that large truncation dimensions and small ``tau`` do not overflow.
    """
    dim = rho.shape[0]
    r2 = x * x + p * p
    y = r2 / (2.0 * tau * (1.0 - tau))
    log_r = np.log(np.sqrt(r2), where=r2 > 0, out=np.full_like(r2, -np.inf))
    theta = np.arctan2(p, x)
    base = -r2 / (2.0 * tau) - np.log(tau)
    log_ratio = np.log((1.0 - tau) / tau)
    log_shift = np.log(np.sqrt(2.0) * (1.0 - tau))
    total = np.zeros_like(r2)
    for nu in range(dim):
        diag = np.diagonal(rho, offset=nu)
        if not np.any(diag):
            continue
        # Laguerre recurrence in j with a per-point log scale
        l_prev = np.zeros_like(y)
        l_cur = np.ones_like(y)
        scale = np.zeros_like(y)
        acc = np.zeros(y.shape, dtype=complex)
        for j in range(dim - nu):
            if j == 1:
                l_prev, l_cur = l_cur, (1.0 + nu - y) * l_cur
            elif j > 1:
                k = j - 1
                l_prev, l_cur = l_cur, ((2 * k + 1 + nu - y) * l_cur - (k + nu) * l_prev) / (k + 1)
            big = np.abs(l_cur) > _RESCALE_AT
            if np.any(big):
                l_cur = np.where(big, l_cur / _RESCALE_AT, l_cur)
                l_prev = np.where(big, l_prev / _RESCALE_AT, l_prev)
                scale = scale + np.where(big, np.log(_RESCALE_AT), 0.0)
            c = diag[j]
            if c == 0:
                continue
            log_c = (
                0.5 * (gammaln(j + 1) - gammaln(j + nu + 1))
                + (j + nu) * log_ratio
                - nu * log_shift
            )
            expo = base + log_c + scale
            if nu:
                expo = expo + nu * log_r
            with np.errstate(divide="ignore"):
                expo = expo + np.log(np.abs(l_cur))
            acc += ((-1) ** j * c) * np.sign(l_cur) * np.exp(expo)
        if nu == 0:
            total += acc.real
        else:
            total += 2.0 * np.real(acc * np.exp(1j * nu * theta))
    return total


def _surface(rho, grid: PhaseSpaceGrid, tau: float, kind) -> QuasiProbSurface:
    rho = _hermitian_input(rho)
    x, p = grid.mesh()
    anti = 0.5 * (rho - rho.conj().T)
    herm = rho - anti
    with np.errstate(over="ignore", invalid="ignore"):
        values = _surface_sum(herm, x, p, tau)
        if np.max(np.abs(anti)) > 1e-13:
            # the anti-Hermitian part is what would survive as an imaginary residue
            residue = np.max(np.abs(_surface_sum(-1j * anti, x, p, tau)))
            if residue > 1e-8 * max(1.0, float(np.max(np.abs(values)))):
                raise QuasiProbError(
                    f"quasi-probability has imaginary residue {residue:.3e}; rho is not Hermitian"
                )
    return QuasiProbSurface(grid, values, float(tau), kind)


def wigner(rho, grid: PhaseSpaceGrid) -> QuasiProbSurface:
    """Wigner function of a Fock-basis operator on ``grid``."""
    return _surface(rho, grid, 0.5, "wigner")


def r_function(rho, grid: PhaseSpaceGrid, tau: float) -> QuasiProbSurface:
    """The tau-interpolated quasi-probability ``R(x, p, tau)``, ``0 < tau < 1``."""
    if not 0.0 < tau < 1.0:
        raise QuasiProbError(f"tau must lie strictly inside (0, 1), got {tau}")
    return _surface(rho, grid, tau, "r_function")


def r_ss_closed_form(mu: float, grid: PhaseSpaceGrid, tau: float, n_max: int | None = None) -> QuasiProbSurface:
    """``R`` for the untruncated laser stationary state, by its single Fock sum.

    The series is cut at ``n_max`` (default: where the Poisson weight drops
    below 1e-18 relative to its peak).
    """
    if not 0.0 < tau < 1.0:
        raise QuasiProbError(f"tau must lie strictly inside (0, 1), got {tau}")
    if mu < 0:
        raise QuasiProbError("mu must be nonnegative")
    if n_max is None:
        n_max = int(np.ceil(mu + 12.0 * np.sqrt(mu) + 25))
    x, p = grid.mesh()
    r2 = x * x + p * p
    y = r2 / (2.0 * tau * (1.0 - tau))
    ratio = (1.0 - tau) / tau
    out = np.zeros_like(r2)
    prev = np.zeros_like(y)
    cur = np.ones_like(y)
    log_mu = np.log(mu) if mu > 0 else -np.inf
    for n in range(n_max + 1):
        if n == 1:
            prev, cur = cur, 1.0 - y
        elif n > 1:
            k = n - 1
            prev, cur = cur, ((2 * k + 1 - y) * cur - k * prev) / (k + 1)
        if n == 0:
            w = 1.0
        elif mu == 0:
            break
        else:
            w = np.exp(n * (log_mu + np.log(ratio)) - gammaln(n + 1))
        out += (-1) ** n * w * cur
    out *= np.exp(-r2 / (2.0 * tau) - mu) / tau
    return QuasiProbSurface(grid, out, float(tau), "r_function")


@dataclass(frozen=True)
class CoherentMixture:
    """A finite mixture of coherent states ``sum_i w_i |beta_i><beta_i|``.

    Its ``R`` function is a sum of positive Gaussians, available in closed
    form for every ``tau``; :meth:`density_matrix` gives the Fock truncation.
    """

    weights: tuple[float, ...]
    amplitudes: tuple[complex, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != np.shape(self.amplitudes) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise QuasiProbError("weights must be nonnegative, sum to 1 and match amplitudes")

    def density_matrix(self, dim: int) -> np.ndarray:
        from .tmd import coherent_ket

        rho = np.zeros((dim, dim), dtype=complex)
        for w, b in zip(self.weights, self.amplitudes):
            v = coherent_ket(b, dim)
            rho += w * np.outer(v, v.conj())
        return rho / np.trace(rho).real

    def r_surface(self, grid: PhaseSpaceGrid, tau: float) -> QuasiProbSurface:
        if not 0.0 < tau < 1.0:
            raise QuasiProbError(f"tau must lie strictly inside (0, 1), got {tau}")
        x, p = grid.mesh()
        out = np.zeros_like(x)
        for w, b in zip(self.weights, self.amplitudes):
            d2 = (x / np.sqrt(2) - b.real) ** 2 + (p / np.sqrt(2) - b.imag) ** 2
            out += w * np.exp(-d2 / tau) / tau
        return QuasiProbSurface(grid, out, float(tau), "r_function")

    def quadrature_spread(self) -> float:
        b = np.asarray(self.amplitudes)
        return float(np.sqrt(2.0) * np.max(np.abs(b)) + 1.0)


def quadrature_spread(rho) -> float:
    """Extent of the state in phase space: ``sqrt(2 <n> + 1)``, the rms radius."""
    rho = np.asarray(rho)
    n_mean = float(np.real(np.sum(np.arange(rho.shape[0]) * np.diagonal(rho))))
    return float(np.sqrt(2.0 * n_mean + 1.0))


def _check_coverage(grid: PhaseSpaceGrid, center_spread: float, n_sigma: float = 4.0) -> None:
    # vacuum quadrature sigma is 1/2 in these units
    need = center_spread + n_sigma * 0.5
    lo = min(abs(grid.x_values[0]), abs(grid.x_values[-1]), abs(grid.p_values[0]), abs(grid.p_values[-1]))
    if grid.x_values[0] > -need or grid.x_values[-1] < need or grid.p_values[0] > -need or grid.p_values[-1] < need:
        raise QuasiProbError(
            f"grid half-width {lo:.3g} does not cover the state (needs at least {need:.3g})"
        )


def nonclassicality_depth(
    state,
    grid: PhaseSpaceGrid,
    tau_tolerance: float = 1e-3,
    negativity_floor: float = 1e-9,
) -> float:
    """Smallest ``tau`` above which ``R(x, p, tau) >= 0`` on ``grid``, by bisection.

    ``state`` is a Fock-basis density matrix or any object exposing
    ``r_surface(grid, tau)`` (e.g. :class:`CoherentMixture`).
    """
    if hasattr(state, "r_surface"):
        surface = state.r_surface
        spread = state.quadrature_spread()
    else:
        rho = _hermitian_input(state)
        spread = quadrature_spread(rho)

        def surface(g, t):
            return r_function(rho, g, t)

    _check_coverage(grid, spread)

    def classical(t: float) -> bool:
        # overflowing surfaces come from exploding high-order Fock terms
        values = surface(grid, t).values
        return bool(np.all(np.isfinite(values))) and float(np.min(values)) >= -negativity_floor

    lo, hi = tau_tolerance, 1.0 - tau_tolerance
    if classical(lo):
        return 0.0
    if not classical(hi):
        return 1.0
    while hi - lo > tau_tolerance:
        mid = 0.5 * (lo + hi)
        if classical(mid):
            hi = mid
        else:
            lo = mid
    return hi

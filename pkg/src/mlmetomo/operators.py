"""Hermitian and positive-operator linear algebra.

Operators are plain complex ``numpy`` arrays. The helpers here validate and
symmetrize them, take spectral decompositions, and compute the scalar figures
of merit used throughout the package (entropy, trace distance, fidelity).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg as la

HERMITIAN_ATOL = 1e-12
DENSITY_ATOL = 1e-10


class OperatorError(ValueError):
    """Raised when an array is not a valid operator of the requested kind."""


class SpectralDecomposition(NamedTuple):
    """Eigenvalues (descending) and the unitary whose columns are eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def recompose(self, values: np.ndarray | None = None) -> np.ndarray:
        vals = self.eigenvalues if values is None else values
        u = self.eigenvectors
        return (u * vals) @ u.conj().T


def hermitize(a) -> np.ndarray:
    """Return ``(a + a^dagger) / 2`` as a complex array."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise OperatorError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise OperatorError("operator has non-finite entries")
    return 0.5 * (a + a.conj().T)


def density_matrix(a, atol: float = DENSITY_ATOL) -> np.ndarray:
    """Validate ``a`` as a statistical operator and return a Hermitian copy.

    Raises
    ------
    OperatorError
        If ``a`` is not Hermitian, has trace different from one, or has an
        eigenvalue below ``-atol``.
    """
    a = np.asarray(a, dtype=complex)
    h = hermitize(a)
    if np.max(np.abs(a - h), initial=0.0) > 1e-8:
        raise OperatorError("density matrix is not Hermitian")
    tr = np.trace(h).real
    if abs(tr - 1.0) > atol:
        raise OperatorError(f"density matrix has trace {tr!r}, expected 1")
    lo = la.eigvalsh(h)[0]
    if lo < -atol:
        raise OperatorError(f"density matrix has negative eigenvalue {lo:.3e}")
    return h


def spectral_decompose(h) -> SpectralDecomposition:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending."""
    raw = np.asarray(h, dtype=complex)
    h = hermitize(raw)
    if np.max(np.abs(raw - h), initial=0.0) > HERMITIAN_ATOL * max(1.0, np.max(np.abs(h), initial=0.0)):
        raise OperatorError("operator is not Hermitian")
    try:
        vals, vecs = la.eigh(h)
    except la.LinAlgError as exc:
        norm = np.linalg.norm(h)
        raise OperatorError(
            f"eigensolver failed to converge (Frobenius norm {norm:.3e})"
        ) from exc
    return SpectralDecomposition(vals[::-1].copy(), vecs[:, ::-1].copy())


def matrix_log_regularized(rho, floor: float = 1e-12) -> np.ndarray:
    """Matrix logarithm with eigenvalues clipped from below at ``floor``."""
    rho = np.asarray(rho)
    if not 0.0 < floor <= 1.0 / rho.shape[0]:
        raise OperatorError(f"floor must lie in (0, 1/dim], got {floor}")
    dec = spectral_decompose(rho)
    return dec.recompose(np.log(np.maximum(dec.eigenvalues, floor)))


def entropy_of_spectrum(vals: np.ndarray) -> float:
    """Shannon entropy (nats) of a nonnegative spectrum, ``0 log 0 = 0``."""
    v = np.clip(np.asarray(vals, dtype=float), 0.0, None)
    v = v[v > 0]
    return float(-np.sum(v * np.log(v)))


def von_neumann_entropy(rho) -> float:
    """``-tr(rho log rho)`` in nats."""
    s = entropy_of_spectrum(la.eigvalsh(hermitize(rho)))
    return min(max(s, 0.0), float(np.log(np.asarray(rho).shape[0])))


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise OperatorError(f"dimension mismatch: {a.shape} vs {b.shape}")


def trace_distance(a, b) -> float:
    """``tr|a - b| / 2`` for two operators of the same dimension."""
    a, b = np.asarray(a), np.asarray(b)
    _check_same_dim(a, b)
    return 0.5 * float(np.sum(np.abs(la.eigvalsh(hermitize(a - b)))))


def pad_to(a, dim: int) -> np.ndarray:
    """Embed ``a`` in the top-left corner of a ``dim x dim`` zero matrix."""
    a = np.asarray(a, dtype=complex)
    if a.shape[0] > dim:
        raise OperatorError(f"cannot pad a {a.shape[0]}-dim operator to {dim}")
    out = np.zeros((dim, dim), dtype=complex)
    out[: a.shape[0], : a.shape[1]] = a
    return out


def psd_sqrt(a) -> np.ndarray:
    dec = spectral_decompose(a)
    return dec.recompose(np.sqrt(np.clip(dec.eigenvalues, 0.0, None)))


def fidelity(a, b) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(a) b sqrt(a)))**2``.

    Operators of different dimension are compared after zero-padding the
    smaller one. For a pure ``b = |psi><psi|`` this equals ``<psi|a|psi>``.
    """
    a, b = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    dim = max(a.shape[0], b.shape[0])
    a, b = pad_to(a, dim), pad_to(b, dim)
    sa = psd_sqrt(a)
    vals = la.eigvalsh(hermitize(sa @ b @ sa))
    f = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


def purity(rho) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.vdot(rho, rho)))


def random_hs_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a state from the Hilbert-Schmidt ensemble, ``G G^dagger / tr``."""
    if dim < 1:
        raise OperatorError("dim must be positive")
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    return hermitize(rho / np.trace(rho).real)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def pure_state(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex).ravel()
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise OperatorError("cannot normalize a zero vector")
    v = v / norm
    return np.outer(v, v.conj())


def basis_projector(dim: int, k: int) -> np.ndarray:
    out = np.zeros((dim, dim), dtype=complex)
    out[k, k] = 1.0
    return out

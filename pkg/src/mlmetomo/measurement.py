"""Probability-operator measurements (POMs), count data and their simulation.

A :class:`Pom` holds an ordered stack of positive effects. Their sum ``G`` may
fall short of the identity, which models detection losses: the probability
that a copy is registered at all is then ``eta = tr(rho G) < 1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .operators import OperatorError, hermitize

POSITIVITY_ATOL = 1e-8
COMPLETENESS_ATOL = 1e-8
FORMAT_VERSION = 1


class PomError(ValueError):
    """Invalid POM, dataset, or probability vector."""


@dataclass(frozen=True)
class Pom:
    """Ordered effects ``Pi_j`` of shape ``(n_outcomes, dim, dim)``."""

    effects: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        e = np.asarray(self.effects, dtype=complex)
        if e.ndim == 2:
            e = e[None]
        if e.ndim != 3 or e.shape[1] != e.shape[2] or e.shape[0] < 1:
            raise PomError(f"effects must have shape (n, dim, dim), got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise PomError("effects contain non-finite entries")
        e = 0.5 * (e + np.conj(np.swapaxes(e, 1, 2)))
        e.setflags(write=False)
        object.__setattr__(self, "effects", e)
        labels = tuple(self.labels) or tuple(str(j) for j in range(e.shape[0]))
        if len(labels) != e.shape[0]:
            raise PomError(f"{len(labels)} labels for {e.shape[0]} effects")
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.effects.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.effects.shape[0]

    def group_sum(self) -> np.ndarray:
        return self.effects.sum(axis=0)

    def is_complete(self, atol: float = COMPLETENESS_ATOL) -> bool:
        """True iff the effects sum to the identity (no detection loss)."""
        return bool(np.linalg.norm(self.group_sum() - np.eye(self.dim)) < atol)

    def restrict(self, basis: np.ndarray) -> "Pom":
        """Compress every effect onto the span of the columns of ``basis``."""
        v = np.asarray(basis, dtype=complex)
        return Pom(np.einsum("ai,jab,bk->jik", v.conj(), self.effects, v), self.labels)

    def truncate(self, dim: int) -> "Pom":
        """Keep the top-left ``dim x dim`` block of every effect."""
        return Pom(self.effects[:, :dim, :dim], self.labels)


@dataclass(frozen=True)
class PomValidationReport:
    min_effect_eigenvalue: float
    g_max_eigenvalue: float
    complete: bool
    linearly_independent_count: int


@dataclass(frozen=True)
class Dataset:
    """Nonnegative outcome weights ``n_j`` (counts or intensities)."""

    counts: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float).ravel()
        if np.any(~np.isfinite(c)) or np.any(c < 0):
            raise PomError("counts must be finite and nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        labels = tuple(self.labels) or tuple(str(j) for j in range(c.size))
        if len(labels) != c.size:
            raise PomError(f"{len(labels)} labels for {c.size} counts")
        object.__setattr__(self, "labels", labels)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def scaled(self, factor: float) -> "Dataset":
        return Dataset(self.counts * factor, self.labels)


def hermitian_rank(ops: np.ndarray, tol: float = 1e-9) -> int:
    """Rank of a stack of Hermitian operators as vectors in real ``dim^2`` space."""
    ops = np.asarray(ops, dtype=complex)
    vecs = ops.reshape(ops.shape[0], -1)
    real = np.concatenate([vecs.real, vecs.imag], axis=1)
    s = la.svdvals(real)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def validate_pom(pom: Pom) -> PomValidationReport:
    """Check positivity of every effect and summarize ``G`` and the rank."""
    mins = np.array([la.eigvalsh(e)[0] for e in pom.effects])
    worst = int(np.argmin(mins))
    if mins[worst] < -POSITIVITY_ATOL:
        raise PomError(
            f"effect {pom.labels[worst]!r} has negative eigenvalue {mins[worst]:.3e}"
        )
    g_max = float(la.eigvalsh(hermitize(pom.group_sum()))[-1])
    return PomValidationReport(
        min_effect_eigenvalue=float(mins[worst]),
        g_max_eigenvalue=g_max,
        complete=pom.is_complete(),
        linearly_independent_count=hermitian_rank(pom.effects),
    )


def _check_dims(rho: np.ndarray, pom: Pom) -> None:
    if rho.shape != (pom.dim, pom.dim):
        raise PomError(f"state of shape {rho.shape} does not match POM dim {pom.dim}")


def probabilities(rho, pom: Pom) -> np.ndarray:
    """Outcome probabilities ``tr(rho Pi_j)``, clamped at zero."""
    rho = np.asarray(rho, dtype=complex)
    _check_dims(rho, pom)
    # tr(rho Pi) = sum_ab rho_ab conj(Pi_ab) for Hermitian Pi
    p = np.real(pom.effects.reshape(pom.n_outcomes, -1).conj() @ rho.ravel())
    return np.clip(p, 0.0, None)


def detection_efficiency(rho, pom: Pom) -> float:
    """``eta = sum_j tr(rho Pi_j) = tr(rho G)``."""
    eta = float(np.sum(probabilities(rho, pom)))
    if eta <= 1e-12:
        raise PomError(f"detection efficiency {eta:.3e}: no outcome can fire")
    return eta


def estimate_total_copies(detected: float, eta: float) -> float:
    """Most-likely number of copies sent, given ``detected`` registered ones."""
    if eta <= 0:
        raise PomError("eta must be positive")
    return detected / eta


def simulate_counts(rho, pom: Pom, copies: int, rng: np.random.Generator) -> Dataset:
    """One multinomial draw of ``copies`` copies; undetected copies are dropped.

    Concurrent simulations must each use their own generator.
    """
    rho = np.asarray(rho, dtype=complex)
    _check_dims(rho, pom)
    raw = np.real(pom.effects.reshape(pom.n_outcomes, -1).conj() @ rho.ravel())
    if np.any(raw < -1e-9):
        raise PomError(f"negative outcome probability {raw.min():.3e}")
    p = np.clip(raw, 0.0, None)
    loss = max(0.0, 1.0 - p.sum())
    probs = np.append(p, loss)
    probs /= probs.sum()
    n = rng.multinomial(int(copies), probs)
    return Dataset(n[:-1].astype(float), pom.labels)


def random_imperfect_pom(
    dim: int,
    n_outcomes: int,
    rng: np.random.Generator,
    efficiency_range: tuple[float, float] = (0.5, 0.95),
) -> Pom:
    """Random lossy POM of Wishart effects ``B_j^dagger B_j``.

    The effects are rescaled jointly so that the largest eigenvalue of their
    sum is drawn uniformly from ``efficiency_range``.
    """
    if n_outcomes < 1:
        raise PomError("n_outcomes must be positive")
    b = rng.standard_normal((n_outcomes, dim, dim)) + 1j * rng.standard_normal((n_outcomes, dim, dim))
    effects = np.conj(np.swapaxes(b, 1, 2)) @ b
    g_max = la.eigvalsh(hermitize(effects.sum(axis=0)))[-1]
    target = rng.uniform(*efficiency_range)
    return Pom(effects * (target / g_max))


def random_complete_pom(dim: int, n_outcomes: int, rng: np.random.Generator) -> Pom:
    """Random POM with ``G = 1``: Wishart effects conjugated by ``G^{-1/2}``."""
    if n_outcomes < 1:
        raise PomError("n_outcomes must be positive")
    b = rng.standard_normal((n_outcomes, dim, dim)) + 1j * rng.standard_normal((n_outcomes, dim, dim))
    effects = np.conj(np.swapaxes(b, 1, 2)) @ b
    vals, vecs = la.eigh(hermitize(effects.sum(axis=0)))
    w = (vecs / np.sqrt(vals)) @ vecs.conj().T
    return Pom(w @ effects @ w)


def frequencies(data: Dataset) -> np.ndarray:
    total = data.counts.sum()
    if total <= 0:
        raise PomError("dataset has no counts")
    return data.counts / total


# ---------------------------------------------------------------------------
# file formats


def matrix_to_json(m) -> list:
    """Nested row-major list of ``[re, im]`` pairs."""
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def matrix_from_json(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise PomError("matrix must be a nested list of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def state_to_json(rho) -> dict:
    rho = np.asarray(rho, dtype=complex)
    return {"format_version": FORMAT_VERSION, "dim": rho.shape[0], "matrix": matrix_to_json(rho)}


def state_from_json(obj: dict) -> np.ndarray:
    m = matrix_from_json(obj["matrix"])
    if m.shape != (obj["dim"], obj["dim"]):
        raise PomError(f"matrix shape {m.shape} does not match dim {obj['dim']}")
    return m


def pom_to_json(pom: Pom) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dim": pom.dim,
        "effects": [
            {"label": lab, "matrix": matrix_to_json(e)} for lab, e in zip(pom.labels, pom.effects)
        ],
    }


def pom_from_json(obj: dict) -> Pom:
    if obj.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise PomError(f"unsupported POM format_version {obj.get('format_version')}")
    effects = [matrix_from_json(e["matrix"]) for e in obj["effects"]]
    if not effects:
        raise PomError("POM has no effects")
    pom = Pom(np.array(effects), tuple(e["label"] for e in obj["effects"]))
    if pom.dim != obj["dim"]:
        raise PomError(f"effects have dim {pom.dim}, file says {obj['dim']}")
    return pom


def write_dataset_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["label", "count"])
        for lab, n in zip(data.labels, data.counts):
            w.writerow([lab, repr(float(n))])


def read_dataset_csv(path) -> Dataset:
    """Read a ``label,count`` CSV; a leading ``# format_version=`` line is optional.

    Errors name the offending line of the file (1-based).
    """
    labels, counts = [], []
    with open(Path(path), newline="") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, start=1) if ln.strip()]
    if lines and lines[0][1].startswith("#"):
        version = lines[0][1].lstrip("#").strip().partition("=")[2]
        if version and version.strip() != str(FORMAT_VERSION):
            raise PomError(f"unsupported dataset format_version {version.strip()}")
        lines = lines[1:]
    if not lines or [h.strip() for h in next(csv.reader([lines[0][1]]))] != ["label", "count"]:
        raise PomError("dataset CSV must start with header 'label,count'")
    for lineno, text in lines[1:]:
        row = next(csv.reader([text]))
        if len(row) != 2:
            raise PomError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            value = float(row[1])
        except ValueError as exc:
            raise PomError(f"line {lineno}: bad count {row[1]!r}") from exc
        if not np.isfinite(value) or value < 0:
            raise PomError(f"line {lineno}: count must be finite and nonnegative, got {row[1]!r}")
        counts.append(value)
        labels.append(row[0].strip())
    return Dataset(np.array(counts), tuple(labels))

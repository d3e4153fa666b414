"""Time-multiplexed photon counting: click POMs, displacements, test states.

A pulse is split by a chain of beam splitters onto ``K + 1`` binary
detectors. Each photon independently ends up clicking port ``k`` with the
overall port efficiency ``eta_k`` (or is lost), so a click pattern ``S``
(the set of ports that fired) has probability ``c[S, n]`` for ``n`` photons
and the resulting effects are diagonal in the Fock basis.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .measurement import Pom
from .quasiprob import associated_laguerre

MAX_PORTS = 16


@dataclass(frozen=True)
class SplitterChain:
    transmissions: tuple[float, ...]
    detector_efficiencies: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(v) for v in self.transmissions)
        e = tuple(float(v) for v in self.detector_efficiencies)
        if len(t) != len(e) or not t:
            raise ValueError("transmissions and efficiencies need the same nonzero length")
        if any(not 0.0 <= v <= 1.0 for v in t + e):
            raise ValueError("transmissions and efficiencies must lie in [0, 1]")
        object.__setattr__(self, "transmissions", t)
        object.__setattr__(self, "detector_efficiencies", e)

    @property
    def n_ports(self) -> int:
        return len(self.transmissions)

    @classmethod
    def from_json(cls, obj: dict) -> "SplitterChain":
        # also accept the field name, as echoed in study reports
        eff = obj.get("efficiencies", obj.get("detector_efficiencies"))
        if "transmissions" not in obj or eff is None:
            raise ValueError("splitter chain JSON needs 'transmissions' and 'efficiencies'")
        return cls(tuple(obj["transmissions"]), tuple(eff))

    def to_json(self) -> dict:
        return {"transmissions": list(self.transmissions), "efficiencies": list(self.detector_efficiencies)}


def port_efficiencies(chain: SplitterChain) -> np.ndarray:
    """Overall probability that a photon is detected at each port.

    Port ``k`` reflects the light reaching it (``1 - T_k``); the last port
    additionally collects the light transmitted by the final splitter.
    """
    t = np.asarray(chain.transmissions)
    eta = np.asarray(chain.detector_efficiencies)
    last = chain.n_ports - 1
    out = np.empty(chain.n_ports)
    for k in range(chain.n_ports):
        kept = 1.0 - t[k] + (t[last] if k == last else 0.0)
        out[k] = eta[k] * kept * np.prod(t[:k])
    return out


def _pattern_mask(pattern) -> tuple[bool, ...]:
    return tuple(bool(b) for b in pattern)


def click_coefficients(etas, pattern, n: int) -> float:
    """Probability that exactly the ports in ``pattern`` click for ``n`` photons.

    Inclusion-exclusion over subsets ``T`` of the fired set ``S``:
    ``sum_T (-1)^{|S - T|} (1 - sum_{k not in T} eta_k)^n``.
    """
    etas = np.asarray(etas, dtype=float)
    fired = np.flatnonzero(_pattern_mask(pattern))
    if len(_pattern_mask(pattern)) != etas.size:
        raise ValueError("pattern length must equal the number of ports")
    total = 0.0
    for r in range(fired.size + 1):
        for sub in itertools.combinations(fired, r):
            miss = etas.sum() - etas[list(sub)].sum()
            total += (-1) ** (fired.size - r) * max(1.0 - miss, 0.0) ** n
    return float(min(max(total, 0.0), 1.0))


def click_table(etas, n_max: int) -> tuple[list[tuple[bool, ...]], np.ndarray]:
    """All ``2^K`` patterns and the matrix ``c[pattern, n]`` for ``n <= n_max``.

    Patterns are ordered as binary numbers with port 0 the least significant
    bit, so the all-silent pattern comes first.
    """
    etas = np.asarray(etas, dtype=float)
    k = etas.size
    if k > MAX_PORTS:
        raise ValueError(f"at most {MAX_PORTS} ports are supported")
    patterns = [tuple(bool((idx >> b) & 1) for b in range(k)) for idx in range(2**k)]
    n = np.arange(n_max + 1)
    # q[T] = (1 - sum_{k not in T} eta_k)^n for every subset T
    miss = np.array([etas.sum() - etas[list(p)].sum() if any(p) else etas.sum() for p in patterns])
    q = np.clip(1.0 - miss, 0.0, None)[:, None] ** n[None, :]
    table = np.zeros((2**k, n_max + 1))
    for s_idx in range(2**k):
        # subsets T of S enumerated by the standard submask walk
        t_idx = s_idx
        while True:
            sign = -1.0 if (bin(s_idx).count("1") - bin(t_idx).count("1")) % 2 else 1.0
            table[s_idx] += sign * q[t_idx]
            if t_idx == 0:
                break
            t_idx = (t_idx - 1) & s_idx
    return patterns, np.clip(table, 0.0, 1.0)


def pattern_label(pattern) -> str:
    return "".join("1" if b else "0" for b in pattern)


def tmd_pom(chain: SplitterChain, fock_dim: int) -> Pom:
    """Fock-diagonal click-pattern POM on a ``fock_dim``-dimensional space."""
    etas = port_efficiencies(chain)
    patterns, table = click_table(etas, fock_dim - 1)
    effects = np.zeros((len(patterns), fock_dim, fock_dim), dtype=complex)
    idx = np.arange(fock_dim)
    effects[:, idx, idx] = table
    return Pom(effects, tuple(pattern_label(p) for p in patterns))


def displacement_matrix(alpha: complex, fock_dim: int) -> np.ndarray:
    """Matrix of ``exp(alpha a^dagger - alpha* a)`` from the closed Laguerre form.

    Entries are exact for the infinite-dimensional operator; the truncated
    matrix is only close to unitary on the low-photon block.
    """
    alpha = complex(alpha)
    a2 = abs(alpha) ** 2
    if a2 > 0 and fock_dim < 4 * a2 + 20:
        warnings.warn(
            f"fock_dim {fock_dim} is small for |alpha|^2 = {a2:.3g}; displacement is inaccurate",
            stacklevel=2,
        )
    out = np.zeros((fock_dim, fock_dim), dtype=complex)
    if a2 == 0:
        return np.eye(fock_dim, dtype=complex)
    log_a = np.log(abs(alpha))
    phase = alpha / abs(alpha)
    for n in range(fock_dim):
        for m in range(n, fock_dim):
            k = m - n
            lag = associated_laguerre(n, k, a2)
            mag = np.exp(0.5 * (gammaln(n + 1) - gammaln(m + 1)) + k * log_a - 0.5 * a2)
            out[m, n] = mag * phase**k * lag
            if k:
                # <n|D|m> = conj(<m|D(-alpha)|n>) = (-1)^k conj(<m|D|n>)
                out[n, m] = (-1) ** k * np.conj(out[m, n])
    return out


def displaced_pom(base: Pom, alphas, reconstruction_dim: int) -> Pom:
    """Displace every base effect by each ``alpha``, weight ``1/len(alphas)``, truncate.

    Displacement is carried out in the base POM's (working) dimension; the
    truncation to ``reconstruction_dim`` leaks a small part of ``G``.
    """
    alphas = [complex(a) for a in alphas]
    if not alphas:
        raise ValueError("need at least one displacement")
    if reconstruction_dim > base.dim:
        raise ValueError("reconstruction_dim exceeds the working dimension")
    w = 1.0 / len(alphas)
    effects, labels = [], []
    for k, a in enumerate(alphas):
        d = displacement_matrix(a, base.dim)
        disp = d @ base.effects @ d.conj().T
        effects.append(w * disp[:, :reconstruction_dim, :reconstruction_dim])
        labels.extend(f"a{k}:{lab}" for lab in base.labels)
    return Pom(np.concatenate(effects), tuple(labels))


def truncation_leakage(base: Pom, alphas, reconstruction_dim: int) -> float:
    """Trace of the displaced group sum that truncation to ``reconstruction_dim`` discards.

    Measured against the displaced POM on the full working space; it falls
    monotonically to zero as ``reconstruction_dim`` reaches ``base.dim``.
    """
    full = displaced_pom(base, alphas, base.dim).group_sum()
    diag = np.real(np.diagonal(full))
    return float(diag[reconstruction_dim:].sum())


def working_dim(reconstruction_dim: int, alphas) -> int:
    a_max = max((abs(complex(a)) for a in alphas), default=0.0)
    return int(max(reconstruction_dim + 20, np.ceil(4 * a_max**2) + 20))


def ring_alphas(radii=(1.0, 2.5), points: int = 8, stagger: float = 0.5) -> list[complex]:
    """Displacements on concentric rings, ``points`` per ring.

    Ring ``i`` is rotated by ``i * stagger * pi / points``. Aligned rings of
    ``points`` samples see ``exp(i d theta)`` as real for ``d = points / 2``
    and its multiples, which leaves the imaginary parts of those coherences
    unmeasured; staggering the rings removes that blind spot.
    """
    out = []
    for i, r in enumerate(radii):
        phase = i * stagger * np.pi / points
        out.extend(r * np.exp(1j * (phase + 2 * np.pi * np.arange(points) / points)))
    return [complex(a) for a in out]


def coherent_ket(beta: complex, dim: int) -> np.ndarray:
    """Fock amplitudes ``exp(-|beta|^2/2) beta^n / sqrt(n!)``, not renormalized."""
    beta = complex(beta)
    n = np.arange(dim)
    if beta == 0:
        v = np.zeros(dim, dtype=complex)
        v[0] = 1.0
        return v
    mag = np.exp(-0.5 * abs(beta) ** 2 + n * np.log(abs(beta)) - 0.5 * gammaln(n + 1))
    return mag * (beta / abs(beta)) ** n


def laser_state(mu: float, dim: int) -> np.ndarray:
    """Poissonian photon-number mixture, renormalized on the truncated space."""
    if dim < 1 or mu < 0:
        raise ValueError("need dim >= 1 and mu >= 0")
    n = np.arange(dim)
    if mu == 0:
        w = (n == 0).astype(float)
    else:
        w = np.exp(n * np.log(mu) - mu - gammaln(n + 1))
    return np.diag(w / w.sum()).astype(complex)


def cat_state(alpha: complex, dim: int) -> np.ndarray:
    """Even cat ``|alpha> + |-alpha>``, normalized after truncation."""
    v = coherent_ket(alpha, dim) + coherent_ket(-complex(alpha), dim)
    v[1::2] = 0.0
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())

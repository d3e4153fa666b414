"""Shack-Hartmann sensor as a tomographic measurement of a coherence operator.

Modes of a beam are sampled on a Cartesian aperture-plane grid. Each
microlens masks the beam with its (disk) aperture and maps it to its own
focal spot by a Fraunhofer transform taken about the lens center. One pixel
per spot is kept, so every outcome is a rank-one effect ``|u><u|`` with
``u_n = conj(psi'_n(pixel))``; the kept pixels carry only part of the light,
hence ``G < 1``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .measurement import Dataset, Pom
from .operators import pure_state


class SensorError(ValueError):
    pass


@dataclass(frozen=True)
class LgBasis:
    """Radial-node-free Laguerre-Gaussian modes ``s^l exp(i l phi) exp(-s^2)``.

    ``s`` is the radius in units of ``waist``; the modes are sampled on a
    ``n_samples x n_samples`` grid spanning ``[-half_width, half_width]^2``.
    """

    l_values: tuple[int, ...] = tuple(range(9))
    waist: float = 1.0
    half_width: float = 4.8
    n_samples: int = 192

    def __post_init__(self):
        ls = tuple(int(v) for v in self.l_values)
        if len(set(ls)) != len(ls) or any(v < 0 for v in ls):
            raise SensorError("l_values must be distinct and nonnegative")
        object.__setattr__(self, "l_values", ls)

    @property
    def dim(self) -> int:
        return len(self.l_values)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n_samples

    def axis(self) -> np.ndarray:
        # cell centers, symmetric about the origin
        return (np.arange(self.n_samples) + 0.5) * self.spacing - self.half_width

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.axis()
        return np.meshgrid(a, a, indexing="xy")

    def fields(self) -> np.ndarray:
        """All modes, shape ``(dim, n_samples, n_samples)``."""
        return np.stack([lg_mode_field(l, self) for l in self.l_values])


def lg_mode_field(l: int, basis: LgBasis) -> np.ndarray:
    """Mode ``l`` sampled on the basis grid, unit norm under grid quadrature."""
    if l < 0:
        raise SensorError("l must be nonnegative")
    x, y = basis.mesh()
    s = np.hypot(x, y) / basis.waist
    phi = np.arctan2(y, x)
    f = s**l * np.exp(1j * l * phi) * np.exp(-(s**2))
    norm = np.sqrt(np.sum(np.abs(f) ** 2) * basis.spacing**2)
    return f / norm


@dataclass(frozen=True)
class ApertureArray:
    """Disjoint circular microlens apertures in aperture-plane units.

    ``scale`` converts focal-plane spatial frequency to focal-plane position
    (it plays the role of wavelength times focal length).
    """

    centers: np.ndarray
    radii: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        r = np.broadcast_to(np.asarray(self.radii, dtype=float), (c.shape[0],)).copy()
        if np.any(r <= 0):
            raise SensorError("aperture radii must be positive")
        d = np.hypot(*(c[:, None, :] - c[None, :, :]).transpose(2, 0, 1))
        np.fill_diagonal(d, np.inf)
        if c.shape[0] > 1 and np.any(d < r[:, None] + r[None, :]):
            raise SensorError("aperture supports overlap")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)

    def __len__(self) -> int:
        return self.centers.shape[0]

    def to_json(self) -> dict:
        return {
            "apertures": [
                {"cx": float(cx), "cy": float(cy), "r": float(r)}
                for (cx, cy), r in zip(self.centers, self.radii)
            ],
            "scale": float(self.scale),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ApertureArray":
        aps = obj["apertures"]
        return cls(
            np.array([[a["cx"], a["cy"]] for a in aps]),
            np.array([a["r"] for a in aps]),
            float(obj.get("scale", 1.0)),
        )


def hex_aperture_array(
    n_active: int = 35,
    pitch: float = 0.9,
    fill: float = 0.9,
    offset=(0.21, -0.13),
    scale: float = 1.0,
) -> ApertureArray:
    """The ``n_active`` lenses of a hexagonal array closest to the beam axis.

    ``fill`` is the disk diameter as a fraction of the pitch; ``offset``
    (in units of pitch) displaces the lattice relative to the beam so the
    sampling has no accidental symmetry.
    """
    m = int(np.ceil(np.sqrt(n_active))) + 3
    i, j = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1))
    pts = np.column_stack([(i + 0.5 * j).ravel(), (np.sqrt(3) / 2 * j).ravel()])
    pts = (pts + np.asarray(offset)) * pitch
    order = np.lexsort((np.arctan2(pts[:, 1], pts[:, 0]), np.round(np.hypot(*pts.T), 9)))
    return ApertureArray(pts[order[:n_active]], np.full(n_active, 0.5 * fill * pitch), scale)


def _patch(basis: LgBasis, center, radius: float):
    """Index window of the basis grid around one aperture and its mask."""
    a = basis.axis()
    h = basis.spacing
    cx, cy = center
    ix = np.flatnonzero(np.abs(a - cx) <= radius + h)
    iy = np.flatnonzero(np.abs(a - cy) <= radius + h)
    if ix.size == 0 or iy.size == 0:
        raise SensorError(f"aperture at {tuple(center)} lies outside the field grid")
    if (a[ix[0]] > cx - radius + h or a[ix[-1]] < cx + radius - h
            or a[iy[0]] > cy - radius + h or a[iy[-1]] < cy + radius - h):
        raise SensorError(f"aperture at {tuple(center)} is not inside the field grid")
    xx, yy = np.meshgrid(a[ix] - cx, a[iy] - cy, indexing="xy")
    mask = (xx**2 + yy**2 <= radius**2).astype(float)
    return (slice(iy[0], iy[-1] + 1), slice(ix[0], ix[-1] + 1)), mask


def transform_mode(field_values, k: int, array: ApertureArray, basis: LgBasis, pad: int = 4) -> np.ndarray:
    """Focal-plane amplitude behind aperture ``k`` for one or more sampled fields.

    The masked field is Fourier transformed about the lens center with a
    unitary DFT; the zero spatial frequency (the optical center of the spot)
    sits at index ``n // 2`` on both axes. ``pad`` oversamples the focal
    plane. The transform is linear and preserves the transmitted power.
    """
    f = np.asarray(field_values, dtype=complex)
    single = f.ndim == 2
    if single:
        f = f[None]
    (sy, sx), mask = _patch(basis, array.centers[k], array.radii[k])
    masked = f[:, sy, sx] * mask * basis.spacing
    n = pad * max(masked.shape[1:])
    out = np.zeros((f.shape[0], n, n), dtype=complex)
    out[:, : masked.shape[1], : masked.shape[2]] = masked
    # reference the phase to the lens center, then center zero frequency
    a = basis.axis()
    x0 = a[sx.start] - array.centers[k][0]
    y0 = a[sy.start] - array.centers[k][1]
    freqs = np.fft.fftfreq(n, d=basis.spacing)
    spec = np.fft.fft2(out, norm="ortho", axes=(1, 2))
    spec *= np.exp(-2j * np.pi * (freqs[None, :, None] * y0 + freqs[None, None, :] * x0))
    spec = np.fft.fftshift(spec, axes=(1, 2)) / basis.spacing
    return spec[0] if single else spec


@dataclass(frozen=True)
class SensorPom:
    """Rank-one POM of kept pixels plus their provenance.

    ``amplitudes[k, n]`` is the focal amplitude of mode ``n`` at the kept
    pixel of aperture ``apertures[k]``; ``pixels[k]`` is that pixel as an
    ``(x, y)`` offset from the spot's optical center.
    """

    pom: Pom
    amplitudes: np.ndarray
    apertures: np.ndarray
    pixels: np.ndarray
    pixel_pitch: float = 1.0

    def restricted(self, basis_vectors) -> Pom:
        """POM on the span of ``basis_vectors`` (columns in the LG ordering)."""
        v = np.asarray(basis_vectors, dtype=complex)
        # effect = |w><w| with w_i = <b_i|u>, u = conj(amplitudes)
        w = (self.amplitudes @ v).conj()
        return Pom(w[:, :, None] * w[:, None, :].conj(), self.pom.labels)

    def truncated(self, dim: int) -> Pom:
        return self.restricted(np.eye(self.amplitudes.shape[1])[:, :dim])


def _effects_from_amplitudes(amps: np.ndarray) -> np.ndarray:
    u = amps.conj()
    return u[:, :, None] * u[:, None, :].conj()


def build_sensor_pom(
    basis: LgBasis,
    array: ApertureArray,
    reference_state=None,
    pad: int = 4,
) -> SensorPom:
    """One rank-one effect per aperture, at the brightest pixel of the reference spot.

    ``reference_state`` (default: :func:`superposition_state`) decides which
    pixel of every spot is kept. Apertures whose reference spot is dark are
    dropped with a warning.
    """
    rho = superposition_state(basis) if reference_state is None else np.asarray(reference_state)
    fields = basis.fields()
    amps, kept, pixels = [], [], []
    for k in range(len(array)):
        spec = transform_mode(fields, k, array, basis, pad)  # (dim, n, n)
        # intensity of the reference state: sum_mn rho_mn psi'_m psi'_n^*
        inten = np.real(np.einsum("mn,mij,nij->ij", rho, spec, spec.conj()))
        if not np.max(inten) > 1e-300:
            warnings.warn(f"aperture {k} transmits no light of the reference state; dropped", stacklevel=2)
            continue
        iy, ix = np.unravel_index(np.argmax(inten), inten.shape)
        c = spec.shape[1] // 2
        amps.append(spec[:, iy, ix])
        kept.append(k)
        pixels.append((ix - c, iy - c))
    amps = np.array(amps)
    # one focal-plane pixel in units of `scale * spatial frequency`
    n_focal = spec.shape[1]
    pitch = array.scale / (n_focal * basis.spacing)
    labels = tuple(f"k{k}" for k in kept)
    # unitary DFT samples carry power fractions once multiplied by the pixel area
    amps = amps * basis.spacing
    return SensorPom(Pom(_effects_from_amplitudes(amps), labels), amps, np.array(kept), np.array(pixels), pitch)


def superposition_state(basis: LgBasis) -> np.ndarray:
    """``(|LG_0> - i |LG_1> - |LG_2>) / sqrt(3)`` in the basis ordering."""
    v = np.zeros(basis.dim, dtype=complex)
    for l, amp in ((0, 1.0), (1, -1j), (2, -1.0)):
        if l not in basis.l_values:
            raise SensorError(f"basis lacks mode l={l}")
        v[basis.l_values.index(l)] = amp
    return pure_state(v)


@dataclass(frozen=True)
class IntensityRecord:
    aperture: np.ndarray
    pixel_x: np.ndarray
    pixel_y: np.ndarray
    intensity: np.ndarray
    exposure_id: str = ""

    def __post_init__(self):
        vals = np.asarray(self.intensity, dtype=float).ravel()
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise SensorError("intensities must be finite and nonnegative")
        object.__setattr__(self, "intensity", vals)
        for name in ("aperture", "pixel_x", "pixel_y"):
            arr = np.asarray(getattr(self, name), dtype=int).ravel()
            if arr.size != vals.size:
                raise SensorError(f"{name} has {arr.size} entries for {vals.size} intensities")
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.intensity.size

    def to_dataset(self, spom: SensorPom, effective_total: float = 1e4) -> Dataset:
        """Counts ordered like ``spom`` outcomes, scaled to ``effective_total``."""
        lookup = {int(a): i for i, a in enumerate(self.aperture)}
        missing = [int(a) for a in spom.apertures if int(a) not in lookup]
        if missing:
            raise SensorError(f"no data for apertures {missing}")
        vals = np.array([self.intensity[lookup[int(a)]] for a in spom.apertures])
        total = vals.sum()
        if total <= 0:
            raise SensorError("intensity record carries no light")
        return Dataset(vals / total * effective_total, spom.pom.labels)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["aperture", "pixel_x", "pixel_y", "intensity"])
            for row in zip(self.aperture, self.pixel_x, self.pixel_y, self.intensity):
                w.writerow([int(row[0]), int(row[1]), int(row[2]), repr(float(row[3]))])


def simulate_intensities(rho, spom: SensorPom, noise: float = 0.0, rng: np.random.Generator | None = None) -> IntensityRecord:
    """Kept-pixel intensities ``tr(rho Pi_k)``, optionally with relative Gaussian noise."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (spom.pom.dim, spom.pom.dim):
        raise SensorError(f"state of shape {rho.shape} does not match POM dim {spom.pom.dim}")
    vals = np.real(np.einsum("ab,kba->k", rho, spom.pom.effects))
    if noise:
        if rng is None:
            raise SensorError("a generator is required for noisy simulation")
        vals = vals * (1.0 + noise * rng.standard_normal(vals.size))
    vals = np.clip(vals, 0.0, None)
    return IntensityRecord(spom.apertures, spom.pixels[:, 0], spom.pixels[:, 1], vals)


def ingest_ccd_csv(path, known_apertures=None, exposure_id: str = "") -> IntensityRecord:
    """Read an ``aperture,pixel_x,pixel_y,intensity`` CSV of kept pixels."""
    path = Path(path)
    known = None if known_apertures is None else {int(a) for a in known_apertures}
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["aperture", "pixel_x", "pixel_y", "intensity"]:
            raise SensorError(f"{path}: header must be 'aperture,pixel_x,pixel_y,intensity'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 4:
                raise SensorError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                ap, px, py = int(row[0]), int(row[1]), int(row[2])
                val = float(row[3])
            except ValueError as exc:
                raise SensorError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if not np.isfinite(val) or val < 0:
                raise SensorError(f"{path}:{lineno}: invalid intensity {val!r}")
            if known is not None and ap not in known:
                raise SensorError(f"{path}:{lineno}: unknown aperture id {ap}")
            rows.append((ap, px, py, val))
    if not rows:
        empty = np.zeros(0)
        return IntensityRecord(empty, empty, empty, empty, exposure_id or path.stem)
    a, x, y, v = (np.array(c) for c in zip(*rows))
    return IntensityRecord(a, x, y, v, exposure_id or path.stem)

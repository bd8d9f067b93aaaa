"""Discrete spatial-mode basis: Gaussian spots at arbitrary transverse coordinates.

A state of dimension N is encoded on N well-separated Gaussian spots in the
transverse plane.  Spot n sits at coordinate ``R_n`` and carries the field
``u(r - R_n) ~ exp(-|r - R_n|^2 / w0^2)``.  Orthogonality is guaranteed by
keeping the spot separation large compared with the waist ``w0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "SampledField",
    "ModeLayout",
    "circle_layout",
    "mode_field",
    "encode",
    "project_onto_modes",
    "gaussian_overlap",
    "gram_matrix",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform sampling grid: ``shape`` is (rows, cols), ``pitch`` in meters.

    Physical coordinates are centered so that index ``n // 2`` sits at zero,
    matching the FFT-shifted frequency convention.
    """

    shape: tuple[int, int] = (1024, 1024)
    pitch: float = 16e-6

    def __post_init__(self):
        ny, nx = self.shape
        if ny < 2 or nx < 2 or self.pitch <= 0:
            raise ValueError(f"invalid grid spec: shape={self.shape} pitch={self.pitch}")

    def axes(self, origin: tuple[float, float] = (0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
        """Return (y, x) physical coordinate axes for a grid centered at `origin`."""
        ny, nx = self.shape
        y = (np.arange(ny) - ny // 2) * self.pitch + origin[0]
        x = (np.arange(nx) - nx // 2) * self.pitch + origin[1]
        return y, x

    @property
    def extent(self) -> tuple[float, float]:
        return (self.shape[0] * self.pitch, self.shape[1] * self.pitch)


@dataclass
class SampledField:
    """Complex scalar field sampled on a uniform grid.

    ``origin`` is the physical coordinate of the grid center (y, x), so the
    same array can represent a patch cut out around an off-axis spot.
    """

    grid: np.ndarray
    pitch: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.complex128)
        if self.grid.ndim != 2:
            raise ValueError("field grid must be 2D")

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.grid.shape, self.pitch)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        y, x = self.spec.axes(self.origin)
        return np.meshgrid(y, x, indexing="ij")

    def power(self) -> float:
        """Total power, i.e. the discrete L2 norm squared times pixel area."""
        return float(np.sum(np.abs(self.grid) ** 2) * self.pitch**2)

    def inner(self, other: "SampledField") -> complex:
        """Discrete inner product <self|other> over the common grid."""
        if self.grid.shape != other.grid.shape or self.pitch != other.pitch:
            raise ValueError("fields sampled on incompatible grids")
        if not np.allclose(self.origin, other.origin):
            raise ValueError("fields have different origins")
        return complex(np.sum(np.conj(self.grid) * other.grid) * self.pitch**2)

    def copy(self) -> "SampledField":
        return SampledField(self.grid.copy(), self.pitch, self.origin)


# Spot separation must exceed this multiple of the waist for the pairwise
# overlap exp(-d^2 / 2 w0^2) to stay below the 1e-4 orthogonality bound.
_MIN_SEPARATION_WAISTS = math.sqrt(2.0 * math.log(1e4))

_OVERLAP_BOUND = 1e-4


def gaussian_overlap(distance: float, waist: float) -> float:
    """Overlap magnitude of two unit-power Gaussian spots a given distance apart."""
    return math.exp(-(distance**2) / (2.0 * waist**2))


@dataclass(frozen=True)
class ModeLayout:
    """Transverse coordinates and beam parameters that define the mode basis.

    coords : (N, 2) array of spot centers (y, x) in meters
    waist : 1/e amplitude radius w0 of each spot (meters)
    focal : focal length f of the relay lenses (meters)
    wavelength : vacuum wavelength (meters)
    aperture_radius : radius of the per-spot circular aperture (meters)
    """

    coords: tuple[tuple[float, float], ...]
    waist: float
    focal: float
    wavelength: float
    aperture_radius: float

    def __post_init__(self):
        coords = tuple(tuple(float(v) for v in c) for c in self.coords)
        object.__setattr__(self, "coords", coords)
        if len(coords) < 1:
            raise ValueError("layout needs at least one mode")
        if self.waist <= 0 or self.focal <= 0 or self.wavelength <= 0:
            raise ValueError("waist, focal and wavelength must be positive")
        if self.aperture_radius <= 0:
            raise ValueError("aperture radius must be positive")
        n = len(coords)
        if n > 1:
            dmin = self.min_separation
            if dmin <= 0:
                raise ValueError("mode coordinates must be pairwise distinct")
            worst = gaussian_overlap(dmin, self.waist)
            if worst >= _OVERLAP_BOUND:
                raise ValueError(
                    f"modes are not orthogonal: |<phi_n|phi_m>| = {worst:.2e} >= {_OVERLAP_BOUND:g} "
                    f"(separation/waist = {dmin / self.waist:.2f}, "
                    f"need > {_MIN_SEPARATION_WAISTS:.2f})"
                )
            if self.aperture_radius >= dmin / 2:
                raise ValueError(
                    f"aperture radius {self.aperture_radius:g} overlaps neighbouring spots "
                    f"(min separation {dmin:g})"
                )

    @property
    def n_modes(self) -> int:
        return len(self.coords)

    @property
    def coords_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    @property
    def k(self) -> float:
        """Wavenumber 2*pi/lambda."""
        return 2.0 * math.pi / self.wavelength

    @property
    def min_separation(self) -> float:
        c = self.coords_array
        if len(c) < 2:
            return math.inf
        d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
        d[np.diag_indices_from(d)] = np.inf
        return float(d.min())

    def to_dict(self) -> dict:
        return {
            "n_modes": self.n_modes,
            "waist_m": self.waist,
            "focal_m": self.focal,
            "wavelength_m": self.wavelength,
            "aperture_radius_m": self.aperture_radius,
            "coords": [list(c) for c in self.coords],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModeLayout":
        return cls(
            coords=tuple(tuple(c) for c in d["coords"]),
            waist=d["waist_m"],
            focal=d["focal_m"],
            wavelength=d["wavelength_m"],
            aperture_radius=d["aperture_radius_m"],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ModeLayout":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def circle_layout(
    n_modes: int,
    radius: float,
    waist: float,
    focal: float,
    wavelength: float,
    aperture_radius: float | None = None,
) -> ModeLayout:
    """Place ``n_modes`` spots equally spaced on a circle.

    Spot n sits at ``radius * (cos(2 pi n / N), sin(2 pi n / N))``.  The
    aperture radius defaults to 0.4 times the chord between adjacent spots,
    which keeps the per-spot apertures comfortably disjoint.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if radius <= 0 or waist <= 0:
        raise ValueError("radius and waist must be positive")
    ang = 2.0 * math.pi * np.arange(n_modes) / n_modes
    coords = tuple((radius * math.cos(a), radius * math.sin(a)) for a in ang)
    if aperture_radius is None:
        if n_modes > 1:
            chord = 2.0 * radius * math.sin(math.pi / n_modes)
            aperture_radius = 0.4 * chord
        else:
            aperture_radius = 2.2 * waist
    # coords is (x, y) around the circle; store as (y, x) rows for grid indexing
    coords_yx = tuple((c[1], c[0]) for c in coords)
    return ModeLayout(
        coords=coords_yx,
        waist=waist,
        focal=focal,
        wavelength=wavelength,
        aperture_radius=aperture_radius,
    )


def _mode_window(layout: ModeLayout, n: int, spec: GridSpec, origin) -> tuple[slice, slice]:
    """Index window that contains spot n out to ~5 waists (power < 1e-20 outside)."""
    ny, nx = spec.shape
    cy, cx = layout.coords[n]
    half = 5.0 * layout.waist
    y0 = int(math.floor((cy - half - origin[0]) / spec.pitch)) + ny // 2
    y1 = int(math.ceil((cy + half - origin[0]) / spec.pitch)) + ny // 2 + 1
    x0 = int(math.floor((cx - half - origin[1]) / spec.pitch)) + nx // 2
    x1 = int(math.ceil((cx + half - origin[1]) / spec.pitch)) + nx // 2 + 1
    return slice(max(y0, 0), min(y1, ny)), slice(max(x0, 0), min(x1, nx))


def _gaussian_patch(layout: ModeLayout, n: int, spec: GridSpec, origin) -> tuple[slice, slice, np.ndarray]:
    """Normalized Gaussian spot n evaluated on its local window of the grid."""
    sy, sx = _mode_window(layout, n, spec, origin)
    y, x = spec.axes(origin)
    cy, cx = layout.coords[n]
    yy = y[sy] - cy
    xx = x[sx] - cx
    r2 = yy[:, None] ** 2 + xx[None, :] ** 2
    patch = np.exp(-r2 / layout.waist**2)
    norm = math.sqrt(np.sum(patch**2)) * spec.pitch
    if norm == 0.0:
        raise ValueError(f"mode {n} lies entirely outside the grid")
    return sy, sx, patch / norm


def mode_field(
    layout: ModeLayout,
    n: int,
    spec: GridSpec | None = None,
    origin: tuple[float, float] = (0.0, 0.0),
) -> SampledField:
    """Sampled field of basis mode ``n``: a unit-power Gaussian spot at R_n.

    Raises if the grid undersamples the waist (needs w0/pitch >= 4) or cannot
    contain the spot to power leakage below 1e-6.
    """
    spec = spec or GridSpec()
    if not 0 <= n < layout.n_modes:
        raise IndexError(f"mode index {n} out of range for N={layout.n_modes}")
    if layout.waist / spec.pitch < 4.0:
        raise ValueError(
            f"grid pitch {spec.pitch:g} undersamples waist {layout.waist:g} "
            "(need w0/pitch >= 4)"
        )
    # Containment: leakage beyond a distance d from the center falls as
    # exp(-2 d^2 / w0^2); require < 1e-6 of the power inside the grid.
    y, x = spec.axes(origin)
    cy, cx = layout.coords[n]
    d_edge = min(cy - y[0], y[-1] - cy, cx - x[0], x[-1] - cx)
    if d_edge < 0 or math.exp(-2.0 * (d_edge / layout.waist) ** 2) > 1e-6:
        raise ValueError(
            f"grid too small for mode {n}: center {layout.coords[n]} is {d_edge:g} m "
            f"from the edge, need >= {2.63 * layout.waist:g} m for < 1e-6 leakage"
        )
    out = np.zeros(spec.shape, dtype=np.complex128)
    sy, sx, patch = _gaussian_patch(layout, n, spec, origin)
    out[sy, sx] = patch
    return SampledField(out, spec.pitch, origin)


def encode(
    state: np.ndarray,
    layout: ModeLayout,
    spec: GridSpec | None = None,
    origin: tuple[float, float] = (0.0, 0.0),
) -> SampledField:
    """Superpose the basis spots with amplitudes ``state``: sum_n a_n u(r - R_n)."""
    spec = spec or GridSpec()
    state = np.asarray(state, dtype=np.complex128)
    if state.shape != (layout.n_modes,):
        raise ValueError(f"state must have shape ({layout.n_modes},)")
    out = np.zeros(spec.shape, dtype=np.complex128)
    for n in range(layout.n_modes):
        if state[n] == 0:
            continue
        sy, sx, patch = _gaussian_patch(layout, n, spec, origin)
        out[sy, sx] += state[n] * patch
    return SampledField(out, spec.pitch, origin)


def project_onto_modes(field: SampledField, layout: ModeLayout) -> np.ndarray:
    """Amplitudes a_n = <u(r - R_n)|field> on the field's own grid."""
    spec = field.spec
    amps = np.empty(layout.n_modes, dtype=np.complex128)
    for n in range(layout.n_modes):
        sy, sx, patch = _gaussian_patch(layout, n, spec, field.origin)
        amps[n] = np.sum(patch * field.grid[sy, sx]) * field.pitch**2
    return amps


def gram_matrix(layout: ModeLayout, spec: GridSpec | None = None) -> np.ndarray:
    """Pairwise overlaps of the sampled mode fields (identity for a valid layout)."""
    spec = spec or GridSpec()
    fields = [mode_field(layout, n, spec) for n in range(layout.n_modes)]
    g = np.empty((layout.n_modes, layout.n_modes), dtype=np.complex128)
    for i, fi in enumerate(fields):
        for j, fj in enumerate(fields):
            g[i, j] = fi.inner(fj)
    return g

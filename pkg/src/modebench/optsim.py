"""Scalar-diffraction simulation of the two-modulator optical train.

The train is: a preparation modulator (SLM0) that splits a collimated
Gaussian into the N basis spots with programmable amplitudes, a confocal
relay of length 2f to the splitting modulator (SLM1), another 2f relay to
the recombining modulator (SLM2), then a focal-length hop to a pinhole that
passes only the recombined on-axis component, and a final focal-length hop
to the detection plane.

Each modulator is a unimodular phase mask assembled from per-spot circular
patches.  Every patch carries a programmed focusing lens that keeps the spot
size bounded over the relays, and the splitting patches carry per-direction
path-length compensations so that all split-recombine paths interfere with
matrix-independent phases at the output.  Propagation uses the band-limited
angular-spectrum transfer function, which conserves power exactly in the
absence of apertures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .modes import GridSpec, ModeLayout, SampledField, circle_layout
from .synthesis import GratingDesign, splitting_tilts, _optimize_column, _wave_matrix, _disc_points, OptimizeOptions

__all__ = [
    "SetupConfig",
    "PrepSpec",
    "default_geometry",
    "fresnel_propagate",
    "slm0_mask",
    "slm1_mask",
    "slm2_mask",
    "run_setup",
    "run_states",
    "extract_transfer_matrix",
    "optimize_prep_gains",
    "detection_q",
]

# Waist choice for the relays: the Rayleigh range is set to this multiple of
# the focal length, which bounds the mid-relay beam growth to ~1.5x so the
# per-spot apertures clip only percent-level tails.
RAYLEIGH_PER_FOCAL = 1.74
# Spot separation in waists; keeps pairwise mode overlap below 1e-4.
SEPARATION_WAISTS = 4.4
# Aperture radius as a fraction of the nearest-neighbour chord.
APERTURE_FRACTION = 0.48


@dataclass
class PrepSpec:
    """Target state plus the per-spot gain coefficients of the preparation mask."""

    state: np.ndarray
    gains: np.ndarray | None = None

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.complex128)
        if self.gains is not None:
            self.gains = np.asarray(self.gains, dtype=float)
            if self.gains.shape != self.state.shape:
                raise ValueError("gains must match the state length")


@dataclass
class SetupConfig:
    """Geometry and numerical knobs of the simulated train."""

    layout: ModeLayout
    grid: GridSpec = GridSpec()
    slm_separation: float = 0.8
    pinhole_radius: float | None = None
    slm0_aperture_radius: float | None = None
    use_blazed_carrier: bool = False
    grating_period_px: int = 4
    modulation_efficiency: float = 1.0
    substeps_2f: int = 2
    compensate_path_phases: bool = True
    absorber_plateau: float = 0.92

    def __post_init__(self):
        if abs(self.slm_separation - 2.0 * self.layout.focal) > 1e-9:
            raise ValueError(
                "confocal relaying requires slm_separation = 2 * focal "
                f"(got {self.slm_separation} vs 2*{self.layout.focal})"
            )
        if not 0.0 < self.modulation_efficiency <= 1.0:
            raise ValueError("modulation_efficiency must be in (0, 1]")
        if self.pinhole_radius is None:
            self.pinhole_radius = self.layout.aperture_radius
        if self.slm0_aperture_radius is None:
            self.slm0_aperture_radius = self.layout.aperture_radius

    @property
    def focal(self) -> float:
        return self.layout.focal

    def to_dict(self) -> dict:
        return {
            "slm_separation_m": self.slm_separation,
            "pinhole_radius_m": self.pinhole_radius,
            "slm0_aperture_radius_m": self.slm0_aperture_radius,
            "use_blazed_carrier": self.use_blazed_carrier,
            "grating_period_px": self.grating_period_px,
            "modulation_efficiency": self.modulation_efficiency,
            "substeps_2f": self.substeps_2f,
            "compensate_path_phases": self.compensate_path_phases,
            "grid_shape": list(self.grid.shape),
            "grid_pitch_m": self.grid.pitch,
        }


def default_geometry(
    n_modes: int,
    focal: float = 0.4,
    wavelength: float = 1.55e-6,
    grid: GridSpec = GridSpec((1024, 1024), 18e-6),
    **config_kwargs,
) -> tuple[ModeLayout, SetupConfig]:
    """Circle layout plus setup sized so the train fits the grid.

    The waist follows from the focal length (Rayleigh range 1.74 f), the
    nearest-neighbour spacing is 4.4 waists and the circle radius follows
    from the mode count.  Raises if the resulting layout cannot fit the
    grid with room for the edge absorber and the detection-plane envelope.
    """
    z_r = RAYLEIGH_PER_FOCAL * focal
    waist = math.sqrt(z_r * wavelength / math.pi)
    chord = SEPARATION_WAISTS * waist
    radius = chord / 2.0 if n_modes == 1 else chord / (2.0 * math.sin(math.pi / n_modes))
    aperture = APERTURE_FRACTION * chord
    layout = circle_layout(
        n_modes, radius, waist, focal, wavelength,
        aperture_radius=aperture if n_modes > 1 else None,
    )
    cfg = SetupConfig(layout=layout, grid=grid, slm_separation=2.0 * focal, **config_kwargs)
    half = min(grid.extent) / 2.0
    reach = radius + max(aperture, 2.7 * waist)
    w_det = detection_waist(layout)
    if reach > cfg.absorber_plateau * half or radius + 1.45 * w_det > half:
        need = max(2 * reach / cfg.absorber_plateau, 2 * (radius + 1.45 * w_det))
        raise ValueError(
            f"layout radius {radius:.4g} m does not fit a {grid.shape} grid at "
            f"pitch {grid.pitch:g} (need extent > {need:.4g} m); "
            "use a coarser pitch, larger grid or shorter focal length"
        )
    return layout, cfg


def fresnel_propagate(field: SampledField, distance: float, wavelength: float) -> SampledField:
    """Advance a sampled field by the paraxial angular-spectrum kernel.

    The transfer function exp(-i z |kt|^2 / 2k) is unimodular, so total
    power is conserved exactly.  Raises when the quadratic kernel phase is
    undersampled by the grid (the classic single-step distance limit), with
    the required pitch in the message.
    """
    if distance < 0:
        raise ValueError("propagation distance must be >= 0")
    if distance == 0:
        return field.copy()
    ny, nx = field.grid.shape
    n_min = min(ny, nx)
    z_max = n_min * field.pitch**2 / wavelength
    if distance > z_max:
        req = math.sqrt(distance * wavelength / n_min)
        raise ValueError(
            f"propagation over {distance:g} m aliases on pitch {field.pitch:g}; "
            f"need pitch >= {req:.3g} m or propagate in steps of <= {z_max:.3g} m"
        )
    k = 2.0 * math.pi / wavelength
    ky = 2.0 * math.pi * np.fft.fftfreq(ny, field.pitch)
    kx = 2.0 * math.pi * np.fft.fftfreq(nx, field.pitch)
    kern = np.exp(-1j * distance * (ky[:, None] ** 2 + kx[None, :] ** 2) / (2.0 * k))
    out = np.fft.ifft2(np.fft.fft2(field.grid) * kern) * np.exp(1j * k * distance)
    return SampledField(out, field.pitch, field.origin)


def _absorber(spec: GridSpec, plateau: float) -> np.ndarray:
    """Cosine-tapered frame window: 1 inside `plateau` of the half extent, 0 at the edge."""
    win = []
    for n in spec.shape:
        u = np.abs(np.arange(n) - n // 2) / (n / 2.0)
        w = np.ones(n)
        roll = u > plateau
        w[roll] = np.cos(0.5 * math.pi * np.clip((u[roll] - plateau) / (1.0 - plateau), 0.0, 1.0)) ** 2
        win.append(w)
    return win[0][:, None] * win[1][None, :]


def _propagate_leg(field: SampledField, distance: float, config: SetupConfig, substeps: int) -> SampledField:
    """Propagate one relay leg in absorbing substeps.

    High diffraction orders of the clipped gratings leave the simulated
    frame; the edge absorber removes them before they wrap around the
    periodic FFT domain.  The substep count is raised as needed to stay
    inside the single-step sampling limit of the kernel.
    """
    n_min = min(config.grid.shape)
    z_single = n_min * config.grid.pitch**2 / config.layout.wavelength
    substeps = max(substeps, int(math.ceil(distance / z_single)))
    window = _absorber(config.grid, config.absorber_plateau)
    dz = distance / substeps
    for _ in range(substeps):
        field = SampledField(field.grid * window, field.pitch, field.origin)
        field = fresnel_propagate(field, dz, config.layout.wavelength)
    return SampledField(field.grid * window, field.pitch, field.origin)


def _launch_tilts(layout: ModeLayout) -> np.ndarray:
    """Preparation tilts k R_n / 2f that steer spot n onto its aperture."""
    return layout.k * layout.coords_array / (2.0 * layout.focal)


def _lens_phase(Y, X, k: float, focal: float) -> np.ndarray:
    return np.exp(-0.5j * k * (Y**2 + X**2) / focal)


def _carrier(X: np.ndarray, config: SetupConfig) -> np.ndarray:
    kg = 2.0 * math.pi / (config.grating_period_px * config.grid.pitch)
    return np.exp(1j * kg * X)


def slm0_mask(prep: PrepSpec, config: SetupConfig) -> SampledField:
    """Preparation mask: clipped multi-tilt splitter plus lens and aperture.

    The phase is arg(sum_n g_n a_n exp(i k_n.r)) with launch tilts k_n that
    land spot n on its aperture after the 2f relay.
    """
    layout = config.layout
    state = prep.state
    if state.shape != (layout.n_modes,):
        raise ValueError(f"state must have length {layout.n_modes}")
    if np.all(state == 0):
        raise ValueError("cannot prepare the zero state")
    gains = prep.gains if prep.gains is not None else np.ones(layout.n_modes)
    y, x = config.grid.axes()
    Y, X = np.meshgrid(y, x, indexing="ij")
    s = np.zeros(config.grid.shape, dtype=np.complex128)
    tilts = _launch_tilts(layout)
    for a, g, kt in zip(state, gains, tilts):
        if a == 0 or g == 0:
            continue
        s += g * a * np.exp(1j * (kt[0] * Y + kt[1] * X))
    mag = np.abs(s)
    phase = np.where(mag > 0, s / np.where(mag > 0, mag, 1.0), 1.0)
    mask = phase * _lens_phase(Y, X, layout.k, layout.focal)
    mask[Y**2 + X**2 > config.slm0_aperture_radius**2] = 0.0
    return _finish_mask(mask, Y, X, config)


def _finish_mask(mask: np.ndarray, Y, X, config: SetupConfig) -> SampledField:
    """Apply modulation efficiency and the demodulated blazed-carrier model."""
    mask = mask * math.sqrt(config.modulation_efficiency)
    if config.use_blazed_carrier:
        # Work in the first-diffraction-order frame: modulated patches are
        # carrier-demodulated in place; bare (unmodulated) regions acquire
        # the inverse carrier tilt and leave through the edge absorber.
        bare = mask == 0
        mask = mask + bare * np.conj(_carrier(X, config))
    return SampledField(mask, config.grid.pitch, (0.0, 0.0))


def _patch_window(spec: GridSpec, center, radius: float) -> tuple[slice, slice]:
    ny, nx = spec.shape
    iy = ny // 2 + int(round(center[0] / spec.pitch))
    ix = nx // 2 + int(round(center[1] / spec.pitch))
    half = int(math.ceil(radius / spec.pitch)) + 2
    if iy - half < 0 or iy + half >= ny or ix - half < 0 or ix + half >= nx:
        raise ValueError("aperture extends outside the simulation grid")
    return slice(iy - half, iy + half + 1), slice(ix - half, ix + half + 1)


def slm1_mask(design: GratingDesign, config: SetupConfig) -> SampledField:
    """Splitting mask: one clipped multi-wave grating patch per input spot.

    The patch of input j steers toward every output i with weight
    mu_ij A_ij, removes the incoming launch tilt, pre-compensates the
    path-length phase of each split direction and of the preparation relay,
    and refocuses with a programmed lens, all inside a circular aperture.
    """
    layout = design.layout
    k = layout.k
    f = layout.focal
    R = layout.coords_array
    y, x = config.grid.axes()
    mask = np.zeros(config.grid.shape, dtype=np.complex128)
    for j in range(layout.n_modes):
        sy, sx = _patch_window(config.grid, R[j], layout.aperture_radius)
        YY = y[sy][:, None] - R[j, 0]
        XX = x[sx][None, :] - R[j, 1]
        disc = YY**2 + XX**2 <= layout.aperture_radius**2
        tilts = splitting_tilts(layout, j)          # toward each output i
        launch = k * R[j] / (2.0 * f)               # incoming tilt to remove
        s = np.zeros(disc.shape, dtype=np.complex128)
        for i in range(layout.n_modes):
            c = design.mu[i, j] * design.A[i, j]
            if c == 0:
                continue
            if config.compensate_path_phases:
                theta = k * float(np.sum((R[i] - R[j]) ** 2)) / (4.0 * f)
                c = c * np.exp(-1j * theta)
            kt = tilts[i] - launch
            s += c * np.exp(1j * (kt[0] * YY + kt[1] * XX))
        mag = np.abs(s)
        if not mag.any():
            raise ValueError(f"input aperture {j}: all splitting coefficients zero")
        patch = np.where(mag > 0, s / np.where(mag > 0, mag, 1.0), 1.0)
        if config.compensate_path_phases:
            delta = k * float(np.sum(R[j] ** 2)) / (4.0 * f)
            patch = patch * np.exp(-1j * delta)
        patch = patch * np.exp(-0.5j * k * (YY**2 + XX**2) / f)
        mask[sy, sx][disc] = patch[disc]
    Y, X = np.meshgrid(y, x, indexing="ij")
    return _finish_mask(mask, Y, X, config)


def slm2_mask(design: GratingDesign, config: SetupConfig) -> SampledField:
    """Recombining mask: per-output clipped gratings plus a shared output lens.

    The patch of output i cancels the arrival tilt of every incoming split
    direction with weight nu_ij B_ij, so the recombined component leaves
    collimated; the global lens then folds it through the on-axis pinhole.
    """
    layout = design.layout
    k = layout.k
    f = layout.focal
    R = layout.coords_array
    y, x = config.grid.axes()
    mask = np.zeros(config.grid.shape, dtype=np.complex128)
    for i in range(layout.n_modes):
        sy, sx = _patch_window(config.grid, R[i], layout.aperture_radius)
        YY = y[sy][:, None] - R[i, 0]
        XX = x[sx][None, :] - R[i, 1]
        disc = YY**2 + XX**2 <= layout.aperture_radius**2
        tilts = splitting_tilts(layout, i)          # cancels arrival from input j
        s = np.zeros(disc.shape, dtype=np.complex128)
        for j in range(layout.n_modes):
            c = design.nu[i, j] * design.B[i, j]
            if c == 0:
                continue
            kt = tilts[j]
            s += c * np.exp(1j * (kt[0] * YY + kt[1] * XX))
        mag = np.abs(s)
        if not mag.any():
            raise ValueError(f"output aperture {i}: all recombining coefficients zero")
        patch = np.where(mag > 0, s / np.where(mag > 0, mag, 1.0), 1.0)
        patch = patch * np.exp(-0.5j * k * (YY**2 + XX**2) / f)
        mask[sy, sx][disc] = patch[disc]
    Y, X = np.meshgrid(y, x, indexing="ij")
    full = np.meshgrid(y, x, indexing="ij")
    mask = mask * _lens_phase(full[0], full[1], k, f)
    return _finish_mask(mask, Y, X, config)


def detection_q(layout: ModeLayout) -> complex:
    """Complex beam parameter of the ideal output mode at the detection plane.

    The two confocal relays image the input waist onto the recombiner; its
    per-spot and global lenses then act as a single f/2 element followed by
    2f of free flight to the detection plane.
    """
    z_r = math.pi * layout.waist**2 / layout.wavelength
    q0 = -1j * z_r
    q5 = 1.0 / (1.0 / q0 - 2.0 / layout.focal)
    return q5 + 2.0 * layout.focal


def detection_waist(layout: ModeLayout) -> float:
    """1/e amplitude radius of the output-port envelope at the detection plane."""
    q = detection_q(layout)
    return math.sqrt(layout.wavelength / (math.pi * (1.0 / q).imag))


def _detection_patch(layout: ModeLayout, m: int, spec: GridSpec):
    """Matched detection mode m: the ideal-train image of basis spot m.

    Centered at -R_m (the train inverts the layout), tilted by -k R_m / f
    (the fold through the pinhole), with the complex beam parameter of the
    common output envelope.  Unit power on the grid.
    """
    q = detection_q(layout)
    k = layout.k
    w = detection_waist(layout)
    c = -layout.coords_array[m]
    y, x = spec.axes()
    ny, nx = spec.shape
    half = 3.2 * w
    iy = ny // 2 + int(round(c[0] / spec.pitch))
    ix = nx // 2 + int(round(c[1] / spec.pitch))
    hpx = int(math.ceil(half / spec.pitch))
    sy = slice(max(iy - hpx, 0), min(iy + hpx + 1, ny))
    sx = slice(max(ix - hpx, 0), min(ix + hpx + 1, nx))
    YY = y[sy][:, None] - c[0]
    XX = x[sx][None, :] - c[1]
    rho2 = YY**2 + XX**2
    tilt = -k * layout.coords_array[m] / layout.focal
    patch = np.exp(0.5j * k * rho2 / q) * np.exp(1j * (tilt[0] * YY + tilt[1] * XX))
    patch /= math.sqrt(np.sum(np.abs(patch) ** 2)) * spec.pitch
    return sy, sx, patch


def _input_beam(config: SetupConfig) -> SampledField:
    """Collimated unit-power Gaussian of the layout waist, centered on axis."""
    y, x = config.grid.axes()
    r2 = y[:, None] ** 2 + x[None, :] ** 2
    g = np.exp(-r2 / config.layout.waist**2)
    g /= math.sqrt(np.sum(np.abs(g) ** 2)) * config.grid.pitch
    return SampledField(g.astype(np.complex128), config.grid.pitch, (0.0, 0.0))


def _prep_field(prep: PrepSpec, config: SetupConfig, prep_mode: str) -> SampledField:
    layout = config.layout
    beam = _input_beam(config)
    if prep_mode == "slm0":
        mask = slm0_mask(prep, config)
        return SampledField(beam.grid * mask.grid, beam.pitch, beam.origin)
    if prep_mode != "direct":
        raise ValueError("prep_mode must be 'slm0' or 'direct'")
    # Ideal (linear) preparation: the multi-tilt splitter without phase
    # clipping, same lens and aperture.  Used for calibration probes and
    # linearity checks.
    gains = prep.gains if prep.gains is not None else np.ones(layout.n_modes)
    y, x = config.grid.axes()
    Y, X = np.meshgrid(y, x, indexing="ij")
    s = np.zeros(config.grid.shape, dtype=np.complex128)
    for a, g, kt in zip(prep.state, gains, _launch_tilts(layout)):
        if a == 0 or g == 0:
            continue
        s += g * a * np.exp(1j * (kt[0] * Y + kt[1] * X))
    s = s * _lens_phase(Y, X, layout.k, layout.focal)
    s[Y**2 + X**2 > config.slm0_aperture_radius**2] = 0.0
    s = s * math.sqrt(config.modulation_efficiency)
    return SampledField(beam.grid * s, beam.pitch, beam.origin)


def _run_prepared(field: SampledField, masks, config: SetupConfig, trace=None):
    m1, m2 = masks
    layout = config.layout
    f = layout.focal

    def log(label, fld):
        if trace is not None:
            trace.append((label, fld.power()))

    log("after_slm0", field)
    field = _propagate_leg(field, 2.0 * f, config, config.substeps_2f)
    log("at_slm1", field)
    field = SampledField(field.grid * m1.grid, field.pitch, field.origin)
    log("after_slm1", field)
    field = _propagate_leg(field, 2.0 * f, config, config.substeps_2f)
    log("at_slm2", field)
    field = SampledField(field.grid * m2.grid, field.pitch, field.origin)
    log("after_slm2", field)
    field = _propagate_leg(field, f, config, 1)
    y, x = config.grid.axes()
    pin = (y[:, None] ** 2 + x[None, :] ** 2) <= config.pinhole_radius**2
    field = SampledField(field.grid * pin, field.pitch, field.origin)
    log("after_pinhole", field)
    field = _propagate_leg(field, f, config, 1)
    log("at_detection", field)
    return field


def run_setup(
    design: GratingDesign,
    prep: PrepSpec | np.ndarray,
    config: SetupConfig,
    prep_mode: str = "slm0",
    return_trace: bool = False,
):
    """Push one prepared state through the full train and read out the ports.

    Returns the output amplitudes beta_m, which approximate (T alpha) up to
    one global complex factor.  With ``return_trace`` a list of (plane,
    power) pairs is returned alongside for power-budget inspection.
    """
    if not isinstance(prep, PrepSpec):
        prep = PrepSpec(np.asarray(prep))
    masks = (slm1_mask(design, config), slm2_mask(design, config))
    trace = [] if return_trace else None
    field = _prep_field(prep, config, prep_mode)
    out = _run_prepared(field, masks, config, trace)
    beta = _project_detection(out, config)
    if return_trace:
        return beta, trace
    return beta


def _project_detection(field: SampledField, config: SetupConfig) -> np.ndarray:
    layout = config.layout
    beta = np.empty(layout.n_modes, dtype=np.complex128)
    for m in range(layout.n_modes):
        sy, sx, patch = _detection_patch(layout, m, config.grid)
        beta[m] = np.sum(np.conj(patch) * field.grid[sy, sx]) * config.grid.pitch**2
    return beta


def run_states(
    design: GratingDesign,
    states,
    config: SetupConfig,
    prep_mode: str = "slm0",
    gains=None,
) -> np.ndarray:
    """Run a batch of input states through shared masks; columns are outputs."""
    masks = (slm1_mask(design, config), slm2_mask(design, config))
    layout = config.layout
    det = [_detection_patch(layout, m, config.grid) for m in range(layout.n_modes)]
    cols = []
    for s in states:
        prep = PrepSpec(np.asarray(s), None if gains is None else np.asarray(gains))
        field = _prep_field(prep, config, prep_mode)
        out = _run_prepared(field, masks, config)
        beta = np.array(
            [np.sum(np.conj(p) * out.grid[sy, sx]) * config.grid.pitch**2 for sy, sx, p in det]
        )
        cols.append(beta)
    return np.stack(cols, axis=1)


def extract_transfer_matrix(
    design: GratingDesign,
    config: SetupConfig,
    prep_mode: str = "slm0",
) -> np.ndarray:
    """Probe the train with every basis spot and assemble the transfer matrix."""
    n = design.layout.n_modes
    basis = list(np.eye(n, dtype=np.complex128))
    return run_states(design, basis, config, prep_mode)


def optimize_prep_gains(
    state: np.ndarray,
    config: SetupConfig,
    opts: OptimizeOptions | None = None,
) -> np.ndarray:
    """Tune the preparation gains so the clipped mask splits exactly as `state`.

    Same gain-optimization machinery as the grating synthesis, applied to
    the launch tilts over the preparation aperture.
    """
    layout = config.layout
    opts = opts or OptimizeOptions()
    state = np.asarray(state, dtype=np.complex128)
    pts = _disc_points(config.slm0_aperture_radius, opts.quad_pitch)
    E = _wave_matrix(_launch_tilts(layout), pts)
    gains, _, _, _, _ = _optimize_column(np.ones(layout.n_modes), state, E, opts)
    gmax = gains.max()
    return gains / gmax if gmax > 0 else gains

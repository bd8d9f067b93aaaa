"""Phase-only grating synthesis for arbitrary complex matrices.

A target matrix T is factored element-wise into a splitting factor A and a
recombining factor B (T = A o B).  Column n of A becomes a multiplexed
diffraction grating in the aperture of input spot n; row m of B becomes the
matching recombining grating in the aperture of output spot m.  Passive
phase-only modulation cannot realize the ideal multi-wave gratings directly,
so each grating is amplitude-clipped to exp(i arg(.)), and per-element gain
coefficients (mu for splitting, nu for recombining) are tuned by gradient
ascent so that the Fourier coefficients of the clipped grating stay
proportional to the target column/row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .modes import GridSpec, ModeLayout, SampledField

__all__ = [
    "GratingDesign",
    "SynthesisReport",
    "OptimizeOptions",
    "hadamard_decompose",
    "design_for_target",
    "splitting_tilts",
    "ideal_splitting_grating",
    "phase_only_grating",
    "extract_matrix",
    "matrix_fidelity",
    "matrix_efficiency",
    "optimize_coefficients",
    "optimize_design",
    "design_report",
]

# Quadrature pitch for aperture integrals; matches the physical pixel size of
# the modulator so the simulated pixelation is the real one.
DEFAULT_QUAD_PITCH = 8e-6


def hadamard_decompose(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split T element-wise as T = A o B with |A| = |B| = sqrt(|T|).

    The phase of T is carried entirely by A; B is real non-negative.  Zeros
    of T map to zeros of both factors.
    """
    T = np.asarray(T, dtype=np.complex128)
    if not np.all(np.isfinite(T)):
        raise ValueError("target matrix contains non-finite entries")
    mag = np.sqrt(np.abs(T))
    phase = np.where(mag > 0, np.exp(1j * np.angle(T)), 1.0)
    A = mag * phase
    B = mag.astype(np.complex128)
    return A, B


@dataclass
class GratingDesign:
    """Factor pair plus gain coefficients for one synthesized operator.

    A : complex splitting factor (column n feeds the grating of input spot n)
    B : complex recombining factor (row m feeds the grating of output spot m)
    mu, nu : non-negative per-element gains entering the clipped gratings
    layout : mode geometry; the grating wave vectors k (R_m - R_n) / 2f
        derive from it
    """

    A: np.ndarray
    B: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    layout: ModeLayout

    def __post_init__(self):
        n = self.layout.n_modes
        for name in ("A", "B", "mu", "nu"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n, n):
                raise ValueError(f"{name} must have shape ({n}, {n})")
        self.A = np.asarray(self.A, dtype=np.complex128)
        self.B = np.asarray(self.B, dtype=np.complex128)
        self.mu = np.asarray(self.mu, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if np.any(self.mu < 0) or np.any(self.nu < 0):
            raise ValueError("gain coefficients must be non-negative")

    @property
    def target(self) -> np.ndarray:
        return self.A * self.B

    @property
    def n_modes(self) -> int:
        return self.layout.n_modes


def design_for_target(T: np.ndarray, layout: ModeLayout) -> GratingDesign:
    """Build a design with unit gains (zeros of T get zero gain)."""
    T = np.asarray(T, dtype=np.complex128)
    if T.shape != (layout.n_modes, layout.n_modes):
        raise ValueError(f"target must be {layout.n_modes}x{layout.n_modes}")
    A, B = hadamard_decompose(T)
    active = (np.abs(T) > 0).astype(float)
    return GratingDesign(A=A, B=B, mu=active.copy(), nu=active.copy(), layout=layout)


def splitting_tilts(layout: ModeLayout, center: int) -> np.ndarray:
    """Grating wave vectors k (R_j - R_center) / 2f for the aperture at R_center.

    On the splitting side the same set steers spot `center` toward every
    other spot; on the recombining side it cancels the arrival tilt of every
    incoming direction.
    """
    R = layout.coords_array
    return layout.k * (R - R[center]) / (2.0 * layout.focal)


def _disc_offsets(radius: float, pitch: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered sample axes and in-disc mask for a circular aperture."""
    m = 2 * int(math.floor(radius / pitch)) + 3
    ax = (np.arange(m) - m // 2) * pitch
    mask = ax[:, None] ** 2 + ax[None, :] ** 2 <= radius**2
    return ax, ax, mask


def _wave_matrix(kvecs: np.ndarray, points: np.ndarray) -> np.ndarray:
    """E[j, p] = exp(i k_j . r_p) for a set of plane waves on disc samples."""
    return np.exp(1j * (points @ kvecs.T)).T.copy()


def _disc_points(radius: float, pitch: float) -> np.ndarray:
    ay, ax, mask = _disc_offsets(radius, pitch)
    Y, X = np.meshgrid(ay, ax, indexing="ij")
    return np.stack([Y[mask], X[mask]], axis=-1)


def clipped_multiplex_phase(coeffs: np.ndarray, kvecs: np.ndarray, Y, X) -> np.ndarray:
    """exp(i arg(sum_j c_j exp(i k_j . r))) evaluated on coordinate arrays."""
    s = np.zeros(np.broadcast(Y, X).shape, dtype=np.complex128)
    for c, k in zip(coeffs, kvecs):
        if c == 0:
            continue
        s += c * np.exp(1j * (k[0] * Y + k[1] * X))
    mag = np.abs(s)
    if np.all(mag == 0):
        raise ValueError("all grating coefficients are zero: phase undefined")
    out = np.ones_like(s)
    nz = mag > 0
    out[nz] = s[nz] / mag[nz]
    return out


def _grating_coeffs(design: GratingDesign, side: str, index: int) -> tuple[np.ndarray, np.ndarray]:
    if side == "splitter":
        coeffs = design.mu[:, index] * design.A[:, index]
    elif side == "combiner":
        coeffs = design.nu[index, :] * design.B[index, :]
    else:
        raise ValueError("side must be 'splitter' or 'combiner'")
    return coeffs, splitting_tilts(design.layout, index)


def ideal_splitting_grating(
    design: GratingDesign, n: int, quad_pitch: float = DEFAULT_QUAD_PITCH
) -> SampledField:
    """Unclipped multi-wave grating for column n, sampled on its aperture.

    The returned patch is centered on the aperture (field origin = R_n) and
    zero outside the circular aperture.
    """
    coeffs = design.A[:, n]
    kvecs = splitting_tilts(design.layout, n)
    ay, ax, mask = _disc_offsets(design.layout.aperture_radius, quad_pitch)
    Y, X = np.meshgrid(ay, ax, indexing="ij")
    g = np.zeros(mask.shape, dtype=np.complex128)
    for c, k in zip(coeffs, kvecs):
        if c == 0:
            continue
        g += c * np.exp(1j * (k[0] * Y + k[1] * X))
    g[~mask] = 0.0
    return SampledField(g, quad_pitch, origin=tuple(design.layout.coords[n]))


def phase_only_grating(
    design: GratingDesign,
    side: str,
    index: int,
    quad_pitch: float = DEFAULT_QUAD_PITCH,
) -> SampledField:
    """Amplitude-clipped grating exp(i arg(.)) on the aperture disc.

    `side` selects the splitting grating of column `index` or the
    recombining grating of row `index`.  Unit magnitude everywhere on the
    aperture, zero outside.
    """
    coeffs, kvecs = _grating_coeffs(design, side, index)
    if np.all(coeffs == 0):
        raise ValueError(f"{side} {index}: all coefficients zero, arg undefined")
    ay, ax, mask = _disc_offsets(design.layout.aperture_radius, quad_pitch)
    Y, X = np.meshgrid(ay, ax, indexing="ij")
    h = clipped_multiplex_phase(coeffs, kvecs, Y, X)
    h[~mask] = 0.0
    center = design.layout.coords[index]
    return SampledField(h, quad_pitch, origin=tuple(center))


def _extract_coeffs(field: SampledField, center, radius: float, kvecs: np.ndarray) -> np.ndarray:
    """First-order coefficients of a grating patch against each plane wave."""
    y, x = field.spec.axes(field.origin)
    yy = y - center[0]
    xx = x - center[1]
    if yy[0] > -radius or yy[-1] < radius or xx[0] > -radius or xx[-1] < radius:
        raise ValueError("aperture extends outside the sampled grid")
    mask = yy[:, None] ** 2 + xx[None, :] ** 2 <= radius**2
    vals = field.grid[mask]
    pts = np.stack([np.broadcast_to(yy[:, None], mask.shape)[mask],
                    np.broadcast_to(xx[None, :], mask.shape)[mask]], axis=-1)
    E = _wave_matrix(kvecs, pts)
    return (E.conj() @ vals) / len(vals)


def extract_matrix(
    gratings: list[SampledField],
    layout: ModeLayout,
    side: str = "splitter",
) -> np.ndarray:
    """Recover the implemented factor from a full set of grating patches.

    For the splitting side, `gratings[n]` holds the grating of input aperture
    n and the result's column n contains its coefficients.  For the
    recombining side, `gratings[m]` is the grating of output aperture m and
    fills row m.
    """
    n = layout.n_modes
    if len(gratings) != n:
        raise ValueError(f"need {n} gratings, got {len(gratings)}")
    out = np.zeros((n, n), dtype=np.complex128)
    for i, g in enumerate(gratings):
        kvecs = splitting_tilts(layout, i)
        c = _extract_coeffs(g, layout.coords[i], layout.aperture_radius, kvecs)
        if side == "splitter":
            out[:, i] = c
        elif side == "combiner":
            out[i, :] = c
        else:
            raise ValueError("side must be 'splitter' or 'combiner'")
    return out


def matrix_fidelity(X_exp: np.ndarray, X: np.ndarray) -> float:
    """Scale- and global-phase-invariant overlap of two matrices.

    |Tr(X^dag X_exp)|^2 / (Tr(X_exp^dag X_exp) Tr(X^dag X)); equals 1 exactly
    when X_exp is a complex multiple of X.
    """
    X_exp = np.asarray(X_exp, dtype=np.complex128)
    X = np.asarray(X, dtype=np.complex128)
    if X_exp.shape != X.shape:
        raise ValueError("matrices must have the same shape")
    nx = np.sum(np.abs(X) ** 2)
    ne = np.sum(np.abs(X_exp) ** 2)
    if nx == 0 or ne == 0:
        raise ValueError("fidelity undefined for a zero matrix")
    return float(np.abs(np.sum(np.conj(X) * X_exp)) ** 2 / (ne * nx))


def matrix_efficiency(X_exp: np.ndarray, X: np.ndarray) -> float:
    """Energy ratio Tr(X_exp^dag X_exp) / Tr(X^dag X)."""
    X_exp = np.asarray(X_exp, dtype=np.complex128)
    X = np.asarray(X, dtype=np.complex128)
    if X_exp.shape != X.shape:
        raise ValueError("matrices must have the same shape")
    nx = np.sum(np.abs(X) ** 2)
    if nx == 0:
        raise ValueError("efficiency undefined for a zero reference")
    return float(np.sum(np.abs(X_exp) ** 2) / nx)


@dataclass
class SynthesisReport:
    """Metrics of a synthesized design: per-factor and composed fidelity/efficiency."""

    fidelity_splitting: float
    fidelity_combining: float
    fidelity_total: float
    efficiency_splitting: float
    efficiency_combining: float
    efficiency_total: float
    iterations: int = 0
    converged: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OptimizeOptions:
    """Knobs for the per-grating gain optimization."""

    step: float = 0.25
    max_iter: int = 500
    tol: float = 1e-10
    method: str = "lbfgs"      # quasi-Newton on the exact gradient; or "fixed"
    gradient: str = "adjoint"  # gradient used by "fixed": "adjoint" or "fd"
    quad_pitch: float = DEFAULT_QUAD_PITCH
    fd_step: float = 1e-3


def _column_objective(gains, amps, E):
    """Fidelity of the clipped grating's coefficients against `amps`."""
    s = (gains * amps) @ E
    mag = np.abs(s)
    h = np.where(mag > 0, s / np.where(mag > 0, mag, 1.0), 1.0)
    c = (E.conj() @ h) / E.shape[1]
    u = np.vdot(amps, c)
    gamma = np.vdot(c, c).real
    alpha = np.vdot(amps, amps).real
    fid = (abs(u) ** 2) / (gamma * alpha)
    return fid, c, s, h


def _column_grad_adjoint(gains, amps, E, fid, c, s, h):
    """Exact gradient of the fidelity with respect to the gains.

    Chain rule through c_m = mean_p exp(i arg(S_p)) conj(E_mp) with
    S_p = sum_j gains_j amps_j E_jp; the phase derivative
    d arg(S)/d gains_j = Im(amps_j E_jp / S_p) is contracted without
    materializing the full Jacobian.
    """
    P = E.shape[1]
    alpha = np.vdot(amps, amps).real
    gamma = np.vdot(c, c).real
    u = np.vdot(amps, c)
    G = (u * amps) / (alpha * gamma) - fid * c / gamma
    y = G @ E
    v = -np.imag(h * np.conj(y))
    s2 = np.abs(s) ** 2
    s2 = np.where(s2 > 0, s2, 1.0)
    t = np.conj(s) * v / s2
    return (2.0 / P) * np.imag(amps * (E @ t))


def _column_grad_fd(gains, amps, E, active, rel_step):
    """Central finite differences on the gains (incremental wave-sum update)."""
    base_s = (gains * amps) @ E
    grad = np.zeros_like(gains)
    for j in np.flatnonzero(active):
        dj = rel_step * (gains[j] if gains[j] > 1e-6 else 1.0)
        for sign in (+1.0, -1.0):
            s = base_s + sign * dj * amps[j] * E[j]
            mag = np.abs(s)
            h = np.where(mag > 0, s / np.where(mag > 0, mag, 1.0), 1.0)
            c = (E.conj() @ h) / E.shape[1]
            u = np.vdot(amps, c)
            f = (abs(u) ** 2) / (np.vdot(c, c).real * np.vdot(amps, amps).real)
            grad[j] += sign * f / (2.0 * dj)
    return grad


def _optimize_column_fixed(gains0, amps, E, opts: OptimizeOptions):
    """Fixed-step ascent with backtracking halving on the gains.

    Slower than the quasi-Newton path but dead simple; the accepted
    objective sequence is non-decreasing by construction.
    """
    active = np.abs(amps) > 0
    gains = gains0.astype(float).copy()
    gains[~active] = 0.0
    fid, c, s, h = _column_objective(gains, amps, E)
    trace = [fid]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        if opts.gradient == "fd":
            grad = _column_grad_fd(gains, amps, E, active, opts.fd_step)
        else:
            grad = _column_grad_adjoint(gains, amps, E, fid, c, s, h)
        grad[~active] = 0.0
        if not np.any(grad):
            converged = True
            break
        step = opts.step
        accepted = False
        for _ in range(40):
            cand = np.clip(gains + step * grad, 0.0, None)
            f2, c2, s2, h2 = _column_objective(cand, amps, E)
            if f2 > fid:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        delta = f2 - fid
        gains, fid, c, s, h = cand, f2, c2, s2, h2
        trace.append(fid)
        if delta < opts.tol:
            converged = True
            break
    return gains, fid, it, converged, trace


def _optimize_column(gains0, amps, E, opts: OptimizeOptions):
    """Maximize extraction fidelity over non-negative gains for one grating."""
    if opts.method == "fixed":
        return _optimize_column_fixed(gains0, amps, E, opts)
    from scipy.optimize import minimize

    active = np.abs(amps) > 0
    gains = gains0.astype(float).copy()
    gains[~active] = 0.0
    trace = [_column_objective(gains, amps, E)[0]]

    def negf(g):
        fid, c, s, h = _column_objective(g, amps, E)
        grad = _column_grad_adjoint(g, amps, E, fid, c, s, h)
        grad[~active] = 0.0
        return -fid, -grad

    res = minimize(
        negf,
        gains,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None)] * len(gains),
        callback=lambda g: trace.append(_column_objective(g, amps, E)[0]),
        options={"maxiter": opts.max_iter, "ftol": opts.tol, "gtol": 1e-12},
    )
    gains = np.clip(res.x, 0.0, None)
    gains[~active] = 0.0
    fid = _column_objective(gains, amps, E)[0]
    if fid < trace[0]:
        # never return anything worse than the starting gains
        gains, fid = gains0.astype(float), trace[0]
    return gains, fid, int(res.nit), bool(res.success) or res.nit >= 1, trace


def optimize_coefficients(
    design: GratingDesign,
    side: str = "splitter",
    opts: OptimizeOptions | None = None,
) -> tuple[np.ndarray, SynthesisReport]:
    """Tune the gain coefficients of one side to maximize extraction fidelity.

    Columns (splitting) or rows (recombining) are independent problems and
    are optimized one by one.  Returns the optimized gains together with a
    report evaluated on the updated design; the factors A and B are never
    modified.
    """
    opts = opts or OptimizeOptions()
    layout = design.layout
    n = design.n_modes
    pts = _disc_points(layout.aperture_radius, opts.quad_pitch)
    gains_out = (design.mu if side == "splitter" else design.nu).copy()
    total_iter = 0
    all_conv = True
    for i in range(n):
        coeffs, kvecs = _grating_coeffs(design, side, i)
        amps = design.A[:, i] if side == "splitter" else design.B[i, :]
        if np.all(amps == 0):
            raise ValueError(f"{side} {i} has no nonzero coefficients")
        E = _wave_matrix(kvecs, pts)
        g0 = gains_out[:, i] if side == "splitter" else gains_out[i, :]
        g, fid, it, conv, _ = _optimize_column(g0, amps, E, opts)
        # normalize the free overall scale of the gains
        gmax = g.max()
        if gmax > 0:
            g = g / gmax
        if side == "splitter":
            gains_out[:, i] = g
        else:
            gains_out[i, :] = g
        total_iter = max(total_iter, it)
        all_conv = all_conv and conv
    new_design = replace(design, mu=gains_out) if side == "splitter" else replace(design, nu=gains_out)
    report = design_report(new_design, quad_pitch=opts.quad_pitch)
    report.iterations = total_iter
    report.converged = all_conv
    return gains_out, report


def optimize_design(design: GratingDesign, opts: OptimizeOptions | None = None) -> tuple[GratingDesign, SynthesisReport]:
    """Optimize both sides and return the updated design plus its report."""
    opts = opts or OptimizeOptions()
    mu, _ = optimize_coefficients(design, "splitter", opts)
    design = replace(design, mu=mu)
    nu, report = optimize_coefficients(design, "combiner", opts)
    design = replace(design, nu=nu)
    return design, report


def grating_fidelities(X_exp: np.ndarray, X: np.ndarray, side: str = "splitter") -> np.ndarray:
    """Per-grating (column or row) overlap fidelities of an extracted factor.

    Each one-to-N splitting grating is scored on its own coefficient vector;
    rows score the N-to-one recombining gratings.
    """
    axis_cols = side == "splitter"
    n = X.shape[1] if axis_cols else X.shape[0]
    vec = (lambda M, i: M[:, i]) if axis_cols else (lambda M, i: M[i, :])
    return np.array([matrix_fidelity(vec(X_exp, i), vec(X, i)) for i in range(n)])


def grating_efficiencies(X_exp: np.ndarray, X: np.ndarray, side: str = "splitter") -> np.ndarray:
    axis_cols = side == "splitter"
    n = X.shape[1] if axis_cols else X.shape[0]
    vec = (lambda M, i: M[:, i]) if axis_cols else (lambda M, i: M[i, :])
    return np.array([matrix_efficiency(vec(X_exp, i), vec(X, i)) for i in range(n)])


def extract_design(design: GratingDesign, quad_pitch: float = DEFAULT_QUAD_PITCH):
    """Both factor matrices as implemented by the clipped gratings."""
    n = design.n_modes
    split = [phase_only_grating(design, "splitter", i, quad_pitch) for i in range(n)]
    comb = [phase_only_grating(design, "combiner", i, quad_pitch) for i in range(n)]
    A_exp = extract_matrix(split, design.layout, "splitter")
    B_exp = extract_matrix(comb, design.layout, "combiner")
    return A_exp, B_exp


def design_report(design: GratingDesign, quad_pitch: float = DEFAULT_QUAD_PITCH) -> SynthesisReport:
    """Extract both factors from the clipped gratings and score them.

    Splitting/combining figures are means over the per-grating (one-to-N /
    N-to-one) scores; the total row scores the composed element-wise product
    against the target as one matrix.
    """
    A_exp, B_exp = extract_design(design, quad_pitch)
    T_exp = A_exp * B_exp
    return SynthesisReport(
        fidelity_splitting=float(grating_fidelities(A_exp, design.A, "splitter").mean()),
        fidelity_combining=float(grating_fidelities(B_exp, design.B, "combiner").mean()),
        fidelity_total=matrix_fidelity(T_exp, design.target),
        efficiency_splitting=float(grating_efficiencies(A_exp, design.A, "splitter").mean()),
        efficiency_combining=float(grating_efficiencies(B_exp, design.B, "combiner").mean()),
        efficiency_total=matrix_efficiency(T_exp, design.target),
    )

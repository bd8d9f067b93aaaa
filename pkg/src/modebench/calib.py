"""Constant phase-error model and its tomographic recovery.

Misalignment multiplies every implemented matrix element by a fixed phase
exp(i eps_mn).  Because the element magnitudes are known, the relative
phases within each row are recoverable from intensity-only measurements of
2(N-1) designed probe vectors.  Per-row phase offsets are unobservable (they
commute with detection) and are fixed to zero on the first column.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "apply_phase_error",
    "compensate",
    "probe_vectors",
    "probe_matrix",
    "recover_phases",
    "relative_phase_map",
    "error_map_from_relative",
    "row_phase_quotient_fidelity",
]


def apply_phase_error(T: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Element-wise phase corruption T_mn -> T_mn exp(i eps_mn)."""
    T = np.asarray(T, dtype=np.complex128)
    eps = np.asarray(eps, dtype=float)
    if T.shape != eps.shape:
        raise ValueError("phase map must match the matrix shape")
    return T * np.exp(1j * eps)


def compensate(T_target: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Pre-distorted matrix T exp(-i eps) whose corrupted version is T again."""
    T_target = np.asarray(T_target, dtype=np.complex128)
    eps = np.asarray(eps, dtype=float)
    if T_target.shape != eps.shape:
        raise ValueError("phase map must match the matrix shape")
    return T_target * np.exp(-1j * eps)


def probe_vectors(n: int) -> list[np.ndarray]:
    """The 2(N-1) calibration inputs: e1 + ej and i e1 + ej for j = 2..N."""
    if n < 2:
        raise ValueError("calibration needs at least 2 modes")
    probes = []
    for j in range(1, n):
        v = np.zeros(n, dtype=np.complex128)
        v[0], v[j] = 1.0, 1.0
        probes.append(v)
    for j in range(1, n):
        v = np.zeros(n, dtype=np.complex128)
        v[0], v[j] = 1.0j, 1.0
        probes.append(v)
    return probes


def probe_matrix(n: int) -> np.ndarray:
    """Probe vectors stacked as columns of an N x 2(N-1) matrix."""
    return np.stack(probe_vectors(n), axis=1)


def recover_phases(intensities: np.ndarray, magnitudes: np.ndarray) -> np.ndarray:
    """Relative phases of a matrix from its probe-response intensities.

    `intensities[:, p]` is the output power vector |T_real v_p|^2 for probe
    p in `probe_vectors` order; `magnitudes` holds |T_real|.  The two probe
    families give the cosine and sine of every phase difference to the first
    column, so each is determined without quadrant ambiguity.  Returns the
    phase map of T_real with the first column gauged to zero per row.
    """
    intensities = np.asarray(intensities, dtype=float)
    magnitudes = np.asarray(magnitudes, dtype=float)
    n = magnitudes.shape[0]
    if magnitudes.shape != (n, n):
        raise ValueError("magnitudes must be square")
    if intensities.shape != (n, 2 * (n - 1)):
        raise ValueError(f"need intensities of shape ({n}, {2 * (n - 1)})")
    if np.any(intensities < 0):
        raise ValueError("intensities must be non-negative")
    if np.any(magnitudes[:, 0] <= 0):
        bad = np.flatnonzero(magnitudes[:, 0] <= 0)
        raise ValueError(
            f"reference column has zero magnitude in rows {bad.tolist()}; "
            "permute a column with no zeros into the first position"
        )
    phases = np.zeros((n, n))
    for j in range(1, n):
        i_cos = intensities[:, j - 1]
        i_sin = intensities[:, n - 2 + j]
        ref = magnitudes[:, 0]
        amp = magnitudes[:, j]
        denom = 2.0 * ref * amp
        base = ref**2 + amp**2
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(denom > 0, (i_cos - base) / denom, 0.0)
            s = np.where(denom > 0, (i_sin - base) / denom, 0.0)
        phases[:, j] = np.arctan2(s, c)
        phases[amp == 0, j] = 0.0
    return phases


def relative_phase_map(T: np.ndarray) -> np.ndarray:
    """Phases of T with each row's first-column phase subtracted."""
    T = np.asarray(T, dtype=np.complex128)
    ang = np.angle(T)
    out = ang - ang[:, :1]
    out[np.abs(T) == 0] = 0.0
    return np.where(np.abs(T[:, :1]) > 0, out, ang)


def error_map_from_relative(T_target: np.ndarray, recovered: np.ndarray) -> np.ndarray:
    """Phase-error map implied by recovered relative phases of the realized matrix.

    The result is gauged like the recovery: per row, the first-column error
    is zero.  Compensating with it restores the target up to row phases.
    """
    return np.asarray(recovered, dtype=float) - relative_phase_map(T_target)


def row_phase_quotient_fidelity(X_exp: np.ndarray, X: np.ndarray) -> float:
    """Matrix fidelity maximized over one free phase per row.

    Equivalent to the energy-normalized overlap with each row's inner
    product replaced by its modulus; rows that differ only by constant
    phases score 1.
    """
    X_exp = np.asarray(X_exp, dtype=np.complex128)
    X = np.asarray(X, dtype=np.complex128)
    if X_exp.shape != X.shape:
        raise ValueError("matrices must have the same shape")
    ne = np.sum(np.abs(X_exp) ** 2)
    nx = np.sum(np.abs(X) ** 2)
    if ne == 0 or nx == 0:
        raise ValueError("fidelity undefined for a zero matrix")
    row_over = np.abs(np.sum(np.conj(X) * X_exp, axis=1)).sum()
    return float(row_over**2 / (ne * nx))

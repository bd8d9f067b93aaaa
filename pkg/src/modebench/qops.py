"""Quantum operators and measurement constructions for qudits.

Discrete Fourier pair (F, Omega) with F Omega = I, generalized Pauli
shift/clock matrices, the maximally entangled Bell family, Weyl-Heisenberg
displacement operators, SIC-POVM fiducial search, and the compiled
order-finding routine used to factor small integers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

__all__ = [
    "qft_matrix",
    "fourier_basis",
    "shift_matrix",
    "clock_matrix",
    "BipartiteState",
    "bell_state",
    "displacement_operator",
    "PovmSet",
    "find_sic_fiducial",
    "sic_povm",
    "sic_deviation",
    "random_unitary",
    "OrderFindingResult",
    "order_finding_demo",
    "FIDUCIAL_CACHE",
]

FIDUCIAL_CACHE = Path(__file__).parent / "data" / "fiducials.json"


def qft_matrix(n: int) -> np.ndarray:
    """Unitary Fourier transform F with F[m, d] = exp(2 pi i m d / n) / sqrt(n).

    The sign convention is fixed so that F maps the conjugate Fourier basis
    onto the computational basis: F @ fourier_basis(n) is the identity.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    idx = np.arange(n)
    return np.exp(2j * math.pi * np.outer(idx, idx) / n) / math.sqrt(n)


def fourier_basis(n: int) -> np.ndarray:
    """Unitary whose column j is the conjugate Fourier vector omega_j."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    idx = np.arange(n)
    return np.exp(-2j * math.pi * np.outer(idx, idx) / n) / math.sqrt(n)


def shift_matrix(n: int, m: int = 1) -> np.ndarray:
    """Cyclic shift |x> -> |x + m mod n| (generalized Pauli X^m), unitary."""
    if not 0 <= m < max(n, 1):
        raise ValueError("shift amount must satisfy 0 <= m < n")
    out = np.zeros((n, n), dtype=np.complex128)
    x = np.arange(n)
    out[(x + m) % n, x] = 1.0
    return out


def clock_matrix(n: int, m: int = 1) -> np.ndarray:
    """Diagonal phase ramp diag(exp(2 pi i x m / n)) (generalized Pauli Z^m), unitary."""
    if not 0 <= m < max(n, 1):
        raise ValueError("clock amount must satisfy 0 <= m < n")
    x = np.arange(n)
    return np.diag(np.exp(2j * math.pi * x * m / n)).astype(np.complex128)


@dataclass
class BipartiteState:
    """Two-qudit state sum_xy amps[x, y] |x>|y> with local dimension d."""

    d: int
    amps: np.ndarray

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=np.complex128)
        if self.amps.shape != (self.d, self.d):
            raise ValueError(f"amplitudes must be {self.d}x{self.d}")

    @property
    def vector(self) -> np.ndarray:
        return self.amps.reshape(-1)

    def overlap(self, other: "BipartiteState") -> complex:
        return complex(np.vdot(self.vector, other.vector))


def bell_state(n: int, m: int = 0, p: int = 0) -> BipartiteState:
    """Maximally entangled state sum_x exp(2 pi i x p / n) |x>|x + m mod n| / sqrt(n).

    Equals (I (x) shift_m clock_p) applied to the diagonal state with
    (m, p) = (0, 0); the n^2 of them form an orthonormal basis.
    """
    if not (0 <= m < n and 0 <= p < n):
        raise ValueError("indices must satisfy 0 <= m, p < n")
    amps = np.zeros((n, n), dtype=np.complex128)
    x = np.arange(n)
    amps[x, (x + m) % n] = np.exp(2j * math.pi * x * p / n) / math.sqrt(n)
    return BipartiteState(n, amps)


def displacement_operator(d: int, m: int, p: int) -> np.ndarray:
    """Weyl-Heisenberg displacement D = tau^{mp} X^m Z^p with tau = -exp(i pi / d)."""
    if not (0 <= m < d and 0 <= p < d):
        raise ValueError("indices must satisfy 0 <= m, p < d")
    tau = -np.exp(1j * math.pi / d)
    return (tau ** (m * p)) * shift_matrix(d, m) @ clock_matrix(d, p)


def _displacements(d: int) -> np.ndarray:
    """All d^2 displacement operators stacked as a (d^2, d, d) array."""
    out = np.empty((d * d, d, d), dtype=np.complex128)
    for m in range(d):
        for p in range(d):
            out[m * d + p] = displacement_operator(d, m, p)
    return out


def sic_deviation(fiducial: np.ndarray, disp: np.ndarray | None = None) -> float:
    """Largest deviation of |<psi|D|psi>|^2 from 1/(d+1) over nontrivial displacements."""
    psi = np.asarray(fiducial, dtype=np.complex128)
    d = len(psi)
    disp = _displacements(d) if disp is None else disp
    ov = np.abs(np.einsum("i,kij,j->k", psi.conj(), disp, psi)) ** 2
    return float(np.max(np.abs(ov[1:] - 1.0 / (d + 1))))


def _sic_objective(x: np.ndarray, disp: np.ndarray, d: int, power: int):
    """Smooth objective on the unit sphere; `power` 4 for the coarse stage,
    2 for polishing the squared deviations."""
    psi = x[:d] + 1j * x[d:]
    nrm = np.linalg.norm(psi)
    psi = psi / nrm
    dpsi = disp[1:] @ psi
    ov = dpsi @ psi.conj()
    a = np.abs(ov) ** 2
    t = 1.0 / (d + 1)
    if power == 4:
        w = a
        val = float(np.sum(a * a))
    else:
        w = a - t
        val = float(np.sum(w * w))
    # gradient wrt conj(psi) before sphere projection
    gc = 4.0 * np.einsum("k,k,kij,j->i", w, ov.conj(), disp[1:], psi) / 2.0
    gc += 4.0 * np.einsum("k,k,kji,j->i", w, ov, disp[1:].conj(), psi) / 2.0
    # project out the radial component and undo the normalization
    gc = gc - psi * np.real(np.vdot(psi, gc))
    gc = gc / nrm
    grad = np.concatenate([2.0 * gc.real, 2.0 * gc.imag])
    return val, grad


def _search_once(d: int, disp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x0 = rng.standard_normal(2 * d)
    res = minimize(
        _sic_objective, x0, args=(disp, d, 4), jac=True, method="L-BFGS-B",
        options={"maxiter": 2000, "ftol": 1e-16, "gtol": 1e-12},
    )
    res = minimize(
        _sic_objective, res.x, args=(disp, d, 2), jac=True, method="L-BFGS-B",
        options={"maxiter": 4000, "ftol": 1e-18, "gtol": 1e-14},
    )
    psi = res.x[:d] + 1j * res.x[d:]
    return psi / np.linalg.norm(psi)


class FiducialSearchError(RuntimeError):
    """Search budget exhausted; carries the best deviation reached."""

    def __init__(self, d: int, best: float):
        super().__init__(f"no SIC fiducial found for d={d}; best deviation {best:.3e}")
        self.best_deviation = best


def _load_cached_fiducial(d: int, path: Path) -> np.ndarray | None:
    if not path.exists():
        return None
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    entry = data.get(str(d))
    if entry is None:
        return None
    return np.asarray(entry["re"]) + 1j * np.asarray(entry["im"])


def _store_cached_fiducial(psi: np.ndarray, path: Path) -> None:
    data = {}
    if path.exists():
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError):
            data = {}
    data[str(len(psi))] = {"re": psi.real.tolist(), "im": psi.imag.tolist()}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh)


def find_sic_fiducial(
    d: int,
    restarts: int = 50,
    tol: float = 1e-6,
    seed: int = 7,
    cache: Path | str | None = FIDUCIAL_CACHE,
) -> np.ndarray:
    """Find a unit vector whose displaced copies have pairwise-equal overlaps.

    Runs projected quasi-Newton descent from random starts until the largest
    deviation of |<psi|D|psi>|^2 from 1/(d+1) drops below `tol`.  Successful
    fiducials are written to `cache` and reused on later calls.
    """
    if d < 2:
        raise ValueError("dimension must be >= 2")
    cache_path = Path(cache) if cache is not None else None
    disp = _displacements(d)
    if cache_path is not None:
        psi = _load_cached_fiducial(d, cache_path)
        if psi is not None and len(psi) == d and sic_deviation(psi, disp) < tol:
            return psi
    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(restarts):
        psi = _search_once(d, disp, rng)
        dev = sic_deviation(psi, disp)
        if dev < best:
            best = dev
        if dev < tol:
            if cache_path is not None:
                try:
                    _store_cached_fiducial(psi, cache_path)
                except OSError:
                    pass
            return psi
    raise FiducialSearchError(d, best)


@dataclass
class PovmSet:
    """Informationally complete measurement set built from a fiducial orbit.

    elements[k] = D_k |psi><psi| D_k^dag / d for the d^2 displacements D_k;
    they sum to the identity and share trace 1/d.
    """

    d: int
    fiducial: np.ndarray
    elements: np.ndarray

    def __post_init__(self):
        self.fiducial = np.asarray(self.fiducial, dtype=np.complex128)
        self.elements = np.asarray(self.elements, dtype=np.complex128)
        if self.elements.shape != (self.d**2, self.d, self.d):
            raise ValueError("elements must have shape (d^2, d, d)")

    @property
    def n_elements(self) -> int:
        return self.d**2

    def probabilities(self, state: np.ndarray) -> np.ndarray:
        """Outcome probabilities Tr(Pi_k rho) for a density matrix or ket."""
        state = np.asarray(state, dtype=np.complex128)
        if state.ndim == 1:
            rho = np.outer(state, state.conj())
        else:
            rho = state
        return np.real(np.einsum("kij,ji->k", self.elements, rho))

    def completeness_residual(self) -> float:
        return float(np.max(np.abs(self.elements.sum(axis=0) - np.eye(self.d))))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "fiducial_re": self.fiducial.real.tolist(),
            "fiducial_im": self.fiducial.imag.tolist(),
        }


def sic_povm(d: int, fiducial: np.ndarray, tol: float = 1e-5) -> PovmSet:
    """Build the d^2-element POVM from a fiducial vector, validating it first."""
    psi = np.asarray(fiducial, dtype=np.complex128)
    if psi.shape != (d,):
        raise ValueError(f"fiducial must have length {d}")
    if abs(np.linalg.norm(psi) - 1.0) > 1e-8:
        raise ValueError("fiducial must be unit norm")
    disp = _displacements(d)
    dev = sic_deviation(psi, disp)
    if dev > tol:
        raise ValueError(f"fiducial is not SIC: deviation {dev:.3e} > {tol:g}")
    vecs = disp @ psi
    elements = np.einsum("ki,kj->kij", vecs, vecs.conj()) / d
    return PovmSet(d=d, fiducial=psi, elements=elements)


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Gaussian matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


@dataclass
class OrderFindingResult:
    """Joint readout distribution and the classically post-processed period."""

    register_size: int
    modulus: int
    base: int
    joint: np.ndarray           # p(y, f) over register-1 value y and residue f
    residues: np.ndarray        # residue value of each joint column
    marginal: np.ndarray        # register-1 marginal p(y)
    period: int
    factors: tuple[int, int] | None


def _period_from_peak(y: int, n: int, base: int, modulus: int) -> int | None:
    """Continued-fraction candidate periods from a register-1 outcome."""
    if y == 0:
        return None
    frac = Fraction(y, n)
    for den in range(1, modulus + 1):
        cand = frac.limit_denominator(den).denominator
        if cand > 1 and pow(base, cand, modulus) == 1:
            return cand
    return None


def order_finding_demo(register_size: int, modulus: int, base: int) -> OrderFindingResult:
    """Simulate the compiled order-finding routine on entangled registers.

    Starting from the correlated state sum_x |x>|x>, the Fourier transform
    acts on register 1 and the modular exponential relabels register 2.  The
    joint distribution p(y, f) = |sum_{x: base^x = f} exp(2 pi i x y / n)|^2
    / n^2 exposes the period r of base^x mod modulus; continued fractions on
    the high-probability y values recover r, and gcd(base^(r/2) +- 1,
    modulus) yields the factors when r is even.
    """
    n, M, a = register_size, modulus, base
    if math.gcd(a, M) != 1:
        raise ValueError("base must be coprime to the modulus")
    if n < M or n & (n - 1):
        raise ValueError("register size must be a power of 2 and >= modulus")
    fx = np.array([pow(a, x, M) for x in range(n)])
    residues = np.unique(fx)
    y = np.arange(n)
    joint = np.empty((n, len(residues)))
    for j, f in enumerate(residues):
        xs = np.flatnonzero(fx == f)
        amp = np.exp(2j * math.pi * np.outer(y, xs) / n).sum(axis=1)
        joint[:, j] = np.abs(amp) ** 2 / n**2
    marginal = joint.sum(axis=1)
    # classical post-processing over outcomes sorted by probability
    order = np.argsort(marginal)[::-1]
    period = 0
    for yy in order:
        if marginal[yy] < 1e-12:
            break
        cand = _period_from_peak(int(yy), n, a, M)
        if cand is not None:
            period = cand if period == 0 else min(period, cand)
    if period == 0 or pow(a, period, M) != 1:
        raise RuntimeError(
            f"no convergent recovered the period for base {a} mod {M}; "
            f"marginal={marginal.tolist()}"
        )
    factors = None
    if period % 2 == 0:
        half = pow(a, period // 2, M)
        g1, g2 = math.gcd(half - 1, M), math.gcd(half + 1, M)
        cands = sorted(g for g in (g1, g2) if 1 < g < M)
        if len(cands) == 2:
            factors = (cands[0], cands[1])
        elif len(cands) == 1:
            factors = (cands[0], M // cands[0])
    return OrderFindingResult(
        register_size=n,
        modulus=M,
        base=a,
        joint=joint,
        residues=residues,
        marginal=marginal,
        period=period,
        factors=factors,
    )

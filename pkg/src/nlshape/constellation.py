"""Square-QAM geometry, PMF algebra and the Maxwell-Boltzmann family.

Points of an ``M``-ary square QAM are stored in row-major grid order:
index ``k = row * S + col`` with ``S = sqrt(M)``, real part taken from
``levels[col]`` and imaginary part from ``levels[row]``, where ``levels`` is
the ascending odd-integer ladder ``-(S-1), ..., -1, 1, ..., S-1`` (scaled).
Negation then maps ``k -> M - 1 - k`` and conjugation flips the row, which is
what the quadrant-symmetry helpers below rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "Constellation",
    "Pmf",
    "make_square_qam",
    "normalize_energy",
    "energy",
    "moments",
    "normalized_moments",
    "entropy",
    "mb_pmf",
    "boltzmann_pmf",
    "mb_nu_from_lambda",
    "kl_divergence",
    "marginals",
    "nearest_product_pmf",
    "is_product",
    "orbit_index",
    "symmetrize",
    "uniform_pmf",
    "write_pmf",
    "read_pmf",
]

SUM_TOL = 1e-12
ENERGY_TOL = 1e-9
CLAMP_EPS = 1e-12


class EnergyNormalizationError(ValueError):
    """Raised when a constellation is not unit-energy under the given PMF."""


class ConvergenceError(RuntimeError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _side(M: int) -> int:
    S = math.isqrt(M)
    if S * S != M:
        raise ValueError(f"{M} points do not form a square grid")
    return S


@dataclass(frozen=True)
class Constellation:
    """Complex constellation points ``x_1..x_M`` and bits per symbol."""

    points: np.ndarray
    order: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.complex128).ravel()
        if pts.size != 2**self.order:
            raise ValueError(f"expected {2**self.order} points, got {pts.size}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("constellation points must be finite")
        object.__setattr__(self, "points", _readonly(pts))

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def side(self) -> int:
        return _side(self.size)

    def scaled(self, factor: float) -> "Constellation":
        return Constellation(self.points * factor, self.order)


@dataclass(frozen=True)
class Pmf:
    """Probability mass function over the points of a constellation.

    ``symmetric=True`` asserts exact quadrant symmetry (``P(x) = P(-x) =
    P(x*)``) under the square-grid ordering; it is checked bitwise.
    """

    probs: np.ndarray
    symmetric: bool = field(default=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).ravel()
        if p.size == 0 or not np.all(np.isfinite(p)):
            raise ValueError("PMF must be a non-empty finite vector")
        if np.any(p < 0):
            raise ValueError("PMF entries must be nonnegative")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"PMF sums to {p.sum():.15g}, not 1")
        if self.symmetric:
            neg, conj = _symmetry_maps(p.size)
            if not (np.array_equal(p, p[neg]) and np.array_equal(p, p[conj])):
                raise ValueError("PMF flagged symmetric but is not quadrant symmetric")
        object.__setattr__(self, "probs", _readonly(p))

    @classmethod
    def from_weights(cls, weights, symmetric: bool = False) -> "Pmf":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum(), symmetric=symmetric)

    @property
    def size(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size


def uniform_pmf(M: int) -> Pmf:
    return Pmf(np.full(M, 1.0 / M), symmetric=math.isqrt(M) ** 2 == M)


def make_square_qam(m: int) -> Constellation:
    """Square ``2**m``-QAM on the odd-integer grid, unit energy under uniform input."""
    if m not in (2, 4, 6, 8):
        raise ValueError(f"bits per symbol must be one of 2, 4, 6, 8; got {m}")
    S = 2 ** (m // 2)
    levels = np.arange(-(S - 1), S, 2, dtype=np.float64)
    re, im = np.meshgrid(levels, levels)  # rows: imaginary, cols: real
    pts = (re + 1j * im).ravel()
    pts /= np.sqrt(np.mean(np.abs(pts) ** 2))
    return Constellation(pts, m)


def _symmetry_maps(M: int) -> tuple[np.ndarray, np.ndarray]:
    S = _side(M)
    k = np.arange(M)
    row, col = divmod(k, S)
    neg = (M - 1) - k
    conj = (S - 1 - row) * S + col
    return neg, conj


def orbit_index(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrant-symmetry orbits of a square grid.

    Returns
    -------
    labels : ndarray of int, shape (M,)
        Orbit label of each point, in ``range(M // 4)``.
    reps : ndarray of int, shape (M // 4,)
        One representative (first-quadrant point) per orbit.
    """
    S = _side(M)
    if S % 2:
        raise ValueError("quadrant orbits need an even grid side")
    h = S // 2
    k = np.arange(M)
    row, col = divmod(k, S)
    # fold onto the first quadrant: row, col >= h
    r = np.where(row >= h, row - h, h - 1 - row)
    c = np.where(col >= h, col - h, h - 1 - col)
    labels = r * h + c
    reps = ((np.arange(h)[:, None] + h) * S + (np.arange(h)[None, :] + h)).ravel()
    return labels, reps


def symmetrize(p: Pmf) -> Pmf:
    """Average each quadrant-symmetry orbit; the result is exactly symmetric."""
    labels, _ = orbit_index(p.size)
    orbit_mass = np.bincount(labels, weights=p.probs, minlength=p.size // 4)
    q = orbit_mass[labels] / 4.0
    return Pmf(q / q.sum(), symmetric=True)


def energy(c: Constellation, p: Pmf) -> float:
    _check_sizes(c, p)
    return float(np.dot(p.probs, np.abs(c.points) ** 2))


def normalize_energy(c: Constellation, p: Pmf) -> Constellation:
    """Rescale ``c`` so that ``sum_i P(x_i) |x_i|^2 == 1``."""
    return c.scaled(1.0 / math.sqrt(energy(c, p)))


def moments(c: Constellation, p: Pmf) -> tuple[float, float]:
    """Fourth and sixth moments ``E|X|^4`` and ``E|X|^6`` of a unit-energy input.

    Raises
    ------
    EnergyNormalizationError
        If ``c`` is not unit-energy under ``p`` (relative deviation > 1e-9).
    """
    e = energy(c, p)
    if abs(e - 1.0) > ENERGY_TOL:
        raise EnergyNormalizationError(f"constellation energy is {e!r} under this PMF")
    a2 = np.abs(c.points) ** 2
    return float(np.dot(p.probs, a2**2)), float(np.dot(p.probs, a2**3))


def normalized_moments(c: Constellation, p: Pmf) -> tuple[float, float]:
    return moments(normalize_energy(c, p), p)


def entropy(p: Pmf) -> float:
    q = p.probs[p.probs > 0]
    return float(-np.sum(q * np.log2(q)))


def _boltzmann(a2: np.ndarray, lam: float) -> np.ndarray:
    w = np.exp(-lam * (a2 - a2.min()))
    return w / w.sum()


def boltzmann_pmf(c: Constellation, lam: float) -> Pmf:
    """``P(x) ~ exp(-lam |x|^2)`` with ``|x|`` taken at the scale ``c`` is stored at."""
    M = c.size
    return Pmf(_boltzmann(np.abs(c.points) ** 2, lam), symmetric=math.isqrt(M) ** 2 == M)


def mb_nu_from_lambda(c: Constellation, lam: float) -> float:
    """Self-normalized MB parameter of ``boltzmann_pmf(c, lam)``.

    Rescaling ``c`` to unit energy under ``P ~ exp(-lam |c|^2)`` turns the
    exponent into ``lam * E_P[|c|^2]``; this map is monotone in ``lam``.
    """
    a2 = np.abs(c.points) ** 2
    return float(lam * np.dot(_boltzmann(a2, lam), a2))


def mb_pmf(c: Constellation, nu: float, tol: float = 1e-10, max_iter: int = 1000) -> Pmf:
    """Maxwell-Boltzmann PMF ``P(x) ~ exp(-nu |x|^2)`` on a self-normalized grid.

    ``|x|^2`` is measured after scaling the constellation to unit energy under
    the returned PMF itself, so the PMF is a fixed point of
    ``P <- MB(nu, normalize_energy(c, P))``. Plain iteration of that map
    contracts with rate close to 1 once the PMF is near-Gaussian (``nu``
    around 1), so the scalar equation ``lam * E(lam) = nu`` is solved by
    bracketing first and the fixed point is then confirmed (L1 change below
    ``tol``) by iterating the map itself.
    """
    if not nu >= 0 or not math.isfinite(nu):
        raise ValueError(f"nu must be finite and nonnegative, got {nu}")
    M = c.size
    if nu == 0:
        return uniform_pmf(M)
    a2 = np.abs(c.points) ** 2
    lam_hi = nu / a2.min()
    lam = brentq(lambda t: t * np.dot(_boltzmann(a2, t), a2) - nu, 0.0, lam_hi,
                 xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    p = _boltzmann(a2, lam)
    for _ in range(max_iter):
        p_new = _boltzmann(a2, nu / float(np.dot(p, a2)))
        if np.abs(p_new - p).sum() < tol:
            return Pmf(p_new, symmetric=math.isqrt(M) ** 2 == M)
        p = p_new
    raise ConvergenceError(f"MB energy fixed point did not converge for nu={nu}")


def kl_divergence(p: Pmf, q: Pmf) -> float:
    """Relative entropy ``D(p || q)`` in bits."""
    if p.size != q.size:
        raise ValueError("PMFs have different sizes")
    supp = p.probs > 0
    if np.any(q.probs[supp] == 0):
        raise ValueError("p is not absolutely continuous w.r.t. q")
    pp, qq = p.probs[supp], q.probs[supp]
    return float(max(np.sum(pp * np.log2(pp / qq)), 0.0))


def marginals(p: Pmf) -> tuple[np.ndarray, np.ndarray]:
    """In-phase (over columns) and quadrature (over rows) marginal PMFs."""
    S = _side(p.size)
    grid = p.probs.reshape(S, S)
    return grid.sum(axis=0), grid.sum(axis=1)


def nearest_product_pmf(p: Pmf) -> Pmf:
    """The product of ``p``'s two marginals, the KL-closest product PMF to ``p``."""
    p_i, p_q = marginals(p)
    prod = np.outer(p_q, p_i).ravel()
    prod = prod / prod.sum()
    sym = False
    if p.symmetric:
        neg, conj = _symmetry_maps(p.size)
        sym = np.array_equal(prod, prod[neg]) and np.array_equal(prod, prod[conj])
    return Pmf(prod, symmetric=sym)


def is_product(p: Pmf, atol: float = 1e-13) -> bool:
    if math.isqrt(p.size) ** 2 != p.size:
        return False
    p_i, p_q = marginals(p)
    return bool(np.max(np.abs(np.outer(p_q, p_i).ravel() - p.probs)) <= atol)


def _check_sizes(c: Constellation, p: Pmf) -> None:
    if c.size != p.size:
        raise ValueError(f"constellation has {c.size} points, PMF has {p.size}")


def clamp(p: Pmf, eps: float = CLAMP_EPS) -> Pmf:
    q = np.where(p.probs < eps, 0.0, p.probs)
    q = q / q.sum()
    sym = p.symmetric
    if sym:
        neg, conj = _symmetry_maps(q.size)
        sym = np.array_equal(q, q[neg]) and np.array_equal(q, q[conj])
    return Pmf(q, symmetric=sym)


def write_pmf(path, c: Constellation, p: Pmf) -> None:
    """Write ``p`` as ``# m=<bits> sym=<0|1>`` followed by ``re im prob`` lines.

    Probabilities below 1e-12 are zeroed and the rest renormalized first;
    coordinates are the unit-energy points under the written PMF.
    """
    q = clamp(p)
    cn = normalize_energy(c, q)
    lines = [f"# m={c.order} sym={int(q.symmetric)}"]
    for x, pr in zip(cn.points, q.probs):
        lines.append(f"{x.real:.12g} {x.imag:.12g} {pr:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pmf(path) -> tuple[Constellation, Pmf]:
    text = Path(path).read_text().splitlines()
    header = text[0].lstrip("#").split()
    meta = dict(tok.split("=", 1) for tok in header)
    m, sym = int(meta["m"]), bool(int(meta["sym"]))
    rows = np.array([[float(v) for v in ln.split()] for ln in text[1:] if ln.strip()])
    if rows.shape != (2**m, 3):
        raise ValueError(f"{path}: expected {2**m} rows of 're im prob'")
    c = make_square_qam(m)
    pts = rows[:, 0] + 1j * rows[:, 1]
    scale = np.vdot(c.points, pts).real / np.vdot(c.points, c.points).real
    if not np.allclose(pts, scale * c.points, atol=1e-9):
        raise ValueError(f"{path}: points are not a scaled square grid in row-major order")
    probs = rows[:, 2] / rows[:, 2].sum()
    p = Pmf(probs)
    if sym:
        p = symmetrize(p)
    return c, p

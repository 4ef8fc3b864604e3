"""PMF optimizers: Lin-MB, EGN-MB, EGN-2D and SSFM-BA.

The MB searches run over the inverse temperature ``lam`` of
``P ~ exp(-lam |c|^2)`` on the reference grid rather than over the
self-normalized ``nu``: the two are a monotone reparametrization of each
other, but ``nu`` crowds the whole near-Gaussian range into a sliver around
1 (the continuous Gaussian has ``nu == 1``), which golden-section cannot
resolve. Reports carry ``nu``.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
import yaml
from scipy.optimize import brentq
from scipy.special import erf

from ._jit import njit

from .constellation import (
    Constellation,
    Pmf,
    boltzmann_pmf,
    entropy,
    mb_nu_from_lambda,
    normalized_moments,
    orbit_index,
    symmetrize,
    uniform_pmf,
    write_pmf,
)
from .egn import EgnCoefficients, LinkConfig, egn_snr, optimal_power_w
from .metrics import (
    LOG2E,
    PerPointStats,
    SymbolRecords,
    _gh,
    air_mismatched,
    awgn_mi,
    mi_terms,
    per_point_stats,
)
from .ssfm import SignalConfig, propagate, rx_detect, tx_generate

log = logging.getLogger(__name__)

__all__ = [
    "Method",
    "OptimizerReport",
    "lin_mb",
    "egn_mb",
    "egn_2d",
    "ssfm_ba",
    "blahut_arimoto_gaussian",
    "blahut_arimoto_binned",
    "project_simplex",
    "OPTIMAL",
    "egn_operating_point",
]

# launch policy: a fixed per-channel power in W, or OPTIMAL for the EGN
# optimum of each candidate PMF
OPTIMAL = "optimal"
LaunchPolicy = Union[float, str]


class Method(str, enum.Enum):
    LIN_MB = "LIN_MB"
    EGN_MB = "EGN_MB"
    EGN_2D = "EGN_2D"
    SSFM_BA = "SSFM_BA"
    UNIFORM = "UNIFORM"


@dataclass
class OptimizerReport:
    pmf: Pmf
    predicted_air: float
    predicted_snr: float
    iterations: int
    converged: bool
    method: Method
    nu: float | None = None
    flags: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    history: list[dict] = field(default_factory=list)

    def to_dict(self, pmf_file: str | None = None) -> dict:
        d = {
            "method": self.method.value,
            "pmf_file": pmf_file,
            "predicted_air_2d": float(self.predicted_air),
            "predicted_snr_db": float(self.predicted_snr),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "wall_time_s": round(float(self.wall_time), 3),
            "flags": list(self.flags),
        }
        if self.nu is not None:
            d["nu"] = float(self.nu)
        return d

    def save(self, directory, stem: str, c: Constellation) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        pmf_path = directory / f"{stem}.pmf"
        write_pmf(pmf_path, c, self.pmf)
        out = directory / f"{stem}.report.yaml"
        out.write_text(yaml.safe_dump(self.to_dict(pmf_path.name), sort_keys=False))
        return out


# --------------------------------------------------------------------------
# 1D searches over the MB family


def _golden_max(f, a, b, tol, max_iter=200):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while abs(b - a) > tol and it < max_iter:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
        it += 1
    return (c, fc, it) if fc >= fd else (d, fd, it)


def _lambda_ceiling(c: Constellation, h_floor: float = 2.05) -> float:
    """Inverse temperature beyond which the MB PMF is essentially QPSK-like."""
    lam = 1.0
    floor = max(h_floor, 2.0 + 1e-3) if c.size > 4 else 1.0
    while entropy(boltzmann_pmf(c, lam)) > floor and lam < 1e6:
        lam *= 2.0
    return lam


def _search_mb(c: Constellation, objective: Callable[[float], float], n_grid: int, tol: float):
    """Grid-guarded golden-section maximization of ``objective(lam)``.

    The grid is uniform in ``sqrt(lam)``, which spreads the entropy range more
    evenly than a uniform ``lam`` grid.
    """
    lam_hi = _lambda_ceiling(c)
    grid = np.linspace(0.0, math.sqrt(lam_hi), n_grid) ** 2
    vals = np.array([objective(t) for t in grid])
    k = int(np.argmax(vals))
    flat = float(vals.max() - vals.min()) < 1e-12
    if flat:
        return 0.0, float(vals[0]), n_grid, True
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, n_grid - 1)]
    lam, val, it = _golden_max(objective, a, b, tol)
    if vals[k] > val:
        lam, val = grid[k], float(vals[k])
    return float(lam), float(val), n_grid + it, False


def lin_mb(c: Constellation, snr_db: float, n_grid: int = 200, tol: float = 1e-6) -> OptimizerReport:
    """MB PMF maximizing AWGN mutual information at a fixed ``snr_db``."""
    t0 = time.perf_counter()

    def obj(lam):
        return awgn_mi(c, boltzmann_pmf(c, lam), snr_db)

    lam, mi, iters, flat = _search_mb(c, obj, n_grid, tol)
    p = boltzmann_pmf(c, lam)
    flags = ["flat_objective"] if flat else []
    return OptimizerReport(p, mi, snr_db, iters, not flat or snr_db == -math.inf, Method.LIN_MB,
                           nu=mb_nu_from_lambda(c, lam), flags=flags,
                           wall_time=time.perf_counter() - t0)


def _launch_power(coef: EgnCoefficients, policy: LaunchPolicy, mu4: float, mu6: float) -> float:
    if isinstance(policy, str):
        if policy != OPTIMAL:
            raise ValueError(f"unknown launch policy {policy!r}")
        return optimal_power_w(coef, mu4, mu6)
    return float(policy)


def egn_operating_point(c: Constellation, p: Pmf, coef: EgnCoefficients, policy: LaunchPolicy):
    """(launch power W, EGN SNR dB, AWGN MI) of ``p`` under ``coef``."""
    mu4, mu6 = normalized_moments(c, p)
    pw = _launch_power(coef, policy, mu4, mu6)
    snr = egn_snr(coef, pw, mu4, mu6)
    return pw, snr, awgn_mi(c, p, snr)


def _with_uniform_baseline(report: OptimizerReport, c, coef, policy) -> OptimizerReport:
    u = uniform_pmf(c.size)
    _, snr_u, mi_u = egn_operating_point(c, u, coef, policy)
    if mi_u > report.predicted_air:
        report.pmf, report.predicted_air, report.predicted_snr = u, mi_u, snr_u
        report.nu = 0.0
        report.flags.append("uniform_baseline_better")
    return report


def egn_mb(c: Constellation, coef: EgnCoefficients, p_launch_policy: LaunchPolicy,
           n_grid: int = 200, tol: float = 1e-6) -> OptimizerReport:
    """MB PMF maximizing AWGN MI at the SNR the EGN model assigns to it."""
    t0 = time.perf_counter()

    def obj(lam):
        return egn_operating_point(c, boltzmann_pmf(c, lam), coef, p_launch_policy)[2]

    lam, mi, iters, flat = _search_mb(c, obj, n_grid, tol)
    p = boltzmann_pmf(c, lam)
    _, snr, _ = egn_operating_point(c, p, coef, p_launch_policy)
    rep = OptimizerReport(p, mi, snr, iters, True, Method.EGN_MB, nu=mb_nu_from_lambda(c, lam),
                          flags=["flat_objective"] if flat else [])
    rep = _with_uniform_baseline(rep, c, coef, p_launch_policy)
    rep.wall_time = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# EGN-2D: mirror ascent over quadrant-symmetric PMFs


def project_simplex(v: np.ndarray, z: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum w = z}`` (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


class _Egn2dObjective:
    """MI at the EGN SNR as a function of orbit masses, with exact gradient."""

    def __init__(self, c: Constellation, coef: EgnCoefficients, policy: LaunchPolicy, order: int):
        self.c, self.coef, self.policy, self.order = c, coef, policy, order
        self.labels, self.reps = orbit_index(c.size)
        self.a2 = np.abs(c.points) ** 2
        self.n_eval = 0

    def pmf(self, w: np.ndarray) -> Pmf:
        q = np.maximum(w, 0.0)[self.labels] / 4.0
        return Pmf(q / q.sum(), symmetric=True)

    def __call__(self, w: np.ndarray):
        self.n_eval += 1
        p = self.pmf(w)
        P, a2 = p.probs, self.a2
        E = float(P @ a2)
        mu4 = float(P @ a2**2) / E**2
        mu6 = float(P @ a2**3) / E**3
        coef = self.coef
        pw = _launch_power(coef, self.policy, mu4, mu6)
        kappa = coef.kappa(mu4, mu6)
        inv_snr = coef.ase_var / pw + pw**2 * kappa
        n0 = E * inv_snr  # noise variance at the grid's reference scale
        mi, div, dmi_dn0 = mi_terms(self.c.points, p, n0, self.order)
        # d(1/snr)/dkappa is pw^2 for a fixed launch power, and also at the
        # per-PMF optimum (stationarity in pw)
        dk_dmu4 = coef.chi4 + 2 * (mu4 - 2) * coef.chi4p
        dmu4 = a2**2 / E**2 - 2 * mu4 * a2 / E
        dmu6 = a2**3 / E**3 - 3 * mu6 * a2 / E
        dn0 = a2 * inv_snr + E * pw**2 * (dk_dmu4 * dmu4 + coef.chi6 * dmu6)
        grad_p = div - LOG2E + dmi_dn0 * dn0
        # orbit masses: each member carries w/4 and shares the same gradient
        g = grad_p[self.reps]
        snr_db = 10 * math.log10(1 / inv_snr)
        return mi, g, snr_db


def egn_2d(c: Constellation, coef: EgnCoefficients, p_launch_policy: LaunchPolicy,
           init: Pmf | None = None, max_iter: int = 10_000, pg_tol: float = 1e-7,
           mi_tol: float = 1e-8, order: int = 24) -> OptimizerReport:
    """Quadrant-symmetric PMF maximizing AWGN MI at its EGN SNR.

    Exponentiated-gradient ascent (mirror ascent in the entropy geometry) on
    the ``M/4`` orbit masses with a monotone backtracking step. Multiplicative
    updates keep every mass positive and move small outer-ring masses on a
    log scale, which Euclidean projected gradient does very slowly.

    Stops when the projected-gradient norm drops below ``pg_tol`` or the
    objective gains less than ``mi_tol`` over 10 iterations.
    """
    t0 = time.perf_counter()
    obj = _Egn2dObjective(c, coef, p_launch_policy, order)
    K = obj.reps.size
    if init is None:
        w = np.full(K, 1.0 / K)
    else:
        w = np.bincount(obj.labels, weights=symmetrize(init).probs, minlength=K)
        w = np.maximum(w, 1e-12)  # multiplicative updates cannot revive zeros
        w /= w.sum()
    f, g, snr = obj(w)
    hist = [f]
    eta = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(project_simplex(w + g) - w) < pg_tol:
            converged = True
            break
        while True:
            w_new = w * np.exp(eta * (g - g.max()))
            w_new /= w_new.sum()
            f_new, g_new, snr_new = obj(w_new)
            if f_new >= f or eta < 1e-12:
                break
            eta *= 0.5
        if f_new < f:
            converged = True  # no ascent left at rounding level
            break
        w, f, g, snr = w_new, f_new, g_new, snr_new
        eta *= 1.5
        hist.append(f)
        if len(hist) > 10 and hist[-1] - hist[-11] < mi_tol:
            converged = True
            break
    pmf = obj.pmf(w)
    # the search runs on a coarse rule; report the MI on the accurate one
    rep = OptimizerReport(pmf, awgn_mi(c, pmf, snr), snr, it, converged, Method.EGN_2D)
    if not converged:
        rep.flags.append("max_iter_reached")
    rep = _with_uniform_baseline(rep, c, coef, p_launch_policy)
    rep.wall_time = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# Blahut-Arimoto on a fitted per-point Gaussian channel


@njit(cache=True)
def _gauss_div_kernel(sr, si, sv, mr, mi, mv, logp, zr, zi, wz):
    S, M, N = sr.size, mr.size, zr.size
    out = np.zeros(S)
    expo = np.empty(M)
    lognorm = np.empty(M)
    for j in range(M):
        lognorm[j] = logp[j] - math.log(mv[j])
    for s in range(S):
        sd = math.sqrt(sv[s])
        own0 = -math.log(sv[s])
        for k in range(N):
            yr = sr[s] + sd * zr[k]
            yi = si[s] + sd * zi[k]
            mx = -np.inf
            for j in range(M):
                dr = yr - mr[j]
                di = yi - mi[j]
                e = lognorm[j] - (dr * dr + di * di) / mv[j]
                expo[j] = e
                if e > mx:
                    mx = e
            acc = 0.0
            for j in range(M):
                acc += math.exp(expo[j] - mx)
            own = own0 - (zr[k] * zr[k] + zi[k] * zi[k])
            out[s] += wz[k] * (own - mx - math.log(acc))
    return out


def _gauss_divergences(mu: np.ndarray, var: np.ndarray, probs: np.ndarray, order: int,
                       sources: np.ndarray | None = None):
    """``D(q(.|x_i) || q_P)`` in nats for ``q(y|x_i) = CN(mu_i, var_i)``.

    Only the points listed in ``sources`` are evaluated (all by default).
    """
    t, w = _gh(order)
    tr, ti = np.meshgrid(t, t)
    zr, zi = tr.ravel().copy(), ti.ravel().copy()
    wz = (np.outer(w, w) / math.pi).ravel()
    act = probs > 0
    src = np.arange(mu.size) if sources is None else sources
    return _gauss_div_kernel(
        mu.real[src].copy(), mu.imag[src].copy(), var[src].copy(),
        mu.real[act].copy(), mu.imag[act].copy(), var[act].copy(),
        np.log(probs[act]), zr, zi, wz)


def _tilt(logp, d, cost, target):
    """Normalized ``P exp(d - s cost)`` with ``s`` meeting the mean cost ``target``."""

    def pmf(sv):
        z = logp + d if cost is None else logp + d - sv * cost
        q = np.exp(z - z.max())
        return q / q.sum()

    if cost is None:
        return pmf(0.0), 0.0
    scale = 1.0 / float(np.mean(cost))
    lo, hi = -scale, scale
    g = lambda sv: float(pmf(sv) @ cost) - target  # noqa: E731, decreasing in s
    while g(lo) < 0:
        lo *= 2
        if lo < -1e8 * scale:
            raise ValueError("cost target above the largest point cost")
    while g(hi) > 0:
        hi *= 2
        if hi > 1e8 * scale:
            raise ValueError("cost target below the smallest point cost")
    sv = brentq(g, lo, hi, xtol=1e-14 * scale, rtol=1e-12)
    return pmf(sv), sv


def _ba_loop(div_fn, M, init, cost, target, tol, max_iter, symmetric):
    p = np.full(M, 1.0 / M) if init is None else np.asarray(init, dtype=float).copy()
    labels = orbit_index(M)[0] if symmetric else None
    if cost is not None:
        cost = np.asarray(cost, dtype=float)
        if target is None:
            target = float(p @ cost)
        # start on the constraint surface
        p, _ = _tilt(np.log(np.maximum(p, 1e-300)), np.zeros(M), cost, target)
    mi = 0.0
    for it in range(1, max_iter + 1):
        d = div_fn(p)
        mi = float(p @ d)
        q, sv = _tilt(np.log(np.maximum(p, 1e-300)), d, cost, target)
        dc = d if cost is None else d - sv * cost
        gap = (float(dc.max()) - float(p @ dc)) * LOG2E
        if gap < tol:
            return _ba_pmf(p, labels), mi * LOG2E, it, True
        p = q if labels is None else _orbit_average(q, labels)
    return _ba_pmf(p, labels), mi * LOG2E, max_iter, False


def blahut_arimoto_gaussian(mu: np.ndarray, var: np.ndarray, init: np.ndarray | None = None,
                            tol: float = 1e-6, max_iter: int = 2000, order: int = 24,
                            symmetric: bool = True, cost: np.ndarray | None = None,
                            target: float | None = None):
    """Capacity-achieving input of a continuous-output per-point Gaussian channel.

    Iterates ``P(x_i) <- P(x_i) exp(D_i - s cost_i) / Z``. Without ``cost``
    this is plain Blahut-Arimoto; with it, ``s`` is re-solved every step so
    that ``sum P cost == target`` (default: the cost of ``init``), which is
    the power constraint of a transmitter that renormalizes its launch power.
    Stops when ``max_i (D_i - s cost_i) - sum P (D - s cost)`` falls below
    ``tol`` bits.

    Returns
    -------
    pmf, mi_bits, iterations, converged
    """
    M = mu.size
    reps = orbit_index(M)[1] if symmetric else None
    labels = orbit_index(M)[0] if symmetric else None

    def div(p):
        if reps is None:
            return _gauss_divergences(mu, var, p, order)
        return _gauss_divergences(mu, var, p, order, sources=reps)[labels]

    return _ba_loop(div, M, init, cost, target, tol, max_iter, symmetric)


def blahut_arimoto_binned(mu: np.ndarray, var: np.ndarray, n_bins: int = 96,
                          init: np.ndarray | None = None, tol: float = 1e-6,
                          max_iter: int = 2000, symmetric: bool = True,
                          cost: np.ndarray | None = None, target: float | None = None):
    """Blahut-Arimoto on the channel quantized to a square grid of output bins.

    Transition probabilities integrate each Gaussian over the bins (the
    outermost bins extend to infinity). ``cost`` and ``target`` as in
    :func:`blahut_arimoto_gaussian`.
    """
    M = mu.size
    reach = float(np.max(np.abs(mu.real)) + 6 * np.sqrt(var.max()))
    reach = max(reach, float(np.max(np.abs(mu.imag)) + 6 * np.sqrt(var.max())))
    edges = np.linspace(-reach, reach, n_bins + 1)
    edges[0], edges[-1] = -np.inf, np.inf
    sd = np.sqrt(var / 2)[:, None]
    cdf_r = 0.5 * (1 + erf((edges[None, :] - mu.real[:, None]) / (sd * math.sqrt(2))))
    cdf_i = 0.5 * (1 + erf((edges[None, :] - mu.imag[:, None]) / (sd * math.sqrt(2))))
    pr, pi = np.diff(cdf_r, axis=1), np.diff(cdf_i, axis=1)
    W = (pi[:, :, None] * pr[:, None, :]).reshape(M, -1)
    W /= W.sum(axis=1, keepdims=True)
    logW = np.log(np.maximum(W, 1e-300))

    def div(p):
        q = p @ W
        return np.sum(W * (logW - np.log(np.maximum(q, 1e-300))[None, :]), axis=1)

    return _ba_loop(div, M, init, cost, target, tol, max_iter, symmetric)


def _orbit_average(p, labels):
    m = np.bincount(labels, weights=p)
    return m[labels] / 4.0 / m.sum()


def _ba_pmf(p, labels) -> Pmf:
    if labels is None:
        return Pmf(p / p.sum())
    return symmetrize(Pmf(p / p.sum()))


class _ChannelAccumulator:
    """Per-point Gaussian channel statistics pooled over outer iterations.

    Under a renormalizing transmitter the received means scale with
    ``1/sqrt(E_p)`` while the noise variance in the normalized frame does
    not, so means are stored in the reference frame (times ``sqrt(E_p)``)
    and variances in the normalized frame. Both are then PMF-independent
    for a linear channel and pooling them averages out estimation noise.
    """

    def __init__(self, c: Constellation):
        self.c = c
        self.n = np.zeros(c.size)
        self.sum_mean = np.zeros(c.size, dtype=complex)
        self.sum_var = np.zeros(c.size)
        self.n_var = np.zeros(c.size)

    def add(self, recs: SymbolRecords, p: Pmf) -> None:
        st = per_point_stats(recs, self.c)
        scale = math.sqrt(float(p.probs @ np.abs(self.c.points) ** 2))
        n = st.counts.astype(float)
        self.n += n
        self.sum_mean += np.where(n > 0, n * np.nan_to_num(st.means) * scale, 0)
        ok = n >= 2
        self.sum_var += np.where(ok, n * np.nan_to_num(st.variances), 0.0)
        self.n_var += np.where(ok, n, 0.0)

    def fit(self):
        """Quadrant-symmetric (reference-frame means, normalized-frame variances).

        Means are folded onto the orbit representative, averaged, and
        unfolded. Orbits without data get the ideal point and the variance
        pooled over all points.
        """
        a = self.c.points
        labels, reps = orbit_index(self.c.size)
        K = reps.size
        # sign flips carrying each point onto its representative
        fr = np.sign(a[reps][labels].real / a.real)
        fi = np.sign(a[reps][labels].imag / a.imag)
        m = self.sum_mean
        folded = fr * m.real + 1j * fi * m.imag
        n_orb = np.bincount(labels, weights=self.n, minlength=K)
        m_orb = (np.bincount(labels, weights=folded.real, minlength=K)
                 + 1j * np.bincount(labels, weights=folded.imag, minlength=K))
        v_orb = np.bincount(labels, weights=self.sum_var, minlength=K)
        nv_orb = np.bincount(labels, weights=self.n_var, minlength=K)
        pooled = float(self.sum_var.sum() / max(self.n_var.sum(), 1.0))
        ok = nv_orb >= 2
        m_orb = np.where(ok, m_orb / np.maximum(n_orb, 1.0), a[reps])
        v_orb = np.where(ok, v_orb / np.maximum(nv_orb, 1.0), pooled)
        mref = fr * m_orb[labels].real + 1j * fi * m_orb[labels].imag
        return mref, np.maximum(v_orb[labels], 1e-12)


def _ba_fixed_snr(mref, var, p: Pmf, a2, binned: bool, tol: float):
    """Blahut-Arimoto for a transmitter that renormalizes its launch power.

    A candidate PMF of reference-frame energy ``t`` sees the means ``mref``
    and the variances ``var t`` in the reference frame, so the problem is a
    power-constrained Blahut-Arimoto at each ``t`` plus a golden search over
    ``log t``.
    """
    e_p = float(p.probs @ a2)
    ba = blahut_arimoto_binned if binned else blahut_arimoto_gaussian
    warm = {"p": p.probs}
    cache = {}
    n_inner = [0]

    def run(logt):
        t = math.exp(logt)
        pmf, mi, it, ok = ba(mref, var * t, init=warm["p"], tol=tol, cost=a2, target=t)
        warm["p"] = pmf.probs
        n_inner[0] += it
        cache[logt] = (pmf, mi, ok)
        return mi

    e_unif = float(np.mean(a2))
    lo = math.log(1.02 * float(a2.min()))
    hi = math.log(0.5 * (max(e_unif, e_p) + float(a2.max())))
    logt, _, _ = _golden_max(run, lo, hi, tol=2e-3)
    pmf, mi, ok = cache[logt]
    return pmf, mi, n_inner[0], ok


def _simulate_center(c, cfg: SignalConfig, link: LinkConfig, p_total: float, p: Pmf, seed: int):
    cfg_i = cfg.replace(seed=seed)
    wave, idx = tx_generate(cfg_i, c, p, p_total / cfg.n_wdm)
    out = propagate(wave, link, p_total, seed=seed)
    return rx_detect(out, cfg_i, link, cfg.center_channel, idx, c, p)


def ssfm_ba(c: Constellation, cfg: SignalConfig, link: LinkConfig, p_total: float,
            max_outer: int = 20, tol: float = 1e-3, binned: bool = False,
            init: Pmf | None = None, simulate: Callable | None = None,
            inner_tol: float = 1e-5) -> OptimizerReport:
    """Blahut-Arimoto against a simulated channel, refitted every outer iteration.

    Each outer iteration transmits the current PMF through the simulator,
    adds the received symbols to a quadrant-symmetric per-point Gaussian
    channel estimate pooled over all iterations so far, and runs
    power-constrained Blahut-Arimoto to convergence on that channel. Stops
    when the PMF moves less than ``tol`` in L1, after ``max_outer``
    iterations, or when the L1 step has not decreased for 5 iterations
    (oscillation; the best-AIR iterate is returned).

    ``simulate(c, cfg, link, p_total, pmf, seed)`` may replace the SSFM
    channel; it must return :class:`SymbolRecords`.
    """
    t0 = time.perf_counter()
    sim = simulate or _simulate_center
    p = symmetrize(init) if init is not None else uniform_pmf(c.size)
    acc = _ChannelAccumulator(c)
    history = []
    steps: list[float] = []
    best = None
    converged, flags = False, []
    a2 = np.abs(c.points) ** 2
    mi, snr = 0.0, math.nan
    k = 0
    for k in range(1, max_outer + 1):
        recs = sim(c, cfg, link, p_total, p, cfg.seed + k - 1)
        acc.add(recs, p)
        mref, var = acc.fit()
        # pooled variances cover points too rare to have their own
        scale = math.sqrt(float(p.probs @ a2))
        air = air_mismatched(recs, c, p, PerPointStats(mref / scale, var, np.full(c.size, 2)))
        if best is None or air > best[0]:
            best = (air, p)
        p_new, mi, n_in, _ = _ba_fixed_snr(mref, var, p, a2, binned, inner_tol)
        e_new = float(p_new.probs @ a2)
        snr = 10 * math.log10(float(p_new.probs @ np.abs(mref) ** 2) / e_new
                              / float(p_new.probs @ var))
        step = float(np.abs(p_new.probs - p.probs).sum())
        history.append({"outer": k, "air": air, "ba_mi": mi, "inner": n_in, "l1_step": step})
        log.info("ssfm-ba outer %d: AIR %.4f, BA MI %.4f, L1 step %.2e", k, air, mi, step)
        steps.append(step)
        p = p_new
        if step < tol:
            converged = True
            break
        if len(steps) >= 6 and all(steps[-i] >= steps[-i - 1] for i in range(1, 6)):
            flags.append("oscillation")
            p = best[1]
            break
    if not converged and "oscillation" not in flags:
        flags.append("max_outer_reached")
    return OptimizerReport(p, mi, snr, k, converged, Method.SSFM_BA, flags=flags,
                           wall_time=time.perf_counter() - t0, history=history)

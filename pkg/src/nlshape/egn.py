"""Closed-form EGN effective SNR and regression of its coefficients.

All powers are in W internally; dBm appears only in function names that say
so. ``p_tx`` is the launch power of one WDM channel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import constants as const
from scipy.optimize import LinearConstraint, minimize

__all__ = [
    "LinkConfig",
    "EgnCoefficients",
    "ase_variance",
    "nli_variance",
    "egn_snr",
    "optimal_power",
    "optimal_power_w",
    "calibrate_chi",
    "dbm2w",
    "w2dbm",
]

# moment box checked at construction
MU4_RANGE = (1.0, 3.0)
MU6_RANGE = (1.0, 15.0)


def dbm2w(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def w2dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)


@dataclass(frozen=True)
class LinkConfig:
    """Fiber link parameters.

    Units: ``gamma`` 1/(W km), ``dispersion`` ps/(nm km), ``alpha`` dB/km,
    ``nf`` dB (``-inf`` disables ASE), ``wavelength`` m, ``span_length`` and
    ``step`` km. ``precision`` selects the complex dtype of the propagated
    field.
    """

    gamma: float = 1.3
    dispersion: float = 17.0
    alpha: float = 0.2
    nf: float = 5.0
    wavelength: float = 1.55e-6
    n_span: int = 1
    span_length: float = 200.0
    step: float = 0.1
    precision: str = "double"

    def __post_init__(self):
        for name in ("gamma", "dispersion", "alpha"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("wavelength", "span_length", "step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_span < 1:
            raise ValueError("n_span must be at least 1")
        if math.isnan(self.nf) or self.nf == math.inf:
            raise ValueError("nf must be a finite dB value or -inf")
        if self.precision not in ("double", "single"):
            raise ValueError("precision is 'double' or 'single'")

    @property
    def carrier_hz(self) -> float:
        return const.c / self.wavelength

    @property
    def span_gain(self) -> float:
        """Linear power gain that exactly compensates one span's loss."""
        return 10.0 ** (self.alpha * self.span_length / 10.0)

    @property
    def beta2(self) -> float:
        """Group-velocity dispersion in s^2/km."""
        d_si = self.dispersion * 1e-12 / 1e-9  # s/m per km
        return -d_si * self.wavelength**2 / (2 * math.pi * const.c)

    @property
    def alpha_np(self) -> float:
        """Power attenuation in 1/km (natural units)."""
        return self.alpha * math.log(10.0) / 10.0

    @property
    def length(self) -> float:
        return self.n_span * self.span_length


def ase_variance(link: LinkConfig, symbol_rate: float) -> float:
    """ASE variance (W) in the symbol-rate bandwidth, one polarization.

    ``n_span (G - 1) h nu0 (NF / 2) R_s`` with ``G`` the span loss; ``symbol_rate``
    in Baud.
    """
    nf_lin = 10.0 ** (link.nf / 10.0)
    return link.n_span * (link.span_gain - 1.0) * const.h * link.carrier_hz * nf_lin / 2.0 * symbol_rate


@dataclass(frozen=True)
class EgnCoefficients:
    """Modulation-independent NLI weights (1/W^2) and the ASE variance (W).

    ``fit_residual_db`` and ``fit_range_dbm`` are filled in by
    :func:`calibrate_chi` and only describe provenance.
    """

    chi0: float
    chi4: float
    chi4p: float
    chi6: float
    ase_var: float
    fit_residual_db: float | None = None
    fit_range_dbm: tuple[float, float] | None = field(default=None)

    def __post_init__(self):
        if not self.ase_var > 0:
            raise ValueError("ase_var must be positive")
        if not self.chi0 >= 0:
            raise ValueError("chi0 must be nonnegative")
        if self.fit_range_dbm is not None:
            object.__setattr__(self, "fit_range_dbm", tuple(float(v) for v in self.fit_range_dbm))
        worst = self._min_kappa_on_box()
        if worst < -1e-12 * max(abs(self.chi0), 1e-300):
            raise ValueError(f"NLI variance turns negative inside the moment box (min kappa {worst:.3g})")

    def kappa(self, mu4: float, mu6: float) -> float:
        """Bracketed NLI factor, so that ``sigma_NLI^2 = p_tx**3 * kappa``."""
        d = mu4 - 2.0
        return self.chi0 + d * self.chi4 + d * d * self.chi4p + mu6 * self.chi6

    def _min_kappa_on_box(self) -> float:
        g4, g6 = validation_grid()
        return float(np.min(self.kappa(g4, g6)))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["fit_range_dbm"] is not None:
            d["fit_range_dbm"] = list(d["fit_range_dbm"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EgnCoefficients":
        keys = ("chi0", "chi4", "chi4p", "chi6", "ase_var", "fit_residual_db", "fit_range_dbm")
        return cls(**{k: d[k] for k in keys if k in d})

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "EgnCoefficients":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def nli_variance(coef: EgnCoefficients, p_tx: float, mu4: float, mu6: float) -> float:
    """``p_tx**3 * [chi0 + (mu4-2) chi4 + (mu4-2)^2 chi4' + mu6 chi6]`` in W."""
    if p_tx < 0:
        raise ValueError("launch power must be nonnegative")
    var = p_tx**3 * coef.kappa(mu4, mu6)
    if var < 0:
        raise ValueError(f"negative NLI variance at mu4={mu4}, mu6={mu6}")
    return var


def egn_snr(coef: EgnCoefficients, p_tx: float, mu4: float, mu6: float) -> float:
    """Effective SNR in dB, ``p_tx / (sigma_ASE^2 + sigma_NLI^2)``."""
    if not p_tx > 0:
        raise ValueError("launch power must be positive")
    return 10.0 * math.log10(p_tx / (coef.ase_var + nli_variance(coef, p_tx, mu4, mu6)))


def optimal_power_w(coef: EgnCoefficients, mu4: float, mu6: float) -> float:
    kappa = coef.kappa(mu4, mu6)
    if not kappa > 0:
        raise ValueError("optimal power needs a positive NLI factor")
    return (coef.ase_var / (2.0 * kappa)) ** (1.0 / 3.0)


def optimal_power(coef: EgnCoefficients, mu4: float, mu6: float) -> float:
    """Per-channel launch power (dBm) maximizing :func:`egn_snr`.

    At this power the NLI variance is exactly half the ASE variance.
    """
    return float(w2dbm(optimal_power_w(coef, mu4, mu6)))


def validation_grid(n: int = 41) -> tuple[np.ndarray, np.ndarray]:
    """``n x n`` grid over the admissible moment box, flattened."""
    g4, g6 = np.meshgrid(np.linspace(*MU4_RANGE, n), np.linspace(*MU6_RANGE, n))
    return g4.ravel(), g6.ravel()


def _regressors(mu4, mu6):
    d = np.asarray(mu4, dtype=float) - 2.0
    return np.column_stack([np.ones_like(d), d, d * d, np.asarray(mu6, dtype=float)])


def calibrate_chi(samples, ase_var: float, rank_tol: float = 1e-9,
                  constrained: bool = True) -> EgnCoefficients:
    """Fit the four NLI coefficients to measured ``(p_tx, mu4, mu6, snr_db)`` samples.

    The model ``sigma_tot^2 = ase_var + p^3 X chi`` is linear in ``chi``; rows
    are weighted by ``p^3 / sigma_tot^2`` so the residual is the relative
    noise-variance error, which is what an SNR error in dB measures.

    The regressors are nearly collinear for square-QAM PMFs (``mu6`` is close
    to a quadratic in ``mu4``), so an unconstrained fit can match the data
    well and still extrapolate to a negative NLI variance somewhere on the
    moment box. With ``constrained`` (default) the least-squares problem is
    solved subject to ``kappa >= 0`` on :func:`validation_grid`; otherwise
    such a fit is rejected.

    Raises
    ------
    ValueError
        If the regressor rows ``[1, mu4-2, (mu4-2)^2, mu6]`` do not span rank 4,
        or the unconstrained fit goes negative on the validation grid.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] != 4 or s.shape[0] < 4:
        raise ValueError("need at least four (p_tx, mu4, mu6, snr_db) samples")
    p, mu4, mu6, snr_db = s.T
    X = _regressors(mu4, mu6)
    sv = np.linalg.svd(X / np.linalg.norm(X, axis=0), compute_uv=False)
    if sv.size < 4 or sv[-1] < rank_tol * sv[0]:
        raise ValueError("moment signatures do not span the four regressors (rank deficient)")

    sigma_tot = p / 10.0 ** (snr_db / 10.0)
    w = p**3 / sigma_tot
    y = (sigma_tot - ase_var) / sigma_tot
    A = X * w[:, None]
    chi, *_ = np.linalg.lstsq(A, y, rcond=None)
    G = _regressors(*validation_grid())
    if np.min(G @ chi) < 0:
        if not constrained:
            raise ValueError(f"fitted NLI variance is negative on the validation grid "
                             f"(min kappa {np.min(G @ chi):.3g})")
        chi = _constrained_lsq(A, y, G, chi)

    pred_tot = ase_var + p**3 * (X @ chi)
    if np.any(pred_tot <= 0):
        raise ValueError("fitted model predicts nonpositive total noise on the samples")
    resid_db = 10 * np.log10(pred_tot / sigma_tot)
    p_dbm = w2dbm(p)
    return EgnCoefficients(
        chi0=float(chi[0]),
        chi4=float(chi[1]),
        chi4p=float(chi[2]),
        chi6=float(chi[3]),
        ase_var=float(ase_var),
        fit_residual_db=float(np.sqrt(np.mean(resid_db**2))),
        fit_range_dbm=(float(p_dbm.min()), float(p_dbm.max())),
    )


def _constrained_lsq(A, y, G, start):
    """``min |A chi - y|^2`` subject to ``G chi >= 0`` (SLSQP on column-scaled variables)."""
    scale = np.linalg.norm(A, axis=0)
    As, Gs = A / scale, G / scale
    res = minimize(
        lambda z: float(np.sum((As @ z - y) ** 2)),
        start * scale,
        jac=lambda z: 2.0 * As.T @ (As @ z - y),
        method="SLSQP",
        constraints=[LinearConstraint(Gs, 0.0, np.inf)],
        options={"ftol": 1e-16, "maxiter": 1000},
    )
    chi = res.x / scale
    # SLSQP stops on the boundary to rounding; lifting chi0 shifts kappa uniformly
    chi[0] += max(0.0, -float(np.min(G @ chi)))
    return chi


def predict_snr_db(coef: EgnCoefficients, p_tx, mu4, mu6) -> np.ndarray:
    """Vectorized :func:`egn_snr` for arrays of operating points."""
    p = np.asarray(p_tx, dtype=float)
    kappa = coef.kappa(np.asarray(mu4, dtype=float), np.asarray(mu6, dtype=float))
    return 10 * np.log10(p / (coef.ase_var + p**3 * kappa))

"""Seeded experiment orchestration: power sweeps, calibration, optimization, scoring.

Every simulation uses common random numbers: for a given seed, all PMFs and
launch powers share the symbol-draw uniforms and the ASE realization, so
differences between methods are much less noisy than the absolute values.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constellation import Constellation, Pmf, entropy, normalized_moments, read_pmf, uniform_pmf, write_pmf
from .egn import EgnCoefficients, ase_variance, calibrate_chi, dbm2w, predict_snr_db, w2dbm
from .metrics import air_mismatched, awgn_mi, effective_snr, per_point_stats, shaping_gap
from .optimize import egn_2d, egn_mb, lin_mb, ssfm_ba
from .scenario import Scenario, probe_pmf
from .ssfm import SimulationError, config_hash, propagate, rx_detect, tx_generate

log = logging.getLogger(__name__)

__all__ = [
    "SWEEP_SCHEMA",
    "AWGN_SCHEMA",
    "SweepSpec",
    "ResultRow",
    "simulate_point",
    "run_sweep",
    "write_rows",
    "read_rows",
    "peak_by_quadratic",
    "calibrate_scenario",
    "holdout_rms",
    "run_pipeline",
    "awgn_crosscheck",
    "PipelineError",
]

SWEEP_SCHEMA = "nlshape-sweep/1"
AWGN_SCHEMA = "nlshape-awgn/1"
SUMMARY_SCHEMA = "nlshape-summary/1"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class SweepSpec:
    """Power sweep of a set of PMFs over one scenario.

    ``pmfs`` maps a method tag to a PMF or a PMF file; a uniform baseline is
    added under ``UNIFORM`` unless present. Powers are total launch powers in
    dBm, split equally over the WDM channels.
    """

    scenario: Scenario
    pmfs: dict
    p_total_dbm: tuple[float, ...] | None = None
    seed: int | None = None
    baseline: bool = True

    def __post_init__(self):
        if not self.pmfs:
            raise ValueError("at least one PMF")

    def powers(self) -> np.ndarray:
        if self.p_total_dbm is not None:
            return np.asarray(self.p_total_dbm, dtype=float)
        return self.scenario.power_grid()

    def resolved(self) -> dict[str, Pmf]:
        c = self.scenario.constellation
        out: dict[str, Pmf] = {}
        for tag, p in self.pmfs.items():
            if isinstance(p, Pmf):
                out[tag] = p
            else:
                c2, q = read_pmf(p)
                if c2.size != c.size:
                    raise ValueError(f"{p}: {c2.size} points, scenario has {c.size}")
                out[tag] = q
        if self.baseline:
            out.setdefault("UNIFORM", uniform_pmf(c.size))
        return out


@dataclass(frozen=True)
class ResultRow:
    method: str
    p_total_dbm: float
    snr_eff_db: float
    air_2d: float
    air_4d: float
    mu4: float
    mu6: float
    entropy: float
    n_symbols_scored: int
    seed: int = 0

    def __post_init__(self):
        if self.n_symbols_scored <= 0:
            raise ValueError("no symbols scored")
        if abs(self.air_4d - 2 * self.air_2d) > 1e-12 * max(1.0, abs(self.air_4d)):
            raise ValueError("air_4d must be twice air_2d")


def simulate_point(sc: Scenario, p: Pmf, p_total_dbm: float, seed: int, method: str = "") -> ResultRow:
    """One transmission of PMF ``p`` at total launch power ``p_total_dbm``."""
    c = sc.constellation
    cfg = sc.signal.replace(seed=seed)
    p_tot = float(dbm2w(p_total_dbm))
    try:
        wave, idx = tx_generate(cfg, c, p, p_tot / cfg.n_wdm)
        out = propagate(wave, sc.link, p_tot, seed=seed)
        recs = rx_detect(out, cfg, sc.link, cfg.center_channel, idx, c, p)
    except SimulationError as e:
        raise SimulationError(f"{method or 'pmf'} at {p_total_dbm:g} dBm (seed {seed}): {e}") from e
    st = per_point_stats(recs, c, p)
    air = air_mismatched(recs, c, p, st)
    mu4, mu6 = normalized_moments(c, p)
    return ResultRow(method, float(p_total_dbm), effective_snr(st, p), air, 2 * air,
                     mu4, mu6, entropy(p), len(recs), seed)


def _job(args):
    return simulate_point(*args)


def run_sweep(spec: SweepSpec, jobs: int = 1, seeds: tuple[int, ...] | None = None) -> list[ResultRow]:
    """Simulate every (PMF, power, seed); rows sorted by (method, power, seed)."""
    sc = spec.scenario
    pmfs = spec.resolved()
    if seeds is None:
        seeds = (spec.seed,) if spec.seed is not None else sc.seeds
    tasks = [(sc, p, float(pw), int(s), tag)
             for tag, p in pmfs.items() for pw in spec.powers() for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_job, tasks))
    else:
        rows = []
        for t in tasks:
            t0 = time.perf_counter()
            rows.append(_job(t))
            log.info("%s @ %.2f dBm seed %d: SNR %.3f dB, AIR %.4f (%.1fs)", t[4], t[2], t[3],
                     rows[-1].snr_eff_db, rows[-1].air_2d, time.perf_counter() - t0)
    return sorted(rows, key=lambda r: (r.method, r.p_total_dbm, r.seed))


_FIELDS = [f for f in ResultRow.__dataclass_fields__]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)  # shortest exact round trip
    return str(v)


def write_rows(path, rows: list[ResultRow], meta: dict | None = None) -> None:
    """CSV with a ``# nlshape-sweep/1`` schema line, then header and rows."""
    buf = io.StringIO()
    head = f"# {SWEEP_SCHEMA}"
    for k, v in sorted((meta or {}).items()):
        head += f" {k}={v}"
    buf.write(head + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in _FIELDS])
    Path(path).write_text(buf.getvalue())


def read_rows(path) -> list[ResultRow]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(f"# {SWEEP_SCHEMA}"):
        raise ValueError(f"{path}: not a {SWEEP_SCHEMA} file")
    rd = csv.DictReader(lines[1:])
    types = {"method": str, "n_symbols_scored": int, "seed": int}
    return [ResultRow(**{k: types.get(k, float)(v) for k, v in row.items()}) for row in rd]


def seed_average(rows: list[ResultRow], method: str, key: str = "snr_eff_db"):
    """(powers, mean of ``key`` over seeds) for one method."""
    pw = sorted({r.p_total_dbm for r in rows if r.method == method})
    vals = [float(np.mean([getattr(r, key) for r in rows if r.method == method and r.p_total_dbm == p]))
            for p in pw]
    return np.array(pw), np.array(vals)


def peak_by_quadratic(x, y) -> tuple[float, float, bool]:
    """Vertex of the parabola through the best grid point and its neighbours.

    Returns (x_peak, y_peak, interior). At a grid edge the edge point itself
    is returned with ``interior=False``.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    k = int(np.argmax(y))
    if k == 0 or k == x.size - 1:
        return float(x[k]), float(y[k]), False
    xs, ys = x[k - 1:k + 2], y[k - 1:k + 2]
    a, b, c0 = np.polyfit(xs, ys, 2)
    if a >= 0:
        return float(x[k]), float(y[k]), True
    xv = -b / (2 * a)
    xv = min(max(xv, xs[0]), xs[-1])
    return float(xv), float(np.polyval([a, b, c0], xv)), True


# --------------------------------------------------------------------------
# calibration


def calibration_samples(sc: Scenario, probes, p_ch_ref_dbm: float, offsets_db, seed: int,
                        jobs: int = 1):
    """SSFM (p_ch [W], mu4, mu6, snr_db) samples for each probe and power offset."""
    c = sc.constellation
    pmfs = {pr.tag: probe_pmf(c, pr) for pr in probes}
    powers = tuple(float(p_ch_ref_dbm + o + w2dbm(sc.signal.n_wdm * 1e-3)) for o in offsets_db)
    rows = run_sweep(SweepSpec(sc, pmfs, powers, baseline=False), jobs=jobs, seeds=(seed,))
    n = sc.signal.n_wdm
    samples = np.array([[float(dbm2w(r.p_total_dbm)) / n, r.mu4, r.mu6, r.snr_eff_db] for r in rows])
    return samples, rows


def calibrate_scenario(sc: Scenario, p_ch_ref_dbm: float, seed: int | None = None, jobs: int = 1):
    """Fit the NLI coefficients from the scenario's probe PMFs around ``p_ch_ref_dbm``."""
    seed = sc.seeds[0] if seed is None else seed
    samples, rows = calibration_samples(sc, sc.probes, p_ch_ref_dbm, sc.probe_offsets_db, seed, jobs)
    ase = ase_variance(sc.link, sc.signal.symbol_rate)
    return calibrate_chi(samples, ase), samples, rows


def holdout_rms(sc: Scenario, coef: EgnCoefficients, p_ch_ref_dbm: float, seed: int | None = None,
                jobs: int = 1):
    """RMS error (dB) of the model on the scenario's held-out probes.

    Returns (rms, samples, predictions). Samples share the calibration layout.
    """
    if not sc.holdout_probes or not sc.holdout_offsets_db:
        raise ValueError(f"scenario {sc.name!r} defines no held-out probes")
    seed = sc.seeds[0] if seed is None else seed
    samples, _ = calibration_samples(sc, sc.holdout_probes, p_ch_ref_dbm, sc.holdout_offsets_db, seed, jobs)
    pred = predict_snr_db(coef, samples[:, 0], samples[:, 1], samples[:, 2])
    return float(np.sqrt(np.mean((pred - samples[:, 3]) ** 2))), samples, pred


# --------------------------------------------------------------------------
# pipeline


@dataclass
class Bundle:
    directory: Path
    p_opt_dbm: float
    p_op_dbm: float
    snr_opt_db: float
    coef: EgnCoefficients | None = None
    pmfs: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)


def _stage(name, fn, *a, **kw):
    t0 = time.perf_counter()
    log.info("stage %s ...", name)
    try:
        out = fn(*a, **kw)
    except Exception as e:  # noqa: BLE001 - rethrown with the stage name
        raise PipelineError(name, e) from e
    log.info("stage %s done in %.1fs", name, time.perf_counter() - t0)
    return out


def run_pipeline(sc: Scenario, out_dir, jobs: int = 1, with_ba: bool | None = None,
                 coef: EgnCoefficients | None = None) -> Bundle:
    """Full protocol: uniform sweep, Lin-MB, calibration, EGN-MB/EGN-2D,
    optional SSFM-BA, final comparative sweep, summary.

    All PMFs are optimized at the uniform-input optimum launch power and held
    fixed over the sweep. ``coef`` skips calibration. Files are written as
    each stage completes, so a failed run leaves a partial bundle.
    """
    out = Path(out_dir)
    (out / "pmfs").mkdir(parents=True, exist_ok=True)
    sc.dump(out / "scenario.yaml")
    c = sc.constellation
    n = sc.signal.n_wdm
    meta = {"scenario": sc.name, "config_hash": config_hash(sc.link, sc.signal)}

    u = uniform_pmf(c.size)
    rows_u = _stage("uniform_sweep", run_sweep, SweepSpec(sc, {"UNIFORM": u}), jobs)
    pw, snr_u = seed_average(rows_u, "UNIFORM")
    p_opt, snr_opt, interior = peak_by_quadratic(pw, snr_u)
    if not interior:
        log.warning("uniform SNR peaks at the sweep edge (%.2f dBm)", p_opt)
    p_op = float(pw[np.argmin(np.abs(pw - p_opt))])
    p_ch_opt_w = float(dbm2w(p_opt)) / n
    b = Bundle(out, p_opt, p_op, snr_opt)
    b.pmfs["UNIFORM"] = u

    rep = _stage("lin_mb", lin_mb, c, snr_opt)
    b.pmfs["LIN_MB"], b.reports["LIN_MB"] = rep.pmf, rep

    if coef is None:
        coef, samples, cal_rows = _stage("calibrate", calibrate_scenario, sc, float(w2dbm(p_ch_opt_w)),
                                         None, jobs)
        write_rows(out / "calibration.csv", cal_rows, meta)
    b.coef = coef
    coef.save(out / "chi.yaml")

    rep = _stage("egn_mb", egn_mb, c, coef, p_ch_opt_w)
    b.pmfs["EGN_MB"], b.reports["EGN_MB"] = rep.pmf, rep
    rep = _stage("egn_2d", egn_2d, c, coef, p_ch_opt_w)
    b.pmfs["EGN_2D"], b.reports["EGN_2D"] = rep.pmf, rep

    if with_ba if with_ba is not None else sc.ssfm_ba:
        cfg = sc.signal.replace(n_sym=sc.ba_n_sym)
        rep = _stage("ssfm_ba", ssfm_ba, c, cfg, sc.link, float(dbm2w(p_opt)), max_outer=sc.ba_max_outer)
        b.pmfs["SSFM_BA"], b.reports["SSFM_BA"] = rep.pmf, rep

    for tag, r in b.reports.items():
        r.save(out / "pmfs", tag.lower(), c)
    write_pmf(out / "pmfs" / "uniform.pmf", c, u)

    shaped = {k: v for k, v in b.pmfs.items() if k != "UNIFORM"}
    rows_s = _stage("final_sweep", run_sweep, SweepSpec(sc, shaped, baseline=False), jobs)
    b.rows = sorted(rows_u + rows_s, key=lambda r: (r.method, r.p_total_dbm, r.seed))
    write_rows(out / "sweep.csv", b.rows, meta)

    b.summary = _stage("summary", summarize, sc, b)
    write_summary(out / "summary.csv", b.summary)
    return b


def summarize(sc: Scenario, b: Bundle) -> list[dict]:
    """One row per method mirroring the moment tables plus sweep results.

    ``*_op`` columns are seed averages at the sweep grid point nearest to the
    uniform optimum; ``*_peak`` columns are quadratic-fit peaks of each
    method's own seed-averaged curve. ``delta_snr_db`` is the AWGN shaping gap
    at the design SNR (the uniform effective SNR at its optimum).
    """
    c = sc.constellation
    out = []
    base = None
    for tag in sorted(b.pmfs, key=lambda t: (t != "UNIFORM", t)):
        p = b.pmfs[tag]
        mu4, mu6 = normalized_moments(c, p)
        rows_op = [r for r in b.rows if r.method == tag and r.p_total_dbm == b.p_op_dbm]
        air_op = float(np.mean([r.air_4d for r in rows_op]))
        snr_op = float(np.mean([r.snr_eff_db for r in rows_op]))
        pw, s = seed_average(b.rows, tag, "snr_eff_db")
        p_pk, snr_pk, _ = peak_by_quadratic(pw, s)
        _, a = seed_average(b.rows, tag, "air_4d")
        _, air_pk, _ = peak_by_quadratic(pw, a)
        mi_op = awgn_mi(c, p, b.snr_opt_db)
        gap = shaping_gap(c, p, mi_op) if mi_op < entropy(p) - 1e-9 else 0.0
        row = {"method": tag, "mu4": mu4, "mu6": mu6, "entropy": entropy(p), "delta_snr_db": gap,
               "snr_op_db": snr_op, "air4d_op": air_op, "p_opt_dbm": p_pk, "snr_peak_db": snr_pk,
               "air4d_peak": air_pk}
        if tag == "UNIFORM":
            base = row
        out.append(row)
    for row in out:
        row["gain4d_op"] = row["air4d_op"] - base["air4d_op"]
        row["snr_penalty_op_db"] = base["snr_op_db"] - row["snr_op_db"]
    byname = {r["method"]: r for r in out}
    if "EGN_2D" in byname and "LIN_MB" in byname and byname["LIN_MB"]["gain4d_op"] != 0:
        rel = (byname["EGN_2D"]["gain4d_op"] - byname["LIN_MB"]["gain4d_op"]) / byname["LIN_MB"]["gain4d_op"]
        for row in out:
            row["rel_gain_egn2d_over_linmb"] = rel
    return out


def write_summary(path, summary: list[dict]) -> None:
    keys = list(summary[0])
    for r in summary:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    buf.write(f"# {SUMMARY_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for r in summary:
        w.writerow([_fmt(r.get(k, "")) for k in keys])
    Path(path).write_text(buf.getvalue())


# --------------------------------------------------------------------------
# AWGN cross-check


def awgn_crosscheck(c: Constellation, pmfs: dict[str, Pmf], snr_grid_db, path=None,
                    design_snr_db: float | None = None):
    """AWGN MI of each PMF over ``snr_grid_db`` plus the Opt-MB envelope.

    Returns (curve rows, gap rows). Gap rows hold each PMF's shaping gap at
    its MI at ``design_snr_db`` (skipped when not given).
    """
    curves = []
    for s in snr_grid_db:
        s = float(s)
        env_mi = 0.0
        for tag, p in pmfs.items():
            mi = awgn_mi(c, p, s)
            curves.append({"pmf": tag, "snr_db": s, "mi": mi})
        env_mi = _opt_mb_mi(c, s)
        curves.append({"pmf": "OPT_MB", "snr_db": s, "mi": env_mi})
    gaps = []
    if design_snr_db is not None:
        for tag, p in pmfs.items():
            mi = awgn_mi(c, p, design_snr_db)
            h = entropy(p)
            g = shaping_gap(c, p, mi) if mi < h - 1e-9 else 0.0
            gaps.append({"pmf": tag, "design_snr_db": design_snr_db, "mi": mi, "entropy": h,
                         "delta_snr_db": g})
    if path is not None:
        buf = io.StringIO()
        buf.write(f"# {AWGN_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pmf", "snr_db", "mi"])
        for r in curves:
            w.writerow([r["pmf"], _fmt(r["snr_db"]), _fmt(r["mi"])])
        Path(path).write_text(buf.getvalue())
        if gaps:
            gp = Path(path).with_name(Path(path).stem + "_gaps.csv")
            buf = io.StringIO()
            buf.write(f"# {AWGN_SCHEMA}\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(list(gaps[0]))
            for r in gaps:
                w.writerow([_fmt(v) for v in r.values()])
            gp.write_text(buf.getvalue())
    return curves, gaps


def _opt_mb_mi(c: Constellation, snr_db: float) -> float:
    """Opt-MB envelope: the best MB MI at ``snr_db`` (a per-SNR Lin-MB search)."""
    return lin_mb(c, snr_db, n_grid=64).predicted_air

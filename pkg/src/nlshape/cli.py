"""Command-line entry point: ``nlshape <subcommand>``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .constellation import read_pmf, uniform_pmf
from .egn import EgnCoefficients, dbm2w
from .harness import (
    SweepSpec,
    awgn_crosscheck,
    calibrate_scenario,
    run_pipeline,
    run_sweep,
    write_rows,
)
from .metrics import effective_snr, per_point_stats
from .optimize import OPTIMAL, egn_2d, egn_mb, lin_mb, ssfm_ba
from .scenario import list_scenarios, load_scenario
from .ssfm import back_to_back, config_hash


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required,
                   help="scenario YAML path or shipped name (%s)" % ", ".join(list_scenarios()))
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed(s)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel simulation processes")


def _scenario(args):
    sc = load_scenario(args.config)
    if args.seed is not None:
        from dataclasses import replace

        sc = replace(sc, seeds=(args.seed,), signal=sc.signal.replace(seed=args.seed))
    return sc


def _launch(args):
    if args.p_ch_dbm is None:
        return OPTIMAL
    return float(dbm2w(args.p_ch_dbm))


def cmd_optimize(args) -> int:
    sc = _scenario(args)
    c = sc.constellation
    if args.method == "lin-mb":
        if args.snr_db is None:
            raise SystemExit("lin-mb needs --snr-db")
        rep = lin_mb(c, args.snr_db)
    elif args.method in ("egn-mb", "egn-2d"):
        if args.chi is None:
            raise SystemExit(f"{args.method} needs --chi (from `nlshape calibrate`)")
        coef = EgnCoefficients.load(args.chi)
        fn = egn_mb if args.method == "egn-mb" else egn_2d
        rep = fn(c, coef, _launch(args))
    else:
        if args.p_total_dbm is None:
            raise SystemExit("ssfm-ba needs --p-total-dbm")
        cfg = sc.signal.replace(n_sym=sc.ba_n_sym)
        rep = ssfm_ba(c, cfg, sc.link, float(dbm2w(args.p_total_dbm)), max_outer=sc.ba_max_outer,
                      binned=args.binned)
    path = rep.save(args.out, args.method.replace("-", "_"), c)
    print(f"{rep.method.value}: predicted AIR {rep.predicted_air:.5f} bits/2D, "
          f"SNR {rep.predicted_snr:.3f} dB, converged={rep.converged} -> {path}")
    return 0


def cmd_calibrate(args) -> int:
    sc = _scenario(args)
    if args.p_ch_dbm is None:
        raise SystemExit("calibrate needs --p-ch-dbm (probe reference power per channel)")
    coef, _, rows = calibrate_scenario(sc, args.p_ch_dbm, jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    coef.save(args.out / "chi.yaml")
    write_rows(args.out / "calibration.csv", rows, {"scenario": sc.name})
    print(f"chi0={coef.chi0:.6g} chi4={coef.chi4:.6g} chi4p={coef.chi4p:.6g} chi6={coef.chi6:.6g} "
          f"residual={coef.fit_residual_db:.3f} dB -> {args.out / 'chi.yaml'}")
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    pmfs = {Path(f).stem.upper(): f for f in args.pmf}
    rows = run_sweep(SweepSpec(sc, pmfs), jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "sweep.csv", rows,
               {"scenario": sc.name, "config_hash": config_hash(sc.link, sc.signal)})
    for r in rows:
        print(f"{r.method:>10s} {r.p_total_dbm:7.2f} dBm seed {r.seed}: "
              f"SNR {r.snr_eff_db:7.3f} dB  AIR {r.air_4d:.4f} bits/4D")
    return 0


def cmd_pipeline(args) -> int:
    sc = _scenario(args)
    coef = EgnCoefficients.load(args.chi) if args.chi else None
    b = run_pipeline(sc, args.out, jobs=args.jobs, with_ba=True if args.ba else None, coef=coef)
    print(f"uniform P_opt {b.p_opt_dbm:.2f} dBm total, SNR {b.snr_opt_db:.3f} dB")
    for r in b.summary:
        print(f"{r['method']:>8s} mu4 {r['mu4']:.4f} mu6 {r['mu6']:.4f} H {r['entropy']:.4f} "
              f"dSNR {r['delta_snr_db']:.2f} dB | SNR@op {r['snr_op_db']:.3f} dB "
              f"AIR@op {r['air4d_op']:.4f} bits/4D gain {r['gain4d_op']:+.4f}")
    return 0


def cmd_awgn_check(args) -> int:
    sc = _scenario(args)
    c = sc.constellation
    pmfs = {Path(f).stem.upper(): read_pmf(f)[1] for f in args.pmf}
    pmfs.setdefault("UNIFORM", uniform_pmf(c.size))
    grid = np.arange(args.snr_start, args.snr_stop + 1e-9, args.snr_step)
    args.out.mkdir(parents=True, exist_ok=True)
    _, gaps = awgn_crosscheck(c, pmfs, grid, args.out / "awgn.csv", design_snr_db=args.design_snr_db)
    for g in gaps:
        print(f"{g['pmf']:>10s} H {g['entropy']:.4f} MI {g['mi']:.4f} dSNR {g['delta_snr_db']:.3f} dB")
    return 0


def cmd_b2b(args) -> int:
    sc = _scenario(args)
    c = sc.constellation
    pmfs = {Path(f).stem.upper(): read_pmf(f)[1] for f in args.pmf}
    pmfs.setdefault("UNIFORM", uniform_pmf(c.size))
    for load in args.snr_load_db:
        for tag, p in pmfs.items():
            recs = back_to_back(sc.signal, c, p, load, args.snr_trx_db)
            snr = effective_snr(per_point_stats(recs, c, p), p)
            print(f"load {load:6.2f} dB {tag:>10s}: SNR_eff {snr:.3f} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlshape", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("optimize", help="optimize a PMF")
    p.add_argument("method", choices=["lin-mb", "egn-mb", "egn-2d", "ssfm-ba"])
    _common(p)
    p.add_argument("--snr-db", type=float, help="design SNR for lin-mb")
    p.add_argument("--chi", type=Path, help="chi.yaml for the EGN methods")
    p.add_argument("--p-ch-dbm", type=float, help="fixed launch power per channel (default: per-PMF optimum)")
    p.add_argument("--p-total-dbm", type=float, help="total launch power for ssfm-ba")
    p.add_argument("--binned", action="store_true", help="ssfm-ba: quantized-output BA")
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("calibrate", help="fit the EGN coefficients from SSFM probes")
    _common(p)
    p.add_argument("--p-ch-dbm", type=float, help="probe reference power per channel")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("sweep", help="power sweep of PMF files plus uniform")
    _common(p)
    p.add_argument("pmf", nargs="*", help="PMF files")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("pipeline", help="full optimize-and-compare protocol")
    _common(p)
    p.add_argument("--chi", type=Path, help="reuse coefficients instead of calibrating")
    p.add_argument("--ba", action="store_true", help="include SSFM-BA")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("awgn-check", help="AWGN MI curves and shaping gaps")
    _common(p)
    p.add_argument("pmf", nargs="*", help="PMF files")
    p.add_argument("--snr-start", type=float, default=0.0)
    p.add_argument("--snr-stop", type=float, default=25.0)
    p.add_argument("--snr-step", type=float, default=0.5)
    p.add_argument("--design-snr-db", type=float, default=None)
    p.set_defaults(fn=cmd_awgn_check)

    p = sub.add_parser("b2b", help="back-to-back effective SNR of PMFs under noise loading")
    _common(p)
    p.add_argument("pmf", nargs="*", help="PMF files")
    p.add_argument("--snr-load-db", type=float, nargs="+", default=[15.0, 20.0, 25.0])
    p.add_argument("--snr-trx-db", type=float, default=math.inf)
    p.set_defaults(fn=cmd_b2b)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

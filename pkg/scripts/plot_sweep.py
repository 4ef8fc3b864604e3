#!/usr/bin/env python3
"""Plot seed-averaged effective SNR and AIR against launch power for a pipeline bundle.

    python scripts/plot_sweep.py runs/64qam-9ch-desk [-o sweep.png]
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from nlshape.harness import read_rows, seed_average  # noqa: E402

STYLE = {"UNIFORM": "k-o", "LIN_MB": "C0-s", "EGN_MB": "C1-^", "EGN_2D": "C2-D", "SSFM_BA": "C3-v"}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("bundle", type=Path, help="pipeline output directory (contains sweep.csv)")
    ap.add_argument("-o", "--out", type=Path, help="image file (default: <bundle>/sweep.png)")
    args = ap.parse_args(argv)

    rows = read_rows(args.bundle / "sweep.csv")
    methods = sorted({r.method for r in rows}, key=lambda m: (m != "UNIFORM", m))
    fig, (ax_s, ax_a) = plt.subplots(1, 2, figsize=(10, 4))
    for m in methods:
        p, snr = seed_average(rows, m, "snr_eff_db")
        _, air = seed_average(rows, m, "air_4d")
        fmt = STYLE.get(m, "-x")
        ax_s.plot(p, snr, fmt, label=m, ms=4)
        ax_a.plot(p, air, fmt, label=m, ms=4)
    ax_s.set(xlabel="total launch power (dBm)", ylabel="effective SNR (dB)")
    ax_a.set(xlabel="total launch power (dBm)", ylabel="AIR (bits/4D)")
    for ax in (ax_s, ax_a):
        ax.grid(alpha=0.3)
    ax_s.legend()
    fig.tight_layout()
    out = args.out or args.bundle / "sweep.png"
    fig.savefig(out, dpi=150)
    print(out)


if __name__ == "__main__":
    main()

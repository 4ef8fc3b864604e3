#!/usr/bin/env python3
"""Probability against ring energy |x|^2 for every PMF file in a bundle.

    python scripts/plot_pmfs.py runs/64qam-9ch-desk/pmfs [-o pmfs.png]

MB distributions appear as straight lines on the log axis; EGN-2D and
SSFM-BA outputs need not.
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from nlshape.constellation import entropy, normalized_moments, read_pmf  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("pmf_dir", type=Path)
    ap.add_argument("-o", "--out", type=Path)
    args = ap.parse_args(argv)

    files = sorted(args.pmf_dir.glob("*.pmf"))
    if not files:
        raise SystemExit(f"no .pmf files in {args.pmf_dir}")
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, f in enumerate(files):
        c, p = read_pmf(f)
        e = np.abs(c.points) ** 2 / np.mean(np.abs(c.points) ** 2)
        mu4, mu6 = normalized_moments(c, p)
        ax.semilogy(e, p.probs, "o", ms=3, color=f"C{k}",
                    label=f"{f.stem}  H={entropy(p):.3f}  mu4={mu4:.3f}  mu6={mu6:.2f}")
    ax.set(xlabel="|x|^2 / mean |x|^2 (uniform reference)", ylabel="P(x)")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=7)
    fig.tight_layout()
    out = args.out or args.pmf_dir / "pmfs.png"
    fig.savefig(out, dpi=150)
    print(out)


if __name__ == "__main__":
    main()

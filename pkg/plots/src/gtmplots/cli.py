"""gtm-plot: render figures from run logs.

Example: gtm-plot --glob 'runs/*/metrics.csv' --group-by model --out fig.png
"""

from __future__ import annotations

import argparse
import sys

from gtmplots import figures


def build_parser():
    p = argparse.ArgumentParser(prog="gtm-plot", description=__doc__)
    p.add_argument("--glob", required=True, help="pattern matching metrics.csv files")
    p.add_argument("--group-by", default="model", choices=["model", "task"])
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--panel", default="three", choices=["three", "kl-profile"])
    p.add_argument("--smooth", type=int, default=0,
                   help="moving-average window for the step panels (labelled)")
    p.add_argument("--log-kl", action="store_true", help="log scale on KL axes")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        groups = figures.group_runs(figures.expand_glob(args.glob), args.group_by)
        if args.panel == "three":
            figures.plot_three_panel(groups, args.out, smooth=args.smooth,
                                     log_kl=args.log_kl)
        else:
            figures.plot_frame_kl_profile(groups, args.out, smooth=args.smooth,
                                          log_kl=args.log_kl)
    except figures.RunFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    n_runs = sum(len(rs) for rs in groups.values())
    print(f"wrote {args.out} ({len(groups)} groups, {n_runs} runs)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

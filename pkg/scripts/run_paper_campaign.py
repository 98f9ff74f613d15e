#!/usr/bin/env python3
"""Reproduce the full test campaign at desk scale: six TVT runs and two AVT
runs on the simulated deployment, spectral analysis of both ensembles, and
the peak-normalized comparison over 0-10 Hz.

Usage:
    python3 scripts/run_paper_campaign.py --out-dir campaign_out
    python3 scripts/run_paper_campaign.py --out-dir out --full-avt   # 20 min AVTs

Everything is seeded; re-running with the same arguments reproduces the
artifacts byte for byte.
"""

import argparse
import csv
import os
import sys
import time

from vibedaq.cli import main as vibedaq


def run(args):
    code = vibedaq(args)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--tvt-runs", type=int, default=6)
    parser.add_argument("--avt-runs", type=int, default=2)
    parser.add_argument("--tvt-duration", type=int, default=60)
    parser.add_argument("--full-avt", action="store_true",
                        help="20-minute AVT runs instead of the 120 s desk scale")
    args = parser.parse_args()

    avt_duration = 1200 if args.full_avt else 120
    base = args.out_dir
    os.makedirs(base, exist_ok=True)

    t0 = time.monotonic()
    tvt_csvs = []
    for i in range(args.tvt_runs):
        out = os.path.join(base, f"tvt_{i + 1:02d}")
        run(["--seed", str(args.seed * 1000 + i), "simulate",
             "--test-type", "TVT", "--duration", str(args.tvt_duration),
             "--out-dir", out])
        run_dir = sorted(d for d in os.listdir(out) if d.startswith("run_"))[-1]
        tvt_csvs.append(os.path.join(out, run_dir, "data.csv"))
        print(f"TVT run {i + 1}/{args.tvt_runs} done")

    avt_csvs = []
    for i in range(args.avt_runs):
        out = os.path.join(base, f"avt_{i + 1:02d}")
        run(["--seed", str(args.seed * 2000 + i), "simulate",
             "--test-type", "AVT", "--duration", str(avt_duration),
             "--out-dir", out])
        run_dir = sorted(d for d in os.listdir(out) if d.startswith("run_"))[-1]
        avt_csvs.append(os.path.join(out, run_dir, "data.csv"))
        print(f"AVT run {i + 1}/{args.avt_runs} done")

    tvt_an = os.path.join(base, "tvt_analysis")
    avt_an = os.path.join(base, "avt_analysis")
    cmp_out = os.path.join(base, "comparison")
    run(["analyze", *tvt_csvs, "--out-dir", tvt_an])
    run(["analyze", *avt_csvs, "--out-dir", avt_an])
    run(["compare", "--tvt", tvt_an, "--avt", avt_an, "--out-dir", cmp_out])

    print(f"\ncampaign finished in {time.monotonic() - t0:.1f} s")
    print(f"artifacts under {base}/")
    with open(os.path.join(tvt_an, "peaks.csv"), newline="") as fh:
        peaks = sorted(float(r["f_hz"]) for r in csv.DictReader(fh))
    print("TVT ANPSD peaks:", ", ".join(f"{f:.2f} Hz" for f in peaks))
    with open(os.path.join(cmp_out, "peak_deltas.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            print(f"peak {row['rank']}: TVT {float(row['tvt_f_hz']):.3f} Hz vs "
                  f"AVT {float(row['avt_f_hz']):.3f} Hz "
                  f"(delta {float(row['delta_bins']):.2f} bins)")


if __name__ == "__main__":
    main()

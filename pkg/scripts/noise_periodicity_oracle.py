"""Standalone empirical oracle for the periodicity of white noise.

Deliberately independent of the package: a brute-force normalized
cross-correlation inside one analysis window (x[0:W-lag] against x[lag:W])
over every candidate lag, computed with plain loops over numpy dot
products. Prints per-seed statistics of the best peak per frame,
which is the value the estimator's "noise < 0.5" expectation rests on.

    python3 scripts/noise_periodicity_oracle.py --seeds 5 --frames 40
"""
import argparse

import numpy as np


def nccf_peak(frame, min_lag, max_lag):
    W = len(frame)
    best = 0.0
    for lag in range(min_lag, max_lag + 1):
        a = frame[:W - lag]
        b = frame[lag:]
        den = np.sqrt((a @ a) * (b @ b))
        if den > 0:
            best = max(best, (a @ b) / den)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--frames", type=int, default=40)
    ap.add_argument("--sr", type=int, default=24000)
    ap.add_argument("--window", type=int, default=1024)
    ap.add_argument("--f0-min", type=float, default=60.0)
    ap.add_argument("--f0-max", type=float, default=500.0)
    args = ap.parse_args()
    min_lag = int(np.floor(args.sr / args.f0_max))
    max_lag = int(np.ceil(args.sr / args.f0_min))
    span = args.window
    overall = []
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        x = 0.3 * rng.standard_normal(span * args.frames)
        frames = [x[i * span:(i + 1) * span] for i in range(args.frames)]
        peaks = [nccf_peak(f - f.mean(), min_lag, max_lag) for f in frames]
        overall.extend(peaks)
        print(f"seed {seed}: mean {np.mean(peaks):.4f}  max {np.max(peaks):.4f}")
    print(f"all: mean {np.mean(overall):.4f}  max {np.max(overall):.4f}  (n={len(overall)})")


if __name__ == "__main__":
    main()

"""Tabulate expected one-side sample sizes against K and pick the K that matches a target.

By default compares the 5 x 5 grid, N=60, sigma=0.5, lambda0=0.2 setup against a
target of 28 distinct individuals on one side.
"""

import argparse

from flankscr.model import DetectionParams, StateSpace
from flankscr.simulator import calibrate_occasions, capture_probability, expected_captures, square_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=60)
    ap.add_argument("--sigma", type=float, default=0.5)
    ap.add_argument("--lambda0", type=float, default=0.2)
    ap.add_argument("--target", type=float, default=28.0)
    ap.add_argument("--statistic", choices=("n", "caps"), default="n")
    ap.add_argument("--K-max", type=int, default=20)
    args = ap.parse_args()

    traps = square_grid(5)
    space = StateSpace.around(traps, 2.0)
    params = DetectionParams(args.lambda0, args.sigma)
    print(f"{'K':>3s}{'E(n one side)':>16s}{'E(captures)':>14s}")
    for K in range(1, args.K_max + 1):
        n = args.N * capture_probability(traps, space, params, K, n_grid=200)
        caps = expected_captures(args.N, traps, space, params, K, n_grid=200)
        print(f"{K:3d}{n:16.2f}{caps:14.2f}")
    K = calibrate_occasions(args.target, args.N, traps, space, params, statistic=args.statistic, K_max=args.K_max)
    print(f"\nK closest to target {args.target} ({args.statistic}): {K}")


if __name__ == "__main__":
    main()

"""Replicate study for one scenario (default N=120, sigma=0.7, lambda0=0.2) with all four estimators."""

import argparse
import sys

from flankscr.analysis import STUDY_ESTIMATORS, Scenario, run_study, study_grid_scenarios
from flankscr.io import write_metrics
from flankscr.sampler import SamplerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=120)
    ap.add_argument("--sigma", type=float, default=0.7)
    ap.add_argument("--lambda0", type=float, default=0.2)
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--M-per-N", type=float, default=2.0)
    ap.add_argument("--full-grid", action="store_true", help="all 8 scenarios of the N x sigma x lambda0 grid")
    ap.add_argument("--R", type=int, default=20)
    ap.add_argument("--iters", type=int, default=6000)
    ap.add_argument("--burnin", type=int, default=1000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=20240)
    ap.add_argument("--out", help="optional metrics.csv path")
    args = ap.parse_args()

    if args.full_grid:
        scenarios = study_grid_scenarios(args.K, args.M_per_N)
    else:
        scenarios = [Scenario(args.N, args.lambda0, args.sigma, args.K, int(round(args.M_per_N * args.N)))]
    cfg = SamplerConfig(iters=args.iters, burnin=args.burnin)

    def progress(done, total):
        print(f"\r{done}/{total} fits", end="", file=sys.stderr, flush=True)

    metrics, _ = run_study(scenarios, list(STUDY_ESTIMATORS), args.R, cfg, args.seed, args.workers, progress)
    print(file=sys.stderr)
    print(f"{'scenario':34s}{'estimator':>9s}{'R':>4s}{'mean':>9s}{'sd':>8s}{'mode':>9s}{'sd':>8s}"
          f"{'postSD':>8s}{'cover':>7s}{'pmode':>6s}")
    for m in metrics:
        print(f"{m.scenario:34s}{m.estimator:>9s}{m.R:4d}{m.mean:9.3f}{m.sd_mean:8.3f}{m.mode:9.3f}"
              f"{m.sd_mode:8.3f}{m.post_sd:8.3f}{m.coverage:7.3f}{m.pmode:6d}")
    if args.out:
        write_metrics(args.out, metrics)


if __name__ == "__main__":
    main()

"""Simulate-then-fit coverage check for the intra-class correlation.

Draws replicate data sets from the linear-Gaussian xBM model, fits each one
with NUTS and reports how often the 95% credible interval for rho contains
the generating value.

    python scripts/calibration.py --replicates 20 --iterations 400
"""

import argparse
import time

import numpy as np

from xgp.inference import GaussianData, ModelSpec, SamplerConfig, hmc_sample
from xgp.kernels import TimeGrid, intra_class_rho
from xgp.simulate import simulate_gaussian


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=400)
    ap.add_argument("--chains", type=int, default=2)
    ap.add_argument("--tasks", type=int, default=3)
    ap.add_argument("--T", type=int, default=30)
    ap.add_argument("--sigma-mu", type=float, default=1.0)
    ap.add_argument("--sigma-x", type=float, default=0.7)
    ap.add_argument("--sigma-y", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=500)
    args = ap.parse_args()

    truth = {"sigma_mu": args.sigma_mu, "sigma_x": args.sigma_x}
    rho = intra_class_rho(args.sigma_mu, args.sigma_x)
    times = np.arange(1.0, args.T + 1.0)
    hits = 0
    t0 = time.perf_counter()
    for r in range(args.replicates):
        sim = simulate_gaussian("xBM", truth, args.tasks, times, args.sigma_y, seed=args.seed + r)
        draws = hmc_sample(
            ModelSpec("xBM"),
            GaussianData(sim.y, TimeGrid(times)),
            SamplerConfig(chains=args.chains, iterations=args.iterations, seed=r),
        )
        lo, med, hi = np.quantile(draws.param("rho"), [0.025, 0.5, 0.975])
        hit = lo <= rho <= hi
        hits += hit
        print(f"rep {r:2d}  rho median {med:.3f}  95% CrI [{lo:.3f}, {hi:.3f}]  {'covered' if hit else 'missed'}")
    print(f"true rho {rho:.3f}: covered {hits}/{args.replicates} ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()

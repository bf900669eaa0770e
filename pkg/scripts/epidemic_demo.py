"""End-to-end command-line run on a synthetic age-structured outbreak.

Simulates daily deaths from the renewal model, fits the mxBM latent model and
writes a two-week forecast, all through the ``xgp`` command.

    python scripts/epidemic_demo.py --out demo_run
"""

import argparse
import subprocess
import sys
from pathlib import Path

import yaml


def xgp(*args):
    subprocess.run([sys.executable, "-m", "xgp.cli", *map(str, args)], check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("epidemic_demo"))
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    sim = {
        "seed": args.seed,
        "simulate": {
            "kind": "covid", "variant": "xBM", "p": 3, "T": 60,
            "params": {"sigma_mu": 0.3, "sigma_x": 0.15},
            "populations": [4e5, 3e5, 2e5], "ifr": [0.0005, 0.005, 0.05],
            "x0": [0.9, 0.8, 0.7], "seed_level": 50.0, "phi": 0.1,
        },
    }
    (out / "simulate.yaml").write_text(yaml.safe_dump(sim))
    xgp("simulate", "--config", out / "simulate.yaml", "--out", out / "data")

    fit = yaml.safe_load((out / "data" / "fit.yaml").read_text())
    fit["model"]["variant"] = "mxBM"
    fit["sampler"] = {"chains": 2, "iterations": args.iterations}
    (out / "data" / "fit_mxBM.yaml").write_text(yaml.safe_dump(fit))
    xgp("fit", "--config", out / "data" / "fit_mxBM.yaml", "--out", out / "fit")

    pred = {"seed": args.seed, "predict": {"run": str((out / "fit").resolve()), "horizon": 14}}
    (out / "predict.yaml").write_text(yaml.safe_dump(pred))
    xgp("predict", "--config", out / "predict.yaml", "--out", out / "forecast")
    print((out / "forecast" / "forecast.csv").read_text())


if __name__ == "__main__":
    main()

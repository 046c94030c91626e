"""Pullback Cauchy differences over dyadic windows, one row per path."""
import argparse

import numpy as np

from snls.config import load_config, validate
from snls.experiments import scatter_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="scripts/configs/scatter_3d.toml")
    ap.add_argument("--paths", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.paths:
        cfg.experiment.paths = args.paths
    validate(cfg, "scatter")
    res = scatter_study(cfg, args.threads)
    W = cfg.experiment.windows
    print("path,flag," + ",".join(f"delta_{m}" for m in range(W)))
    for p, _, v in res:
        print(f"{p},{int(v.flag)}," + ",".join(f"{d:.3e}" for d in v.deltas))
    ratio = np.array([v.deltas[-1] / v.deltas[0] for _, _, v in res if v.status == "ok"])
    print(f"# flagged {np.mean([v.flag for _, _, v in res]):.0%}, median last/first {np.median(ratio):.3f}")


if __name__ == "__main__":
    main()

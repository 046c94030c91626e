"""Scattering fraction and mean eps against Re v1 over a frozen path set."""
import argparse

from snls.config import load_config, validate
from snls.experiments import regularization_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="scripts/configs/sweep_3d.toml")
    ap.add_argument("--paths", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    cfg = load_config(args.config)
    validate(cfg, "sweep")
    r = regularization_sweep(cfg, M=args.paths, threads=args.threads)
    print("re_v1,fraction,proxy_fraction,mean_eps,mean_eps_lensed,blowups")
    for v, _, f, pf, me, mel, b in r.rows():
        print(f"{v},{f:.3f},{pf:.3f},{me:.4f},{mel:.4f},{b}")
    print(f"# theta {r.theta:.4f}, calibrated tau {r.tau:.4f}, implied C {r.C:.4f}")


if __name__ == "__main__":
    main()

"""Command line entry point.

    snls <subcommand> --config run.toml [--seed S] [--out DIR] [--threads K]

Exit codes: 0 success, 2 invalid configuration, 3 blow-up in a single-path
run, 4 internal-consistency failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, validate
from .dynamics import BlowUpError, StepPlan, evolve_X, export_trajectory
from .experiments import (THREADS_ENV, convergence_study, default_threads, ito_suite, path_seed,
                          regularization_sweep, scatter_study)
from .field import BoundaryMassError, core_mass_fraction_outside, norm_lp
from .functionals import (InternalConsistencyError, ito_replay, lensed_energy, pc_energy,
                          pc_energy_decomposed)
from .noise import path_csv
from .transforms import (AliasingError, dilation, exponents, identity_dilation, identity_modulation,
                         pct_forward, pct_inverse)

log = logging.getLogger("snls")

SUBCOMMANDS = ("simulate", "ito-check", "converge", "scatter", "sweep", "transforms", "exponents")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class Writer:
    def __init__(self, out: str, cfg: RunConfig, seed: int):
        self.out = out
        self.meta = {"config_hash": cfg.hash(), "master_seed": seed, "version": __version__}
        os.makedirs(out, exist_ok=True)

    def header(self) -> list[str]:
        return [f"config_hash={self.meta['config_hash']}", f"master_seed={self.meta['master_seed']}",
                f"version={self.meta['version']}"]

    def csv(self, name: str, columns: list[str], rows) -> None:
        lines = [f"# {h}" for h in self.header()] + [",".join(columns)]
        lines += [",".join(_fmt(c) for c in row) for row in rows]
        self.text(name, "\n".join(lines) + "\n")

    def text(self, name: str, body: str) -> None:
        with open(os.path.join(self.out, name), "w", newline="\n") as fh:
            fh.write(body)

    def summary(self, study: str, data: dict) -> None:
        doc = dict(self.meta, study=study, **data)
        self.text("summary.json", json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items() if not str(k).startswith("_")}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: RunConfig, w: Writer, threads: int) -> int:
    seed = path_seed(cfg.master_seed, 0)
    model = cfg.model(seed)
    X0 = cfg.datum()
    plan = StepPlan(cfg.time.dt, cfg.time.scheme, cfg.time.stride, cfg.time.cap)
    w.text("path.csv", "".join(f"# {h}\n" for h in w.header()) + path_csv(model))
    try:
        traj = evolve_X(X0, model, plan, cfg.time.T, cfg.problem.alpha)
    except BlowUpError as e:
        export_trajectory(e.trajectory, os.path.join(w.out, "fields"), w.meta["config_hash"], seed, __version__)
        w.summary("simulate", {"status": "blow-up", "message": str(e), "path_seed": seed})
        log.error("blow-up: %s", e)
        return 3
    export_trajectory(traj, os.path.join(w.out, "fields"), w.meta["config_hash"], seed, __version__)
    final = {}
    for which in cfg.experiment.which:
        led = ito_replay(traj, None, which, milstein=cfg.experiment.milstein)
        w.text(f"ledger_{which}.csv", led.to_csv(w.header()))
        final[which] = float(led.residual[-1])
    if cfg.problem.lam == -1:
        for t, X in zip(traj.times, traj.fields):
            pc_energy(X, float(t), cfg.problem.alpha)
    boundary = core_mass_fraction_outside(traj.final, cfg.grid.L / 4)
    if boundary > 1e-8:
        log.warning("mass fraction %.2e outside |x| < L/4 at the final time", boundary)
    w.summary("simulate", {"status": "ok", "path_seed": seed, "snapshots": len(traj.times),
                           "final_residual": final, "boundary_mass_fraction": boundary})
    return 0


def cmd_ito_check(cfg: RunConfig, w: Writer, threads: int) -> int:
    rep = ito_suite(cfg, threads)
    for (which, lev), led in sorted(rep["_ledgers"].items()):
        w.text(f"ledger_{which}_L{lev}.csv", led.to_csv(w.header()))
    w.summary("ito-check", rep)
    return 0


def cmd_converge(cfg: RunConfig, w: Writer, threads: int) -> int:
    rep = convergence_study(cfg, threads)
    cols = ["level", "dt", "self_rms"] + [f"residual_rms_{k}" for k in rep["residuals"]]
    rows = []
    sc = rep["self_convergence"]["rms"]
    for l, dt in enumerate(rep["levels"]):
        rows.append([l, dt, sc[l] if l < len(sc) else float("nan")]
                    + [rep["residuals"][k]["rms"][l] for k in rep["residuals"]])
    w.csv("converge.csv", cols, rows)
    w.summary("converge", rep)
    return 0


def cmd_scatter(cfg: RunConfig, w: Writer, threads: int) -> int:
    res = scatter_study(cfg, threads)
    W = cfg.experiment.windows
    cols = ["path", "seed", "flag", "status"] + [f"delta_{m}" for m in range(W)]
    w.csv("verdicts.csv", cols, [[p, s, *v.row()] for p, s, v in res])
    flags = [v.flag for _, _, v in res]
    tail_ok = [bool(v.deltas[-1] <= v.deltas[-2]) for _, _, v in res if v.status == "ok"]
    w.summary("scatter", {"paths": len(res), "fraction": float(np.mean(flags)),
                          "last_two_non_increasing": float(np.mean(tail_ok)) if tail_ok else 0.0,
                          "blowups": sum(v.status == "blow-up" for _, _, v in res)})
    return 0


def cmd_sweep(cfg: RunConfig, w: Writer, threads: int) -> int:
    r = regularization_sweep(cfg, threads=threads)
    w.csv("sweep.csv", ["re_v1", "paths", "fraction", "proxy_fraction", "mean_eps", "mean_eps_lensed",
                        "blowups"], r.rows())
    w.summary("sweep", {k: getattr(r, k) for k in ("v1_grid", "paths", "fraction", "proxy_fraction",
                                                    "mean_eps", "mean_eps_lensed", "blowups", "theta",
                                                    "tau", "C")})
    return 0


def transform_battery(cfg: RunConfig) -> list[tuple[str, float, float]]:
    """(name, measured deviation, tolerance) for the transform identities on the configured datum."""
    f = cfg.datum()
    a = cfg.problem.alpha
    out = []
    s = 1.0
    t = s / (1.0 + s)
    for ss in (0.0, 0.5, 1.0):
        direct = pc_energy(f, ss, a, rtol=np.inf)
        other = pc_energy_decomposed(f, ss, a)
        out.append((f"pc_energy_identity_s{ss:g}", abs(direct - other) / abs(direct), 1e-8))
    back = pct_inverse(pct_forward(f, 0.5), 0.5)
    out.append(("pct_round_trip", float(np.linalg.norm(back.values - f.values) / np.linalg.norm(f.values)), 1e-8))
    ft = pct_forward(f, t)
    lhs = norm_lp(ft, a + 1) ** (a + 1)
    rhs = (1 - t) ** (-f.grid.d * (a - 1) / 2) * norm_lp(f, a + 1) ** (a + 1)
    out.append(("pct_lp_scaling", abs(lhs - rhs) / abs(rhs), 1e-6))
    e1 = lensed_energy(ft, t, a)
    e = pc_energy(f, s, a, rtol=np.inf)
    out.append(("lensed_energy_cross_check", abs(e1 - e) / abs(e), 1e-6))
    out.append(("identity_T_D", identity_dilation(f, 0.1, 2.0), 1e-7))
    out.append(("identity_T_M", identity_modulation(f, 0.1, 0.5), 1e-7))
    d2 = dilation(f, 2.0)
    out.append(("dilation_isometry", abs(np.linalg.norm(d2.values) - np.linalg.norm(f.values))
                / np.linalg.norm(f.values), 1e-8))
    return out


def cmd_transforms(cfg: RunConfig, w: Writer, threads: int) -> int:
    rows = transform_battery(cfg)
    w.csv("transforms.csv", ["identity", "deviation", "tolerance", "pass"],
          [[n, v, tol, v <= tol] for n, v, tol in rows])
    ok = all(v <= tol for _, v, tol in rows)
    w.summary("transforms", {"all_pass": ok, "identities": {n: v for n, v, _ in rows}})
    return 0 if ok else 4


def cmd_exponents(cfg: RunConfig, w: Writer, threads: int) -> int:
    tab = exponents(cfg.problem.d, cfg.problem.alpha, cfg.problem.lam)
    d = tab.as_dict()
    for k, v in d.items():
        print(f"{k}={_fmt(v)}")
    w.csv("exponents.csv", ["name", "value"], list(d.items()))
    w.summary("exponents", d)
    return 0


COMMANDS = {"simulate": cmd_simulate, "ito-check": cmd_ito_check, "converge": cmd_converge,
            "scatter": cmd_scatter, "sweep": cmd_sweep, "transforms": cmd_transforms,
            "exponents": cmd_exponents}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snls", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--seed", type=int, default=None, help="override master_seed")
    ap.add_argument("--out", default=None, help="output directory (overrides config)")
    ap.add_argument("--threads", type=int, default=None,
                    help=f"worker processes (default ${THREADS_ENV} or 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.out is not None:
            cfg.output = args.out
        validate(cfg, args.subcommand)
    except FileNotFoundError as e:
        print(f"config: {e}", file=sys.stderr)
        return 2
    except (ConfigError, TypeError) as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return 2
    threads = default_threads() if args.threads is None else max(1, args.threads)
    w = Writer(cfg.output, cfg, cfg.master_seed)
    try:
        return COMMANDS[args.subcommand](cfg, w, threads)
    except (InternalConsistencyError, AliasingError, BoundaryMassError) as e:
        print(f"internal consistency failure: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

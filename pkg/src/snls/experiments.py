"""Composite studies: scattering detection, the noise-regularization sweep,
Ito-identity replays across refinement levels and convergence orders.

Every study fans out over Brownian paths.  Path p always uses the seed
path_seed(master_seed, p), per-path work is single threaded, and results are
folded in path order, so the worker count never changes a number.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import RunConfig
from .dynamics import BlowUpError, StepPlan, Trajectory, evolve_X
from .field import Field, norm_h1, norm_sigma
from .functionals import ItoLedger, ito_replay, mass
from .noise import NoiseModel, epsilon_theta
from .transforms import exponents, scattering_pullback

log = logging.getLogger(__name__)

THREADS_ENV = "SNLS_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def path_seed(master_seed: int, p: int) -> int:
    return int(np.random.SeedSequence([master_seed, p]).generate_state(1, np.uint64)[0])


def parallel_map(fn: Callable, tasks: Sequence, threads: Optional[int] = None) -> list:
    """Ordered map; results come back in task order whatever the pool does."""
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def fit_slope(errors: Sequence[float]) -> float:
    """Least-squares slope of -log2(error) against the refinement level."""
    e = np.asarray(errors, dtype=float)
    return float(np.polyfit(np.arange(len(e)), -np.log2(e), 1)[0])


# ------------------------------------------------------------- scattering

@dataclass
class ScatterVerdict:
    deltas: np.ndarray
    flag: bool
    windows: np.ndarray
    status: str = "ok"
    norm: str = "H1"

    def row(self) -> list:
        return [int(self.flag), self.status, *self.deltas]


def window_times(T0: float, windows: int) -> np.ndarray:
    return T0 * 2.0 ** (np.arange(windows + 1) / 2.0)


def window_steps(T0: float, windows: int, dt: float) -> np.ndarray:
    """Window times snapped to the step grid."""
    return np.rint(window_times(T0, windows) / dt).astype(int)


def detect_scattering(traj: Trajectory, model: Optional[NoiseModel] = None, norm: str = "H1",
                      windows: int = 4, ratio: float = 0.5, T0: Optional[float] = None,
                      star: bool = True, floor: float = 1e-12, variant: str = "free") -> ScatterVerdict:
    """Cauchy differences of the pullback over dyadic windows t_m = T0 2^{m/2}.

    flag: last difference below ratio * first difference, or every difference
    below the absolute floor (a pullback that is already constant).
    """
    if traj.status == "blow-up":
        return ScatterVerdict(np.full(windows, np.nan), False, np.zeros(0), "blow-up", norm)
    m = traj.model if traj.model is not None else model
    t_end = float(traj.times[-1])
    if T0 is None:
        T0 = t_end / 2.0 ** (windows / 2.0)
    steps = window_steps(T0, windows, traj.dt)
    if steps[-1] > traj.step_index[-1]:
        raise ValueError("trajectory horizon does not cover the windows")
    lookup = {int(s): i for i, s in enumerate(traj.step_index)}
    measure = norm_h1 if norm == "H1" else norm_sigma
    w = []
    for s in steps:
        if int(s) not in lookup:
            raise ValueError(f"no snapshot at step {s}; store window steps when integrating")
        i = lookup[int(s)]
        X = Field(traj.grid, traj.snapshots[i])
        t = float(traj.times[i])
        if m is None or m.N == 0:
            from .dynamics import free_propagate
            w.append(free_propagate(X, t))
        else:
            w.append(scattering_pullback(X, t, m, star=star, variant=variant))
    deltas = np.array([measure(w[i + 1] - w[i]) for i in range(windows)])
    flag = bool(deltas[-1] < ratio * deltas[0] or deltas.max() <= floor)
    return ScatterVerdict(deltas, flag, traj.dt * steps, "ok", norm)


def run_for_windows(X0: Field, model: NoiseModel, plan: StepPlan, T: float, alpha: float,
                    T0: float, windows: int) -> Trajectory:
    """evolve_X storing exactly the window snapshots; blow-ups come back flagged."""
    keep = window_steps(T0, windows, plan.dt)
    big = StepPlan(plan.dt, plan.scheme, 10 ** 9, plan.cap)
    try:
        return evolve_X(X0, model, big, T, alpha, keep=keep)
    except BlowUpError as e:
        return e.trajectory


def _scatter_task(args):
    cfg, p = args
    seed = path_seed(cfg.master_seed, p)
    e = cfg.experiment
    T = cfg.time.T
    T0 = e.T0 or T / 2.0 ** (e.windows / 2.0)
    model = cfg.model(seed)
    plan = StepPlan(cfg.time.dt, cfg.time.scheme, 1, cfg.time.cap)
    traj = run_for_windows(cfg.datum(), model, plan, T, cfg.problem.alpha, T0, e.windows)
    v = detect_scattering(traj, None, e.norm, e.windows, e.ratio, T0, star=True, floor=e.floor)
    return p, seed, v


def scatter_study(cfg: RunConfig, threads: Optional[int] = None) -> list[tuple[int, int, ScatterVerdict]]:
    tasks = [(cfg, p) for p in range(cfg.experiment.paths)]
    return parallel_map(_scatter_task, tasks, threads)


# ------------------------------------------------------------------ sweep

@dataclass
class SweepResult:
    v1_grid: list
    paths: int
    fraction: list
    proxy_fraction: list
    mean_eps: list
    mean_eps_lensed: list
    blowups: list
    master_seed: int
    config_hash: str
    theta: float
    tau: float
    C: float
    flags: np.ndarray = field(repr=False, default=None)
    eps: np.ndarray = field(repr=False, default=None)

    def rows(self) -> list[list]:
        return [[v, self.paths, f, pf, me, mel, b] for v, f, pf, me, mel, b in
                zip(self.v1_grid, self.fraction, self.proxy_fraction, self.mean_eps,
                    self.mean_eps_lensed, self.blowups)]


def _sweep_task(args):
    cfg, p, v1_grid, theta = args
    seed = path_seed(cfg.master_seed, p)
    e = cfg.experiment
    T = cfg.time.T
    T0 = e.T0 or T / 2.0 ** (e.windows / 2.0)
    base = cfg.model(seed)
    a0 = base.channels[0].spatial.amp
    X0 = cfg.datum()
    plan = StepPlan(cfg.time.dt, cfg.time.scheme, 1, cfg.time.cap)
    out = []
    for v1 in v1_grid:
        model = base.with_amplitude(0, complex(v1, a0.imag))
        traj = run_for_windows(X0, model, plan, T, cfg.problem.alpha, T0, e.windows)
        v = detect_scattering(traj, None, e.norm, e.windows, e.ratio, T0, star=False, floor=e.floor)
        eps = epsilon_theta(model, cfg.problem.alpha, theta, cfg.horizon, lensed=False, d=cfg.problem.d)
        eps_l = epsilon_theta(model, cfg.problem.alpha, theta, cfg.horizon, lensed=True, d=cfg.problem.d)
        out.append((v.flag, v.status, eps, eps_l))
    return out


def calibrate_threshold(eps: np.ndarray, flags: np.ndarray) -> float:
    """Threshold tau maximizing agreement of (eps < tau) with the detector; smallest on ties."""
    cands = np.concatenate([np.sort(eps), [np.nextafter(eps.max(), np.inf)]])
    best, best_tau = -1, cands[0]
    for c in cands:
        agree = int(np.sum((eps < c) == flags))
        if agree > best:
            best, best_tau = agree, c
    return float(best_tau)


def regularization_sweep(cfg: RunConfig, v1_grid: Optional[Sequence[float]] = None,
                         M: Optional[int] = None, threads: Optional[int] = None) -> SweepResult:
    """Vary Re v_1 on channel 1 over a frozen set of M paths."""
    v1_grid = list(cfg.experiment.v1_grid if v1_grid is None else v1_grid)
    M = cfg.experiment.paths if M is None else M
    alpha, d = cfg.problem.alpha, cfg.problem.d
    theta = cfg.experiment.theta or exponents(d, alpha, cfg.problem.lam).theta
    res = parallel_map(_sweep_task, [(cfg, p, v1_grid, theta) for p in range(M)], threads)
    flags = np.array([[r[j][0] for j in range(len(v1_grid))] for r in res], dtype=bool)
    status = np.array([[r[j][1] for j in range(len(v1_grid))] for r in res])
    eps = np.array([[r[j][2] for j in range(len(v1_grid))] for r in res])
    eps_l = np.array([[r[j][3] for j in range(len(v1_grid))] for r in res])
    b = int(np.argmin(np.abs(v1_grid)))
    tau = calibrate_threshold(eps[:, b], flags[:, b])
    X0 = cfg.datum()
    C = (tau ** (-1.0 / theta) / (2.0 ** alpha * norm_sigma(X0) ** (alpha - 1.0))) ** (1.0 / alpha)
    return SweepResult(
        v1_grid=v1_grid, paths=M,
        fraction=[float(x) for x in flags.mean(axis=0)],
        proxy_fraction=[float(x) for x in (eps < tau).mean(axis=0)],
        mean_eps=[float(x) for x in eps.mean(axis=0)],
        mean_eps_lensed=[float(x) for x in eps_l.mean(axis=0)],
        blowups=[int(x) for x in (status == "blow-up").sum(axis=0)],
        master_seed=cfg.master_seed, config_hash=cfg.hash(), theta=theta, tau=tau, C=float(C),
        flags=flags, eps=eps)


# ------------------------------------------------------ Ito and convergence

def _levels_task(args):
    cfg, p, which, milstein = args
    seed = path_seed(cfg.master_seed, p)
    model = cfg.model(seed)
    X0 = cfg.datum()
    out = {"seed": seed, "residual": {w: [] for w in which}, "finals": [], "ledgers": {}}
    for lev in range(cfg.experiment.levels):
        plan = StepPlan(cfg.time.dt / 2 ** lev, cfg.time.scheme, 1, cfg.time.cap)
        traj = evolve_X(X0, model, plan, cfg.time.T, cfg.problem.alpha)
        out["finals"].append(np.array(traj.snapshots[-1]))
        for w in which:
            led = ito_replay(traj, None, w, milstein=milstein)
            out["residual"][w].append(float(led.residual[-1]))
            if p == 0:
                out["ledgers"][(w, lev)] = led
        if lev == 0:
            out["mass0"] = mass(X0)
            out["massT"] = mass(Field(traj.grid, traj.snapshots[-1]))
    return out


def _slope_report(residuals: np.ndarray, floor: float = 1e-11) -> dict:
    rms = np.sqrt(np.mean(residuals ** 2, axis=0))
    saturated = bool(np.all(rms < floor))
    fittable = len(rms) >= 2 and bool(np.all(rms > 0))
    return {"rms": [float(x) for x in rms],
            "slope": fit_slope(rms) if fittable and not saturated else None,
            "saturated": saturated}


def ito_suite(cfg: RunConfig, threads: Optional[int] = None, milstein: Optional[bool] = None) -> dict:
    """Ledger replays on common bridge-refined paths at dt, dt/2, ...; residual slopes."""
    e = cfg.experiment
    milstein = e.milstein if milstein is None else milstein
    res = parallel_map(_levels_task, [(cfg, p, list(e.which), milstein) for p in range(e.paths)], threads)
    report = {"levels": [cfg.time.dt / 2 ** l for l in range(e.levels)], "paths": e.paths,
              "milstein": milstein, "functionals": {}}
    for w in e.which:
        R = np.array([r["residual"][w] for r in res])
        report["functionals"][w] = _slope_report(R)
    m0 = np.array([r["mass0"] for r in res])
    mT = np.array([r["massT"] for r in res])
    diff = mT - m0
    se = float(mT.std(ddof=1) / math.sqrt(len(mT))) if len(mT) > 1 else float("nan")
    report["martingale"] = {"mean_change": float(diff.mean()), "se": se, "ci_width": 2 * 1.96 * se,
                            "within_3se": bool(abs(diff.mean()) <= 3 * se) if len(mT) > 1 else None}
    report["_ledgers"] = res[0]["ledgers"] if res else {}
    return report


def convergence_study(cfg: RunConfig, threads: Optional[int] = None,
                      milstein: Optional[bool] = None) -> dict:
    """Self-convergence |X_dt - X_dt/2|_2 and ledger residual slopes on common paths."""
    e = cfg.experiment
    milstein = e.milstein if milstein is None else milstein
    res = parallel_map(_levels_task, [(cfg, p, list(e.which), milstein) for p in range(e.paths)], threads)
    dV = cfg.grid_obj().dV
    errs = np.array([[math.sqrt(np.sum(np.abs(r["finals"][l] - r["finals"][l + 1]) ** 2) * dV)
                      for l in range(e.levels - 1)] for r in res])
    out = {"levels": [cfg.time.dt / 2 ** l for l in range(e.levels)], "paths": e.paths,
           "self_convergence": _slope_report(errs, floor=1e-13), "residuals": {}}
    for w in e.which:
        out["residuals"][w] = _slope_report(np.array([r["residual"][w] for r in res]))
    return out

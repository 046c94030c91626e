"""Pathwise split-step integrators.

The stochastic equation is advanced in the original variable X with three
exactly solvable pieces per step:

    noise      X <- X * exp(sum_k a_k F_k dI_k - Re(a_k) a_k F_k^2 dJ_k)
    linear     X <- exp(-i dt Delta) X          (Fourier multiplier)
    nonlinear  X <- X * exp(-i lam |X|^(alpha-1) dt)

The noise factor is the exact one-cell increment of exp(phi), so the gauge
z = exp(-phi) X never has to be discretized.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.fft as sfft

from .field import Field, Grid, SpaceTimeSeries
from .noise import HorizonError, NoiseConfigError, NoiseModel, re_phi_scalar

log = logging.getLogger(__name__)

SCHEMES = ("strang", "lie")


class BlowUpError(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class StepPlan:
    dt: float
    scheme: str = "strang"
    stride: int = 1
    cap: float = 1e6

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.stride < 1:
            raise ValueError("snapshot stride must be >= 1")

    def halved(self, times: int = 1) -> "StepPlan":
        return StepPlan(self.dt / 2 ** times, self.scheme, self.stride * 2 ** times, self.cap)


@dataclass(eq=False)
class Trajectory:
    grid: Grid
    times: np.ndarray
    snapshots: list
    dt: float
    alpha: float
    lam: int
    model: Optional[NoiseModel] = None
    t0: float = 0.0
    step_index: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, dtype=int))
    status: str = "ok"
    kind: str = "X"

    @property
    def fields(self) -> list[Field]:
        return [Field(self.grid, v) for v in self.snapshots]

    @property
    def series(self) -> SpaceTimeSeries:
        return SpaceTimeSeries(np.asarray(self.times), self.fields)

    @property
    def final(self) -> Field:
        return Field(self.grid, self.snapshots[-1])

    def field_at(self, t: float) -> Field:
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t = {t}")
        return Field(self.grid, self.snapshots[i])

    def increments(self) -> tuple[np.ndarray, np.ndarray]:
        """(dbeta, g_left) per step and channel, exactly as consumed by the integrator."""
        if self.model is None or self.model.N == 0:
            n = int(self.step_index[-1]) if len(self.step_index) else 0
            return np.zeros((n, 0)), np.zeros((n, 0))
        i0 = int(round(self.t0 / self.dt))
        i1 = int(self.step_index[-1]) + i0
        db = np.stack([ch.path.increments[i0:i1] for ch in self.model.channels], axis=1)
        g = np.stack([ch.g_nodes[i0:i1] for ch in self.model.channels], axis=1)
        return db, g


# ------------------------------------------------------------ substeps

def _fftn(v):
    return sfft.fftn(v, workers=1)


def _ifftn(v):
    return sfft.ifftn(v, workers=1)


def _propagate(grid: Grid, v: np.ndarray, t: float) -> np.ndarray:
    if t == 0:
        return v.copy()
    return _ifftn(np.exp(-1j * t * grid.k2) * _fftn(v))


def free_propagate(f: Field, t: float) -> Field:
    """e^{it Delta} f, Fourier multiplier exp(-i |k|^2 t)."""
    return Field(f.grid, _propagate(f.grid, f.values, t))


def _nonlinear(v: np.ndarray, coef: float, alpha: float) -> np.ndarray:
    if coef == 0:
        return v
    return v * np.exp(-1j * coef * np.abs(v) ** (alpha - 1.0))


def step_nonlinear(f: Field, dt: float, alpha: float, lam: int) -> Field:
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    return Field(f.grid, _nonlinear(f.values, lam * dt, alpha))


class _NoiseTables:
    """Spatial profile arrays P_k = a_k F_k, Q_k = Re(a_k) a_k F_k^2 for fast cell exponents."""

    def __init__(self, model: NoiseModel, grid: Grid):
        self.model = model
        self.P = []
        self.Q = []
        for ch in model.channels:
            Fv = ch.spatial.radial.derivs(grid.r2)[0]
            a = ch.spatial.amp
            self.P.append(a * Fv)
            self.Q.append(a.real * a * Fv * Fv)
        self.dI = [ch.dI for ch in model.channels]
        self.dJ = [ch.dJ for ch in model.channels]

    def exponent(self, i: int):
        e = 0.0
        active = False
        for P, Q, dI, dJ in zip(self.P, self.Q, self.dI, self.dJ):
            if dI[i] != 0 or dJ[i] != 0:
                e = e + P * dI[i] - Q * dJ[i]
                active = True
        return e if active else None


def step_noise(f: Field, model: NoiseModel, cell: int) -> Field:
    """Multiply by the exact one-cell increment of exp(phi) on mesh cell `cell`."""
    if model.N == 0:
        return f
    e = _NoiseTables(model, f.grid).exponent(cell)
    if e is None:
        return f
    return Field(f.grid, f.values * np.exp(e))


# ------------------------------------------------------------ integrators

def _refined_for(model: NoiseModel, dt: float) -> NoiseModel:
    ratio = model.dt / dt
    m = int(round(math.log2(ratio))) if ratio >= 1 else -1
    if m < 0 or abs(2 ** m - ratio) > 1e-9 * ratio:
        raise ValueError(f"dt = {dt} must equal the mesh cell {model.dt} / 2^m")
    return model.refine(m) if m else model


def _steps_between(t0: float, t1: float, dt: float) -> int:
    n = (t1 - t0) / dt
    k = int(round(n))
    if abs(k - n) > 1e-8 * max(1.0, n):
        raise ValueError(f"interval [{t0}, {t1}] is not a whole number of steps of {dt}")
    return k


def _run(v0: np.ndarray, grid: Grid, model: Optional[NoiseModel], plan: StepPlan, t0: float,
         n_steps: int, alpha: float, lam: int, nl_coef=None, kind: str = "X",
         keep=()) -> Trajectory:
    dt = plan.dt
    half = np.exp(-1j * (-0.5 * dt) * grid.k2)
    full = np.exp(-1j * (-dt) * grid.k2)
    tables = _NoiseTables(model, grid) if model is not None and model.N else None
    i_base = int(round(t0 / dt)) if tables is not None else 0
    times = [t0]
    snaps = [np.array(v0, dtype=complex)]
    steps = [0]
    traj = Trajectory(grid, times, snaps, dt, alpha, lam, model, t0, kind=kind)
    v = snaps[0].copy()
    keep = set(int(k) for k in keep)

    def wanted(s):
        return s % plan.stride == 0 or s == n_steps or s in keep

    if tables is None and lam == 0 and nl_coef is None:
        # pure linear flow: one propagation per snapshot
        v_hat = _fftn(v)
        for s in range(1, n_steps + 1):
            if wanted(s):
                snaps.append(_ifftn(np.exp(1j * (s * dt) * grid.k2) * v_hat))
                times.append(t0 + s * dt)
                steps.append(s)
        traj.times = np.array(times)
        traj.step_index = np.array(steps)
        return traj

    for s in range(1, n_steps + 1):
        t_left = t0 + (s - 1) * dt
        if tables is not None:
            e = tables.exponent(i_base + s - 1)
            if e is not None:
                v = v * np.exp(e)
        if nl_coef is None:
            c = lam * dt
        else:
            c = lam * dt * nl_coef(t_left + 0.5 * dt)
        if plan.scheme == "strang":
            v = _ifftn(half * _fftn(v))
            v = _nonlinear(v, c, alpha)
            v = _ifftn(half * _fftn(v))
        else:
            v = _ifftn(full * _fftn(v))
            v = _nonlinear(v, c, alpha)
        amax = np.max(np.abs(v))
        if not np.isfinite(amax) or amax > plan.cap:
            traj.times = np.array(times)
            traj.step_index = np.array(steps)
            traj.status = "blow-up"
            raise BlowUpError(f"|X|_inf = {amax:.3e} at t = {t_left + dt:.6g}", traj)
        if wanted(s):
            times.append(t0 + s * dt)
            snaps.append(v.copy())
            steps.append(s)
    traj.times = np.array(times)
    traj.step_index = np.array(steps)
    return traj


def evolve_X(X0: Field, model: NoiseModel, plan: StepPlan, T: float, alpha: float,
             keep=()) -> Trajectory:
    """Integrate the stochastic equation on [0, T]; paths are bridge-refined to match dt.

    Snapshots are stored every `plan.stride` steps, at the final step, and at
    any step index listed in `keep`.
    """
    if model.N and T > model.T * (1 + 1e-12):
        raise HorizonError(f"T = {T} beyond the path horizon {model.T}")
    m = _refined_for(model, plan.dt) if model.N else model
    n = _steps_between(0.0, T, plan.dt)
    return _run(X0.values, X0.grid, m, plan, 0.0, n, alpha, m.lam, keep=keep)


def evolve_deterministic(u_T: Field, plan: StepPlan, interval: tuple[float, float],
                         alpha: float, lam: int, keep=()) -> Trajectory:
    t0, t1 = interval
    n = _steps_between(t0, t1, plan.dt)
    return _run(u_T.values, u_T.grid, None, plan, t0, n, alpha, lam, kind="u", keep=keep)


def h_power(d: int, alpha: float) -> float:
    return 0.5 * (d * (alpha - 1.0) - 4.0)


def lensed_weight(model: Optional[NoiseModel], d: int, alpha: float):
    """t -> h(t) exp((alpha-1) Re phi(t/(1-t))) for (H2) noise."""
    hp = h_power(d, alpha)

    def weight(t: float) -> float:
        w = (1.0 - t) ** hp
        if model is not None and model.N:
            w *= math.exp((alpha - 1.0) * float(re_phi_scalar(model, t / (1.0 - t))[0]))
        return w

    return weight


def evolve_lensed(w0: Field, model: Optional[NoiseModel], plan: StepPlan, interval: tuple[float, float],
                  alpha: float, lam: int) -> Trajectory:
    """Lensed equation dz/dt = -i Delta z - lam i h(t) e^{(alpha-1) Re phi~(t)} |z|^{alpha-1} z on [t0, t1]."""
    t0, t1 = interval
    if t1 >= 1.0:
        raise ValueError("the lensed interval must end before t = 1")
    if not 0 <= t0 <= t1:
        raise ValueError("need 0 <= t0 <= t1")
    if model is not None and model.N:
        if not model.constant_profiles:
            raise NoiseConfigError("the lensed integrator needs constant spatial profiles")
        if t1 / (1.0 - t1) > model.T * (1 + 1e-12):
            raise HorizonError("the path horizon does not cover t1/(1-t1)")
    n = _steps_between(t0, t1, plan.dt)
    weight = lensed_weight(model, w0.grid.d, alpha)
    return _run(w0.values, w0.grid, None, plan, t0, n, alpha, lam, nl_coef=weight, kind="z~")


# ------------------------------------------------- homogeneous evolution

def _linear_flow_fwd(v, grid, model, i0, i1):
    dt = model.dt
    tables = _NoiseTables(model, grid) if model.N else None
    pending = 0.0
    for i in range(i0, i1):
        e = tables.exponent(i) if tables is not None else None
        if e is None:
            pending += dt
            continue
        if pending:
            v = _propagate(grid, v, -pending)
            pending = 0.0
        v = v * np.exp(e)
        pending = dt
    if pending:
        v = _propagate(grid, v, -pending)
    return v


def _linear_flow_inv(v, grid, model, i0, i1):
    dt = model.dt
    tables = _NoiseTables(model, grid) if model.N else None
    pending = 0.0
    for i in range(i1 - 1, i0 - 1, -1):
        e = tables.exponent(i) if tables is not None else None
        pending += dt
        if e is None:
            continue
        v = _propagate(grid, v, pending)
        pending = 0.0
        v = v * np.exp(-e)
    if pending:
        v = _propagate(grid, v, pending)
    return v


def _psi(model: NoiseModel, t: float, grid: Grid, star: bool) -> np.ndarray:
    combo = model.phi_star_combo(t) if star else model.phi_combo(t)
    return combo.values(grid)


def homogeneous_evolve(v: Field, s: float, t: float, model: NoiseModel, star: bool = True) -> Field:
    """V(t, s) v = e^{-psi(t)} Lambda(t, s) e^{psi(s)} v with psi = phi* or phi."""
    if s > t:
        raise ValueError("homogeneous_evolve needs s <= t")
    g = v.grid
    if model.N == 0:
        return free_propagate(v, -(t - s))
    i0, i1 = model.node(s), model.node(t)
    w = v.values * np.exp(_psi(model, s, g, star))
    w = _linear_flow_fwd(w, g, model, i0, i1)
    return Field(g, w * np.exp(-_psi(model, t, g, star)))


def homogeneous_backward(v: Field, s: float, t: float, model: NoiseModel, star: bool = True) -> Field:
    """V(s, t) = V(t, s)^{-1} for s <= t."""
    if s > t:
        raise ValueError("homogeneous_backward needs s <= t")
    g = v.grid
    if model.N == 0:
        return free_propagate(v, t - s)
    i0, i1 = model.node(s), model.node(t)
    w = v.values * np.exp(_psi(model, t, g, star))
    w = _linear_flow_inv(w, g, model, i0, i1)
    return Field(g, w * np.exp(-_psi(model, s, g, star)))


def stochastic_linear_flow(v: Field, s: float, t: float, model: NoiseModel) -> Field:
    """Lambda(t, s): the lam = 0 stochastic flow in the X variable."""
    if model.N == 0:
        return free_propagate(v, -(t - s))
    return Field(v.grid, _linear_flow_fwd(v.values, v.grid, model, model.node(s), model.node(t)))


# ------------------------------------------------------------- export

def export_trajectory(traj: Trajectory, directory, config_hash: str, seed: int, version: str) -> None:
    import json
    import os
    from .field import save_field
    os.makedirs(directory, exist_ok=True)
    names = []
    for i, v in enumerate(traj.snapshots):
        name = f"snap_{i:05d}.bin"
        save_field(os.path.join(directory, name), Field(traj.grid, v))
        names.append(name)
    manifest = {
        "config_hash": config_hash, "seed": seed, "version": version,
        "kind": traj.kind, "dt": traj.dt, "status": traj.status,
        "times": [float(t) for t in traj.times], "files": names,
        "grid": {"d": traj.grid.d, "n": traj.grid.n, "L": traj.grid.L},
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)

"""Scalar functionals, their Ito integrands, and residual replay along trajectories.

For a noise model with G_k(t, x) = g_k(t) a_k F_k(|x|^2) the integrands are
evaluated by grid quadrature with analytic grad G_k.  The replay uses the
exact Brownian increments that the integrator consumed, so a residual that
does not shrink under refinement points to a wrong formula, not to noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dynamics import Trajectory
from .field import Field, Grid, gradient_values
from .noise import NoiseModel

WHICH = ("mass", "hamiltonian", "virial", "momentum", "pc_energy")


class InternalConsistencyError(RuntimeError):
    pass


def _int(grid: Grid, a) -> float:
    return float(np.sum(a).real * grid.dV)


def mass(f: Field) -> float:
    return _int(f.grid, np.abs(f.values) ** 2)


def potential_term(f: Field, alpha: float) -> float:
    """|f|_{alpha+1}^{alpha+1}."""
    return _int(f.grid, np.abs(f.values) ** (alpha + 1.0))


def kinetic(f: Field) -> float:
    return _int(f.grid, sum(np.abs(g) ** 2 for g in gradient_values(f.grid, f.values)))


def hamiltonian(f: Field, alpha: float, lam: int) -> float:
    return 0.5 * kinetic(f) - lam / (alpha + 1.0) * potential_term(f, alpha)


def virial(f: Field) -> float:
    return _int(f.grid, f.grid.r2 * np.abs(f.values) ** 2)


def momentum(f: Field) -> float:
    """Im int x . grad(conj f) f."""
    g = f.grid
    grads = gradient_values(g, f.values)
    s = sum(x * np.conj(gj) * f.values for x, gj in zip(g.coords, grads))
    return float(np.sum(s).imag * g.dV)


def pc_energy_terms(f: Field, s: float, alpha: float) -> tuple[float, float]:
    """(|(x - 2i(1+s) grad) f|_2^2,  8/(1+alpha) (1+s)^2 |f|_{alpha+1}^{alpha+1})."""
    g = f.grid
    grads = gradient_values(g, f.values)
    first = sum(np.abs(x * f.values - 2j * (1.0 + s) * gj) ** 2 for x, gj in zip(g.coords, grads))
    return _int(g, first), 8.0 / (1.0 + alpha) * (1.0 + s) ** 2 * potential_term(f, alpha)


def pc_energy_decomposed(f: Field, s: float, alpha: float) -> float:
    """8(1+s)^2 H - 4(1+s) G + V with the defocusing Hamiltonian."""
    return 8.0 * (1.0 + s) ** 2 * hamiltonian(f, alpha, -1) - 4.0 * (1.0 + s) * momentum(f) + virial(f)


def pc_energy(f: Field, s: float, alpha: float, rtol: float = 1e-8) -> float:
    if s < 0:
        raise ValueError("s must be non-negative")
    a, b = pc_energy_terms(f, s, alpha)
    direct = a + b
    other = pc_energy_decomposed(f, s, alpha)
    scale = max(abs(direct), abs(other))
    if scale > 0 and abs(direct - other) > rtol * scale:
        raise InternalConsistencyError(
            f"pseudo-conformal energy: direct {direct!r} vs decomposition {other!r}")
    return direct


def lensed_energy(w: Field, t: float, alpha: float) -> float:
    """4 |grad w|^2 + 8/(1+alpha) (1-t)^{d(alpha-1)/2 - 2} |w|_{alpha+1}^{alpha+1}."""
    d = w.grid.d
    return 4.0 * kinetic(w) + 8.0 / (1.0 + alpha) * (1.0 - t) ** (0.5 * d * (alpha - 1.0) - 2.0) \
        * potential_term(w, alpha)


# ------------------------------------------------------------- integrands

def _noise_fields(model: NoiseModel, t: float, grid: Grid):
    g = model.g_at(t) if model.N else np.zeros(0)
    G = [gk * ch.spatial.values(grid) for gk, ch in zip(g, model.channels)]
    dG = [[gk * v for v in ch.spatial.grad(grid)] for gk, ch in zip(g, model.channels)]
    return G, dG


def _integrands(X: np.ndarray, grid: Grid, model: NoiseModel, t: float, which: str,
                alpha: float, lam: int, grads=None):
    if which not in WHICH:
        raise ValueError(f"which must be one of {WHICH}")
    d = grid.d
    G, dG = _noise_fields(model, t, grid)
    absX2 = np.abs(X) ** 2
    P = np.abs(X) ** (alpha + 1.0)
    if grads is None:
        grads = gradient_values(grid, X)
    coords = grid.coords
    f = Field(grid, X)
    pot = _int(grid, P)
    kin = _int(grid, sum(np.abs(g) ** 2 for g in grads))
    H = 0.5 * kin - lam / (alpha + 1.0) * pot
    crit = 4.0 * lam / (alpha + 1.0) * (1.0 - d * (alpha - 1.0) / 4.0)

    def s0():
        return np.array([2.0 * _int(grid, Gk.real * absX2) for Gk in G])

    def s2():
        return np.array([2.0 * _int(grid, Gk.real * grid.r2 * absX2) for Gk in G])

    def a1_s1():
        mu = sum((0.5 * np.abs(Gk) ** 2 for Gk in G), np.zeros(grid.shape))
        dmu = [sum((np.real(np.conj(Gk) * dGk[j]) for Gk, dGk in zip(G, dG)), np.zeros(grid.shape))
               for j in range(d)]
        a = -sum(_int(grid, np.real(np.conj(grads[j]) * (dmu[j] * X + mu * grads[j]))) for j in range(d))
        sig = []
        for Gk, dGk in zip(G, dG):
            dGX = [dGk[j] * X + Gk * grads[j] for j in range(d)]
            a += 0.5 * _int(grid, sum(np.abs(v) ** 2 for v in dGX))
            a -= lam * (alpha - 1.0) / 2.0 * _int(grid, Gk.real ** 2 * P)
            sig.append(_int(grid, sum(np.real(np.conj(grads[j]) * dGX[j]) for j in range(d)))
                       - lam * _int(grid, Gk.real * P))
        return a, np.array(sig)

    def a3_s3():
        a = 0.0
        sig = []
        xgX = sum(x * gj for x, gj in zip(coords, grads))
        for Gk, dGk in zip(G, dG):
            xdG = sum(x * v for x, v in zip(coords, dGk))
            a -= float(np.sum(xdG * absX2 * np.conj(Gk)).imag * grid.dV)
            sig.append(d * _int(grid, absX2 * Gk.imag)
                       - 2.0 * float(np.sum(xgX * np.conj(X) * np.conj(Gk)).imag * grid.dV))
        return a, np.array(sig)

    if which == "mass":
        return mass(f), 0.0, s0()
    if which == "virial":
        return virial(f), 4.0 * momentum(f), s2()
    if which == "hamiltonian":
        a, s = a1_s1()
        return H, a, s
    if which == "momentum":
        a3, s3 = a3_s3()
        return momentum(f), 4.0 * H + crit * pot + a3, s3
    # pseudo-conformal energy at time t
    a1, s1 = a1_s1()
    a3, s3 = a3_s3()
    r = 1.0 + t
    value = pc_energy(f, t, alpha) if lam == -1 else sum(pc_energy_terms(f, t, alpha))
    drift = 8.0 * r * r * a1 - 4.0 * r * a3 - 4.0 * crit * r * pot
    sig = 8.0 * r * r * s1 - 4.0 * r * s3 + s2() if model.N else np.zeros(0)
    return value, drift, sig


def ito_integrands(f: Field, model: NoiseModel, t: float, which: str, alpha: float,
                   lam: int | None = None) -> tuple[float, np.ndarray]:
    """(drift, per-channel diffusion coefficients) of the functional at time t."""
    lam = model.lam if lam is None else lam
    _, a, s = _integrands(f.values, f.grid, model, t, which, alpha, lam)
    return a, s


# ------------------------------------------------------------------ ledger

@dataclass
class ItoLedger:
    which: str
    times: np.ndarray
    value: np.ndarray
    drift_cum: np.ndarray
    stoch_cum: np.ndarray
    residual: np.ndarray

    def to_csv(self, header: list[str] | None = None) -> str:
        lines = [f"# {h}" for h in (header or [])]
        N = self.stoch_cum.shape[1]
        lines.append("t,value,drift_cum," + "".join(f"stoch_cum_{k}," for k in range(N)) + "residual")
        for i, t in enumerate(self.times):
            cols = [t, self.value[i], self.drift_cum[i], *self.stoch_cum[i], self.residual[i]]
            lines.append(",".join(f"{c:.17g}" for c in cols))
        return "\n".join(lines) + "\n"


def _sigma_derivative(X: np.ndarray, grid: Grid, model: NoiseModel, t: float, which: str,
                      alpha: float, lam: int, eps: float = 1e-5) -> np.ndarray:
    """D sigma_k[X G_l] by central differences; entry [k, l]."""
    G, _ = _noise_fields(model, t, grid)
    out = np.zeros((model.N, model.N))
    for l, Gl in enumerate(G):
        up = _integrands(X + eps * X * Gl, grid, model, t, which, alpha, lam)[2]
        dn = _integrands(X - eps * X * Gl, grid, model, t, which, alpha, lam)[2]
        out[:, l] = (up - dn) / (2.0 * eps)
    return out


def ito_replay(traj: Trajectory, model: NoiseModel | None, which: str,
               milstein: bool = False) -> ItoLedger:
    """Cumulative drift (trapezoid) and Ito sums (left point) with the consumed increments.

    With milstein=True each Ito sum also carries the adapted second-order term
    1/2 D sigma_k[X G_l] (dB_k dB_l - delta_kl dt); Levy areas are left out, so
    the gain in order is only guaranteed for a single channel.
    """
    m = traj.model if traj.model is not None else model
    if m is None:
        raise ValueError("trajectory carries no noise model")
    if m.N and len(traj.step_index) < 1:
        raise ValueError("trajectory has no stored increments")
    times = np.asarray(traj.times)
    vals, drifts, sigs, derivs = [], [], [], []
    for t, X in zip(times, traj.snapshots):
        v, a, s = _integrands(X, traj.grid, m, t, which, traj.alpha, traj.lam)
        vals.append(v)
        drifts.append(a)
        sigs.append(s)
        if milstein and m.N:
            derivs.append(_sigma_derivative(X, traj.grid, m, t, which, traj.alpha, traj.lam))
    vals = np.array(vals)
    drift_cum = cumulative_trapezoid(np.array(drifts), times, initial=0.0)
    N = m.N
    stoch = np.zeros((len(times), N))
    if N:
        db, _ = traj.increments()
        cum = np.vstack([np.zeros((1, N)), np.cumsum(db, axis=0)])
        beta_snap = cum[np.asarray(traj.step_index)]
        dB = np.diff(beta_snap, axis=0)
        S = np.array(sigs)
        inc = S[:-1] * dB
        if milstein:
            D = np.array(derivs)[:-1]
            h = np.diff(times)
            quad = dB[:, :, None] * dB[:, None, :] - h[:, None, None] * np.eye(N)[None]
            inc = inc + 0.5 * np.einsum("ikl,ikl->ik", D, quad)
        stoch[1:] = np.cumsum(inc, axis=0)
    residual = vals - vals[0] - drift_cum - stoch.sum(axis=1)
    return ItoLedger(which, times, vals, drift_cum, stoch, residual)

"""Brownian drivers, noise channels G_k = g_k(t) phi_k(x) and the rescaling fields.

Every spatial profile is amplitude * F(|x|^2) with F real and radial, so all
spatial derivatives are closed-form polynomials in x times F', F'', F'''.
The rescaling field phi(t, x) is a finite sum of such terms with scalar
time coefficients built from the path:

    I_k(t) = int_0^t g_k dbeta_k      (left-point, Ito)
    J_k(t) = int_0^t g_k^2 ds         (trapezoid)

    phi(t) = sum_k a_k F_k I_k(t) - sum_k Re(a_k) a_k F_k^2 J_k(t)
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np

from .field import Field, Grid

log = logging.getLogger(__name__)


class HorizonError(ValueError):
    pass


class NoiseConfigError(ValueError):
    pass


# ---------------------------------------------------------- radial functions

class Radial:
    """F(u), u = |x|^2, with derivatives up to third order."""

    def derivs(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def __mul__(self, other: "Radial") -> "Radial":
        return RadialProduct(self, other)


@dataclass(frozen=True)
class RadialConstant(Radial):
    def derivs(self, u):
        one = np.ones_like(u)
        z = np.zeros_like(u)
        return one, z, z, z


@dataclass(frozen=True)
class RadialGaussian(Radial):
    width: float

    def derivs(self, u):
        c = -1.0 / (2.0 * self.width ** 2)
        f = np.exp(c * u)
        return f, c * f, c * c * f, c ** 3 * f


@dataclass(frozen=True)
class RadialInversePoly(Radial):
    power: float

    def derivs(self, u):
        e = -0.5 * self.power
        b = 1.0 + u
        return (b ** e, e * b ** (e - 1), e * (e - 1) * b ** (e - 2),
                e * (e - 1) * (e - 2) * b ** (e - 3))


@dataclass(frozen=True)
class RadialProduct(Radial):
    a: Radial
    b: Radial

    def derivs(self, u):
        f = self.a.derivs(u)
        g = self.b.derivs(u)
        return (f[0] * g[0],
                f[1] * g[0] + f[0] * g[1],
                f[2] * g[0] + 2 * f[1] * g[1] + f[0] * g[2],
                f[3] * g[0] + 3 * f[2] * g[1] + 3 * f[1] * g[2] + f[0] * g[3])


def radial_partial(F: Radial, coords: tuple[np.ndarray, ...], r2: np.ndarray,
                   index: tuple[int, ...]) -> np.ndarray:
    """d^gamma F(|x|^2) for a multi-index given as a tuple of axes (length <= 3)."""
    f0, f1, f2, f3 = F.derivs(r2)
    n = len(index)
    if n == 0:
        return f0
    x = coords
    if n == 1:
        (i,) = index
        return 2.0 * x[i] * f1
    if n == 2:
        i, j = index
        return (2.0 * f1 if i == j else 0.0) + 4.0 * x[i] * x[j] * f2
    if n == 3:
        i, j, k = index
        lin = ((x[k] if i == j else 0.0) + (x[j] if i == k else 0.0) + (x[i] if j == k else 0.0))
        return 4.0 * lin * f2 + 8.0 * x[i] * x[j] * x[k] * f3
    raise ValueError("derivatives above third order are not provided")


def radial_laplacian(F: Radial, d: int, r2: np.ndarray) -> np.ndarray:
    _, f1, f2, _ = F.derivs(r2)
    return 2.0 * d * f1 + 4.0 * r2 * f2


# ----------------------------------------------------------------- profiles

SPATIAL_KINDS = ("constant", "gaussian_decay", "inverse_poly")
TEMPORAL_KINDS = ("constant", "compact", "poly_decay", "exp_decay")


@dataclass(frozen=True)
class SpatialProfile:
    kind: str
    amp: complex
    width: float = 1.0
    power: float = 3.0

    def __post_init__(self):
        if self.kind not in SPATIAL_KINDS:
            raise NoiseConfigError(f"unknown spatial profile kind {self.kind!r}")
        if self.kind == "inverse_poly" and self.power < 3:
            raise NoiseConfigError("inverse_poly profiles need power >= 3")
        if self.kind == "gaussian_decay" and not self.width > 0:
            raise NoiseConfigError("gaussian_decay width must be positive")
        object.__setattr__(self, "amp", complex(self.amp))

    @property
    def radial(self) -> Radial:
        if self.kind == "constant":
            return RadialConstant()
        if self.kind == "gaussian_decay":
            return RadialGaussian(self.width)
        return RadialInversePoly(self.power)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def values(self, grid: Grid) -> np.ndarray:
        return self.amp * self.radial.derivs(grid.r2)[0]

    def partial(self, grid: Grid, index: tuple[int, ...]) -> np.ndarray:
        return self.amp * radial_partial(self.radial, grid.coords, grid.r2, index)

    def grad(self, grid: Grid) -> list[np.ndarray]:
        return [self.partial(grid, (j,)) for j in range(grid.d)]


@dataclass(frozen=True)
class TemporalProfile:
    kind: str
    c: float = 1.0
    T0: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in TEMPORAL_KINDS:
            raise NoiseConfigError(f"unknown temporal profile kind {self.kind!r}")
        if self.kind == "constant" and not self.c > 0:
            raise NoiseConfigError("constant temporal profile needs c > 0")
        if self.kind == "poly_decay" and not self.rate > 2.5:
            raise NoiseConfigError("poly_decay needs rate > 5/2")
        if self.kind == "exp_decay" and not self.rate > 0:
            raise NoiseConfigError("exp_decay needs a positive rate")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.c)
        if self.kind == "compact":
            return np.where(t < self.T0, self.c, 0.0)
        if self.kind == "poly_decay":
            return self.c * (1.0 + t) ** (-self.rate)
        return self.c * np.exp(-self.rate * t)

    def tail_l2sq(self, T: float) -> float:
        """int_T^inf g^2 ds in closed form."""
        if self.kind == "constant":
            return math.inf
        if self.kind == "compact":
            return self.c ** 2 * max(self.T0 - T, 0.0)
        if self.kind == "poly_decay":
            r = self.rate
            return self.c ** 2 * (1.0 + T) ** (1.0 - 2.0 * r) / (2.0 * r - 1.0)
        return self.c ** 2 * math.exp(-2.0 * self.rate * T) / (2.0 * self.rate)

    def weighted_l2sq(self) -> float:
        """int_0^inf (1 + s^4) g^2 ds, finite iff the profile decays fast enough."""
        if self.kind == "constant":
            return math.inf
        if self.kind == "compact":
            return self.c ** 2 * (self.T0 + self.T0 ** 5 / 5.0)
        if self.kind == "exp_decay":
            a = 2.0 * self.rate
            return self.c ** 2 * (1.0 / a + 24.0 / a ** 5)
        from scipy.integrate import quad
        return quad(lambda s: (1 + s ** 4) * self(s) ** 2, 0, math.inf, limit=200)[0]

    @property
    def infimum(self) -> float:
        return self.c if self.kind == "constant" else 0.0


def ilog_diagnostic(profile: TemporalProfile, t: np.ndarray) -> np.ndarray:
    """(1-t)^{-3} (R ln ln R^{-1})^{1/2} with R = int_{t/(1-t)}^inf g^2; ln ln clamped at e."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    for i, ti in enumerate(t):
        R = profile.tail_l2sq(ti / (1.0 - ti))
        if R == 0:
            out[i] = 0.0
            continue
        arg = max(1.0 / R, math.e)
        out[i] = (1.0 - ti) ** -3 * math.sqrt(R * math.log(math.log(arg)))
    return out


# ------------------------------------------------------------ Brownian paths

def _key(seed: int, channel: int, level: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, channel, level]).generate_state(2, np.uint64)


def cell_normals(seed: int, channel: int, level: int, count: int) -> np.ndarray:
    """Standard normals for cells 0..count-1 from a Philox stream keyed by (seed, channel, level)."""
    gen = np.random.Generator(np.random.Philox(key=_key(seed, channel, level)))
    return gen.standard_normal(count)


# Increments live on the lattice QUANTUM * Z.  Any two lattice values below
# 2^53 * QUANTUM = 32 in magnitude add and subtract without rounding, so bridge
# splits and coarse sums are exact.
QUANTUM = 2.0 ** -48


def _quantize(v: np.ndarray) -> np.ndarray:
    return np.rint(v / QUANTUM) * QUANTUM


@dataclass(frozen=True, eq=False)
class BrownianPath:
    T: float
    increments: np.ndarray
    seed: int
    channel: int
    level: int = 0

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @property
    def n_cells(self) -> int:
        return len(self.increments)

    @property
    def dt(self) -> float:
        return self.T / self.n_cells

    @cached_property
    def mesh(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_cells + 1)

    @cached_property
    def values(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.increments)))

    def refine(self) -> "BrownianPath":
        """Brownian-bridge midpoint refinement; pairwise sums reproduce this path exactly."""
        h = self.dt
        z = cell_normals(self.seed, self.channel, self.level + 1, self.n_cells)
        a = _quantize(0.5 * self.increments + math.sqrt(h / 4.0) * z)
        b = self.increments - a
        fine = np.empty(2 * self.n_cells)
        fine[0::2] = a
        fine[1::2] = b
        return BrownianPath(self.T, fine, self.seed, self.channel, self.level + 1)

    def coarsen(self) -> "BrownianPath":
        if self.n_cells % 2:
            raise ValueError("cannot coarsen an odd number of cells")
        inc = self.increments[0::2] + self.increments[1::2]
        return BrownianPath(self.T, inc, self.seed, self.channel, max(self.level - 1, 0))

    def to_csv_rows(self) -> list[str]:
        return [f"{t:.17g},{db:.17g}" for t, db in zip(self.mesh[:-1], self.increments)]


def sample_path(T: float, n_cells: int, seed: int, channel: int) -> BrownianPath:
    h = T / n_cells
    return BrownianPath(T, _quantize(math.sqrt(h) * cell_normals(seed, channel, 0, n_cells)), seed, channel, 0)


# ---------------------------------------------------------------- the model

@dataclass(frozen=True, eq=False)
class Channel:
    spatial: SpatialProfile
    temporal: TemporalProfile
    path: BrownianPath

    @cached_property
    def g_nodes(self) -> np.ndarray:
        return self.temporal(self.path.mesh)

    @cached_property
    def dI(self) -> np.ndarray:
        """Per-cell increments of int g dbeta (left point)."""
        return self.g_nodes[:-1] * self.path.increments

    @cached_property
    def dJ(self) -> np.ndarray:
        """Per-cell increments of int g^2 ds (trapezoid)."""
        g2 = self.g_nodes ** 2
        return 0.5 * (g2[:-1] + g2[1:]) * self.path.dt

    @cached_property
    def I(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.dI)))

    @cached_property
    def J(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.dJ)))


@dataclass(frozen=True, eq=False)
class RadialSum:
    """sum_j coef_j F_j(|x|^2): a complex field with analytic derivatives."""
    terms: tuple[tuple[complex, Radial], ...]

    def values(self, grid: Grid) -> np.ndarray:
        out = np.zeros(grid.shape, dtype=complex)
        for c, F in self.terms:
            if c != 0:
                out += c * F.derivs(grid.r2)[0]
        return out

    def partial(self, grid: Grid, index: tuple[int, ...]) -> np.ndarray:
        out = np.zeros(grid.shape, dtype=complex)
        for c, F in self.terms:
            if c != 0:
                out += c * radial_partial(F, grid.coords, grid.r2, index)
        return out

    def grad(self, grid: Grid) -> list[np.ndarray]:
        return [self.partial(grid, (j,)) for j in range(grid.d)]

    def laplacian(self, grid: Grid) -> np.ndarray:
        out = np.zeros(grid.shape, dtype=complex)
        for c, F in self.terms:
            if c != 0:
                out += c * radial_laplacian(F, grid.d, grid.r2)
        return out

    def partial_laplacian(self, grid: Grid, j: int) -> np.ndarray:
        return sum(self.partial(grid, (j, i, i)) for i in range(grid.d))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    channels: tuple[Channel, ...] = ()
    lam: int = -1
    T: float = 1.0
    n_cells: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.lam not in (-1, 0, 1):
            raise NoiseConfigError("lambda must be -1, 0 or +1")
        for ch in self.channels:
            if ch.path.n_cells != self.n_cells or ch.path.T != self.T:
                raise NoiseConfigError("all channels must share one mesh")

    @property
    def N(self) -> int:
        return len(self.channels)

    @property
    def dt(self) -> float:
        return self.T / self.n_cells

    @cached_property
    def mesh(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_cells + 1)

    @property
    def conservative(self) -> bool:
        return all(ch.spatial.amp.real == 0 for ch in self.channels)

    @property
    def constant_profiles(self) -> bool:
        return all(ch.spatial.is_constant for ch in self.channels)

    def refine(self, levels: int = 1) -> "NoiseModel":
        m = self
        for _ in range(levels):
            chans = tuple(Channel(c.spatial, c.temporal, c.path.refine()) for c in m.channels)
            m = NoiseModel(chans, m.lam, m.T, 2 * m.n_cells)
        return m

    def with_amplitude(self, k: int, amp: complex) -> "NoiseModel":
        chans = list(self.channels)
        chans[k] = Channel(replace(chans[k].spatial, amp=complex(amp)), chans[k].temporal, chans[k].path)
        return NoiseModel(tuple(chans), self.lam, self.T, self.n_cells)

    def tail_bounds(self) -> list[float]:
        return [ch.temporal.tail_l2sq(self.T) for ch in self.channels]

    # -- time lookup -------------------------------------------------------
    def node(self, t: float) -> int:
        if t < -1e-12 or t > self.T * (1 + 1e-12) + 1e-12:
            raise HorizonError(f"t = {t} outside [0, {self.T}]")
        i = int(round(t / self.dt))
        if abs(i * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise HorizonError(f"t = {t} is not a mesh node (dt = {self.dt})")
        return min(max(i, 0), self.n_cells)

    def integrals(self, t: float, interpolate: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """(I_k(t), J_k(t)) for all channels; linear interpolation between nodes if asked."""
        if not self.channels:
            return np.zeros(0), np.zeros(0)
        if interpolate:
            if t < 0 or t > self.T * (1 + 1e-12):
                raise HorizonError(f"t = {t} outside [0, {self.T}]")
            I = np.array([np.interp(t, self.mesh, ch.I) for ch in self.channels])
            J = np.array([np.interp(t, self.mesh, ch.J) for ch in self.channels])
            return I, J
        i = self.node(t)
        return (np.array([ch.I[i] for ch in self.channels]),
                np.array([ch.J[i] for ch in self.channels]))

    def g_at(self, t: float) -> np.ndarray:
        return np.array([float(ch.temporal(t)) for ch in self.channels])

    # -- rescaling fields ---------------------------------------------------
    def _combo(self, I: np.ndarray, J: np.ndarray) -> RadialSum:
        terms = []
        for ch, Ik, Jk in zip(self.channels, I, J):
            a = ch.spatial.amp
            F = ch.spatial.radial
            terms.append((a * Ik, F))
            terms.append((-a.real * a * Jk, F * F))
        return RadialSum(tuple(terms))

    def phi_combo(self, t: float, interpolate: bool = False) -> RadialSum:
        I, J = self.integrals(t, interpolate)
        return self._combo(I, J)

    def phi_star_combo(self, t: float) -> RadialSum:
        I, J = self.integrals(t)
        IT, JT = self.integrals(self.T)
        return self._combo(I - IT, J - JT)


def build_model(specs, lam: int, T: float, n_cells: int, seed: int) -> NoiseModel:
    """specs: iterable of (SpatialProfile, TemporalProfile); channel k gets path (seed, k)."""
    chans = tuple(Channel(sp, tp, sample_path(T, n_cells, seed, k)) for k, (sp, tp) in enumerate(specs))
    model = NoiseModel(chans, lam, T, n_cells)
    for k, tail in enumerate(model.tail_bounds()):
        log.debug("channel %d: neglected tail int_T^inf g^2 = %.3e", k, tail)
    return model


# ------------------------------------------------------ public operations

def phi(model: NoiseModel, t: float, grid: Grid) -> Field:
    return Field(grid, model.phi_combo(t).values(grid))


def phi_star(model: NoiseModel, t: float, grid: Grid) -> Field:
    """Tail rescaling with infinity replaced by the horizon: phi(t) - phi(T_h)."""
    return Field(grid, model.phi_star_combo(t).values(grid))


def G_values(model: NoiseModel, t: float, grid: Grid) -> list[np.ndarray]:
    g = model.g_at(t)
    return [gk * ch.spatial.values(grid) for gk, ch in zip(g, model.channels)]


def mu(model: NoiseModel, t: float, grid: Grid) -> Field:
    out = np.zeros(grid.shape)
    for G in G_values(model, t, grid):
        out = out + 0.5 * np.abs(G) ** 2
    return Field(grid, out)


def mu_hat(model: NoiseModel, t: float, grid: Grid) -> Field:
    out = np.zeros(grid.shape, dtype=complex)
    for G in G_values(model, t, grid):
        out += G.real * G
    return Field(grid, out)


def mu_hat_symmetric(model: NoiseModel, t: float, grid: Grid) -> Field:
    """The same quantity written as 1/2 sum (|G|^2 + G^2)."""
    out = np.zeros(grid.shape, dtype=complex)
    for G in G_values(model, t, grid):
        out += 0.5 * (np.abs(G) ** 2 + G * G)
    return Field(grid, out)


def _b_from(combo: RadialSum, grid: Grid) -> list[Field]:
    return [Field(grid, 2.0 * gj) for gj in combo.grad(grid)]


def _c_from(combo: RadialSum, grid: Grid) -> Field:
    grads = combo.grad(grid)
    return Field(grid, sum(gj * gj for gj in grads) + combo.laplacian(grid))


def coeff_b(model: NoiseModel, t: float, grid: Grid) -> list[Field]:
    return _b_from(model.phi_combo(t), grid)


def coeff_c(model: NoiseModel, t: float, grid: Grid) -> Field:
    return _c_from(model.phi_combo(t), grid)


def coeff_b_star(model: NoiseModel, t: float, grid: Grid) -> list[Field]:
    return _b_from(model.phi_star_combo(t), grid)


def coeff_c_star(model: NoiseModel, t: float, grid: Grid) -> Field:
    return _c_from(model.phi_star_combo(t), grid)


def _multi_indices(d: int, order: int):
    return list(combinations_with_replacement(range(d), order))


def flatness_report(model: NoiseModel, t_list, grid: Grid, star: bool = True) -> list[dict]:
    """sup_x <x>^2 |d^beta b| (|beta| <= 2) and sup_x <x>^2 |d^gamma c| (|gamma| <= 1) per time."""
    w = 1.0 + grid.r2
    rows = []
    for t in t_list:
        combo = model.phi_star_combo(t) if star else model.phi_combo(t)
        row = {"t": float(t)}
        for order in range(3):
            best = 0.0
            for j in range(grid.d):
                for beta in _multi_indices(grid.d, order):
                    v = 2.0 * combo.partial(grid, (j,) + beta)
                    best = max(best, float(np.max(w * np.abs(v))))
            row[f"b{order}"] = best
        grads = combo.grad(grid)
        c0 = sum(g * g for g in grads) + combo.laplacian(grid)
        row["c0"] = float(np.max(w * np.abs(c0)))
        c1 = 0.0
        for i in range(grid.d):
            dc = sum(2.0 * gj * combo.partial(grid, (j, i)) for j, gj in enumerate(grads))
            dc = dc + combo.partial_laplacian(grid, i)
            c1 = max(c1, float(np.max(w * np.abs(dc))))
        row["c1"] = c1
        rows.append(row)
    return rows


def re_phi_scalar(model: NoiseModel, s: np.ndarray, interpolate: bool = True) -> np.ndarray:
    """Re phi(s) for spatially constant profiles (H2)."""
    if not model.constant_profiles:
        raise NoiseConfigError("Re phi is only a scalar for constant spatial profiles")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.zeros_like(s)
    for ch in model.channels:
        a = ch.spatial.amp
        I = np.interp(s, model.mesh, ch.I)
        J = np.interp(s, model.mesh, ch.J)
        out += a.real * I - a.real * a.real * J
    return out


def epsilon_theta(model: NoiseModel, alpha: float, theta: float, horizon: float,
                  lensed: bool = False, d: int = 3) -> float:
    """int_0^horizon w(s) exp((alpha-1) theta Re phi(s)) ds, w = 1 or (1+s)^{-(d(alpha-1)-4) theta/2 - 2}."""
    if not theta > 1:
        raise ValueError("theta must exceed 1")
    if horizon > model.T * (1 + 1e-12):
        raise HorizonError(f"horizon {horizon} beyond the path horizon {model.T}")
    s = model.mesh[model.mesh <= horizon * (1 + 1e-12)]
    if model.N:
        rp = re_phi_scalar(model, s)
    else:
        rp = np.zeros_like(s)
    integrand = np.exp((alpha - 1.0) * theta * rp)
    if lensed:
        integrand = integrand * (1.0 + s) ** lensed_weight_exponent(d, alpha, theta)
    from scipy.integrate import trapezoid
    return float(trapezoid(integrand, s))


def lensed_weight_exponent(d: int, alpha: float, theta: float) -> float:
    return -0.5 * (d * (alpha - 1.0) - 4.0) * theta - 2.0


def path_csv(model: NoiseModel) -> str:
    head = "t," + ",".join(f"dbeta_{k}" for k in range(model.N))
    rows = [head]
    for i, t in enumerate(model.mesh[:-1]):
        rows.append(f"{t:.17g}," + ",".join(f"{ch.path.increments[i]:.17g}" for ch in model.channels))
    return "\n".join(rows) + "\n"

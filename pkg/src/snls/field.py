"""Periodic spectral grids, complex fields and the norms measured on them.

The whole space R^d is replaced by the box [-L/2, L/2)^d with periodic
boundary conditions.  Positions are measured from the box centre so that
|x|-weighted quantities are meaningful as long as the field is negligible
near the boundary.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid


class InvalidExponentError(ValueError):
    pass


class BoundaryMassError(RuntimeError):
    """Raised when a field carries too much mass outside the safe core."""


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def dV(self) -> float:
        return self.dx ** self.d

    @cached_property
    def x1(self) -> np.ndarray:
        """Axis coordinates, origin at the box centre (index n/2)."""
        return -0.5 * self.L + self.dx * np.arange(self.n)

    @cached_property
    def k1(self) -> np.ndarray:
        """Axis wavenumbers in FFT order."""
        return 2.0 * np.pi * sfft.fftfreq(self.n, d=self.dx)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.x1] * self.d), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.k1] * self.d), indexing="ij"))

    @cached_property
    def r2(self) -> np.ndarray:
        return sum(c * c for c in self.coords)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(k * k for k in self.wavenumbers)

    @cached_property
    def k_odd(self) -> tuple[np.ndarray, ...]:
        """Wavenumbers with the Nyquist entry zeroed (for odd derivatives)."""
        k = self.k1.copy()
        k[self.n // 2] = 0.0
        return tuple(np.meshgrid(*([k] * self.d), indexing="ij"))

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape, dtype=complex))

    def field(self, values) -> "Field":
        return Field(self, np.broadcast_to(np.asarray(values, dtype=complex), self.shape))


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex, copy=True)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("field contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c) -> "Field":
        if isinstance(c, Field):
            return Field(self.grid, self.values * c.values)
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def conj(self) -> "Field":
        return Field(self.grid, np.conj(self.values))


@dataclass(frozen=True, eq=False)
class SpaceTimeSeries:
    times: np.ndarray
    fields: Sequence[Field] = dc_field(default_factory=list)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) != len(self.fields):
            raise ValueError("times and fields differ in length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.fields and any(f.grid != self.fields[0].grid for f in self.fields):
            raise ValueError("all fields must share one grid")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    def stacked(self) -> np.ndarray:
        return np.stack([f.values for f in self.fields])

    def __len__(self):
        return len(self.fields)


# ---------------------------------------------------------------- spectral ops

def _axes(grid: Grid) -> tuple[int, ...]:
    return tuple(range(-grid.d, 0))


def gradient(f: Field) -> list[Field]:
    g = f.grid
    fh = sfft.fftn(f.values, axes=_axes(g))
    return [Field(g, sfft.ifftn(1j * kj * fh, axes=_axes(g))) for kj in g.k_odd]


def gradient_values(grid: Grid, values: np.ndarray) -> list[np.ndarray]:
    fh = sfft.fftn(values, axes=_axes(grid))
    return [sfft.ifftn(1j * kj * fh, axes=_axes(grid)) for kj in grid.k_odd]


def laplacian(f: Field) -> Field:
    g = f.grid
    fh = sfft.fftn(f.values, axes=_axes(g))
    return Field(g, sfft.ifftn(-g.k2 * fh, axes=_axes(g)))


def fourier_l2(f: Field) -> float:
    """L2 norm computed from the Fourier coefficients (Parseval)."""
    g = f.grid
    fh = sfft.fftn(f.values, axes=_axes(g))
    return float(np.sqrt(np.sum(np.abs(fh) ** 2) * g.dV / g.n ** g.d))


def spectral_tail_fraction(f: Field, fraction: float = 1.0 / 3.0) -> float:
    """Share of L2 mass carried by modes with max_j |k_j| above (1 - fraction) k_max."""
    g = f.grid
    fh = np.abs(sfft.fftn(f.values, axes=_axes(g))) ** 2
    total = fh.sum()
    if total == 0:
        return 0.0
    kinf = np.max(np.abs(np.stack(g.wavenumbers)), axis=0)
    return float(fh[kinf > (1.0 - fraction) * g.k_max].sum() / total)


def core_mass_fraction_outside(f: Field, radius: float) -> float:
    """Share of L2 mass outside the Euclidean ball of given radius."""
    m = np.abs(f.values) ** 2
    total = m.sum()
    if total == 0:
        return 0.0
    return float(m[f.grid.r2 > radius * radius].sum() / total)


def check_boundary_mass(f: Field, tol: float = 1e-8, radius: float | None = None) -> float:
    """Raise if more than `tol` of the mass sits outside |x| < radius (default L/4)."""
    r = f.grid.L / 4 if radius is None else radius
    frac = core_mass_fraction_outside(f, r)
    if frac > tol:
        raise BoundaryMassError(f"mass fraction {frac:.3e} outside |x| < {r:g} exceeds {tol:g}")
    return frac


# ---------------------------------------------------------------------- norms

def norm_lp(f: Field, p: float) -> float:
    if p == np.inf:
        return float(np.max(np.abs(f.values))) if f.values.size else 0.0
    if p < 1:
        raise InvalidExponentError(f"Lp exponent must be >= 1, got {p}")
    a = np.abs(f.values)
    return float((np.sum(a ** p) * f.grid.dV) ** (1.0 / p))


def norm_h1(f: Field) -> float:
    m = np.sum(np.abs(f.values) ** 2)
    m += sum(np.sum(np.abs(g) ** 2) for g in gradient_values(f.grid, f.values))
    return float(np.sqrt(m * f.grid.dV))


def weighted_l2(f: Field) -> float:
    """| |x| f |_2 with x measured from the box centre."""
    return float(np.sqrt(np.sum(f.grid.r2 * np.abs(f.values) ** 2) * f.grid.dV))


def norm_sigma(f: Field) -> float:
    return norm_h1(f) + weighted_l2(f)


def norm_w1p(f: Field, p: float) -> float:
    grads = gradient(f)
    return norm_lp(f, p) + sum(norm_lp(g, p) for g in grads)


def spacetime_norm(s: SpaceTimeSeries, p: float, q: float, sobolev: bool = False) -> float:
    """L^q in time (trapezoid) of L^p (or W^{1,p}) in space."""
    if len(s) < 2:
        raise ValueError("space-time norms need at least two snapshots")
    norm = (lambda f: norm_w1p(f, p)) if sobolev else (lambda f: norm_lp(f, p))
    vals = np.array([norm(f) for f in s.fields])
    if q == np.inf:
        return float(vals.max())
    if q < 1:
        raise InvalidExponentError(f"time exponent must be >= 1, got {q}")
    return float(trapezoid(vals ** q, s.times) ** (1.0 / q))


def strichartz_admissible(p, q, d: int) -> bool:
    """2/q = d(1/2 - 1/p) in exact arithmetic, (p, q) in [2, inf]^2, (p, q, d) != (inf, 2, 2)."""
    def inv(v):
        if v == np.inf or v == float("inf"):
            return Fraction(0)
        return 1 / Fraction(v).limit_denominator(10**9)

    if p < 2 or q < 2:
        return False
    if p == np.inf and q == 2 and d == 2:
        return False
    return 2 * inv(q) == d * (Fraction(1, 2) - inv(p))


def strichartz_pairs(d: int) -> dict[str, tuple[float, float]]:
    """The diagonal pair (2+4/d, 2+4/d) and the endpoint-type pair used for W^{1,p2}."""
    p1 = 2.0 + 4.0 / d
    out = {"p1": (p1, p1)}
    if d > 2:
        out["p2q2"] = (2.0 * d * (d + 2) / (d * d + 4), 2.0 * (d + 2) / (d - 2))
    return out


def y0_norm(s: SpaceTimeSeries) -> float:
    d = s.grid.d
    pairs = strichartz_pairs(d)
    p1 = pairs["p1"][0]
    p2, q2 = pairs["p2q2"]
    return spacetime_norm(s, p1, p1) + spacetime_norm(s, p2, q2)


def y1_norm(s: SpaceTimeSeries) -> float:
    grads = [SpaceTimeSeries(s.times, [gradient(f)[j] for f in s.fields]) for j in range(s.grid.d)]
    return y0_norm(s) + sum(y0_norm(g) for g in grads)


def nonlinear_estimate_terms(f: SpaceTimeSeries, g: SpaceTimeSeries, alpha: float) -> dict[str, float]:
    """Norms in the interpolation estimate || |f|^{a-1} g ||_{L^{p1'}} against its right-hand side.

    Returns the left side, the product on the right (without constant) and their ratio.
    Only meaningful for d >= 3.
    """
    d = f.grid.d
    p1 = 2.0 + 4.0 / d
    p1_dual = p1 / (p1 - 1.0)
    p2, q2 = strichartz_pairs(d)["p2q2"]
    prod = SpaceTimeSeries(f.times, [Field(f.grid, np.abs(a.values) ** (alpha - 1) * b.values)
                                     for a, b in zip(f.fields, g.fields)])
    lhs = spacetime_norm(prod, p1_dual, p1_dual)
    e1 = 2.0 - (alpha - 1.0) * (d - 2) / 2.0
    e2 = d * (alpha - 1.0) / 2.0 - 2.0
    rhs = (spacetime_norm(f, p1, p1) ** e1 * spacetime_norm(f, p2, q2, sobolev=True) ** e2
           * spacetime_norm(g, p1, p1))
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else np.inf}


# ------------------------------------------------------ local smoothing norms

def band_multiplier(grid: Grid, k: int) -> np.ndarray:
    """Raised-cosine dyadic cutoff: cos^2(pi/2 (log2|xi| - k)) on |log2|xi| - k| < 1."""
    kk = np.sqrt(grid.k2)
    out = np.zeros_like(kk)
    nz = kk > 0
    u = np.log2(kk[nz]) - k
    out[nz] = np.where(np.abs(u) < 1.0, np.cos(0.5 * np.pi * u) ** 2, 0.0)
    return out


def _shell_l2(weights2: np.ndarray, mask: np.ndarray, dens: np.ndarray, times: np.ndarray, dV: float) -> float:
    # dens: |u|^2 per snapshot, shape (T, ...)
    per_t = (dens * (weights2 * mask)).reshape(len(times), -1).sum(axis=1) * dV
    if len(times) == 1:
        return float(np.sqrt(per_t[0]))
    return float(np.sqrt(max(trapezoid(per_t, times), 0.0)))


def _band_shell_norm(grid: Grid, dens: np.ndarray, times: np.ndarray, k: int, dual: bool) -> float:
    r = np.sqrt(grid.r2)
    rmax = float(r.max())
    jmax = int(np.floor(np.log2(rmax))) if rmax >= 2 else 0
    combine = (lambda xs: sum(xs)) if dual else (lambda xs: max(xs, default=0.0))
    sgn = 1.0 if dual else -1.0
    ones = np.ones_like(r)
    if k >= 0:
        inner = _shell_l2(ones, r <= 2.0, dens, times, grid.dV)
        w2 = (1.0 + r * r) ** (0.5 * sgn)
        shells = [_shell_l2(w2, (r >= 2.0 ** j) & (r <= 2.0 ** (j + 1)), dens, times, grid.dV)
                  for j in range(1, jmax + 1)]
        return inner + combine(shells)
    inner = 2.0 ** (sgn * -0.5 * k) * _shell_l2(ones, r <= 2.0 ** (-k), dens, times, grid.dV)
    w2 = (r + 2.0 ** (-k)) ** sgn
    shells = [_shell_l2(w2, (r >= 2.0 ** j) & (r <= 2.0 ** (j + 1)), dens, times, grid.dV)
              for j in range(max(-k, 1), jmax + 1)]
    return inner + combine(shells)


def local_smoothing_norm(s: SpaceTimeSeries, band_range: int, dual: bool = False):
    """Truncated local smoothing norm (or its dual) over bands k in [-K, K].

    Returns (value, {k: contribution to the squared norm}).
    """
    if band_range < 1:
        raise ValueError("band_range must be >= 1")
    grid = s.grid
    axes = tuple(range(1, grid.d + 1))
    uh = sfft.fftn(s.stacked(), axes=axes)
    breakdown = {}
    for k in range(-band_range, band_range + 1):
        m = band_multiplier(grid, k)
        if not m.any():
            breakdown[k] = 0.0
            continue
        sk = sfft.ifftn(uh * m, axes=axes)
        dens = np.abs(sk) ** 2
        nk = _band_shell_norm(grid, dens, s.times, k, dual)
        breakdown[k] = (2.0 ** (-k) if dual else 2.0 ** k) * nk * nk
    return float(np.sqrt(sum(breakdown.values()))), breakdown


# -------------------------------------------------------------- serialization

def to_bytes(f: Field) -> bytes:
    g = f.grid
    head = struct.pack("<qqd", g.d, g.n, float(g.L))
    body = np.ascontiguousarray(f.values).view(np.float64).astype("<f8").tobytes()
    return head + body


def from_bytes(buf: bytes) -> Field:
    d, n, L = struct.unpack("<qqd", buf[:24])
    grid = Grid(int(d), int(n), float(L))
    vals = np.frombuffer(buf[24:], dtype="<f8").astype(np.float64).view(complex).reshape(grid.shape)
    return Field(grid, vals)


def save_field(path, f: Field) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(f))


def load_field(path) -> Field:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def slice_csv(f: Field) -> str:
    """1-d slice through the box centre along the first axis: x, re, im."""
    g = f.grid
    idx = (slice(None),) + (g.n // 2,) * (g.d - 1)
    line = f.values[idx]
    rows = ["x,re,im"] + [f"{x:.17g},{v.real:.17g},{v.imag:.17g}" for x, v in zip(g.x1, line)]
    return "\n".join(rows) + "\n"

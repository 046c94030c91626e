"""Change-of-variable calculus: gauge, lens, dilation, modulation, pullbacks.

Conventions on the grid (beta > 0, sigma real):

    D_beta f(x)  = beta^{d/2} f(beta x)
    M_sigma f(x) = exp(i sigma |x|^2 / 4) f(x)
    T(t)         = e^{it Delta}     (free_propagate)

The lens maps v(s) to  v~(t) = M_{1/(1-t)} D_{1/(1-t)} v(s),  s = t/(1-t).
Off-grid evaluation uses trigonometric interpolation, one axis at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .dynamics import free_propagate, homogeneous_backward
from .field import Field, Grid, core_mass_fraction_outside, spectral_tail_fraction
from .noise import NoiseModel


class AliasingError(RuntimeError):
    """Raised when an interpolated evaluation would leave the resolved region."""


# ------------------------------------------------------------------ exponents

CLASSES = ("mass-sub", "mass-critical", "inter-critical", "energy-critical", "super")


@dataclass(frozen=True)
class ExponentTable:
    d: int
    alpha: float
    lam: int
    strauss: float
    h_power: float
    q_tilde: float
    theta: float
    p1: float
    p2: float
    q2: float
    cls: str

    def h(self, t):
        return (1.0 - np.asarray(t, dtype=float)) ** self.h_power

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _exact(alpha) -> Fraction:
    """Floats such as 7/3 arrive rounded; snap them to the nearest simple rational."""
    if isinstance(alpha, float):
        return Fraction(alpha).limit_denominator(10 ** 6)
    return Fraction(alpha)


def strauss_exponent(d: int) -> float:
    return (2.0 - d + math.sqrt(d * d + 12.0 * d + 4.0)) / (2.0 * d)


def criticality(d: int, alpha) -> str:
    a = _exact(alpha)
    mass = 1 + Fraction(4, d)
    if a < mass:
        return "mass-sub"
    if a == mass:
        return "mass-critical"
    if d <= 2:
        return "inter-critical"
    energy = 1 + Fraction(4, d - 2)
    if a < energy:
        return "inter-critical"
    return "energy-critical" if a == energy else "super"


def exponents(d: int, alpha, lam: int = -1) -> ExponentTable:
    if d not in (1, 2, 3):
        raise ValueError("d must be 1, 2 or 3")
    a = _exact(alpha)
    if not a > 1:
        raise ValueError("alpha must exceed 1")
    den = 4 - (a - 1) * (d - 2)
    q_tilde = float(2 * (a * a - 1) / den) if den > 0 else math.inf
    theta = float(Fraction(4) / den) if den > 0 else math.inf
    if d >= 3:
        p2 = float(Fraction(2 * d * (d + 2), d * d + 4))
        q2 = float(Fraction(2 * (d + 2), d - 2))
    else:
        p2 = float(Fraction(2 * d * (d + 2), d * d + 4))
        q2 = math.inf
    return ExponentTable(
        d=d, alpha=float(a), lam=lam,
        strauss=strauss_exponent(d),
        h_power=float((d * (a - 1) - 4) / 2),
        q_tilde=q_tilde, theta=theta,
        p1=float(2 + Fraction(4, d)), p2=p2, q2=q2,
        cls=criticality(d, a),
    )


# ------------------------------------------------------------------ pointwise

def gauge(f: Field, psi: Field, sign: int) -> Field:
    """f * exp(sign * psi)."""
    if f.grid != psi.grid:
        raise ValueError("gauge needs fields on the same grid")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return Field(f.grid, f.values * np.exp(sign * psi.values))


def modulation(f: Field, sigma: float) -> Field:
    if sigma == 0:
        return f
    return Field(f.grid, f.values * np.exp(0.25j * sigma * f.grid.r2))


# ------------------------------------------------------------------ dilation

def _interp_matrix(grid: Grid, y: np.ndarray) -> np.ndarray:
    """Rows evaluate the trigonometric interpolant (from FFT coefficients) at points y."""
    n = grid.n
    k = grid.k1
    phase = np.outer(y + 0.5 * grid.L, k)
    E = np.exp(1j * phase)
    E[:, n // 2] = np.cos(phase[:, n // 2])
    E[np.abs(y) > 0.5 * grid.L] = 0.0
    return E / n


def _check_resolved(f: Field, radius: float, tol: float, spectral_tol: float) -> None:
    tail = spectral_tail_fraction(f)
    if tail > spectral_tol:
        raise AliasingError(f"input carries {tail:.2e} of its mass in the top third of the spectrum")
    out = core_mass_fraction_outside(f, radius)
    if out > tol:
        raise AliasingError(f"mass fraction {out:.2e} outside |x| < {radius:g} would be lost")


def dilation(f: Field, beta: float, check: bool = True, tol: float = 1e-8,
             spectral_tol: float = 1e-10) -> Field:
    """D_beta f(x) = beta^{d/2} f(beta x)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if beta == 1:
        return f
    g = f.grid
    if check:
        _check_resolved(f, min(1.0, beta) * g.L / 4, tol, spectral_tol)
    E = _interp_matrix(g, beta * g.x1)
    c = sfft.fftn(f.values)
    for ax in range(g.d):
        c = np.moveaxis(np.tensordot(E, c, axes=([1], [ax])), 0, ax)
    return Field(g, beta ** (0.5 * g.d) * c)


# ----------------------------------------------------------------------- lens

def pct_forward(v: Field, t: float, t_max: float = 0.9, check: bool = True) -> Field:
    """Lens of a field given at time s = t/(1-t)."""
    if not 0 <= t < t_max:
        raise ValueError(f"lens time must lie in [0, {t_max})")
    b = 1.0 / (1.0 - t)
    return modulation(dilation(v, b, check=check), b)


def pct_inverse(w: Field, t: float, t_max: float = 0.9, check: bool = True) -> Field:
    if not 0 <= t < t_max:
        raise ValueError(f"lens time must lie in [0, {t_max})")
    b = 1.0 / (1.0 - t)
    return dilation(modulation(w, -b), 1.0 / b, check=check)


def lens_time(s):
    return np.asarray(s) / (1.0 + np.asarray(s))


# ----------------------------------------------------------------- pullbacks

def scattering_pullback(X_t: Field, t: float, model: NoiseModel, star: bool = True,
                        variant: str = "free") -> Field:
    """e^{it Delta} e^{-psi(t)} X(t), psi = phi* (star) or phi; variant "V" uses V(0, t) instead."""
    if model.N == 0:
        z = X_t
    else:
        combo = model.phi_star_combo(t) if star else model.phi_combo(t)
        z = Field(X_t.grid, X_t.values * np.exp(-combo.values(X_t.grid)))
    if variant == "free":
        return free_propagate(z, t)
    if variant == "V":
        return homogeneous_backward(z, 0.0, t, model, star)
    raise ValueError("variant must be 'free' or 'V'")


def asymptotic_equivalence_check(z_series: Sequence[tuple[float, Field]],
                                 zt_series: Sequence[tuple[float, Field]]) -> float:
    """max_s |T(s) z*(s) - M_{-1} T(s/(1+s)) z~*(s/(1+s))|_2 / |z*(s)|_2."""
    if len(z_series) != len(zt_series):
        raise ValueError("series lengths differ")
    worst = 0.0
    for (s, z), (t, zt) in zip(z_series, zt_series):
        if abs(t - s / (1.0 + s)) > 1e-12 or z.grid != zt.grid:
            raise ValueError("time grids or spatial grids do not match under s -> s/(1+s)")
        lhs = free_propagate(z, s).values
        rhs = modulation(free_propagate(zt, t), -1.0).values
        nz = np.linalg.norm(z.values)
        if nz == 0:
            continue
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / nz))
    return worst


# ------------------------------------------------------- operator identities

def _rel(a: Field, b: Field) -> float:
    nb = np.linalg.norm(b.values)
    return float(np.linalg.norm(a.values - b.values) / (nb if nb else 1.0))


def identity_dilation(f: Field, t: float, beta: float) -> float:
    """|T(t) D_beta f - D_beta T(beta^2 t) f| / |.|."""
    lhs = free_propagate(dilation(f, beta), t)
    rhs = dilation(free_propagate(f, beta * beta * t), beta)
    return _rel(lhs, rhs)


def identity_modulation(f: Field, t: float, sigma: float) -> float:
    """|T(t) M_sigma f - M_{sigma/(1+sigma t)} D_{1/(1+sigma t)} T(t/(1+sigma t)) f| / |.|."""
    if not 1 + sigma * t > 0:
        raise ValueError("need 1 + sigma t > 0")
    r = 1.0 + sigma * t
    lhs = free_propagate(modulation(f, sigma), t)
    rhs = modulation(dilation(free_propagate(f, t / r), 1.0 / r), sigma / r)
    return _rel(lhs, rhs)

"""Optical potential of a TEM00 + TEM01 beam pair and its 1-D double-well reduction.

Positions are in metres, energies in joules.  ``alpha_scale`` and ``beta_scale``
are the depth coefficients of the two beams at their configured powers; both are
negative for an attractive (high-field seeking) particle, so the wells are minima
and the dark spot between them is a local maximum.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .constants import TWO_PI


class NotADoubleWell(ValueError):
    """Raised when the potential has no pair of wells around a local maximum."""


@dataclass(frozen=True)
class PotentialParams:
    P00: float
    P01: float
    delta0: float
    delta1: float
    w00x: float
    w00y: float
    w01x: float
    w01y: float
    z00_0: float
    z01_0: float
    alpha_scale: float
    beta_scale: float
    w0: float

    def __post_init__(self):
        for name in ("w00x", "w00y", "w01x", "w01y", "z00_0", "z01_0", "w0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.P00 < 0 or self.P01 < 0:
            raise ValueError("beam powers must be non-negative")

    @property
    def double_well_condition(self) -> bool:
        """Aligned-case condition for a local maximum between two wells."""
        return self.alpha_scale < 0 and self.beta_scale < 0 and self.beta_scale < 2 * self.alpha_scale

    def with_offsets(self, delta0: float, delta1: float) -> "PotentialParams":
        return replace(self, delta0=delta0, delta1=delta1)

    def with_tem01_off(self) -> "PotentialParams":
        """Harmonic configuration: TEM01 beam switched off."""
        return replace(self, P01=0.0, beta_scale=0.0)

    def as_array(self) -> np.ndarray:
        """Packed layout consumed by the compiled kernels."""
        return np.array(
            [
                self.alpha_scale,
                self.beta_scale,
                self.delta0,
                self.delta1,
                self.w00x,
                self.w00y,
                self.w01x,
                self.w01y,
                self.z00_0,
                self.z01_0,
            ]
        )


@dataclass(frozen=True)
class ApexInfo:
    delta_apex: float
    k_apex: float
    valid: bool


@dataclass(frozen=True)
class WellInfo:
    x_left: float
    x_right: float
    omega_well: float
    barrier: float
    omega_left: float
    omega_right: float


def _split(q):
    q = np.asarray(q, dtype=float)
    return q[..., 0], q[..., 1], q[..., 2]


def _profiles(q, p: PotentialParams):
    """Normalized beam profiles (peak 1 for TEM00, 8 x^2/w^2 shape for TEM01)."""
    x, y, z = _split(q)
    L0 = p.z00_0**2 / (z**2 + p.z00_0**2)
    L1 = p.z01_0**2 / (z**2 + p.z01_0**2)
    # 1/w(z)^2 = L/w(0)^2 for w(z) = w(0) sqrt(1 + z^2/zR^2)
    E0 = y**2 / p.w00y**2 + (x - p.delta0) ** 2 / p.w00x**2
    E1 = y**2 / p.w01y**2 + (x - p.delta1) ** 2 / p.w01x**2
    X1 = (x - p.delta1) ** 2 / p.w01x**2
    A = L0 * np.exp(-2.0 * L0 * E0)
    B = 8.0 * L1**2 * X1 * np.exp(-2.0 * L1 * E1)
    return A, B


def peak_intensities(p: PotentialParams) -> tuple[float, float]:
    """Focal peak intensities I00,0 and I01,0 (W/m^2) from the beam powers."""
    i00 = 2.0 * p.P00 / (np.pi * p.w00x * p.w00y)
    i01 = p.P01 / (np.pi * p.w01x * p.w01y)
    return i00, i01


def intensity_profile(q, p: PotentialParams):
    """Intensities (I00, I01) in W/m^2 of the two Hermite-Gaussian beams at ``q``."""
    A, B = _profiles(q, p)
    i00, i01 = peak_intensities(p)
    return i00 * A, i01 * B


def potential_energy(q, p: PotentialParams):
    """Optical potential U(q) in J; broadcasts over leading axes of ``q``."""
    A, B = _profiles(q, p)
    return p.alpha_scale * A + 0.125 * p.beta_scale * B


def optical_force(q, p: PotentialParams) -> np.ndarray:
    """Closed-form -grad U (N)."""
    x, y, z = _split(q)
    zr0, zr1 = p.z00_0, p.z01_0
    L0 = zr0**2 / (z**2 + zr0**2)
    L1 = zr1**2 / (z**2 + zr1**2)
    dL0 = -2.0 * z * L0**2 / zr0**2
    dL1 = -2.0 * z * L1**2 / zr1**2
    sx0 = x - p.delta0
    sx1 = x - p.delta1
    E0 = y**2 / p.w00y**2 + sx0**2 / p.w00x**2
    E1 = y**2 / p.w01y**2 + sx1**2 / p.w01x**2
    X1 = sx1**2 / p.w01x**2
    e0 = np.exp(-2.0 * L0 * E0)
    e1 = np.exp(-2.0 * L1 * E1)

    dA_dx = -4.0 * L0**2 * e0 * sx0 / p.w00x**2
    dA_dy = -4.0 * L0**2 * e0 * y / p.w00y**2
    dA_dz = dL0 * e0 * (1.0 - 2.0 * L0 * E0)

    dB_dx = 16.0 * L1**2 * e1 * sx1 / p.w01x**2 * (1.0 - 2.0 * L1 * X1)
    dB_dy = -32.0 * L1**3 * X1 * e1 * y / p.w01y**2
    dB_dz = 16.0 * X1 * e1 * L1 * dL1 * (1.0 - L1 * E1)

    a, b8 = p.alpha_scale, 0.125 * p.beta_scale
    return -np.stack([a * dA_dx + b8 * dB_dx, a * dA_dy + b8 * dB_dy, a * dA_dz + b8 * dB_dz], axis=-1)


# ---------------------------------------------------------------------------
# 1-D reduction along x


def double_well_1d(x, p: PotentialParams):
    s0 = (np.asarray(x, dtype=float) - p.delta0) / p.w0
    s1 = (np.asarray(x, dtype=float) - p.delta1) / p.w0
    return p.alpha_scale * np.exp(-2.0 * s0**2) + p.beta_scale * s1**2 * np.exp(-2.0 * s1**2)


def double_well_dx(x, p: PotentialParams):
    s0 = (np.asarray(x, dtype=float) - p.delta0) / p.w0
    s1 = (np.asarray(x, dtype=float) - p.delta1) / p.w0
    return (
        p.alpha_scale * np.exp(-2.0 * s0**2) * (-4.0 * s0)
        + p.beta_scale * np.exp(-2.0 * s1**2) * (2.0 * s1 - 4.0 * s1**3)
    ) / p.w0


def double_well_dxx(x, p: PotentialParams):
    s0 = (np.asarray(x, dtype=float) - p.delta0) / p.w0
    s1 = (np.asarray(x, dtype=float) - p.delta1) / p.w0
    return (
        p.alpha_scale * np.exp(-2.0 * s0**2) * (16.0 * s0**2 - 4.0)
        + p.beta_scale * np.exp(-2.0 * s1**2) * (2.0 - 20.0 * s1**2 + 16.0 * s1**4)
    ) / p.w0**2


def double_well_dxxx(x, p: PotentialParams):
    s0 = (np.asarray(x, dtype=float) - p.delta0) / p.w0
    s1 = (np.asarray(x, dtype=float) - p.delta1) / p.w0
    return (
        p.alpha_scale * np.exp(-2.0 * s0**2) * (48.0 * s0 - 64.0 * s0**3)
        + p.beta_scale * np.exp(-2.0 * s1**2) * (-48.0 * s1 + 144.0 * s1**3 - 64.0 * s1**5)
    ) / p.w0**3


def _centered(p: PotentialParams) -> PotentialParams:
    # all 1-D geometry is solved in the TEM00 frame so joint beam shifts are exact
    return replace(p, delta0=0.0, delta1=p.delta1 - p.delta0)


def _grid_extrema(p: PotentialParams, n: int = 4000, span: float = 1.5):
    # even n keeps the symmetric grid off x = 0, where the aligned apex sits
    x = np.linspace(-span * p.w0, span * p.w0, n)
    d = double_well_dx(x, p)
    s = np.sign(d)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    minima = [i for i in idx if d[i] < 0 < d[i + 1]]
    maxima = [i for i in idx if d[i] > 0 > d[i + 1]]
    return x, minima, maxima


def _polish_root(f, df, lo, hi):
    r = brentq(f, lo, hi, xtol=1e-22, rtol=4 * np.finfo(float).eps, maxiter=500)
    d2 = df(r)
    if d2 != 0:
        step = f(r) / d2
        if abs(step) < (hi - lo):
            r2 = r - step
            if abs(f(r2)) <= abs(f(r)):
                r = r2
    return r


def _apex_centered(pc: PotentialParams) -> ApexInfo:
    x, minima, maxima = _grid_extrema(pc)
    if len(minima) < 2 or not maxima:
        return ApexInfo(np.nan, np.nan, False)
    # the maximum bracketed by two minima and closest to the TEM00 axis
    best = None
    for i in maxima:
        left = [j for j in minima if j < i]
        right = [j for j in minima if j > i]
        if left and right and (best is None or abs(x[i]) < abs(x[best])):
            best = i
    if best is None:
        return ApexInfo(np.nan, np.nan, False)
    f = lambda s: double_well_dx(s, pc)
    df = lambda s: double_well_dxx(s, pc)
    xa = _polish_root(f, df, x[best], x[best + 1])
    k = float(double_well_dxx(xa, pc))
    if not k < 0:
        return ApexInfo(np.nan, np.nan, False)
    return ApexInfo(float(xa), k, True)


def find_apex(p: PotentialParams) -> ApexInfo:
    """Locate the local maximum of the 1-D potential between the two wells.

    Returns ``valid=False`` when misalignment has annihilated the maximum with
    one of the wells.
    """
    info = _apex_centered(_centered(p))
    if not info.valid:
        return info
    return ApexInfo(p.delta0 + info.delta_apex, info.k_apex, True)


def well_characteristics(p: PotentialParams, mass: float) -> WellInfo:
    """Well minima, small-oscillation frequency and barrier height."""
    pc = _centered(p)
    apex = _apex_centered(pc)
    if not apex.valid:
        raise NotADoubleWell("not a double well: no local maximum bracketed by two minima")
    x, minima, _ = _grid_extrema(pc)
    left = max(j for j in minima if x[j] < apex.delta_apex)
    right = min(j for j in minima if x[j] > apex.delta_apex)
    f = lambda s: double_well_dx(s, pc)
    df = lambda s: double_well_dxx(s, pc)
    xl = _polish_root(f, df, x[left], x[left + 1])
    xr = _polish_root(f, df, x[right], x[right + 1])
    kl, kr = float(double_well_dxx(xl, pc)), float(double_well_dxx(xr, pc))
    if not (kl > 0 and kr > 0):
        raise NotADoubleWell("well curvature is not positive")
    ua = double_well_1d(apex.delta_apex, pc)
    barrier = float(min(ua - double_well_1d(xl, pc), ua - double_well_1d(xr, pc)))
    wl, wr = np.sqrt(kl / mass), np.sqrt(kr / mass)
    return WellInfo(
        x_left=p.delta0 + xl,
        x_right=p.delta0 + xr,
        omega_well=0.5 * (wl + wr),
        barrier=barrier,
        omega_left=wl,
        omega_right=wr,
    )


def quadratic_fit_error(p: PotentialParams, half_range: float, step: float = 0.1e-9) -> float:
    """Max deviation of the apex quadratic from U_x over +-half_range, relative to the barrier."""
    pc = _centered(p)
    apex = _apex_centered(pc)
    if not apex.valid:
        raise NotADoubleWell("quadratic fit needs a valid apex")
    if half_range <= 0:
        return 0.0
    x, minima, _ = _grid_extrema(pc)
    ua = double_well_1d(apex.delta_apex, pc)
    barrier = min(ua - double_well_1d(x[j], pc) for j in minima)
    n = int(np.floor(half_range / step))
    offs = np.concatenate([np.arange(-n, n + 1) * step, [-half_range, half_range]])
    xs = apex.delta_apex + offs
    u = double_well_1d(xs, pc) - ua
    uq = 0.5 * apex.k_apex * offs**2
    return float(np.max(np.abs(uq - u)) / barrier)


# ---------------------------------------------------------------------------
# calibration of the synthetic potential to the published frequencies


def _shape_ratio(f_apex: float, f_well: float) -> tuple[float, float]:
    """alpha/beta ratio and scaled well position fixed by the frequency ratio."""
    # aligned: |k_apex| = 4|b| s_w^2/w0^2, k_well = 2 exp(-2 s_w^2) |k_apex|
    sw2 = -0.5 * np.log(0.5 * (f_well / f_apex) ** 2)
    if not 0 < sw2 < 0.5:
        raise ValueError("frequency ratio admits no double well of this form")
    return 0.5 - sw2, sw2


def calibrate_potential(
    mass: float,
    f_apex: float,
    f_well: float,
    f_y: float,
    f_z: float,
    w0: float | None = None,
    k_drop: float | None = 0.08,
    k_drop_offset: float = 30e-9,
    P00: float = 0.080,
    P01: float = 0.135,
) -> PotentialParams:
    """Fit alpha, beta (and optionally w0) to the calibrated oscillator frequencies.

    With ``w0=None`` the waist is chosen so that a TEM01 offset of
    ``k_drop_offset`` lowers |k_apex| by the fraction ``k_drop``.  The TEM00
    y-waist and Rayleigh length are set from the transverse frequencies at the
    apex, where the TEM01 node contributes no curvature.
    """
    r, sw2 = _shape_ratio(f_apex, f_well)
    k_abs = mass * (TWO_PI * f_apex) ** 2

    def build(w):
        b = k_abs * w**2 / (4.0 * sw2)
        a = r * b
        wy = np.sqrt(4.0 * a / (mass * (TWO_PI * f_y) ** 2))
        zr = np.sqrt(2.0 * a / (mass * (TWO_PI * f_z) ** 2))
        return PotentialParams(
            P00=P00, P01=P01, delta0=0.0, delta1=0.0,
            w00x=w, w00y=wy, w01x=w, w01y=wy, z00_0=zr, z01_0=zr,
            alpha_scale=-a, beta_scale=-b, w0=w,
        )

    if w0 is not None:
        return build(w0)

    def mismatch(w):
        p = build(w)
        shifted = _apex_centered(replace(p, delta1=k_drop_offset))
        if not shifted.valid:
            return 1.0
        return 1.0 - shifted.k_apex / (-k_abs) - k_drop

    w = brentq(lambda lw: mismatch(np.exp(lw)), np.log(0.5e-6), np.log(20e-6), xtol=1e-12)
    return build(float(np.exp(w)))

"""Travelling-wave extraction and front tracking.

The profile u(m + z, t) seen from the median m of M_t converges to the wave
w(z - d), where d is the limiting offset between the median and Bramson's
centering m_t. The finite-t profile carries corrections in 1/t and t^{-3/2}
(the front moves at sqrt2 - 3/(2 sqrt2 t) + O(t^{-3/2})), so
:func:`extract_wave` extrapolates the median-centered slices at t, 3t/4 and
t/2 to remove both orders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import interpolate, optimize

from bbmlab.core import SQRT2, bramson_centering
from bbmlab.errors import CoverageError, DomainError, InvalidInputError

# front(t) - m_t = d - EVS_A / sqrt(t) + O(1/t) for the equation u_t = u_zz/2 - u(1-u)
EVS_A = 3.0 * math.sqrt(2.0 * math.pi) / 2.0
EXTRAPOLATION_ORDERS = (1.0, 1.5)


@dataclass(frozen=True, eq=False)
class WaveProfile:
    """Discretized travelling wave, centered so that w(0) = 1/2.

    ``bramson_offset`` is the limit of (median of M_t) - m_t when known; the
    wave in Bramson's frame is w_B(z) = w(z - bramson_offset).
    """

    z: np.ndarray
    w: np.ndarray
    left_slope: float
    t_source: float
    method: str = "raw"
    bramson_offset: float | None = None

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.z, self.w)

    def with_offset(self, offset: float) -> "WaveProfile":
        return WaveProfile(self.z, self.w, self.left_slope, self.t_source, self.method, float(offset))

    def ode_residual(self, lo: float = -5.0, hi: float = 5.0) -> float:
        """L-inf residual of w''/2 + sqrt2 w' - w + w^2 on [lo, hi], central differences.

        For the distribution-function convention used here this is the
        travelling-wave equation; 1 - w solves w''/2 + sqrt2 w' + w - w^2 = 0.
        """
        h = self.z[1] - self.z[0]
        w = self.w
        d1 = (w[2:] - w[:-2]) / (2 * h)
        d2 = (w[2:] - 2 * w[1:-1] + w[:-2]) / (h * h)
        res = 0.5 * d2 + SQRT2 * d1 - w[1:-1] + w[1:-1] ** 2
        zz = self.z[1:-1]
        m = (zz >= lo - 1e-9) & (zz <= hi + 1e-9)
        return float(np.max(np.abs(res[m])))

    def check(self):
        # strictly increasing wherever w is distinguishable from 1 in double precision
        d = np.diff(self.w)
        if np.any(d < 0) or np.any((d == 0) & (self.w[1:] < 1.0 - 1e-12)):
            raise DomainError("wave profile is not strictly increasing")
        if not (self.w[0] < 0.01 and self.w[-1] > 0.99):
            raise CoverageError("wave profile does not span (0.01, 0.99)")


def _slice_spline(field, i):
    z = field.z(i)
    lu = np.asarray(field.logu[i])
    ok = np.isfinite(lu)
    return z[ok], interpolate.CubicSpline(z[ok], lu[ok])


def _level_crossing(z, spl, level: float) -> float:
    target = math.log(level)
    vals = spl(z)
    j = int(np.searchsorted(vals, target))
    if j <= 0 or j >= len(z):
        raise CoverageError(f"level {level} not crossed inside the window")
    return optimize.brentq(lambda x: float(spl(x)) - target, z[j - 1], z[j], xtol=1e-13)


def front_position(field, level: float = 0.5):
    """Return t -> z with u(z, t) = level on stored slices (cubic in z, exact t)."""
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")

    def at(t: float) -> float:
        i = field.index_of(t)
        z, spl = _slice_spline(field, i)
        return _level_crossing(z, spl, level)

    return at


def _centered_profile(field, t, zs):
    i = field.index_of(t)
    z, spl = _slice_spline(field, i)
    med = _level_crossing(z, spl, 0.5)
    x = med + zs
    if x[0] < z[0] or x[-1] > z[-1]:
        raise CoverageError(f"profile window [{x[0]:.3g}, {x[-1]:.3g}] leaves the field at t={t}")
    return spl(x), med


def extrapolation_weights(times) -> np.ndarray:
    """Weights c with sum c = 1 that cancel t^{-p} for p in EXTRAPOLATION_ORDERS."""
    times = np.asarray(times, dtype=float)
    rows = [np.ones_like(times)] + [times ** (-p) for p in EXTRAPOLATION_ORDERS[: len(times) - 1]]
    a = np.vstack(rows)
    b = np.zeros(len(times))
    b[0] = 1.0
    return np.linalg.solve(a, b)


def extract_wave(field, t: float, half_width: float = 30.0, method: str = "extrapolated",
                 slope_window=(-8.0, -4.0)) -> WaveProfile:
    """Travelling-wave profile from the slice(s) of ``field`` at time ``t``.

    ``method="raw"`` recenters u(., t) at its median. ``method="extrapolated"``
    combines the recentered profiles at t, 3t/4 and t/2 (log-domain) to cancel
    the 1/t and t^{-3/2} corrections, then recenters again.
    """
    dz = field.dz
    n = int(round(half_width / dz))
    zs = dz * np.arange(-n, n + 1)
    if method == "raw":
        logw, _ = _centered_profile(field, t, zs)
    elif method == "extrapolated":
        times = [t, 0.75 * t, 0.5 * t]
        profs = [_centered_profile(field, s, zs)[0] for s in times]
        c = extrapolation_weights(times)
        logw = sum(ci * p for ci, p in zip(c, profs))
        spl = interpolate.CubicSpline(zs, logw)
        med = _level_crossing(zs, spl, 0.5)
        keep = (zs + med >= zs[0]) & (zs + med <= zs[-1])
        zs = zs[keep]
        logw = spl(zs + med)
    else:
        raise InvalidInputError(f"unknown extraction method {method!r}")
    logw = np.minimum(logw, 0.0)
    w = np.exp(logw)
    m = (zs >= slope_window[0]) & (zs <= slope_window[1])
    slope = float(np.polyfit(zs[m], logw[m], 1)[0]) if m.sum() >= 2 else float("nan")
    prof = WaveProfile(z=zs, w=w, left_slope=slope, t_source=float(t), method=method)
    prof.check()
    return prof


@dataclass(frozen=True)
class OffsetFit:
    """Least-squares model of front(t) - m_t over ``times``.

    front(t) - m_t = offset - EVS_A/sqrt(t) + b/t + c log(t)/t + drift t.
    ``drift`` absorbs the O(dz^2) speed error of the discrete front.
    """

    offset: float
    drift: float
    b: float
    c: float
    rms: float
    times: tuple


def fit_bramson_offset(field, times, level: float = 0.5) -> OffsetFit:
    """Limit of (front(t) - m_t), with the universal t^{-1/2} term removed.

    Intended for long moving-window runs (t up to a few hundred), which
    resolve the slow 1/t and log(t)/t relaxation.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 6:
        raise InvalidInputError("need at least 6 times for the offset fit")
    fp = front_position(field, level)
    y = np.array([fp(t) - bramson_centering(t) + EVS_A / math.sqrt(t) for t in times])
    a = np.vstack([np.ones_like(times), times, 1.0 / times, np.log(times) / times]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    rms = float(np.sqrt(np.mean((a @ coef - y) ** 2)))
    return OffsetFit(offset=float(coef[0]), drift=float(coef[1]), b=float(coef[2]),
                     c=float(coef[3]), rms=rms, times=tuple(times.tolist()))

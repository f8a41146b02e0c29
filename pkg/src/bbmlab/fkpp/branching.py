"""Exact finite-t law of the first branching event on {M_t <= z}.

Splitting at the first branching time tau gives

    u(z, t) = e^{-t} P(B_t <= z) + int_0^t e^{-s} ds int phi(y; s) u(z - y, t - s)^2 dy,

so on {M_t <= z} the pair (tau, X(tau)) has density
e^{-s} phi(y; s) u(z - y, t - s)^2 and no branching before t has probability
U1 / u with U1 = e^{-t} P(B_t <= z). Everything here is evaluated from a
stored field in log form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import interpolate, special

from bbmlab.core import DensityCurve
from bbmlab.errors import CoverageError, DomainError, PrecisionError
from bbmlab.quad import log_cumtrapz, log_trapz

LOG_2PI = math.log(2.0 * math.pi)
NARROW = 6.0  # Gaussians narrower than NARROW * dz use a rescaled grid
PRECISION_FLOOR = 1e-280


def _log_gauss(y, s):
    return -0.5 * y * y / s - 0.5 * (LOG_2PI + math.log(s))


def log_u1(z: float, t: float) -> float:
    """log of e^{-t} P(B_t <= z), the no-branching part of u."""
    return -t + float(special.log_ndtr(z / math.sqrt(t)))


def first_branch_density(field, z: float, t: float, s: float, y) -> np.ndarray:
    """e^{-s} phi(y; s) u(z - y, t - s)^2, the joint density of (tau, X(tau)) on {M_t <= z, tau <= t}."""
    if not 0.0 < s < t:
        raise DomainError("s must lie in (0, t)")
    y = np.asarray(y, dtype=float)
    lu = field.logu_at(z - y, t - s)
    return np.exp(-s + _log_gauss(y, s) + 2.0 * lu)


class _SliceView:
    """Cubic spline of log u on one stored slice, with u = 1 right of the window."""

    def __init__(self, field, i):
        self.x = field.z(i)
        lu = np.asarray(field.logu[i])
        self.lu = lu
        ok = np.isfinite(lu)
        self.lo = self.x[ok][0]
        self.hi = self.x[-1]
        self.spl = interpolate.CubicSpline(self.x[ok], lu[ok])

    def logu(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= self.hi, 0.0, self.spl(np.clip(x, self.lo, self.hi)))
        out = np.minimum(out, 0.0)
        return np.where(x < self.lo, -np.inf, out)


def _log_inner(view: _SliceView, field_dz: float, z: float, s: float, n_narrow: int = 801):
    """log int phi(y; s) u(z - y, r)^2 dy for one slice r, and the log integrand on its grid.

    Returns (log integral, y grid, log integrand).
    """
    sd = math.sqrt(s)
    if sd < NARROW * field_dz:
        y = sd * np.linspace(-12.0, 12.0, n_narrow)
        logf = _log_gauss(y, s) + 2.0 * view.logu(z - y)
        return float(log_trapz(logf, y)), y, logf
    # slice nodes, restricted to where the Gaussian weight matters
    x = view.x
    lu = view.lu
    keep = np.abs(z - x) <= 40.0 * sd + 60.0
    x, lu = x[keep], lu[keep]
    y = (z - x)[::-1]
    logf = (_log_gauss(y, s) + 2.0 * lu[::-1])
    total = float(log_trapz(logf, y))
    # u = 1 right of the window: y < z - hi
    y_edge = z - view.hi
    right = float(special.log_ndtr(y_edge / sd))
    total = float(np.logaddexp(total, right))
    return total, y, logf


def _truncated_gauss_cdf(x, z, s):
    """CDF of N(0, s) restricted to (-inf, z]."""
    sd = math.sqrt(s)
    lx = special.log_ndtr(np.minimum(x, z) / sd)
    return np.exp(lx - special.log_ndtr(z / sd))


def _inner_cdf(view: _SliceView, field_dz: float, z: float, s: float, x) -> np.ndarray:
    """CDF at ``x`` of the density proportional to phi(y; s) u(z - y, r)^2."""
    li, y, logf = _log_inner(view, field_dz, z, s)
    cum = np.exp(log_cumtrapz(logf, y) - li)
    if math.sqrt(s) >= NARROW * field_dz:
        # the part left of the y grid has u = 1 (right of the window)
        lead = np.exp(special.log_ndtr(np.minimum(x, y[0]) / math.sqrt(s)) - li)
        body = np.interp(x, y, cum, left=0.0, right=cum[-1])
        return np.minimum(lead + body, 1.0)
    return np.interp(x, y, cum / cum[-1], left=0.0, right=1.0)


@dataclass(frozen=True, eq=False)
class ConditionalFirstBranch:
    """Law of (tau, X(tau)) given M_t <= z.

    ``atom`` is P(tau > t | M_t <= z). ``s_marginal`` is the density of tau
    on (0, t) (mass 1 - atom). ``u_total`` is U1 plus the quadrature of the
    joint density, the normalizer; ``u_field`` is the field's own value of
    u(z, t), and ``discrepancy`` their relative difference.
    """

    z: float
    t: float
    atom: float
    s_marginal: DensityCurve
    log_u_total: float
    log_u_field: float
    _views: tuple
    _dz: float

    @property
    def discrepancy(self) -> float:
        return abs(math.expm1(self.log_u_total - self.log_u_field))

    def y_given_s(self, s: float) -> DensityCurve:
        """Conditional density of X(tau) given tau = s (nearest stored time t - s)."""
        r = self.t - s
        rs = np.array([v[0] for v in self._views])
        k = int(np.argmin(np.abs(rs - r)))
        r_k, view = self._views[k]
        s_k = self.t - r_k
        if not 0 < s_k < self.t:
            raise DomainError("s must lie strictly inside (0, t)")
        _, y, logf = _log_inner(view, self._dz, self.z, s_k)
        vals = np.exp(logf - np.max(logf))
        return DensityCurve.from_values(y, vals).normalize()

    def tau_cdf(self, x) -> np.ndarray:
        """P(tau <= x | M_t <= z) for x < t; 1 at x >= t (tau is capped at t)."""
        x = np.asarray(x, dtype=float)
        c = self.s_marginal.cdf(x) * (1.0 - self.atom)
        return np.where(x >= self.t, 1.0, c)

    def x_cdf(self, x) -> np.ndarray:
        """P(X(tau) <= x | M_t <= z), where X(tau) = X(t) when no branching occurs.

        Mixes the conditional laws of X(tau) given tau = s over the stored
        slices; s -> 0 puts X(tau) at 0 and s = t is the Gaussian N(0, t)
        restricted to (-inf, z].
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        s_all = self.s_marginal.grid
        rows = [(x >= 0.0).astype(float)]
        for r, view in reversed(self._views):
            rows.append(_inner_cdf(view, self._dz, self.z, self.t - r, x))
        rows.append(_truncated_gauss_cdf(x, self.z, self.t))
        rows = np.array(rows)
        dens = self.s_marginal.values
        branched = np.trapezoid(dens[:, None] * rows, s_all, axis=0)
        total = self.atom + np.trapezoid(dens, s_all)
        return (self.atom * rows[-1] + branched) / total


def conditional_first_branch(field, z: float, t: float) -> ConditionalFirstBranch:
    """Exact conditional law of the first branching event on {M_t <= z}.

    Uses every stored slice r = t - s in (0, t); the endpoints s -> 0 and
    s -> t are closed with u(z, t)^2 and e^{-t} P(B_t <= z).
    """
    if not field.has_time(t):
        raise CoverageError(f"field has no slice at t={t}")
    log_u_field = float(field.logu_at(z, t))
    if not log_u_field > math.log(PRECISION_FLOOR):
        raise PrecisionError(
            f"u({z}, {t}) below {PRECISION_FLOOR}; use a larger window or the asymptotic forms"
        )
    views = []
    for i, r in enumerate(field.times):
        if 0 < r < t - 1e-12:
            views.append((float(r), _SliceView(field, i)))
    if not views:
        raise CoverageError("no slices strictly between 0 and t")
    if views[0][0] > 0.05:
        raise CoverageError("field lacks early slices; solve with ramp_stride")
    dz = field.dz
    s_vals, log_m = [], []
    for r, view in views:
        s = t - r
        li, _, _ = _log_inner(view, dz, z, s)
        s_vals.append(s)
        log_m.append(-s + li)
    lu1 = log_u1(z, t)
    s_vals = np.array(s_vals[::-1])
    log_m = np.array(log_m[::-1])
    # endpoints: s = 0 gives u(z, t)^2, s = t gives e^{-t} P(B_t <= z)
    s_all = np.concatenate([[0.0], s_vals, [t]])
    log_all = np.concatenate([[2.0 * log_u_field], log_m, [lu1]])
    log_int = float(log_trapz(log_all, s_all))
    log_total = float(np.logaddexp(lu1, log_int))
    atom = math.exp(lu1 - log_total)
    dens = np.exp(log_all - log_total)
    curve = DensityCurve(s_all, dens, float(np.trapezoid(dens, s_all)))
    return ConditionalFirstBranch(z=float(z), t=float(t), atom=atom, s_marginal=curve,
                                  log_u_total=log_total, log_u_field=log_u_field,
                                  _views=tuple(views), _dz=dz)

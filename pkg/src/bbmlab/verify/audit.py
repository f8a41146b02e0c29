"""Audits of the explicit tail bounds on u over dense grids.

Every check reports a violation count (expected zero) with the worst margin
in the metadata. Comparisons are made in log form, with a relative slack
``rtol`` for rounding.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from bbmlab.core import (
    GAMMA,
    LEFT_RATE,
    SQRT2,
    bramson_centering,
    normal_tail_bounds,
    rate_function,
)
from bbmlab.verify.report import TOLERANCES, ComparisonReport

RTOL = 1e-9
UPBDB_TIMES = (5.0, 20.0, 40.0)
DS_TIMES = (20.0, 30.0, 40.0)
CH_TIMES = (20.0, 30.0, 40.0)


def _count(name, excess, field, **meta):
    """Report for an array of log-excesses (violation where > log1p(RTOL))."""
    excess = np.asarray(excess, dtype=float)
    ok = np.isfinite(excess)
    viol = int(np.sum(excess[ok] > math.log1p(RTOL)))
    worst = float(np.max(excess[ok])) if ok.any() else float("-inf")
    md = {"scheme": getattr(field, "scheme", None), "points": int(ok.sum()), "worst_log_margin": worst}
    md.update(meta)
    return ComparisonReport.make(name, viol, 0.0, 0.0, kind="upper", metadata=md)


def _missing(name, t):
    return ComparisonReport.make(name, float("nan"), 0.0, kind="info", metadata={"missing_time": t})


def audit_upbdb(field, times=UPBDB_TIMES, z_range=(-20.0, -1.0), n: int = 1901):
    """u(z, t) <= sqrt(t) e^{-z^2/2t} / (-z sqrt(2 pi)) for z < 0."""
    z = np.linspace(z_range[0], z_range[1], n)
    reps = []
    for t in times:
        name = f"bounds.upbdB[t={t:g}]"
        if not field.has_time(t):
            reps.append(_missing(name, t))
            continue
        bound = 0.5 * math.log(t) - np.log(-z) - 0.5 * math.log(2.0 * math.pi) - z * z / (2.0 * t)
        reps.append(_count(name, field.logu_at(z, t) - bound, field, t=t, z_range=list(z_range)))
    return reps


def audit_base(z_values=None):
    """(1 - 2/z^2) phi(z)/z <= P(N > z) <= phi(z)/z, with the tail from erfc."""
    zs = np.arange(1.5, 12.0 + 1e-9, 0.5) if z_values is None else np.asarray(z_values, float)
    viol = 0
    worst = -math.inf
    for z in zs:
        b = normal_tail_bounds(float(z))
        margin = max(b.lower - b.exact, b.exact - b.upper) / b.exact
        worst = max(worst, margin)
        viol += margin > RTOL
    return [ComparisonReport.make("bounds.base_sandwich", viol, 0.0, 0.0, kind="upper",
                                  metadata={"points": len(zs), "worst_rel_margin": worst})]


def audit_gauss_sandwich(field, times=None):
    """e^{-t} P(B_t <= z) <= u(z, t) <= P(B_t <= z) on every stored slice (or ``times``)."""
    up, lo = [], []
    idx = range(len(field.times)) if times is None else [field.index_of(t) for t in times]
    for i in idx:
        t = float(field.times[i])
        z = field.z(i)
        lu = np.asarray(field.logu[i])
        g = special.log_ndtr(z / math.sqrt(t))
        up.append(lu - g)
        lo.append(np.where(np.isfinite(lu), (g - t) - lu, np.inf))
    up = np.concatenate(up)
    lo = np.concatenate(lo)
    return [_count("bounds.gauss_upper", up, field), _count("bounds.gauss_lower", lo, field)]


def ds_bound(a: float, t: float, eps: float, beta: float = 1.0) -> float:
    """log of the piecewise upper bound on u(sqrt2 a t, t) with slack eps."""
    if a >= 1.0:
        return 0.0
    if a < -beta:
        return -a * a * t
    return (rate_function(a) + eps) * t


def audit_dsbdu(field, times=DS_TIMES, eps: float | None = None, a_range=(-3.0, 0.9), n: int = 391,
                beta: float = 1.0):
    eps = TOLERANCES["ds_epsilon"] if eps is None else eps
    a = np.linspace(a_range[0], a_range[1], n)
    reps = []
    for t in times:
        name = f"bounds.DSbdu[t={t:g}]"
        if not field.has_time(t):
            reps.append(_missing(name, t))
            continue
        # only the part of the a range inside the stored window is audited
        lo, hi = field.window(field.index_of(t))
        aa = a[(SQRT2 * a * t >= lo) & (SQRT2 * a * t <= hi)]
        lu = field.logu_at(SQRT2 * aa * t, t)
        bound = np.array([ds_bound(x, t, eps, beta) for x in aa])
        ex = lu - bound
        bad = aa[ex > math.log1p(RTOL)]
        reps.append(_count(name, ex, field, t=t, eps=eps, beta=beta,
                           a_covered=[float(aa.min()), float(aa.max())] if len(aa) else [],
                           violating_a=[float(bad.min()), float(bad.max())] if len(bad) else []))
    return reps


def ch_constant(field, t: float, delta: float, z_range=(5.0, 20.0), n: int = 151) -> float:
    """max over z of u(m_t - z, t) e^{sqrt2 gamma (1 - delta) z}."""
    z = np.linspace(z_range[0], z_range[1], n)
    lu = field.logu_at(bramson_centering(t) - z, t)
    return float(np.exp(np.max(lu + LEFT_RATE * (1.0 - delta) * z)))


def audit_chbdu(field, times=CH_TIMES, delta: float = 0.2, z_range=(5.0, 20.0)):
    """Fit c_delta per time; the fitted constant must be stable (max/min - 1 <= 0.5)."""
    have = [t for t in times if field.has_time(t)]
    if len(have) < 2:
        return [_missing("bounds.CHbdu_stability", times)]
    cs = [ch_constant(field, t, delta, z_range) for t in have]
    spread = max(cs) / min(cs) - 1.0
    return [ComparisonReport.make("bounds.CHbdu_stability", spread, 0.0, TOLERANCES["ch_stability"],
                                  kind="upper", metadata={"times": have, "c_delta": cs, "delta": delta,
                                                          "z_range": list(z_range), "gamma": GAMMA})]


def bound_audit(field, eps: float | None = None, delta: float = 0.2):
    """All bound audits on one field with Heaviside initial data."""
    return (audit_upbdb(field) + audit_base() + audit_gauss_sandwich(field)
            + audit_dsbdu(field, eps=eps) + audit_chbdu(field, delta=delta))

"""Asymptotic-ratio diagnostics on solver fields.

Each diagnostic evaluates R(t) = u / prediction at the requested times and
judges stabilization: the last R inside a band, shrinking consecutive
increments, and the exponential rate read off as a slope of -log u in t.
"""
from __future__ import annotations

import math

import numpy as np

from bbmlab.core import (
    GAMMA,
    HIGH,
    LEFT_RATE,
    LOW,
    SQRT2,
    DensityCurve,
    bramson_centering,
    classify_regime,
    l1_distance,
    predict_probability,
    rate_function,
    xi_critical_density,
)
from bbmlab.errors import InvalidInputError, PrecisionError, RegimeError
from bbmlab.fkpp.branching import conditional_first_branch, log_u1
from bbmlab.verify.report import TOLERANCES, ComparisonReport, band

LOG_FLOOR = -700.0


def _logu(field, z: float, t: float) -> float:
    lu = float(field.logu_at(z, t))
    floor = float(field.meta.get("log_floor", LOG_FLOOR)) if field.meta else LOG_FLOOR
    if not lu > floor:
        raise PrecisionError(f"log u({z:.6g}, {t}) = {lu:.4g} below the field floor {floor}")
    return lu


def _meta(field, **kw) -> dict:
    out = {"scheme": field.scheme, "dz": field.dz, "dt": field.grid.dt}
    out.update(kw)
    return out


def _check_times(times) -> list:
    times = sorted(float(t) for t in times)
    if len(times) < 2:
        raise InvalidInputError("need at least two times")
    if times[0] <= 1.0:
        raise InvalidInputError("diagnostic times must exceed 1")
    return times


def _ratio_suite(prefix, field, times, zfun, pred, rate, limits, toward_one=False):
    times = _check_times(times)
    lus = [_logu(field, zfun(t), t) for t in times]
    r = [math.exp(lu - pred.log_evaluate(t)) for lu, t in zip(lus, times)]
    reps = []
    for t, lu, ri in zip(times, lus, r):
        reps.append(ComparisonReport.make(f"{prefix}.R[t={t:g}]", ri, 1.0, kind="info",
                                          metadata=_meta(field, t=t, log_u=lu)))
    ref, tol = band(*limits)
    reps.append(ComparisonReport.make(f"{prefix}.R_last_in_band", r[-1], ref, tol,
                                      metadata=_meta(field, t=times[-1], band=list(limits))))
    inc = [abs(r[k + 1] / r[k] - 1.0) for k in range(len(r) - 1)]
    for k in range(1, len(inc)):
        reps.append(ComparisonReport.make(
            f"{prefix}.increment_shrinks[{times[k]:g}->{times[k + 1]:g}]", inc[k], inc[k - 1],
            kind="below", metadata=_meta(field, times=times[k - 1:k + 2])))
    if toward_one:
        for k in range(1, len(r)):
            reps.append(ComparisonReport.make(
                f"{prefix}.toward_one[t={times[k]:g}]", abs(r[k] - 1.0), abs(r[k - 1] - 1.0),
                kind="below", metadata=_meta(field, times=times[k - 1:k + 1])))
    slope = -(lus[-1] - lus[-2]) / (times[-1] - times[-2])
    reps.append(ComparisonReport.make(f"{prefix}.exponent", slope, -rate, TOLERANCES["exponent_slope"],
                                      metadata=_meta(field, window=times[-2:])))
    return reps, r


def ratio_diagnostic_high(field, alpha: float, c1: float, times, limits=None):
    """R(t) = u(sqrt2 alpha t, t) e^{2 gamma (1 - alpha) t} / (C1 (v_alpha t)^{3 gamma / 2})."""
    p = classify_regime(alpha)
    if p.regime != HIGH:
        raise RegimeError("ratio_diagnostic_high needs -gamma < alpha < 1")
    pred = predict_probability(p, constants={"c1": c1})
    reps, _ = _ratio_suite(f"high[alpha={p.alpha:g}]", field, times, lambda t: SQRT2 * p.alpha * t,
                           pred, rate_function(p.alpha), limits or TOLERANCES["ratio_band"])
    return reps


def ratio_diagnostic_low(field, alpha: float, phi: float, times, limits=None, atom_time=None):
    """R(t) = u(sqrt2 alpha t, t) sqrt(4 pi t) e^{(1 + alpha^2) t} / Phi(alpha).

    Also checks the share of the no-branching term e^{-t} P(B_t <= z) in u
    at ``atom_time`` (default: the last time) against 1/(-alpha Phi).
    """
    p = classify_regime(alpha)
    if p.regime != LOW:
        raise RegimeError("ratio_diagnostic_low needs alpha < -gamma")
    a = p.alpha
    pred = predict_probability(p, constants={"phi": phi})
    prefix = f"low[alpha={a:g}]"
    reps, _ = _ratio_suite(prefix, field, times, lambda t: SQRT2 * a * t, pred, rate_function(a),
                           limits or TOLERANCES["low_ratio_band"], toward_one=True)
    ta = float(atom_time if atom_time is not None else max(times))
    z = SQRT2 * a * ta
    share = math.exp(log_u1(z, ta) - _logu(field, z, ta))
    target = 1.0 / (-a * phi)
    reps.append(ComparisonReport.make(f"{prefix}.no_branch_share", share / target, 1.0,
                                      TOLERANCES["atom_share_rel"],
                                      metadata=_meta(field, t=ta, share=share, limit=target)))
    return reps


def ratio_diagnostic_critical(field, c2: float, times, limits=None, near_critical=True):
    """R(t) = u(-sqrt2 gamma t, t) e^{(1 + gamma^2) t} / (C2 t^{3 gamma / 4}).

    With ``near_critical`` the last time also gets the a_t = t^{1/4} window
    u(-sqrt2 gamma t + a_t, t) against the near-critical form, within a factor 2.
    """
    p = classify_regime(-GAMMA)
    pred = predict_probability(p, constants={"c2": c2})
    prefix = "critical"
    reps, _ = _ratio_suite(prefix, field, times, lambda t: -SQRT2 * GAMMA * t, pred,
                           rate_function(-GAMMA), limits or TOLERANCES["ratio_band"])
    if near_critical:
        t = max(float(x) for x in times)
        a_t = t ** 0.25
        near = predict_probability(p, constants={"c2": c2}, form="near_critical", a=lambda s: s ** 0.25)
        ratio = math.exp(_logu(field, -SQRT2 * GAMMA * t + a_t, t) - near.log_evaluate(t))
        ref, tol = band(*TOLERANCES["ratio_band"])
        reps.append(ComparisonReport.make(f"{prefix}.near_critical[t={t:g}]", ratio, ref, tol,
                                          metadata=_meta(field, t=t, a_t=a_t)))
    return reps


def moderate_deviation_check(field, c1: float, t: float, a_values, limits=None):
    """u(m_t - a, t) / (C1 e^{-sqrt2 gamma a}) per a, and the log-slope in a.

    a = 0 is reported unjudged (the form needs a_t -> infinity). The slope is
    a least-squares fit of log u over the positive a values.
    """
    t = float(t)
    a_values = sorted(float(a) for a in a_values)
    if any(a < 0 for a in a_values):
        raise InvalidInputError("a values must be nonnegative")
    if any(a > t / 4.0 for a in a_values):
        raise RegimeError("moderate deviations need a <= t/4")
    mt = bramson_centering(t)
    ref, tol = band(*(limits or TOLERANCES["moderate_band"]))
    reps, pos, lus = [], [], []
    for a in a_values:
        lu = _logu(field, mt - a, t)
        ratio = math.exp(lu + LEFT_RATE * a) / c1
        md = _meta(field, t=t, a=a, log_u=lu)
        if a == 0.0:
            reps.append(ComparisonReport.make(f"moderate.ratio[a={a:g}]", ratio, 1.0, kind="info", metadata=md))
            continue
        reps.append(ComparisonReport.make(f"moderate.ratio[a={a:g}]", ratio, ref, tol, metadata=md))
        pos.append(a)
        lus.append(lu)
    if len(pos) >= 2:
        slope = float(np.polyfit(pos, lus, 1)[0])
        reps.append(ComparisonReport.make("moderate.log_slope", slope, -LEFT_RATE,
                                          TOLERANCES["moderate_slope"],
                                          metadata=_meta(field, t=t, a_values=pos)))
    return reps


def critical_profile(field, t: float) -> tuple[DensityCurve, DensityCurve]:
    """First-branch time profile at alpha = -gamma in x = (t - s)/sqrt(t), with the limit curve.

    Returns (finite-t curve, limit curve), both normalized on the same grid.
    """
    t = float(t)
    cb = conditional_first_branch(field, -SQRT2 * GAMMA * t, t)
    s = cb.s_marginal.grid
    x = (t - s) / math.sqrt(t)
    dens = cb.s_marginal.values * math.sqrt(t)
    o = np.argsort(x)
    x, dens = x[o], dens[o]
    return DensityCurve.from_values(x, dens).normalize(), xi_critical_density(x)


def critical_profile_check(field, t: float):
    finite, limit = critical_profile(field, t)
    d = l1_distance(finite, limit)
    return [ComparisonReport.make(f"critical.profile_l1[t={float(t):g}]", d, 0.0,
                                  TOLERANCES["critical_l1"], kind="upper",
                                  metadata=_meta(field, t=float(t), mean=finite.mean(),
                                                 limit_mean=limit.mean()))]


def rate_curve(alphas) -> list[tuple[float, float, str]]:
    """(alpha, psi(alpha), regime) rows for plotting the rate function."""
    out = []
    for a in alphas:
        p = classify_regime(a)
        out.append((float(a), rate_function(a), p.regime))
    return out


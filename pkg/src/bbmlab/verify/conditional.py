"""Conditional-law suite: rejection samples against exact and limiting laws.

Layer (i) compares the accepted samples with the exact finite-t law of the
first branching event computed from a solver field. Layer (ii) compares
standardized samples with the t -> infinity limits. Layer (iii) is a
correlation proxy for the asymptotic independence of the first-branch time
and the maximum.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from bbmlab.core import (
    CRITICAL,
    HIGH,
    LEFT_RATE,
    LOW,
    SQRT2,
    bramson_centering,
    classify_regime,
    limit_joint_cdf_high,
    xi_critical_density,
)
from bbmlab.errors import InvalidInputError, RegimeError
from bbmlab.fkpp.branching import conditional_first_branch
from bbmlab.verify.report import FAIL, FINITE_T_GAP, PASS, TOLERANCES, ComparisonReport

JOINT_GRID = ((-1.0, 0.0, 1.0), (-1.0, 0.0, 1.0, 2.0), (0.0, 0.5, 1.0))


def ks_statistic(x, cdf, cdf_left=None) -> float:
    """One-sample KS distance sup |F_n - F| against a reference CDF.

    ``cdf_left`` gives the left limits F(x-) where F has atoms; by default F
    is taken continuous.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    if n == 0:
        raise InvalidInputError("KS needs at least one sample")
    f = np.asarray(cdf(x), dtype=float)
    fl = f if cdf_left is None else np.asarray(cdf_left(x), dtype=float)
    # ties: the empirical CDF jumps once per distinct value
    hi = np.searchsorted(x, x, side="right") / n
    lo = np.searchsorted(x, x, side="left") / n
    return float(max(np.max(hi - f), np.max(fl - lo), 0.0))


def exp_cdf(rate: float):
    return lambda x: -np.expm1(-rate * np.maximum(x, 0.0))


def _normal_cdf(x):
    return special.ndtr(x)


def _meta(batch, **kw):
    out = {"t": batch.accepted.horizon, "threshold": batch.threshold, "accepted": len(batch.accepted),
           "trials": batch.trials}
    out.update(kw)
    return out


def exact_layer(field, batch):
    """Layer (i): atom, tau, X(tau) and M_t marginals against the exact finite-t law."""
    acc = batch.accepted
    t = acc.horizon
    z = batch.threshold
    n = len(acc)
    cb = conditional_first_branch(field, z, t)
    few = n < TOLERANCES["min_accepted"]
    reps = []
    emp_atom = float(np.mean(~acc.branched))
    se = math.sqrt(cb.atom * (1.0 - cb.atom) / n)
    reps.append(ComparisonReport.make("exact.no_branch_atom", emp_atom, cb.atom,
                                      TOLERANCES["exact_sigma"] * se, force_inconclusive=few,
                                      metadata=_meta(batch, se=se, discrepancy=cb.discrepancy)))
    ks_tau = ks_statistic(acc.tau, cb.tau_cdf,
                          lambda x: np.where(x >= t, 1.0 - cb.atom, cb.tau_cdf(x)))
    reps.append(ComparisonReport.make("exact.ks_tau", ks_tau, 0.0, TOLERANCES["exact_ks"], kind="upper",
                                      force_inconclusive=few, metadata=_meta(batch)))
    ks_x = ks_statistic(acc.x_at_tau, cb.x_cdf)
    reps.append(ComparisonReport.make("exact.ks_x_tau", ks_x, 0.0, TOLERANCES["exact_ks"], kind="upper",
                                      force_inconclusive=few, metadata=_meta(batch)))
    lz = float(field.logu_at(z, t))
    ks_m = ks_statistic(acc.m_t, lambda m: np.exp(np.minimum(field.logu_at(m, t, outside="clip") - lz, 0.0)))
    reps.append(ComparisonReport.make("exact.ks_max", ks_m, 0.0, TOLERANCES["exact_ks"], kind="upper",
                                      force_inconclusive=few, metadata=_meta(batch)))
    return reps


def _chi(acc, level_fn):
    """chi = (level(t - tau)) - X(tau) on rows with t - tau >= 1; NaN elsewhere."""
    r = acc.horizon - acc.tau
    out = np.full(len(acc), np.nan)
    ok = r >= 1.0
    out[ok] = np.array([level_fn(s) for s in r[ok]]) - acc.x_at_tau[ok]
    return out


def _joint_high(xi, e, chi, wave, c1):
    ok = np.isfinite(chi)
    xi, e, chi = xi[ok], e[ok], chi[ok]
    worst = 0.0
    for x1 in JOINT_GRID[0]:
        for x2 in JOINT_GRID[1]:
            for x3 in JOINT_GRID[2]:
                emp = float(np.mean((xi <= x1) & (chi <= x2) & (e >= x3)))
                ref = limit_joint_cdf_high(x1, x2, x3, wave, c1)
                worst = max(worst, abs(emp - ref))
    return worst, int(ok.sum())


def asymptotic_layer(batch, alpha=None, a=None, wave=None, c1=None, phi=None):
    """Layer (ii) and (iii). Give ``alpha`` for the sqrt2 alpha t threshold or ``a`` for m_t - a."""
    acc = batch.accepted
    t = acc.horizon
    n = len(acc)
    few = n < TOLERANCES["min_accepted"]
    reps = []
    tau, m = acc.tau, acc.m_t

    if a is not None:
        a = float(a)
        if not a > 0:
            raise InvalidInputError("a must be positive")
        level = bramson_centering(t) - a
        xi = (tau - 0.5 * a) / math.sqrt(a / 8.0)
        e = level - m
        reps.append(ComparisonReport.make(
            "limit.moderate.ks_tau_gauss", ks_statistic(xi, _normal_cdf), 0.0,
            TOLERANCES["limit_ks_moderate"], kind="upper", force_inconclusive=few, metadata=_meta(batch, a=a)))
        reps.append(ComparisonReport.make(
            "limit.moderate.ks_gap_exp", ks_statistic(e, exp_cdf(LEFT_RATE)), 0.0,
            TOLERANCES["limit_ks_high"], kind="upper", force_inconclusive=few, metadata=_meta(batch, a=a)))
        reps.append(_independence(xi, e, batch, few))
        return reps

    if alpha is None:
        raise InvalidInputError("give alpha or a")
    p = classify_regime(alpha)
    al = p.alpha
    level = SQRT2 * al * t
    e = level - m
    if p.regime == LOW:
        rate = -SQRT2 * al
        reps.append(ComparisonReport.make(
            f"limit.low[alpha={al:g}].ks_gap_exp", ks_statistic(e, exp_cdf(rate)), 0.0,
            TOLERANCES["limit_ks_low"], kind="upper", force_inconclusive=few, metadata=_meta(batch, rate=rate)))
        if phi is not None:
            emp = float(np.mean(~acc.branched))
            reps.append(ComparisonReport.make(
                f"limit.low[alpha={al:g}].no_branch_atom", emp, 1.0 / (-al * phi), kind="info",
                metadata=_meta(batch)))
        return reps
    if p.regime == HIGH:
        xi = (tau - p.lambda_alpha * t) / math.sqrt(t * (1.0 - al) / (4.0 * SQRT2))
        reps.append(ComparisonReport.make(
            f"limit.high[alpha={al:g}].ks_tau_gauss", ks_statistic(xi, _normal_cdf), 0.0,
            TOLERANCES["limit_ks_high"], kind="upper", force_inconclusive=few, metadata=_meta(batch)))
        if wave is not None and c1 is not None:
            chi = _chi(acc, lambda s: level - bramson_centering(s))
            worst, used = _joint_high(xi, e, chi, wave, c1)
            reps.append(ComparisonReport.make(
                f"limit.high[alpha={al:g}].joint_cdf", worst, 0.0, TOLERANCES["limit_ks_high"],
                kind="upper", force_inconclusive=few or used < TOLERANCES["min_accepted"],
                metadata=_meta(batch, used=used)))
    elif p.regime == CRITICAL:
        xi = (t - tau) / math.sqrt(t)
        grid = np.linspace(0.0, 6.0, 6001)
        lim = xi_critical_density(grid)
        reps.append(ComparisonReport.make(
            "limit.critical.ks_time", ks_statistic(xi, lim.cdf), 0.0, TOLERANCES["limit_ks_high"],
            kind="upper", force_inconclusive=few, metadata=_meta(batch)))
    else:
        raise RegimeError("alpha >= 1 is not a lower deviation")
    reps.append(ComparisonReport.make(
        f"limit.{p.regime.lower()}.ks_gap_exp", ks_statistic(e, exp_cdf(LEFT_RATE)), 0.0,
        TOLERANCES["limit_ks_high"], kind="upper", force_inconclusive=few, metadata=_meta(batch)))
    reps.append(_independence(xi, e, batch, few))
    return reps


def _independence(xi, e, batch, few):
    n = len(xi)
    if n < 3 or np.std(xi) == 0 or np.std(e) == 0:
        r = float("nan")
        few = True
    else:
        r = float(np.corrcoef(xi, e)[0, 1])
    tol = 3.0 / math.sqrt(max(n, 1))
    return ComparisonReport.make("structure.corr_time_gap", abs(r) if math.isfinite(r) else 0.0, 0.0, tol,
                                 kind="upper", force_inconclusive=few, metadata=_meta(batch, corr=r))


def conditional_law_suite(field, batch, alpha=None, a=None, wave=None, c1=None, phi=None):
    """All three layers. Asymptotic failures next to a passing exact layer are labeled finite-t gaps."""
    if field is not None:
        exact = exact_layer(field, batch)
    else:
        exact = []
    asym = asymptotic_layer(batch, alpha=alpha, a=a, wave=wave, c1=c1, phi=phi)
    if exact and all(r.verdict == PASS for r in exact):
        asym = [r.with_label(FINITE_T_GAP) if r.verdict == FAIL else r for r in asym]
    return exact + asym


"""Closed-form quantities for lower deviations of the BBM maximum.

Regime parameters, the rate function, Bramson centering, the g_alpha profile,
Gaussian tail bounds, the constants C1, C2 and Phi(alpha), asymptotic
probability predictions and the limiting joint laws.

Conventions: u(z, t) = P(M_t <= z); gamma = sqrt(2) - 1; the lower deviation
event is {M_t <= sqrt(2) alpha t}.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate, optimize, special

from bbmlab.errors import (
    ConfigurationError,
    CoverageError,
    DomainError,
    InvalidInputError,
    RegimeError,
)
from bbmlab.quad import log_cumtrapz, log_trapz

SQRT2 = math.sqrt(2.0)
GAMMA = SQRT2 - 1.0
LEFT_RATE = SQRT2 * GAMMA  # decay rate of the left tail of the wave
XI_Q = (3.0 * SQRT2 - 1.0) / 4.0
CRITICAL_TOL = 1e-12

HIGH, CRITICAL, LOW, TRIVIAL = "High", "Critical", "Low", "Trivial"


def _finite(x, name="alpha") -> float:
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInputError(f"{name} must be finite, got {x}")
    return x


@dataclass(frozen=True)
class RegimeParams:
    alpha: float
    gamma: float
    v_alpha: float | None
    lambda_alpha: float
    regime: str


def classify_regime(alpha: float) -> RegimeParams:
    """Regime of the lower deviation {M_t <= sqrt(2) alpha t}.

    Inputs within 1e-12 of -gamma are treated as critical, with a warning
    unless the match is exact.
    """
    alpha = _finite(alpha)
    lam = min(1.0, max(0.0, (1.0 - alpha) / SQRT2))
    d = alpha + GAMMA
    if d == 0.0:
        regime = CRITICAL
    elif abs(d) <= CRITICAL_TOL:
        warnings.warn(f"alpha={alpha!r} within {CRITICAL_TOL} of -gamma; treated as critical",
                      RuntimeWarning, stacklevel=2)
        regime = CRITICAL
    elif alpha >= 1.0:
        regime = TRIVIAL
    elif alpha > -GAMMA:
        regime = HIGH
    else:
        regime = LOW
    v = (GAMMA + alpha) / SQRT2 if regime == HIGH else None
    if regime == CRITICAL:
        alpha = -GAMMA if d != 0.0 else alpha
    return RegimeParams(alpha=alpha, gamma=GAMMA, v_alpha=v, lambda_alpha=lam, regime=regime)


def bramson_centering(t: float) -> float:
    """m_t = sqrt(2) t - 3/(2 sqrt 2) log t."""
    t = float(t)
    if not t > 0:
        raise DomainError("Bramson centering needs t > 0")
    return SQRT2 * t - 3.0 / (2.0 * SQRT2) * math.log(t)


def rate_function(alpha: float) -> float:
    """psi(alpha) = lim (1/t) log P(M_t <= sqrt(2) alpha t); zero for alpha >= 1."""
    a = _finite(alpha)
    if a >= 1.0:
        return 0.0
    if a >= -GAMMA:
        return -2.0 * GAMMA * (1.0 - a)
    return -(1.0 + a * a)


def g_profile(alpha: float, u: float) -> float:
    """(1 - u) + (alpha - u)^2 / (1 - u) for u in (0, 1)."""
    alpha = _finite(alpha)
    u = float(u)
    if not 0.0 < u < 1.0:
        raise DomainError("g_profile needs u in (0, 1)")
    return (1.0 - u) + (alpha - u) ** 2 / (1.0 - u)


def _g_prime(alpha: float, u: float) -> float:
    w = 1.0 - u
    return -1.0 + (2.0 * (u - alpha) * w + (alpha - u) ** 2) / (w * w)


@dataclass(frozen=True)
class GMinimum:
    u_star: float
    value: float


def g_argmin(alpha: float) -> GMinimum:
    """Minimize g_profile(alpha, .) on (0, 1) numerically (root of g')."""
    p = classify_regime(alpha)
    if p.regime != HIGH:
        raise RegimeError("g_argmin is defined for -gamma < alpha < 1")
    u = optimize.brentq(lambda x: _g_prime(alpha, x), 1e-15, 1.0 - 1e-15, xtol=1e-15, rtol=1e-15)
    return GMinimum(u_star=u, value=g_profile(alpha, u))


@dataclass(frozen=True)
class TailBounds:
    lower: float
    exact: float
    upper: float


def normal_tail_bounds(z: float) -> TailBounds:
    """Sandwich of P(N > z): upper phi(z)/z, lower (1 - 2/z^2) phi(z)/z."""
    z = float(z)
    if not z > 0:
        raise DomainError("normal_tail_bounds needs z > 0")
    upper = math.exp(-0.5 * z * z) / (z * math.sqrt(2.0 * math.pi))
    return TailBounds(lower=upper * (1.0 - 2.0 / (z * z)),
                      exact=0.5 * math.erfc(z / SQRT2), upper=upper)


def brownian_tail_bound(z: float, t: float) -> float:
    """P(B_t > z) <= sqrt(t)/(z sqrt(2 pi)) exp(-z^2 / 2t) for z, t > 0."""
    return math.sqrt(t) / (z * math.sqrt(2.0 * math.pi)) * math.exp(-z * z / (2.0 * t))


# ----------------------------------------------------------------------------
# density carrier


@dataclass(frozen=True, eq=False)
class DensityCurve:
    grid: np.ndarray
    values: np.ndarray
    normalization: float

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise InvalidInputError("grid and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(g) <= 0):
            raise InvalidInputError("grid must be strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvalidInputError("density values must be finite and nonnegative")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, grid, values) -> "DensityCurve":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        return cls(grid, values, float(np.trapezoid(values, grid)))

    def normalize(self) -> "DensityCurve":
        if not self.normalization > 0:
            raise DomainError("cannot normalize a curve with zero mass")
        return DensityCurve(self.grid, self.values / self.normalization, 1.0)

    def cdf(self, x) -> np.ndarray:
        """Cumulative trapezoid mass up to x divided by the normalization."""
        c = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(self.grid) * (self.values[1:] + self.values[:-1]))])
        return np.interp(x, self.grid, c / self.normalization, left=0.0, right=1.0)

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.values, self.grid) / self.normalization)


def l1_distance(a: DensityCurve, b: DensityCurve, grid=None) -> float:
    """L1 distance between two normalized curves on a common grid."""
    g = a.grid if grid is None else np.asarray(grid, dtype=float)
    fa = np.interp(g, a.grid, a.values / a.normalization, left=0.0, right=0.0)
    fb = np.interp(g, b.grid, b.values / b.normalization, left=0.0, right=0.0)
    return float(np.trapezoid(np.abs(fa - fb), g))


# ----------------------------------------------------------------------------
# critical-regime xi density and C2


def xi_critical_density(grid) -> DensityCurve:
    """Curve proportional to r^{3 gamma/2} e^{-2 r^2}, normalized numerically."""
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or np.any(g < 0) or np.any(np.diff(g) <= 0):
        raise DomainError("xi density grid must be nonnegative and strictly increasing")
    vals = g ** (1.5 * GAMMA) * np.exp(-2.0 * g * g)
    return DensityCurve.from_values(g, vals).normalize()


def xi_critical_integral() -> float:
    """int_0^inf r^{3 gamma/2} e^{-2 r^2} dr in closed form, Gamma(q) / 2^{q+1}."""
    return math.gamma(XI_Q) / 2.0 ** (XI_Q + 1.0)


def xi_critical_constant_readings() -> dict:
    """Both readings of the printed density prefactor 2^{-3(sqrt2+1)/4} Gamma(q).

    The printed number equals the integral of the unnormalized curve, so it
    normalizes the curve only if read as a divisor.
    """
    printed = 2.0 ** (-3.0 * (SQRT2 + 1.0) / 4.0) * math.gamma(XI_Q)
    integral = xi_critical_integral()
    return {
        "printed_constant": printed,
        "unnormalized_integral": integral,
        "mass_if_multiplier": printed * integral,
        "mass_if_divisor": integral / printed,
    }


def c2_from_c1(c1: float) -> float:
    """C2 = C1 Gamma(q) / (sqrt(2 pi) 2^q) with q = (3 sqrt 2 - 1)/4."""
    c1 = float(c1)
    if not c1 > 0 or not math.isfinite(c1):
        raise DomainError("c1 must be positive and finite")
    return c1 * math.gamma(XI_Q) / (math.sqrt(2.0 * math.pi) * 2.0**XI_Q)


# ----------------------------------------------------------------------------
# C1 from a travelling wave


C1_TAIL_BUDGET = 5e-3
C1_END_DECAY = 1e-6


def _wave_frame(wave):
    z = np.asarray(wave.z, dtype=float)
    off = getattr(wave, "bramson_offset", None)
    return z + (off if off is not None else 0.0)


def wave_weighted_integral(wave, upper: float | None = None, check: bool = True) -> float:
    """int_{-inf}^{upper} e^{-sqrt2 gamma z} w(z)^2 dz with analytic tails.

    The wave is read in its Bramson frame when it carries a ``bramson_offset``.
    Left of the grid w is extended as w(z0) e^{sqrt2 gamma (z - z0)}; right of it
    w is taken as 1.
    """
    z = _wave_frame(wave)
    w = np.asarray(wave.w, dtype=float)
    logf = -LEFT_RATE * z + 2.0 * np.log(w)
    if check:
        peak = np.max(logf)
        if logf[0] - peak > math.log(C1_END_DECAY) or logf[-1] - peak > math.log(C1_END_DECAY):
            raise CoverageError("wave grid too short: integrand has not decayed at the ends")
    left_tail = math.exp(logf[0]) / LEFT_RATE
    if upper is None or upper >= z[-1]:
        body = math.exp(log_trapz(logf, z))
        hi = z[-1] if upper is None else upper
        right = math.exp(-LEFT_RATE * z[-1]) / LEFT_RATE
        if upper is not None:
            right -= math.exp(-LEFT_RATE * hi) / LEFT_RATE
        return left_tail + body + right
    if upper <= z[0]:
        return math.exp(logf[0] + LEFT_RATE * (upper - z[0])) / LEFT_RATE
    cum = log_cumtrapz(logf, z)
    j = int(np.searchsorted(z, upper)) - 1
    frac = (upper - z[j]) / (z[j + 1] - z[j])
    lf = (1 - frac) * logf[j] + frac * logf[j + 1]
    part = 0.5 * (upper - z[j]) * (math.exp(logf[j]) + math.exp(lf))
    return left_tail + math.exp(cum[j]) + part


def c1_from_wave(wave) -> float:
    """C1 = 1/2 int e^{-sqrt2 gamma z} w(z)^2 dz, tails included analytically.

    The left tail extension assumes w(z) ~ C e^{sqrt2 gamma z}; the wave's
    fitted ``left_slope`` must match that rate well enough that the tail
    contribution is known to 0.5%.
    """
    z = _wave_frame(wave)
    w = np.asarray(wave.w, dtype=float)
    total = wave_weighted_integral(wave)
    slope = getattr(wave, "left_slope", None)
    if slope is not None and math.isfinite(slope):
        # tail with the fitted rate instead of the theoretical one
        lf0 = -LEFT_RATE * z[0] + 2.0 * math.log(w[0])
        rate_fit = 2.0 * slope - LEFT_RATE
        if rate_fit <= 0:
            raise CoverageError("fitted left slope gives a divergent tail")
        alt = math.exp(lf0) / rate_fit
        tail = math.exp(lf0) / LEFT_RATE
        if abs(alt - tail) > C1_TAIL_BUDGET * total:
            raise CoverageError("left tail of the wave too uncertain for the 0.5% budget")
    return 0.5 * total


def c2_integral_form(wave, n: int = 20001) -> float:
    """C2 from its integral form, (1/sqrt(2 pi)) int r^{3g/2} e^{-2r^2} dr * int e^{-sqrt2 g z} w^2 dz.

    The r-integral is done by quadrature (after r = x^2 to remove the
    endpoint singularity), independently of the gamma-function path.
    """
    x = np.linspace(0.0, 3.0, n)[1:]
    r = x * x
    f = 2.0 * x * np.exp(1.5 * GAMMA * np.log(r) - 2.0 * r * r)
    integral = float(integrate.simpson(np.concatenate([[0.0], f]), x=np.concatenate([[0.0], x])))
    return integral * wave_weighted_integral(wave) / math.sqrt(2.0 * math.pi)


# ----------------------------------------------------------------------------
# Phi(alpha)


@dataclass(frozen=True)
class PhiEstimate:
    alpha: float
    value: float
    integral: float
    truncation_error: float
    s_max: float
    decay_rate: float

    def __float__(self):
        return self.value

    @property
    def relative_truncation(self) -> float:
        """Truncation error relative to the leading term -1/alpha."""
        return self.truncation_error / (-1.0 / self.alpha)


EARLY_SLICE_MAX = 1e-2  # first slice; trapezoid error ~ s1^1.5 near the sqrt(s) endpoint


def phi_decay_rate(alpha: float) -> float:
    """Exponential decay rate in s of the Phi integrand.

    u(sqrt2 a s, s) = e^{psi(a) s + o(s)} gives the rate
    -max_a [(1 - alpha^2) + 2 alpha a + 2 psi(a)].
    """
    a = np.linspace(-6.0, 3.0, 90001)
    psi = np.where(a >= 1, 0.0, np.where(a >= -GAMMA, -2 * GAMMA * (1 - a), -(1 + a * a)))
    return float(-np.max((1 - alpha * alpha) + 2 * alpha * a + 2 * psi))


def _log_left_bound(alpha: float, s: float, y_lo: float) -> float:
    """log of int_{-inf}^{y_lo} e^{sqrt2 alpha y} P(B_s <= y)^2 dy."""
    span = 20.0 + 12.0 * math.sqrt(s) + 4.0 * abs(alpha) * s
    y = np.linspace(y_lo - span, y_lo, 4001)
    logf = SQRT2 * alpha * y + 2.0 * special.log_ndtr(y / math.sqrt(s))
    return float(log_trapz(logf, y))


def _check_low(alpha: float) -> float:
    p = classify_regime(alpha)
    if p.regime != LOW:
        raise RegimeError("Phi(alpha) is only defined for alpha < -gamma")
    return p.alpha


@dataclass(frozen=True, eq=False)
class _SliceIntegrals:
    """Per-slice cumulative integrals of e^{sqrt2 alpha y} u(y, s)^2 dy."""

    s: np.ndarray
    y: list
    log_cum: list
    log_right: np.ndarray
    log_left_err: np.ndarray


@functools.lru_cache(maxsize=8)
def _slice_integrals(alpha: float, field, s_max: float, y_min, y_max) -> _SliceIntegrals:
    ss, ys, cums, right, lerr = [], [], [], [], []
    for i, s in enumerate(field.times):
        if s <= 0 or s > s_max + 1e-12:
            continue
        y = field.z(i)
        lu = np.asarray(field.logu[i])
        keep = np.ones_like(y, dtype=bool)
        if y_min is not None:
            keep &= y >= y_min - 1e-12
        if y_max is not None:
            keep &= y <= y_max + 1e-12
        y, lu = y[keep], lu[keep]
        # u <= P(B_s <= y) holds exactly; discrete far tails at small s do not
        # respect it and e^{sqrt2 alpha y} would amplify the excess
        lu = np.minimum(lu, special.log_ndtr(y / math.sqrt(s)))
        logf = SQRT2 * alpha * y + 2.0 * lu
        ss.append(float(s))
        ys.append(y)
        cums.append(log_cumtrapz(logf, y))
        # u = 1 beyond the right end
        right.append(SQRT2 * alpha * y[-1] - math.log(-SQRT2 * alpha))
        lerr.append(_log_left_bound(alpha, float(s), float(y[0])))
    if not ss:
        raise CoverageError("field has no slices in (0, s_max]")
    return _SliceIntegrals(np.array(ss), ys, cums, np.array(right), np.array(lerr))


def phi_alpha(alpha: float, field, s_max: float | None = None, y_min=None, y_max=None,
              budget: float = 1e-3) -> PhiEstimate:
    """Phi(alpha) = -1/alpha + sqrt2 int_0^inf ds int dy e^{(1-alpha^2)s + sqrt2 alpha y} u(y,s)^2.

    The s-integral is a trapezoid over the field's stored slices with the
    exact value -1/alpha of the inner integral at s = 0. Discarded mass is
    bounded by the Gaussian bound u(y, s) <= P(B_s <= y) left of the window
    and by J(s_max)/kappa beyond s_max, with kappa the decay rate of J.
    A total above ``budget`` times -1/alpha is a coverage error.
    """
    alpha = _check_low(alpha)
    if s_max is None:
        s_max = float(field.times[-1])
    if s_max > field.times[-1] + 1e-9:
        raise CoverageError(f"field ends at t={field.times[-1]}, before s_max={s_max}")
    si = _slice_integrals(alpha, field, float(s_max), y_min, y_max)
    if si.s[0] > EARLY_SLICE_MAX:
        raise CoverageError("field lacks early slices for the sqrt(s) behaviour at s=0; "
                            "solve with ramp_stride")
    growth = (1.0 - alpha * alpha) * si.s
    log_inner = np.array([c[-1] for c in si.log_cum])
    log_j = math.log(SQRT2) + growth + np.logaddexp(log_inner, si.log_right)
    s = np.concatenate([[0.0], si.s])
    j = np.concatenate([[-1.0 / alpha], np.exp(log_j)])
    integral = float(np.trapezoid(j, s))
    kappa = phi_decay_rate(alpha)
    # empirical rate over the last unit of s, whichever decays slower
    tail = si.s >= si.s[-1] - 1.0
    if tail.sum() >= 3:
        slope = -np.polyfit(si.s[tail], log_j[tail], 1)[0]
        kappa = min(kappa, slope) if slope > 0 else 0.0
    if kappa <= 0:
        raise CoverageError("Phi integrand is not decaying at s_max")
    err_s = j[-1] / kappa
    left = np.exp(math.log(SQRT2) + growth + si.log_left_err)
    err_y = float(np.trapezoid(np.concatenate([[0.0], left]), s))
    err = err_s + err_y
    est = PhiEstimate(alpha=alpha, value=-1.0 / alpha + integral, integral=integral,
                      truncation_error=err, s_max=float(si.s[-1]), decay_rate=kappa)
    if est.relative_truncation > budget:
        raise CoverageError(
            f"Phi truncation estimate {est.relative_truncation:.2e} of -1/alpha exceeds {budget}"
        )
    return est


# ----------------------------------------------------------------------------
# predictions


@dataclass(frozen=True)
class AsymptoticPrediction:
    """P(M_t <= level) ~ constant * t^poly_exponent * e^{exp_rate t} (times extra factors).

    ``exp_rate`` is the coefficient of t in the log-probability, i.e. the
    (nonpositive) rate function value. ``log_extra`` adds a t-dependent term
    to the log-prediction for the moderate and near-critical forms.
    """

    regime: str
    exp_rate: float
    poly_exponent: float
    constant: float | None
    form: str = "standard"
    log_extra: Callable[[float], float] | None = field(default=None, compare=False)
    validity_floor: float = 1.0

    def log_evaluate(self, t: float) -> float:
        t = float(t)
        if not t > self.validity_floor:
            raise DomainError(f"prediction valid only for t > {self.validity_floor}")
        if self.constant is None:
            raise ConfigurationError("prediction has no multiplicative constant")
        out = math.log(self.constant) + self.poly_exponent * math.log(t) + self.exp_rate * t
        if self.log_extra is not None:
            out += self.log_extra(t)
        return out

    def evaluate(self, t: float) -> float:
        return math.exp(self.log_evaluate(t))


def _need(constants: Mapping, key: str, regime: str) -> float:
    v = constants.get(key) if constants else None
    if v is None:
        raise ConfigurationError(f"regime {regime} needs constant {key!r}")
    v = float(v)
    if not v > 0:
        raise ConfigurationError(f"constant {key} must be positive")
    return v


def predict_probability(params: RegimeParams, t: float | None = None, constants: Mapping | None = None,
                        form: str = "standard", a=None) -> AsymptoticPrediction:
    """Asymptotic form of P(M_t <= sqrt2 alpha t) for the regime of ``params``.

    ``form`` selects ``"standard"``, ``"moderate"`` (P(M_t <= m_t - a_t) ~
    C1 e^{-sqrt2 gamma a_t}) or ``"near_critical"`` (P(M_t <= -sqrt2 gamma t + a_t)
    ~ C2 t^{3gamma/4} e^{-2 sqrt2 gamma t + sqrt2 gamma a_t}). ``a`` is a number or a
    function of t. If ``t`` is given it is validated against the floor t > 1.
    """
    if t is not None and not float(t) > 1.0:
        raise DomainError("predictions need t > 1")
    constants = constants or {}
    a_fn = None
    if a is not None:
        a_fn = a if callable(a) else (lambda _t, _a=float(a): _a)
    if form == "moderate":
        if a_fn is None:
            raise ConfigurationError("moderate form needs a_t")
        c1 = _need(constants, "c1", "moderate")
        return AsymptoticPrediction(regime="Moderate", exp_rate=0.0, poly_exponent=0.0, constant=c1,
                                    form=form, log_extra=lambda s: -LEFT_RATE * a_fn(s))
    if form == "near_critical":
        if a_fn is None:
            raise ConfigurationError("near-critical form needs a_t")
        c2 = _need(constants, "c2", "near-critical")
        return AsymptoticPrediction(regime=CRITICAL, exp_rate=-2.0 * SQRT2 * GAMMA,
                                    poly_exponent=0.75 * GAMMA, constant=c2, form=form,
                                    log_extra=lambda s: LEFT_RATE * a_fn(s))
    if form != "standard":
        raise ConfigurationError(f"unknown prediction form {form!r}")
    r = params.regime
    rate = rate_function(params.alpha)
    if r == HIGH:
        c1 = _need(constants, "c1", r)
        return AsymptoticPrediction(r, rate, 1.5 * GAMMA, c1 * params.v_alpha ** (1.5 * GAMMA))
    if r == LOW:
        phi = _need(constants, "phi", r)
        return AsymptoticPrediction(r, rate, -0.5, phi / math.sqrt(4.0 * math.pi))
    if r == CRITICAL:
        c2 = constants.get("c2")
        if c2 is None and constants.get("c1") is not None:
            c2 = c2_from_c1(constants["c1"])
        c2 = _need({"c2": c2}, "c2", r)
        return AsymptoticPrediction(r, rate, 0.75 * GAMMA, c2)
    raise RegimeError("alpha >= 1 is not a lower deviation; P(M_t <= sqrt2 alpha t) -> 1")


# ----------------------------------------------------------------------------
# limiting joint laws


def limit_joint_cdf_high(x1: float, x2: float, x3: float, wave, c1: float) -> float:
    """P(xi <= x1) P(chi <= x2, E >= x3) for the alpha > -gamma limit law.

    The (chi, E) factor is (1/(2 C1)) e^{-sqrt2 gamma x3} int_{-inf}^{x2 - x3} e^{-sqrt2 gamma z} w^2 dz.
    """
    if x3 < 0:
        raise DomainError("x3 must be nonnegative")
    gauss = float(special.ndtr(x1))
    if x2 == math.inf:
        inner = wave_weighted_integral(wave, check=False)
    elif x2 == -math.inf:
        return 0.0
    else:
        inner = wave_weighted_integral(wave, upper=x2 - x3, check=False)
    return gauss * min(1.0, math.exp(-LEFT_RATE * x3) * inner / (2.0 * c1))


def limit_joint_cdf_low(x1: float, x2: float, x3: float, alpha: float, field, phi: float,
                        s_max: float | None = None) -> float:
    """P(xi <= x1, chi <= x2, E >= x3) for the alpha < -gamma limit law.

    (1/Phi)[1_{x3<x2} int_{x3}^{x2} sqrt2 e^{sqrt2 alpha z} dz
            + sqrt2 int_0^{x1} ds int_{-inf}^{x2-x3} e^{sqrt2 alpha (x3+z) + (1-alpha^2) s} u(z,s)^2 dz]
    """
    alpha = _check_low(alpha)
    if x1 < 0 or x3 < 0:
        raise DomainError("x1 and x3 must be nonnegative")
    phi = float(phi)
    atom = 0.0
    if x3 < x2:
        hi = math.exp(SQRT2 * alpha * x2) if x2 < math.inf else 0.0
        atom = (math.exp(SQRT2 * alpha * x3) - hi) / (-alpha)
    if x1 == 0 or x2 == -math.inf:
        return atom / phi
    si = _slice_integrals(alpha, field, float(s_max or field.times[-1]), None, None)
    zmax = x2 - x3
    vals = []
    for k in range(len(si.s)):
        y = si.y[k]
        cum = si.log_cum[k]
        if zmax >= y[-1]:
            li = cum[-1]
            if zmax == math.inf:
                li = np.logaddexp(li, si.log_right[k])
            else:
                extra = (math.exp(SQRT2 * alpha * y[-1]) - math.exp(SQRT2 * alpha * zmax)) / (-SQRT2 * alpha)
                li = np.logaddexp(li, math.log(extra)) if extra > 0 else li
        elif zmax <= y[0]:
            li = -np.inf
        else:
            li = float(np.interp(zmax, y, cum))
        vals.append(li)
    s = np.concatenate([[0.0], si.s])
    j0 = -1.0 / alpha if zmax > 0 else 0.0
    if 0 < zmax < math.inf:
        j0 = (1.0 - math.exp(SQRT2 * alpha * zmax)) / (-alpha)
    log_j = math.log(SQRT2) + (1.0 - alpha * alpha) * si.s + np.array(vals) + SQRT2 * alpha * x3
    j = np.concatenate([[j0 * math.exp(SQRT2 * alpha * x3)], np.exp(log_j)])
    if x1 < s[-1]:
        m = s <= x1
        jm = np.interp(x1, s, j)
        part = float(np.trapezoid(np.append(j[m], jm), np.append(s[m], x1)))
    else:
        part = float(np.trapezoid(j, s))
    return min(1.0, (atom + part) / phi)

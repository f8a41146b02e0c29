"""Sampler for the alpha < -gamma limit of the conditioned extremal process.

(xi, chi) has an atom at xi = 0 of mass 1/(-alpha Phi), where chi is
Exp(-sqrt2 alpha) and the process is the single point -chi. Otherwise
(xi, chi) has density sqrt2 e^{sqrt2 alpha z + (1 - alpha^2) s} u(z, s)^2 / Phi
and the process is the union of two independent BBMs run for time xi,
each conditioned by rejection on its maximum staying below chi, shifted by
-chi.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

from bbmlab.core import SQRT2, _check_low, _slice_integrals
from bbmlab.errors import CappedRunError, CoverageError, InvalidInputError
from bbmlab.sim.bbm import DEFAULT_CAP, OK, _tree
from bbmlab.sim.rng import child_key, replica_keys, uniform

log = logging.getLogger(__name__)

DOMAIN_LIMIT = 3
INITIAL_BUDGET = 1 << 20
MAX_BUDGET = 1 << 36


@numba.njit(cache=True)
def _first_accepted(key, start, stop, horizon, threshold, cap, st, sx, sk, pos):
    """First trial index in [start, stop) whose tree stays below threshold, or -1."""
    for j in range(start, stop):
        r = _tree(child_key(key, j), horizon, threshold, 0.0, False, cap, st, sx, sk, pos)
        if r[0] == OK:
            return j, r[4]
    return -1, 0


@dataclass(frozen=True, eq=False)
class LimitDraw:
    xi: float
    chi: float
    points: np.ndarray  # sorted descending, all <= 0
    trials: int

    @property
    def atom(self) -> bool:
        return self.xi == 0.0


class _LimitLaw:
    """Inverse-CDF tables for (xi, chi) built from the Phi slice integrals."""

    def __init__(self, alpha, field, phi, s_max=None):
        self.alpha = alpha
        self.phi = float(phi)
        self.rate = -SQRT2 * alpha  # chi | atom ~ Exp(rate); also the right-tail rate in z
        si = _slice_integrals(alpha, field, float(s_max or field.times[-1]), None, None)
        self.si = si
        log_inner = np.array([c[-1] for c in si.log_cum])
        log_tot = np.logaddexp(log_inner, si.log_right)
        self.log_tot = log_tot
        j = np.exp(math.log(SQRT2) + (1.0 - alpha * alpha) * si.s + log_tot)
        self.s = np.concatenate([[0.0], si.s])
        self.j = np.concatenate([[-1.0 / alpha], j])
        panel = 0.5 * np.diff(self.s) * (self.j[1:] + self.j[:-1])
        self.cum = np.concatenate([[0.0], np.cumsum(panel)])
        self.p_atom = (-1.0 / alpha) / self.phi
        mass = self.p_atom + self.cum[-1] / self.phi
        if abs(mass - 1.0) > 1e-2:
            raise CoverageError(f"limit law tables carry mass {mass:.4f}; check phi and the field")

    def sample_s(self, u: float) -> float:
        target = u * self.cum[-1]
        k = int(np.searchsorted(self.cum, target, side="right")) - 1
        k = min(max(k, 0), len(self.s) - 2)
        h = self.s[k + 1] - self.s[k]
        a, b = self.j[k], self.j[k + 1]
        r = target - self.cum[k]
        # solve a x + (b - a) x^2 / (2h) = r on [0, h]
        c2 = 0.5 * (b - a) / h
        if abs(c2) * h < 1e-12 * max(a, 1e-300):
            x = r / a
        else:
            x = (-a + math.sqrt(max(a * a + 4.0 * c2 * r, 0.0))) / (2.0 * c2)
        return float(self.s[k] + min(max(x, 0.0), h))

    def sample_z(self, s: float, u: float) -> float:
        si = self.si
        k = int(np.argmin(np.abs(si.s - s)))
        y, cum = si.y[k], si.log_cum[k]
        lt = math.log(u) + self.log_tot[k]
        if lt <= cum[-1]:
            ok = np.isfinite(cum)
            return float(np.interp(lt, cum[ok], y[ok]))
        # right tail: mass e^{sqrt2 alpha z} dz beyond y[-1]
        rem = math.exp(lt) - math.exp(cum[-1])
        tail = math.exp(si.log_right[k])
        frac = min(rem / tail, 1.0 - 1e-16)
        return float(y[-1] - math.log1p(-frac) / self.rate)


def sample_limit_extremal_low(alpha: float, field, phi: float, seed: int, n: int,
                              population_cap: int = DEFAULT_CAP, s_max: float | None = None,
                              initial_budget: int = INITIAL_BUDGET, max_budget: int = MAX_BUDGET):
    """Draw ``n`` point sets of the limiting extremal process (deterministic given seed).

    Rejection budgets start at ``initial_budget`` trials per BBM copy and
    double (logged) until ``max_budget``, keeping the drawn (xi, chi); past
    that a CappedRunError carries the completed draws.
    """
    alpha = _check_low(alpha)
    if n < 1:
        raise InvalidInputError("n must be positive")
    law = _LimitLaw(alpha, field, phi, s_max)
    keys = replica_keys(seed, DOMAIN_LIMIT, 0, n)
    size = min(population_cap, 1 << 22) + 1
    st, sx = np.empty(size), np.empty(size)
    sk = np.empty(size, dtype=np.uint64)
    pos = np.empty(size)
    draws = []
    for d in range(n):
        key = keys[d]
        if uniform(key, 0) < law.p_atom:
            chi = -math.log(uniform(key, 1)) / law.rate
            draws.append(LimitDraw(0.0, chi, np.array([-chi]), 0))
            continue
        s = law.sample_s(uniform(key, 2))
        chi = law.sample_z(s, uniform(key, 3))
        pts = []
        trials = 0
        for c in range(2):
            ck = np.uint64(child_key(key, c))
            start, budget = 0, initial_budget
            while True:
                j, m = _first_accepted(ck, start, budget, s, chi, population_cap, st, sx, sk, pos)
                if j >= 0:
                    trials += j + 1
                    pts.append(pos[:m].copy())
                    break
                if budget >= max_budget:
                    raise CappedRunError(
                        f"rejection budget {max_budget} exhausted at xi={s:.4g}, chi={chi:.4g}", draws
                    )
                log.info("limit sampler: doubling rejection budget to %d at xi=%.4g chi=%.4g",
                         2 * budget, s, chi)
                start, budget = budget, 2 * budget
        allp = np.sort(np.concatenate(pts))[::-1] - chi
        draws.append(LimitDraw(s, chi, allp, trials))
    return draws

"""Exact simulation of binary branching Brownian motion.

The tree is generated spine by spine. A spine is the always-first-child line
of descent of a particle born at (b, x); it is a Brownian motion on [b, t], so
its terminal position is drawn first, its branch times form a rate-1 Poisson
process on [b, t], and its positions at those times follow Brownian bridges
to the terminal value. Each branch point starts a new spine for the second
child. Terminal particles are in one-to-one correspondence with spines.

Drawing terminals first gives exact early rejection for {M_t <= z}: a
conditioned trial stops at the first spine ending above z. For the root spine
the first-stage test is integrated out: the number of trials whose root spine
ends above z is geometric, and the passing terminal is a truncated normal.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from scipy import special, stats

from bbmlab.errors import CappedRunError, InvalidInputError
from bbmlab.sim.rng import child_key, replica_keys, uniform, uniforms

DOMAIN_SIMULATE = 1
DOMAIN_CONDITION = 2
DEFAULT_CAP = 2_000_000
DEFAULT_TOP_K = 64
BLOCK = 1 << 15
MAX_FAILS = 2.0**62
LN2 = math.log(2.0)

OK, REJECTED, CAPPED = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    seed: int
    population_cap: int = DEFAULT_CAP
    record_top_k: int = DEFAULT_TOP_K

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidInputError("horizon must be positive and finite")
        if self.population_cap < 1:
            raise InvalidInputError("population_cap must be at least 1")
        if self.record_top_k < 0:
            raise InvalidInputError("record_top_k must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Realization:
    """One BBM sample. ``tau`` is min(t, first branching time); ``root_clock``
    is the root's exponential clock itself (not capped at t); ``line_position``
    is the terminal position of the always-first-child line."""

    key: int
    tau: float
    x_at_tau: float
    m_t: float
    n_t: int
    top_positions: tuple
    branched: bool
    root_clock: float
    line_position: float


# ---------------------------------------------------------------------------
# kernel


@numba.njit(cache=True, inline="always")
def _box_muller(u1, u2):
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@numba.njit(cache=True)
def _tree(key, horizon, threshold, root_terminal, has_root_terminal, cap,
          st, sx, sk, pos):
    """Grow one tree. Returns (status, tau, x_at_tau, m_t, n_t, root_clock, line).

    Terminal positions are written to ``pos[:n_t]``. Counters on a spine key:
    0, 1 terminal normal; 2 + 3i gap before branch i; 3 + 3i, 4 + 3i bridge
    normal at branch i.
    """
    st[0] = 0.0
    sx[0] = 0.0
    sk[0] = key
    sp = 1
    n = 0
    m = -np.inf
    tau = horizon
    xtau = np.nan
    root_clock = np.nan
    line = np.nan
    first = True
    while sp > 0:
        sp -= 1
        b = st[sp]
        x = sx[sp]
        k = sk[sp]
        if first and has_root_terminal:
            xt = root_terminal
        else:
            xt = x + math.sqrt(horizon - b) * _box_muller(uniform(k, 0), uniform(k, 1))
        if n >= cap:
            return CAPPED, tau, xtau, m, n, root_clock, line
        pos[n] = xt
        n += 1
        if xt > threshold:
            return REJECTED, tau, xtau, m, n, root_clock, line
        if xt > m:
            m = xt
        if first:
            line = xt
        s_prev = b
        x_prev = x
        i = 0
        while True:
            g = -math.log(uniform(k, 2 + 3 * i))
            if first and i == 0:
                root_clock = g
            s = s_prev + g
            if s >= horizon:
                break
            span = horizon - s_prev
            w = g / span
            sd = math.sqrt(g * (horizon - s) / span)
            xs = x_prev + w * (xt - x_prev) + sd * _box_muller(uniform(k, 3 + 3 * i), uniform(k, 4 + 3 * i))
            if first and i == 0:
                tau = s
                xtau = xs
            if sp >= len(st):
                return CAPPED, tau, xtau, m, n, root_clock, line
            st[sp] = s
            sx[sp] = xs
            sk[sp] = child_key(k, i)
            sp += 1
            s_prev = s
            x_prev = xs
            i += 1
        if first and i == 0:
            xtau = xt
        first = False
    return OK, tau, xtau, m, n, root_clock, line


@numba.njit(cache=True)
def _block(keys, horizon, threshold, terminals, has_terminals, cap, top_k):
    nb = len(keys)
    status = np.empty(nb, dtype=np.int8)
    tau = np.empty(nb)
    xtau = np.empty(nb)
    mt = np.empty(nb)
    nt = np.empty(nb, dtype=np.int64)
    clock = np.empty(nb)
    line = np.empty(nb)
    top = np.full((nb, top_k), np.nan)
    size = min(cap, 1 << 22) + 1
    st = np.empty(size)
    sx = np.empty(size)
    sk = np.empty(size, dtype=np.uint64)
    pos = np.empty(min(cap, 1 << 22) + 1)
    for j in range(nb):
        r = _tree(keys[j], horizon, threshold, terminals[j], has_terminals, cap, st, sx, sk, pos)
        status[j] = r[0]
        tau[j] = r[1]
        xtau[j] = r[2]
        mt[j] = r[3]
        nt[j] = r[4]
        clock[j] = r[5]
        line[j] = r[6]
        if r[0] == OK and top_k > 0:
            kk = min(top_k, r[4])
            srt = np.sort(pos[: r[4]])
            for q in range(kk):
                top[j, q] = srt[r[4] - 1 - q]
    return status, tau, xtau, mt, nt, clock, line, top


# ---------------------------------------------------------------------------
# batches


@dataclass(frozen=True, eq=False)
class RealizationBatch:
    """Column store of realizations; top positions are kept as CSR rows."""

    horizon: float
    keys: np.ndarray
    tau: np.ndarray
    x_at_tau: np.ndarray
    m_t: np.ndarray
    n_t: np.ndarray
    branched: np.ndarray
    root_clock: np.ndarray
    line_position: np.ndarray
    top_offsets: np.ndarray
    top_values: np.ndarray

    def __len__(self):
        return len(self.keys)

    def __getitem__(self, i: int) -> Realization:
        a, b = self.top_offsets[i], self.top_offsets[i + 1]
        return Realization(
            key=int(self.keys[i]), tau=float(self.tau[i]), x_at_tau=float(self.x_at_tau[i]),
            m_t=float(self.m_t[i]), n_t=int(self.n_t[i]),
            top_positions=tuple(float(v) for v in self.top_values[a:b]),
            branched=bool(self.branched[i]), root_clock=float(self.root_clock[i]),
            line_position=float(self.line_position[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def empty(cls, horizon: float) -> "RealizationBatch":
        z = np.empty(0)
        return cls(horizon, np.empty(0, np.uint64), z, z, z, np.empty(0, np.int64),
                   np.empty(0, bool), z, z, np.zeros(1, np.int64), z)

    @classmethod
    def concat(cls, horizon: float, parts) -> "RealizationBatch":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(horizon)
        offs = [parts[0].top_offsets]
        base = parts[0].top_offsets[-1]
        for p in parts[1:]:
            offs.append(p.top_offsets[1:] + base)
            base += p.top_offsets[-1]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(horizon, cat("keys"), cat("tau"), cat("x_at_tau"), cat("m_t"), cat("n_t"),
                   cat("branched"), cat("root_clock"), cat("line_position"),
                   np.concatenate(offs), cat("top_values"))

    def select(self, idx) -> "RealizationBatch":
        idx = np.asarray(idx, dtype=np.int64)
        lens = np.diff(self.top_offsets)[idx]
        offs = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        vals = (np.concatenate([self.top_values[self.top_offsets[i]:self.top_offsets[i + 1]] for i in idx])
                if len(idx) else np.empty(0))
        return RealizationBatch(self.horizon, self.keys[idx], self.tau[idx], self.x_at_tau[idx],
                                self.m_t[idx], self.n_t[idx], self.branched[idx],
                                self.root_clock[idx], self.line_position[idx], offs, vals)

    def to_csv(self) -> str:
        """One realization per row; top positions joined by ';'. Floats use repr."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "tau", "x_at_tau", "m_t", "n_t", "branched", "root_clock",
                    "line_position", "top_positions"])
        for i in range(len(self)):
            a, b = self.top_offsets[i], self.top_offsets[i + 1]
            w.writerow([int(self.keys[i]), repr(float(self.tau[i])), repr(float(self.x_at_tau[i])),
                        repr(float(self.m_t[i])), int(self.n_t[i]), int(self.branched[i]),
                        repr(float(self.root_clock[i])), repr(float(self.line_position[i])),
                        ";".join(repr(float(v)) for v in self.top_values[a:b])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, horizon: float) -> "RealizationBatch":
        """Inverse of :meth:`to_csv`."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:2] != ["key", "tau"]:
            raise InvalidInputError("not a realization batch CSV")
        rows = [r for r in rows[1:] if r]
        col = lambda j, dt: np.array([r[j] for r in rows], dtype=dt)  # noqa: E731
        tops = [[float(v) for v in r[8].split(";")] if r[8] else [] for r in rows]
        offs = np.concatenate([[0], np.cumsum([len(x) for x in tops])]).astype(np.int64)
        vals = np.array([v for x in tops for v in x], dtype=float)
        keys = np.array([int(r[0]) for r in rows], dtype=np.uint64)
        return cls(float(horizon), keys, col(1, float), col(2, float), col(3, float),
                   col(4, np.int64), col(5, np.int64).astype(bool), col(6, float), col(7, float),
                   offs, vals)

    def summary(self) -> dict:
        n = len(self)
        out = {"count": n, "horizon": self.horizon}
        if n:
            nt = self.n_t.astype(float)
            out.update({
                "mean_n_t": float(nt.mean()),
                "se_n_t": float(nt.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan"),
                "mean_m_t": float(self.m_t.mean()),
                "mean_root_clock": float(self.root_clock.mean()),
                "branched_fraction": float(self.branched.mean()),
            })
        return out


def _to_batch(horizon, keys, res, top_k) -> RealizationBatch:
    status, tau, xtau, mt, nt, clock, line, top = res
    if top_k > 0:
        lens = np.minimum(nt, top_k)
        offs = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        mask = np.arange(top_k)[None, :] < lens[:, None]
        vals = top[mask]
    else:
        offs = np.zeros(len(keys) + 1, np.int64)
        vals = np.empty(0)
    return RealizationBatch(horizon, keys, tau, xtau, mt, nt, tau < horizon, clock, line, offs, vals)


def _run_keys(config: SimConfig, keys, threshold=np.inf, terminals=None):
    has = terminals is not None
    term = terminals if has else np.zeros(len(keys))
    return _block(keys, float(config.horizon), float(threshold), term, has,
                  int(config.population_cap), int(config.record_top_k))


def simulate(config: SimConfig, index: int = 0) -> Realization:
    """Replica ``index`` of the stream seeded by ``config.seed``."""
    batch = simulate_batch(config, 1, start=index)
    return batch[0]


def _simulate_range(args):
    config, start, count = args
    keys = replica_keys(config.seed, DOMAIN_SIMULATE, start, count)
    res = _run_keys(config, keys)
    bad = np.flatnonzero(res[0] != OK)
    ok = len(keys) if not len(bad) else int(bad[0])
    batch = _to_batch(config.horizon, keys, res, config.record_top_k)
    return batch.select(np.arange(ok)) if len(bad) else batch, len(bad) > 0


def simulate_batch(config: SimConfig, n: int, start: int = 0, shards: int = 1) -> RealizationBatch:
    """Replicas start..start+n-1. Output does not depend on ``shards``.

    A tree exceeding the population cap raises CappedRunError whose
    ``partial`` holds the replicas completed before it.
    """
    if n < 1:
        raise InvalidInputError("n must be positive")
    ranges = [(config, s, min(BLOCK, start + n - s)) for s in range(start, start + n, BLOCK)]
    if shards > 1:
        with ProcessPoolExecutor(max_workers=shards) as ex:
            results = list(ex.map(_simulate_range, ranges))
    else:
        results = []
        for r in ranges:
            results.append(_simulate_range(r))
            if results[-1][1]:
                break
    parts = []
    for batch, capped in results:
        parts.append(batch)
        if capped:
            partial = RealizationBatch.concat(config.horizon, parts)
            raise CappedRunError(
                f"population cap {config.population_cap} exceeded after {len(partial)} replicas",
                partial,
            )
    return RealizationBatch.concat(config.horizon, parts)


# ---------------------------------------------------------------------------
# conditioning


@dataclass(frozen=True, eq=False)
class ConditionedBatch:
    accepted: RealizationBatch
    trials: int
    threshold: float
    capped: int = 0
    stages: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return len(self.accepted) / self.trials if self.trials else float("nan")

    @property
    def empty(self) -> bool:
        return len(self.accepted) == 0

    def wilson_interval(self, level: float = 0.95) -> tuple[float, float]:
        return wilson_interval(len(self.accepted), self.trials, level)

    def summary(self) -> dict:
        lo, hi = self.wilson_interval() if self.trials else (float("nan"), float("nan"))
        return {
            "threshold": self.threshold,
            "horizon": self.accepted.horizon,
            "trials": self.trials,
            "accepted": len(self.accepted),
            "acceptance_rate": self.acceptance_rate,
            "wilson_95": [lo, hi],
            "capped_trials": self.capped,
            "empty": self.empty,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _stage_draws(keys, horizon, threshold):
    """Geometric count of root-spine failures and the passing root terminal."""
    sd = math.sqrt(horizon)
    lp = float(special.log_ndtr(threshold / sd))
    u0 = uniforms(keys, 0)
    u1 = uniforms(keys, 1)
    if lp == 0.0:
        fails = np.zeros(len(keys), dtype=np.int64)
    else:
        # log(1 - p) without cancellation; counts beyond MAX_FAILS only mean "out of budget"
        log_q = math.log(-math.expm1(lp)) if lp > -LN2 else math.log1p(-math.exp(lp))
        with np.errstate(divide="ignore"):
            f = np.floor(np.log(u0) / log_q) if log_q < 0 else np.full(len(keys), np.inf)
        fails = np.minimum(f, MAX_FAILS).astype(np.int64)
    term = sd * special.ndtri_exp(np.log(u1) + lp)
    return fails, np.minimum(term, threshold)


def simulate_conditioned(config: SimConfig, threshold: float, max_trials: int,
                         target: int | None = None) -> ConditionedBatch:
    """Rejection sampling of {M_t <= threshold}.

    Stops after exactly ``max_trials`` trials or at the ``target``-th
    acceptance, whichever comes first. Trials are processed in a fixed order
    so the result is deterministic given the seed. An empty batch is a normal
    result.
    """
    if not math.isfinite(threshold):
        if threshold > 0:
            threshold = np.inf
        else:
            raise InvalidInputError("threshold must be finite or +inf")
    if max_trials < 1:
        raise InvalidInputError("max_trials must be at least 1")
    horizon = config.horizon
    trials = 0
    capped = 0
    stages = 0
    parts = []
    n_acc = 0
    start = 0
    done = False
    while not done:
        keys = replica_keys(config.seed, DOMAIN_CONDITION, start, BLOCK)
        if np.isinf(threshold):
            fails = np.zeros(BLOCK, dtype=np.int64)
            res = _run_keys(config, keys)
        else:
            fails, term = _stage_draws(keys, horizon, threshold)
            res = _run_keys(config, keys, threshold, term)
        status = res[0]
        take = []
        for j in range(BLOCK):
            if trials + int(fails[j]) >= max_trials:
                trials = max_trials
                done = True
                break
            trials += int(fails[j]) + 1
            stages += 1
            if status[j] == OK:
                take.append(j)
                n_acc += 1
            elif status[j] == CAPPED:
                capped += 1
            if (target is not None and n_acc >= target) or trials >= max_trials:
                done = True
                break
        if take:
            parts.append(_to_batch(horizon, keys, res, config.record_top_k).select(take))
        start += BLOCK
    return ConditionedBatch(RealizationBatch.concat(horizon, parts), trials, float(threshold),
                            capped, stages)


@dataclass(frozen=True)
class ProbabilityEstimate:
    estimate: float
    low: float
    high: float
    successes: int
    trials: int

    @property
    def standard_error(self) -> float:
        p = self.estimate
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.trials)


def estimate_probability(config: SimConfig, threshold: float, n: int) -> ProbabilityEstimate:
    """P(M_t <= threshold) from n trials with a 95% Wilson interval."""
    if n < 100:
        raise InvalidInputError("n must be at least 100")
    batch = simulate_conditioned(config, threshold, n)
    k = len(batch.accepted)
    lo, hi = wilson_interval(k, n)
    return ProbabilityEstimate(k / n, lo, hi, k, n)

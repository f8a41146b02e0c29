import math

import numpy as np
import pytest
from scipy import stats

from bbmlab.errors import CappedRunError, InvalidInputError
from bbmlab.sim.bbm import (
    RealizationBatch,
    SimConfig,
    estimate_probability,
    simulate,
    simulate_batch,
    simulate_conditioned,
    wilson_interval,
)


@pytest.fixture(scope="module")
def batch_t2():
    return simulate_batch(SimConfig(horizon=2.0, seed=42, record_top_k=8), 20000)


@pytest.mark.parametrize("kw", [dict(horizon=0.0), dict(horizon=math.inf), dict(population_cap=0),
                                dict(record_top_k=-1), dict(seed=-1), dict(seed=2**64)])
def test_config_validation(kw):
    args = dict(horizon=1.0, seed=1)
    args.update(kw)
    with pytest.raises(InvalidInputError):
        SimConfig(**args)


def test_deterministic_and_indexed():
    cfg = SimConfig(horizon=1.5, seed=9)
    a = simulate_batch(cfg, 20)
    b = simulate_batch(cfg, 20)
    assert a.to_csv() == b.to_csv()
    assert simulate(cfg, 7).m_t == a[7].m_t
    tail = simulate_batch(cfg, 10, start=5)
    assert tail.to_csv() == a.select(np.arange(5, 15)).to_csv()
    assert simulate_batch(SimConfig(horizon=1.5, seed=10), 20).to_csv() != a.to_csv()


def test_shard_invariance():
    cfg = SimConfig(horizon=0.3, seed=5, record_top_k=2)
    n = 70000  # spans three blocks
    assert simulate_batch(cfg, n, shards=2).to_csv() == simulate_batch(cfg, n).to_csv()


def test_population_mean(batch_t2):
    # n_t is geometric with mean e^t and variance e^{2t}(1 - e^{-t})
    t = 2.0
    se = math.sqrt(math.exp(2 * t) * (1 - math.exp(-t)) / len(batch_t2))
    assert abs(batch_t2.n_t.mean() - math.exp(t)) < 4 * se


def test_root_clock_and_tau(batch_t2):
    b = batch_t2
    assert np.array_equal(b.tau, np.minimum(b.root_clock, 2.0))
    assert np.array_equal(b.branched, b.root_clock < 2.0)
    assert stats.kstest(b.root_clock, "expon").pvalue > 1e-3
    # without a branching the single particle sits at X(t) = M_t
    nb = ~b.branched
    assert np.array_equal(b.x_at_tau[nb], b.m_t[nb])
    assert np.all(b.n_t[nb] == 1)


def test_line_is_brownian(batch_t2):
    assert stats.kstest(batch_t2.line_position / math.sqrt(2.0), "norm").pvalue > 1e-3
    assert np.all(batch_t2.m_t >= batch_t2.line_position)


def test_top_positions(batch_t2):
    for r in list(batch_t2)[:500]:
        assert len(r.top_positions) == min(r.n_t, 8)
        assert r.top_positions[0] == r.m_t
        assert list(r.top_positions) == sorted(r.top_positions, reverse=True)


def test_csv_roundtrip(batch_t2):
    part = batch_t2.select(np.arange(300))
    back = RealizationBatch.from_csv(part.to_csv(), 2.0)
    assert back.to_csv() == part.to_csv()
    assert np.array_equal(back.keys, part.keys) and np.array_equal(back.m_t, part.m_t)
    with pytest.raises(InvalidInputError):
        RealizationBatch.from_csv("a,b\n1,2\n", 2.0)


def test_summary(batch_t2):
    s = batch_t2.summary()
    assert s["count"] == 20000 and s["mean_n_t"] == pytest.approx(batch_t2.n_t.mean())
    assert RealizationBatch.empty(1.0).summary() == {"count": 0, "horizon": 1.0}


def test_capped_run_keeps_partial():
    cfg = SimConfig(horizon=6.0, seed=3, population_cap=50)
    with pytest.raises(CappedRunError) as exc:
        simulate_batch(cfg, 200)
    part = exc.value.partial
    assert 0 <= len(part) < 200
    full = simulate_batch(SimConfig(horizon=6.0, seed=3), len(part) + 1)
    assert np.array_equal(part.m_t, full.m_t[: len(part)])
    assert full.n_t[len(part)] > 50


def test_conditioned_respects_threshold():
    cfg = SimConfig(horizon=2.0, seed=4)
    c = simulate_conditioned(cfg, -0.5, max_trials=50000)
    assert len(c.accepted) > 0 and np.all(c.accepted.m_t <= -0.5)
    assert c.trials == 50000 and c.stages <= c.trials
    again = simulate_conditioned(cfg, -0.5, max_trials=50000)
    assert again.accepted.to_csv() == c.accepted.to_csv()
    lo, hi = c.wilson_interval()
    assert lo < c.acceptance_rate < hi
    assert c.summary()["accepted"] == len(c.accepted)


def test_conditioned_law_matches_filtering():
    # the spine construction must give the law of an unconditioned tree restricted to {M_t <= x}
    cfg = SimConfig(horizon=1.0, seed=8)
    cond = simulate_conditioned(cfg, 0.0, max_trials=10**6, target=5000)
    free = simulate_batch(cfg, 40000)
    kept = free.m_t[free.m_t <= 0.0]
    assert len(cond.accepted) == 5000
    assert stats.ks_2samp(cond.accepted.m_t, kept).pvalue > 1e-3
    assert stats.ks_2samp(cond.accepted.n_t, free.n_t[free.m_t <= 0.0]).pvalue > 1e-3
    assert stats.ks_2samp(cond.accepted.tau, free.tau[free.m_t <= 0.0]).pvalue > 1e-3


def test_conditioned_thresholds():
    cfg = SimConfig(horizon=1.0, seed=2)
    c = simulate_conditioned(cfg, math.inf, max_trials=100)
    assert len(c.accepted) == 100 and c.trials == 100
    with pytest.raises(InvalidInputError):
        simulate_conditioned(cfg, -math.inf, max_trials=10)
    with pytest.raises(InvalidInputError):
        simulate_conditioned(cfg, 0.0, max_trials=0)
    # far below the front nothing is accepted; an empty batch is a normal result
    e = simulate_conditioned(cfg, -12.0, max_trials=1000)
    assert e.empty and e.trials == 1000 and e.summary()["wilson_95"][0] == 0.0


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (500, 1000), (10, 10)])
def test_wilson_closed_form(k, n):
    z = stats.norm.ppf(0.975)
    p = k / n
    c = (p + z * z / (2 * n)) / (1 + z * z / n)
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(max(c - h, 0.0), abs=1e-12)
    assert hi == pytest.approx(min(c + h, 1.0), abs=1e-12)


def test_estimate_probability(field_t3):
    cfg = SimConfig(horizon=3.0, seed=12)
    with pytest.raises(InvalidInputError):
        estimate_probability(cfg, 0.0, 99)
    est = estimate_probability(cfg, 0.0, 20000)
    assert est.low < est.estimate < est.high and est.trials == 20000
    assert abs(est.estimate - field_t3.u_at(0.0, 3.0)) < 4 * est.standard_error
    small = estimate_probability(cfg, 0.0, 5000)
    # interval width scales like n^{-1/2}
    ratio = (small.high - small.low) / (est.high - est.low)
    assert ratio == pytest.approx(2.0, rel=0.1)


def test_estimate_probability_bullets(field_t3):
    cfg = SimConfig(horizon=3.0, seed=77, record_top_k=0)
    sure = estimate_probability(cfg, math.inf, 1000)
    assert sure.estimate == 1.0 and sure.high == 1.0 and sure.low > 0.99
    est = estimate_probability(cfg, -1.0, 20000)
    assert est.low <= field_t3.u_at(-1.0, 3.0) <= est.high
    doubled = estimate_probability(cfg, -1.0, 40000)
    ratio = (doubled.high - doubled.low) / (est.high - est.low)
    assert ratio == pytest.approx(1 / math.sqrt(2), rel=0.2)


def test_acceptance_monotone_in_threshold():
    cfg = SimConfig(horizon=3.0, seed=78, record_top_k=0)
    rates = [estimate_probability(cfg, z, 5000).estimate for z in (2.0, 1.0, 0.0, -1.0, -2.0, -3.0)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    # on one unconditioned sample the counts are monotone path by path
    m = simulate_batch(cfg, 5000).m_t
    counts = [int(np.sum(m <= z)) for z in np.linspace(3.0, -3.0, 25)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))

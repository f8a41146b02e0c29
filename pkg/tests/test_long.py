"""Checks on the long (t=40 and beyond) fields shared with the acceptance suite."""
import json
import math
import warnings

import numpy as np
import pytest
from scipy.special import ndtr

from bbmlab.cli import EXIT_OK, main
from bbmlab.config import SCHEMA
from bbmlab.core import GAMMA, SQRT2, bramson_centering, c2_from_c1, classify_regime
from bbmlab.fkpp.branching import conditional_first_branch, log_u1
from bbmlab.fkpp.field import SpaceTimeGrid
from bbmlab.fkpp.wave import extract_wave, fit_bramson_offset, front_position
from bbmlab.sim.bbm import SimConfig, simulate_conditioned
from bbmlab.verify.conditional import asymptotic_layer, ks_statistic
from bbmlab.verify.diagnostics import (
    moderate_deviation_check,
    ratio_diagnostic_critical,
    ratio_diagnostic_low,
)
from bbmlab.verify.report import PASS
from conftest import OFFSET_TIMES, quiet_fd

pytestmark = pytest.mark.acceptance


def by_name(reps):
    return {r.name: r for r in reps}


def test_profile_self_convergence(fd40):
    f = fd40["coarse"]
    z = np.linspace(-3.0, 3.0, 601)
    assert np.max(np.abs(extract_wave(f, 20.0)(z) - extract_wave(f, 40.0)(z))) <= 5e-3


def test_front_tracks_bramson_centering(moving):
    front = front_position(moving["coarse"], 0.5)
    d40 = front(40.0) - bramson_centering(40.0)
    d60 = front(60.0) - bramson_centering(60.0)
    assert abs(d40 - d60) <= 0.2
    assert front(40.0) == pytest.approx(bramson_centering(40.0) + d40)
    # the log correction makes front/t approach sqrt 2 slowly
    assert abs(front(400.0) / 400.0 - SQRT2) <= 0.02 * SQRT2


@pytest.mark.xfail(strict=True, reason="front/t at t=60 is within 7% of sqrt 2, not 2%; "
                                       "the -(3/(2 sqrt2)) log t / t term alone is 5%")
def test_front_speed_at_t60(moving):
    assert abs(front_position(moving["coarse"], 0.5)(60.0) / 60.0 - SQRT2) <= 0.02 * SQRT2


def test_atom_trend(du40, phi_m1):
    target = 1.0 / phi_m1.value  # 1/(-alpha Phi) at alpha = -1
    gaps = []
    for t in (10.0, 20.0, 30.0):
        z = -SQRT2 * t
        share = math.exp(log_u1(z, t) - float(du40.logu_at(z, t)))
        gaps.append(abs(share / target - 1.0))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 0.10


def test_low_ratio(du40, phi_m1):
    reps = by_name(ratio_diagnostic_low(du40, -1.0, phi_m1.value, [10.0, 20.0, 30.0], limits=(0.8, 1.25)))
    for name in ("R_last_in_band", "toward_one[t=20]", "toward_one[t=30]", "exponent", "no_branch_share"):
        assert reps[f"low[alpha=-1].{name}"].verdict == PASS, name
    assert reps["low[alpha=-1].exponent"].empirical == pytest.approx(2.0, abs=0.03)


def test_near_critical_window(du40, c1):
    reps = by_name(ratio_diagnostic_critical(du40, c2_from_c1(c1), [20.0, 30.0, 40.0]))
    r = reps["critical.near_critical[t=40]"]
    assert r.verdict == PASS and 0.5 <= r.empirical <= 2.0


def test_moderate_slope(du40, c1):
    reps = by_name(moderate_deviation_check(du40, c1, 40.0, [4.0, 5.0, 6.0, 7.0, 8.0]))
    assert reps["moderate.log_slope"].verdict == PASS
    assert reps["moderate.log_slope"].empirical == pytest.approx(-SQRT2 * GAMMA, abs=0.05)


def conditional_mass(cb, mask):
    s, v = cb.s_marginal.grid, cb.s_marginal.values
    return np.trapezoid(np.where(mask(s), v, 0.0), s) / (cb.atom + np.trapezoid(v, s))


def test_concentration_high(crit40):
    t = 30.0
    p = classify_regime(0.0)
    cb = conditional_first_branch(crit40, 0.0, t)
    lo, hi = p.v_alpha * t - 6 * math.sqrt(t), p.v_alpha * t + 6 * math.sqrt(t)
    assert conditional_mass(cb, lambda s: (s < lo) | (s > hi)) <= 0.01


def test_concentration_low(crit40):
    t = 30.0
    cb = conditional_first_branch(crit40, -SQRT2 * t, t)
    assert conditional_mass(cb, lambda s: t - s > 20.0) <= 0.05


@pytest.fixture(scope="module")
def moderate_t6():
    t, a = 6.0, 2.0
    field = quiet_fd(SpaceTimeGrid(-30.0, 30.0, 0.02, 0.01, t), store_every=0.02, ramp_stride=10)
    batch = simulate_conditioned(SimConfig(horizon=t, seed=4242, record_top_k=0),
                                 bramson_centering(t) - a, max_trials=10**9, target=10**4)
    return field, batch, a


def test_moderate_tau_sampler_matches_exact_law(moderate_t6):
    # the sampled first-branch time agrees with the solver's exact law, so any
    # gap to the Gaussian limit below belongs to the finite-t law itself
    field, batch, a = moderate_t6
    t = batch.accepted.horizon
    cb = conditional_first_branch(field, bramson_centering(t) - a, t)
    # tau = t carries the no-branching atom
    left = lambda x: np.where(x < t, cb.tau_cdf(x), np.where(x > t, 1.0, 1.0 - cb.atom))  # noqa: E731
    assert ks_statistic(batch.accepted.tau, cb.tau_cdf, cdf_left=left) <= 0.02
    x = np.linspace(-4.0, 4.0, 2001)
    exact = np.max(np.abs(cb.tau_cdf(a / 2 + x * math.sqrt(a / 8)) - ndtr(x)))
    sampled = by_name(asymptotic_layer(batch, a=a))["limit.moderate.ks_tau_gauss"].empirical
    assert sampled == pytest.approx(exact, abs=0.02)


@pytest.mark.xfail(strict=True, reason="at t=6, a=2 the exact law of (tau - a/2)/sqrt(a/8) is "
                                       "0.28 from N(0,1) in KS; the limit needs a larger a")
def test_moderate_tau_gaussian_mode(moderate_t6):
    _, batch, a = moderate_t6
    r = by_name(asymptotic_layer(batch, a=a))["limit.moderate.ks_tau_gauss"]
    assert r.empirical <= 0.15


def cli_solve(tmp_path, name, z_min, z_max, t_max, store, extra=""):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(f"[meta]\nschema = {SCHEMA}\ncommand = solve\n[solve]\nscheme = fd\n"
                   f"store_every = {store}\n{extra}[grid]\nz_min = {z_min}\nz_max = {z_max}\n"
                   f"dz = 0.02\ndt = 0.01\nt_max = {t_max}\n")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert main(["solve", "--config", str(cfg), "--out-dir", str(tmp_path / name)]) == EXIT_OK
    return tmp_path / name / "field"


def test_cli_constants_table(tmp_path, moving, c1):
    fd40 = cli_solve(tmp_path, "fd40", -150, 100, 40, 0.5)
    phi = cli_solve(tmp_path, "phi", -70, 50, 15, 0.05, extra="ramp_stride = 10\n")
    offset = fit_bramson_offset(moving["coarse"], OFFSET_TIMES).offset
    wave = tmp_path / "wave.ini"
    wave.write_text(f"[meta]\nschema = {SCHEMA}\n[wave]\nt = 40\nfield = {fd40}\noffset = {offset!r}\n")
    assert main(["wave", "--config", str(wave), "--out-dir", str(tmp_path / "w")]) == EXIT_OK
    cons = tmp_path / "constants.ini"
    cons.write_text(f"[meta]\nschema = {SCHEMA}\n[constants]\nalphas = 0, -0.3, -1, -2\n"
                    f"wave = {tmp_path / 'w' / 'wave.json'}\nphi_field = {phi}\n")
    assert main(["constants", "--config", str(cons), "--out-dir", str(tmp_path / "k")]) == EXIT_OK
    out = json.loads((tmp_path / "k" / "constants.json").read_text())
    assert out["validation"] == "ok"
    rows = {r["alpha"]: r for r in out["rows"]}
    assert rows[-1.0]["psi"] == -2.0
    assert len({r["c2"] / r["c1"] for r in rows.values()}) == 1
    # the coarse wave's C1 is within 1% of the fine-resolution value
    assert rows[0.0]["c1"] == pytest.approx(c1, rel=0.01)
    assert rows[-1.0]["phi"] > 1.0 and rows[-1.0]["phi_truncation"] <= 1e-3
    assert rows[0.0]["phi"] is None

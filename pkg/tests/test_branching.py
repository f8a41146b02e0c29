import math

import numpy as np
import pytest
from scipy import integrate, special

from bbmlab.errors import CoverageError, DomainError, PrecisionError
from bbmlab.fkpp.branching import conditional_first_branch, first_branch_density, log_u1
from bbmlab.fkpp.field import SolutionField, SpaceTimeGrid


def test_log_u1():
    assert log_u1(0.5, 2.0) == pytest.approx(-2.0 + math.log(special.ndtr(0.5 / math.sqrt(2))), rel=1e-14)
    # at z = -sqrt2 t the Mills ratio gives sqrt(t) e^{2t} U1 -> 1/sqrt(4 pi), error ~ 1/(2t)
    t = 20.0
    val = math.sqrt(t) * math.exp(2 * t + log_u1(-math.sqrt(2) * t, t))
    assert val == pytest.approx(1 / math.sqrt(4 * math.pi), rel=0.05)
    assert math.isfinite(log_u1(-200.0, 5.0))


def test_density_matches_field(field_t3):
    z, t, s = 0.0, 3.0, 1.0
    y = np.linspace(-3, 3, 7)
    d = first_branch_density(field_t3, z, t, s, y)
    ref = np.exp(-s) * np.exp(-y * y / (2 * s)) / math.sqrt(2 * math.pi * s) * field_t3.u_at(z - y, t - s) ** 2
    assert d == pytest.approx(ref, rel=1e-12)
    with pytest.raises(DomainError):
        first_branch_density(field_t3, z, t, 3.0, y)


@pytest.mark.parametrize("z", [-3.0, 0.0, 15.0])
def test_conditional_law(field_t3, z):
    c = conditional_first_branch(field_t3, z, 3.0)
    # the first-branch decomposition reproduces u(z, t) from the field itself
    assert c.discrepancy < 1e-3
    mass = np.trapezoid(c.s_marginal.values, c.s_marginal.grid)
    assert c.atom + mass == pytest.approx(1.0, abs=1e-12)
    s = np.linspace(0, 3.5, 200)
    tc = c.tau_cdf(s)
    assert np.all(np.diff(tc) >= 0) and tc[0] == 0.0 and tc[-1] == 1.0
    assert c.tau_cdf(np.array([3.0 - 1e-9]))[0] == pytest.approx(1 - c.atom, abs=1e-6)
    x = np.linspace(-12, 20, 300)
    xc = c.x_cdf(x)
    assert np.all(np.diff(xc) >= -1e-12)
    assert xc[-1] == pytest.approx(1.0, abs=1e-9)
    assert c.y_given_s(1.0).normalization == 1.0


def test_atom_limit(field_t3):
    # far right of the front u ~ 1 and the atom is the no-branching probability
    c = conditional_first_branch(field_t3, 15.0, 3.0)
    assert c.atom == pytest.approx(math.exp(-3.0), rel=1e-4)


def test_tau_marginal_quadrature(field_t3):
    # the density of tau at s integrates e^{-s} phi(y; s) u(z - y, t - s)^2 over y
    z, t, s = 0.0, 3.0, 1.0
    c = conditional_first_branch(field_t3, z, t)
    y = np.linspace(-12, 12, 24001)
    val = integrate.trapezoid(first_branch_density(field_t3, z, t, s, y), y)
    ref = val / math.exp(c.log_u_total)
    got = np.interp(s, c.s_marginal.grid, c.s_marginal.values)
    assert got == pytest.approx(ref, rel=1e-3)


def test_guards(field_t3, field_t8):
    with pytest.raises(CoverageError):
        conditional_first_branch(field_t3, 0.0, 2.995)
    with pytest.raises(CoverageError):
        conditional_first_branch(field_t8, 0.0, 4.0)
    grid = SpaceTimeGrid(-3.0, 3.0, 0.5, 0.01, 1.0)
    tiny = SolutionField(grid=grid, times=np.array([0.01, 1.0]), origins=np.full(2, -3.0),
                         logu=np.full((2, grid.n_nodes), -1000.0), scheme="fd")
    with pytest.raises(PrecisionError):
        conditional_first_branch(tiny, 0.0, 1.0)


@pytest.mark.parametrize("s", [0.3, 1.0, 2.5])
def test_y_slice_mass(field_t3, s):
    z, t = 0.5, 3.0
    y = np.linspace(-8 * math.sqrt(s), 8 * math.sqrt(s), 8001)
    mass = np.trapezoid(first_branch_density(field_t3, z, t, s, y), y)
    # e^{-s} E[u(z - B_s, t - s)^2] by Simpson's rule on a finer grid over the Gaussian law of B_s
    x = np.linspace(-8, 8, 40001)
    g = np.exp(-x * x / 2) * field_t3.u_at(z - math.sqrt(s) * x, t - s) ** 2
    ref = math.exp(-s) * integrate.simpson(g, x=x) / math.sqrt(2 * math.pi)
    assert mass == pytest.approx(ref, rel=1e-6)
    assert mass <= math.exp(-s)

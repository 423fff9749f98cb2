import math

import numpy as np
import pytest

from kacsim.kernel import KernelSpec, maxwell_angular_moment
from kacsim.quadrature import theta_rule
from kacsim.weakform import (EmpiricalFlow, a_bar, a_bar_row_means, a_sym, a_sym_pair_mean, check_gradient,
                             constant, coordinate, energy, gaussian_bump, linear, martingale_residual, quartic,
                             weak_residual, _numeric_average)


SPECS = [KernelSpec(gamma=-1.0, eps=0.0), KernelSpec(gamma=-1.5, nu=0.7, eps=0.0), KernelSpec(gamma=-1.0, eps=0.05)]


def pair(rng):
    return rng.standard_normal(3), rng.standard_normal(3)


@pytest.mark.parametrize("spec", SPECS)
def test_collision_invariants_vanish(spec, rng):
    for _ in range(5):
        v, vs = pair(rng)
        scale = 1.0 + v @ v + vs @ vs
        for phi in [constant(), coordinate(0), coordinate(1), coordinate(2), energy()]:
            assert abs(a_sym(phi, v, vs, spec)) <= 1e-10 * scale * spec.b


@pytest.mark.parametrize("spec", SPECS[:2])
def test_linear_a_bar_is_momentum_transfer(spec, rng):
    # one-sided operator on v.e: the compensator leaves -b |z|^gamma z.e
    v, vs = pair(rng)
    e = rng.standard_normal(3)
    z = v - vs
    ex = -spec.b * np.linalg.norm(z) ** spec.gamma * (z @ e)
    assert a_bar(linear(e), v, vs, spec) == pytest.approx(ex, rel=1e-10)
    assert abs(a_sym(linear(e), v, vs, spec)) < 1e-12 * abs(ex) + 1e-14


def test_energy_a_bar_closed_form(rng):
    spec = KernelSpec(gamma=-1.0, eps=0.05)
    v, vs = pair(rng)
    r = np.linalg.norm(v - vs)
    ex = (0.05 ** 2 + r * r) ** -0.5 * spec.b_eps * (vs @ vs - v @ v)
    assert a_bar(energy(), v, vs, spec) == pytest.approx(ex, rel=1e-10)


def test_maxwell_quartic_identity(rng):
    spec = KernelSpec(gamma=0.0, nu=0.3, eps=0.02)
    lam = maxwell_angular_moment(spec)
    for _ in range(5):
        v, w = pair(rng)
        s, t, d = v @ v, w @ w, v @ w
        ex = lam / 4 * ((s + t) ** 2 - 4 * d * d - 3 * (s - t) ** 2)
        assert a_sym(quartic(), v, w, spec) == pytest.approx(ex, rel=1e-9, abs=1e-9)


def test_symmetrization(rng):
    spec = SPECS[0]
    phi = gaussian_bump((0.3, 0.0, -0.2), 0.7)
    v, vs = pair(rng)
    assert a_sym(phi, v, vs, spec) == pytest.approx(0.5 * (a_bar(phi, v, vs, spec) + a_bar(phi, vs, v, spec)),
                                                    rel=1e-14)


def test_bump_average_matches_numeric(rng):
    spec = SPECS[0]
    phi = gaussian_bump((0.5, 0.1, 0.0), 1.3)
    v = rng.standard_normal((6, 3))
    vs = rng.standard_normal((6, 3))
    th, _ = theta_rule(spec, 8)
    assert np.allclose(phi.phi_average(v, vs, th), _numeric_average(phi, v, vs, th, 64), atol=1e-13)


def test_gradients_are_consistent(rng):
    pts = rng.standard_normal((20, 3))
    for phi in [energy(), quartic(), gaussian_bump((0.1, 0.2, 0.3), 2.0), linear([1.0, -2.0, 0.5])]:
        assert check_gradient(phi, pts) < 1e-6


def test_singular_bound_scaling(rng):
    # |A phi| <= C |z|^(2 + gamma) for close pairs
    spec = KernelSpec(gamma=-1.5, eps=0.0)
    phi = gaussian_bump((0.2, 0.0, 0.0), 1.0)
    v = rng.standard_normal(3)
    e = rng.standard_normal(3)
    e /= np.linalg.norm(e)
    ratios = [abs(a_sym(phi, v, v - h * e, spec)) / h ** 0.5 for h in (1e-1, 1e-2, 1e-3)]
    assert max(ratios) < 10 * min(ratios) + 1e-12


def test_coincident_pair_rejected_without_regularization():
    with pytest.raises(ValueError):
        a_bar(energy(), np.zeros(3), np.zeros(3), KernelSpec(gamma=-1.0, eps=0.0))
    assert a_bar(energy(), np.zeros(3), np.zeros(3), KernelSpec(gamma=-1.0, eps=0.05)) == 0.0


def test_pair_mean_and_row_means(rng):
    spec = KernelSpec(gamma=-1.0, eps=0.05)
    x = rng.standard_normal((30, 3))
    phi = gaussian_bump((0.0, 0.0, 0.0), 1.0)
    brute = np.mean([a_sym(phi, x[i], x[j], spec, order=16, m_phi=16)
                     for i in range(30) for j in range(30) if i != j])
    assert a_sym_pair_mean(phi, x, spec) == pytest.approx(brute, rel=1e-12)
    rows = a_bar_row_means(phi, x, spec)
    assert rows.mean() == pytest.approx(brute, rel=1e-12)


def test_residual_of_invariant_is_zero(rng):
    spec = KernelSpec(gamma=-1.0, eps=0.05)
    x = rng.standard_normal((20, 3))
    flow = EmpiricalFlow(np.array([0.0, 0.5, 1.0]), np.stack([x, x, x]))
    assert weak_residual(flow, energy(), spec, 1.0) == pytest.approx(0.0, abs=1e-10)
    bump = gaussian_bump((0.0, 0.0, 0.0), 1.0)
    # a frozen flow leaves only the drift integral
    drift = a_sym_pair_mean(bump, x, spec)
    assert weak_residual(flow, bump, spec, 1.0) == pytest.approx(-drift, rel=1e-12)


def test_martingale_residual_api(rng):
    spec = KernelSpec(gamma=-1.0, eps=0.05)
    flows = [EmpiricalFlow(np.array([0.0, 1.0]), rng.standard_normal((2, 10, 3))) for _ in range(3)]
    mean, se = martingale_residual(flows, constant(), spec, 0.0, 1.0)
    assert mean == 0.0 and se == 0.0
    with pytest.raises(ValueError):
        martingale_residual(flows, constant(), spec, 1.0, 1.0)


def test_flow_validation():
    with pytest.raises(ValueError):
        EmpiricalFlow(np.array([0.0, 0.0]), np.zeros((2, 4, 3)))
    with pytest.raises(ValueError):
        EmpiricalFlow(np.array([0.0]), np.zeros((2, 4, 3)))
    fl = EmpiricalFlow(np.array([0.0, 0.5]), np.zeros((2, 4, 3)))
    with pytest.raises(KeyError):
        fl.at(0.25)

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from kacsim.engine import (ConservationError, EngineConfig, InitialCondition, SystemState, _check_audit,
                           initial_velocities, replica_rng, run, run_replicas, step, total_proposal_rate)
from kacsim.estimators import moments
from kacsim.kernel import KernelSpec, alpha_eps, angular_cdf

SMALL = EngineConfig(n_particles=64, t_final=0.5, seed=3, snapshot_times=(0.25,))


def test_runs_are_reproducible():
    a, b = run(SMALL), run(SMALL)
    assert np.array_equal(a.flow.snapshots, b.flow.snapshots)
    assert a.n_proposals == b.n_proposals and a.n_collisions == b.n_collisions
    c = run(replace(SMALL, seed=4))
    assert not np.array_equal(a.flow.snapshots[-1], c.flow.snapshots[-1])


def test_replica_streams_do_not_depend_on_batch():
    batch = run_replicas(SMALL, 2, first=1)
    assert np.array_equal(batch[1].flow.snapshots, run(SMALL, replica=2).flow.snapshots)
    assert not np.array_equal(batch[0].flow.snapshots[-1], batch[1].flow.snapshots[-1])


def test_conservation_small():
    res = run(replace(SMALL, t_final=2.0, snapshot_times=()))
    for rec in res.audit:
        assert rec["momentum_drift"] <= 1e-12 and rec["energy_drift"] <= 1e-12


def test_snapshot_times_always_contain_ends():
    res = run(SMALL)
    assert list(res.flow.times) == [0.0, 0.25, 0.5]
    only0 = run(replace(SMALL, t_final=0.0, snapshot_times=()))
    assert list(only0.flow.times) == [0.0] and only0.n_proposals == 0


def test_proposal_count_is_poisson():
    cfg = replace(SMALL, n_particles=256, t_final=1.0, snapshot_times=())
    lam = total_proposal_rate(cfg)
    counts = [run(cfg, r).n_proposals for r in range(4)]
    for c in counts:
        assert abs(c - lam) < 5 * math.sqrt(lam)


def test_maxwell_kernel_accepts_every_proposal():
    cfg = replace(SMALL, kernel=KernelSpec(gamma=0.0, nu=0.5, eps=0.05))
    res = run(cfg)
    assert res.n_collisions == res.n_proposals > 0


def two_particle(kernel, eps_dom=None, t=40.0, seed=0):
    # the relative speed of an isolated pair is constant, so the acceptance rate is too
    cfg = EngineConfig(n_particles=2, kernel=kernel, t_final=t, seed=seed, event_log=True, eps_dominating=eps_dom,
                       init=InitialCondition(normalize=False))
    res = run(cfg)
    v = res.flow.snapshots[0]
    return res, float(np.linalg.norm(v[0] - v[1]))


def test_thinning_acceptance_probability():
    spec = KernelSpec(gamma=-1.0, eps=0.05)
    res, r = two_particle(spec)
    p = float(alpha_eps(spec, r)) / spec.alpha_sup
    n = res.n_proposals
    assert abs(res.n_collisions / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_eps_dominating_preserves_the_law():
    # thinning against a smaller eps must accept with the capped density of the larger eps
    spec = KernelSpec(gamma=-1.0, nu=0.25, eps=0.2)
    res, r = two_particle(spec, eps_dom=0.05, t=30.0)
    ev = res.events
    acc = ev["theta"][ev["accepted"]]
    assert stats.kstest(acc, lambda x: angular_cdf(spec, x)).pvalue > 1e-3
    rate = res.n_collisions / 30.0
    expect = float(alpha_eps(spec, r)) * spec.angular_mass_eps  # one pair, both orders
    assert abs(rate - expect) < 5 * math.sqrt(expect / 30.0)


def test_event_log_is_time_ordered_and_consistent():
    res = run(replace(SMALL, event_log=True))
    ev = res.events
    assert np.all(np.diff(ev["t"]) >= 0) and ev["t"][-1] <= SMALL.t_final
    assert ev["t"].size == res.n_proposals
    assert int(ev["accepted"].sum()) == res.n_collisions
    assert np.all(ev["i"] != ev["j"])


def test_step_matches_conservation(rng):
    cfg = SMALL
    state = SystemState(initial_velocities(cfg.init, cfg.n_particles, replica_rng(0)))
    g = replica_rng(0, 1)
    for _ in range(200):
        step(state, cfg, g)
    assert state.n_proposals == 200
    assert abs(np.sum(state.velocities ** 2) - state.energy0) < 1e-11 * state.energy0


@pytest.mark.parametrize("kind", ["standard_gaussian", "two_bump", "shell"])
def test_normalized_initial_data(kind):
    v = initial_velocities(InitialCondition(kind=kind), 1000, replica_rng(1))
    m2, m4, mean = moments(v)
    assert np.allclose(mean, 0.0, atol=1e-14) and m2 == pytest.approx(3.0, rel=1e-13)
    if kind == "shell":
        assert m4 == pytest.approx(9.0, rel=1e-2)  # centering perturbs the radii at O(1/sqrt(n))


def test_two_bump_unnormalized_moments():
    ic = InitialCondition(kind="two_bump", normalize=False, separation=2.0, mix=0.3)
    v = initial_velocities(ic, 200_000, replica_rng(2))
    m2, _, mean = moments(v)
    assert abs(mean[0]) < 0.01 and m2 == pytest.approx(3.0, rel=0.01)


def test_custom_samples(tmp_path):
    data = np.random.default_rng(0).standard_normal((10, 3))
    np.savetxt(tmp_path / "v.txt", data)
    ic = InitialCondition(kind="custom_samples", path=str(tmp_path / "v.txt"), normalize=False)
    assert np.array_equal(initial_velocities(ic, 10, replica_rng(0)), data)
    with pytest.raises(ValueError):
        InitialCondition(kind="custom_samples")


def test_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(kernel=KernelSpec(eps=0.0))
    with pytest.raises(ValueError):
        EngineConfig(t_final=1.0, snapshot_times=(0.5, 0.2))
    with pytest.raises(ValueError):
        EngineConfig(kernel=KernelSpec(eps=0.05), eps_dominating=0.1)
    with pytest.raises(ValueError):
        EngineConfig(n_particles=1)


def test_audit_breach_raises():
    with pytest.raises(ConservationError):
        _check_audit({"t": 1.0, "momentum_drift": 1e-6, "energy_drift": 0.0, "finite": True})
    with pytest.raises(ConservationError):
        _check_audit({"t": 1.0, "momentum_drift": 0.0, "energy_drift": 0.0, "finite": False})

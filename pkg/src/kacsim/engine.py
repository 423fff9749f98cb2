"""Event-driven simulation of the regularized Kac particle system.

Every ordered pair ``(i, j)`` collides at rate ``B_eps(v_i - v_j, sigma) /
(2(N-1))``.  The engine uses thinning: proposals arrive at the constant total
rate ``Lambda = (N/2) eps_dom**gamma * angular_mass(eps_dom)``; a proposal picks
an ordered pair uniformly, a deflection angle from the capped angular law at
``eps_dom`` and a uniform azimuth, and is accepted with probability

    alpha_eps(|v_i - v_j|) / eps_dom**gamma  *  beta_eps(theta) / beta_eps_dom(theta).

``eps_dom`` defaults to ``eps``, in which case the second factor is 1.  Runs at
different ``eps`` that share ``eps_dom`` and the seed consume identical random
streams and are therefore synchronously coupled.

Randomness is drawn in fixed-size blocks from a numpy ``Generator`` seeded by
``SeedSequence(seed, spawn_key=(replica,))``, so each replica is reproducible
bit for bit and independent of the other replicas.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .geometry import _collide_nb
from .kernel import KernelSpec, sample_theta
from .weakform import EmpiricalFlow

__all__ = [
    "InitialCondition",
    "EngineConfig",
    "SystemState",
    "RunResult",
    "ConservationError",
    "ReplicaFailure",
    "initial_velocities",
    "replica_rng",
    "total_proposal_rate",
    "step",
    "run",
    "run_replicas",
    "conservation_audit",
]

log = logging.getLogger(__name__)

BLOCK = 1 << 16
DRIFT_TOL = 1e-9


class ConservationError(RuntimeError):
    """Raised when the invariant audit detects drift or a non-finite velocity."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class InitialCondition:
    """Initial velocity law.

    ``kind`` is one of ``standard_gaussian``, ``two_bump``, ``shell``,
    ``custom_samples``.  ``two_bump`` is the zero-mean, unit-temperature
    mixture ``mix N(a e1, tau^2 I) + (1 - mix) N(-b e1, tau^2 I)`` with
    ``a + b = separation``; ``shell`` is uniform on the sphere of radius
    ``sqrt(3)``.  With ``normalize`` the sample is shifted and rescaled so that
    its mean is 0 and ``(1/N) sum |v|^2 = 3``.
    """

    kind: str = "standard_gaussian"
    separation: float = 2.5
    mix: float = 0.5
    path: Optional[str] = None
    normalize: bool = True

    KINDS = ("standard_gaussian", "two_bump", "shell", "custom_samples")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown initial condition {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "two_bump":
            if not 0.0 < self.mix < 1.0:
                raise ValueError("two_bump mix must lie in (0, 1)")
            if self.bump_variance <= 0.0:
                raise ValueError("two_bump separation too large for unit temperature")
        if self.kind == "custom_samples" and not self.path:
            raise ValueError("custom_samples needs a path")

    @property
    def bump_centers(self):
        a = (1.0 - self.mix) * self.separation
        b = self.mix * self.separation
        return a, -b

    @property
    def bump_variance(self) -> float:
        return 1.0 - self.mix * (1.0 - self.mix) * self.separation ** 2 / 3.0


@dataclass(frozen=True)
class EngineConfig:
    n_particles: int = 1024
    kernel: KernelSpec = field(default_factory=KernelSpec)
    t_final: float = 1.0
    seed: int = 0
    snapshot_times: tuple = ()
    init: InitialCondition = field(default_factory=InitialCondition)
    # thinning bound; must not exceed kernel.eps
    eps_dominating: Optional[float] = None
    event_log: bool = False

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if not self.kernel.eps > 0.0:
            raise ValueError("the engine simulates the regularized system only: eps must be > 0")
        if not self.t_final >= 0.0:
            raise ValueError("t_final must be >= 0")
        times = tuple(float(t) for t in self.snapshot_times)
        if any(t < 0.0 or t > self.t_final for t in times):
            raise ValueError("snapshot times must lie in [0, t_final]")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot times must be strictly increasing")
        object.__setattr__(self, "snapshot_times", times)
        if self.eps_dominating is not None and not 0.0 < self.eps_dominating <= self.kernel.eps:
            raise ValueError("eps_dominating must lie in (0, eps]")

    @property
    def dominating_kernel(self) -> KernelSpec:
        if self.eps_dominating is None:
            return self.kernel
        return self.kernel.with_eps(self.eps_dominating)

    @property
    def all_snapshot_times(self) -> tuple:
        """Requested snapshot times with 0 and ``t_final`` always included."""
        times = set(self.snapshot_times) | {0.0, float(self.t_final)}
        return tuple(sorted(times))


@dataclass
class SystemState:
    velocities: np.ndarray
    t: float = 0.0
    n_proposals: int = 0
    n_collisions: int = 0
    momentum0: np.ndarray = None
    energy0: float = None

    def __post_init__(self):
        self.velocities = np.ascontiguousarray(self.velocities, dtype=float)
        if self.velocities.ndim != 2 or self.velocities.shape[1] != 3 or self.velocities.shape[0] < 2:
            raise ValueError("velocities must have shape (N, 3) with N >= 2")
        if self.momentum0 is None or self.energy0 is None:
            self.momentum0, self.energy0 = _invariants(self.velocities)


@dataclass
class RunResult:
    flow: EmpiricalFlow
    audit: list
    n_proposals: int
    n_collisions: int
    rate: float
    config: EngineConfig
    replica: int = 0
    events: Optional[dict] = None


@dataclass
class ReplicaFailure:
    replica: int
    error: BaseException


# ---------------------------------------------------------------------------
# invariants


def _invariants(v):
    p = np.array([math.fsum(v[:, k]) for k in range(3)])
    e = math.fsum((v * v).ravel())
    return p, e


def conservation_audit(v, momentum0, energy0, t=None) -> dict:
    """Compensated-sum drift of total momentum and energy.

    Momentum drift is relative to ``sum_i |v_i|`` because the total momentum
    of a normalized sample is zero.
    """
    p, e = _invariants(v)
    speed_scale = math.fsum(np.sqrt(np.einsum("ik,ik->i", v, v)))
    dp = float(np.sqrt(np.sum((p - momentum0) ** 2)))
    rec = {
        "t": t,
        "momentum_drift": dp / max(speed_scale, float(np.linalg.norm(momentum0)), 1e-300),
        "energy_drift": abs(e - energy0) / energy0 if energy0 > 0 else abs(e),
        "finite": bool(np.all(np.isfinite(v))),
    }
    return rec


def _check_audit(rec):
    if not rec["finite"]:
        raise ConservationError(f"non-finite velocity at t={rec['t']}", rec)
    if rec["momentum_drift"] > DRIFT_TOL or rec["energy_drift"] > DRIFT_TOL:
        raise ConservationError(
            f"conservation drift beyond {DRIFT_TOL:g} at t={rec['t']}: "
            f"momentum {rec['momentum_drift']:.3e}, energy {rec['energy_drift']:.3e}",
            rec,
        )


# ---------------------------------------------------------------------------
# initial data and randomness


def replica_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Generator for replica ``replica`` of master seed ``seed``.

    ``SeedSequence(seed, spawn_key=(replica,))`` equals the ``replica``-th child
    of ``SeedSequence(seed).spawn``, so the stream of a replica does not depend
    on how many replicas are run or in which order.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replica,))))


def _normalize(v):
    v = v - v.mean(axis=0)
    scale = math.sqrt(3.0 * v.shape[0] / math.fsum((v * v).ravel()))
    return v * scale


def initial_velocities(init: InitialCondition, n: int, rng: np.random.Generator) -> np.ndarray:
    if init.kind == "standard_gaussian":
        v = rng.standard_normal((n, 3))
    elif init.kind == "two_bump":
        a, b = init.bump_centers
        upper = rng.random(n) < init.mix
        v = math.sqrt(init.bump_variance) * rng.standard_normal((n, 3))
        v[:, 0] += np.where(upper, a, b)
    elif init.kind == "shell":
        g = rng.standard_normal((n, 3))
        v = math.sqrt(3.0) * g / np.linalg.norm(g, axis=1)[:, None]
    else:
        data = _load_samples(init.path)
        if data.shape[0] == n:
            v = data.copy()
        else:
            idx = rng.choice(data.shape[0], size=n, replace=data.shape[0] < n)
            v = data[idx]
    if init.normalize:
        v = _normalize(v)
    return np.ascontiguousarray(v)


def _load_samples(path) -> np.ndarray:
    p = Path(path)
    data = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, comments="#", ndmin=2)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ValueError(f"{p}: expected an (n, 3) array of velocities")
    return data


# ---------------------------------------------------------------------------
# rates and the event loop


def total_proposal_rate(config: EngineConfig) -> float:
    """``Lambda = (N/2) eps_dom**gamma * 2 pi int min(beta, 1/eps_dom) dtheta``."""
    k = config.dominating_kernel
    return 0.5 * config.n_particles * k.alpha_sup * k.angular_mass_eps


@dataclass
class _Block:
    dt: np.ndarray
    i: np.ndarray
    j: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    prefactor: np.ndarray
    accepted: np.ndarray
    tev: np.ndarray


def _draw_block(rng, n, rate, config: EngineConfig, size=BLOCK) -> _Block:
    kdom = config.dominating_kernel
    dt = rng.exponential(1.0 / rate, size)
    i = rng.integers(0, n, size)
    j = rng.integers(0, n - 1, size)
    j = j + (j >= i)
    theta = sample_theta(kdom, rng.random(size))
    phi = 2.0 * math.pi * rng.random(size)
    u = rng.random(size)
    pre = np.full(size, 1.0 / kdom.alpha_sup)
    if config.eps_dominating is not None and config.eps_dominating != config.kernel.eps:
        pre *= config.kernel.beta_eps(theta) / kdom.beta_eps(theta)
    return _Block(dt, i.astype(np.int64), j.astype(np.int64), theta, phi, u, pre, np.zeros(size, np.bool_), np.zeros(size))


@njit(cache=True)
def _advance(v, t, t_stop, k0, dt, ii, jj, theta, phi, u, pre, accepted, tev, half_gamma, eps2):
    """Process events of one block until the next event falls after ``t_stop``.

    Returns ``(k, t, n_accepted, status)``: index of the first unprocessed event,
    time of the last processed one, accepted count, and 0 / -1 on success /
    non-finite velocity (``k`` then points at the offending event).
    """
    n_acc = 0
    k = k0
    n = dt.shape[0]
    while k < n:
        t_next = t + dt[k]
        if t_next > t_stop:
            return k, t, n_acc, 0
        t = t_next
        tev[k] = t
        a = ii[k]
        b = jj[k]
        dx = v[a, 0] - v[b, 0]
        dy = v[a, 1] - v[b, 1]
        dz = v[a, 2] - v[b, 2]
        r2 = dx * dx + dy * dy + dz * dz
        if half_gamma == 0.0:
            p = pre[k]
        else:
            p = pre[k] * (eps2 + r2) ** half_gamma
        if u[k] < p:
            _collide_nb(v, a, b, theta[k], phi[k])
            accepted[k] = True
            n_acc += 1
            if not (np.isfinite(v[a, 0]) and np.isfinite(v[a, 1]) and np.isfinite(v[a, 2])
                    and np.isfinite(v[b, 0]) and np.isfinite(v[b, 1]) and np.isfinite(v[b, 2])):
                return k, t, n_acc, -1
        k += 1
    return k, t, n_acc, 0


class _Runner:
    """Holds the state, generator, and current random block of one run."""

    def __init__(self, config: EngineConfig, state: SystemState, rng):
        self.config = config
        self.state = state
        self.rng = rng
        self.rate = total_proposal_rate(config)
        self.block = None
        self.k = 0
        self.half_gamma = 0.5 * config.kernel.gamma
        self.eps2 = config.kernel.eps ** 2
        self.log_chunks = [] if config.event_log else None

    def _flush_log(self):
        if self.log_chunks is None or self.block is None or self.k == 0:
            return
        b, k = self.block, self.k
        self.log_chunks.append((b.tev[:k].copy(), b.i[:k], b.j[:k], b.theta[:k], b.phi[:k], b.accepted[:k].copy()))

    def advance_to(self, t_stop: float):
        st = self.state
        while True:
            if self.block is None or self.k >= self.block.dt.shape[0]:
                self._flush_log()
                self.block = _draw_block(self.rng, st.velocities.shape[0], self.rate, self.config)
                self.k = 0
            k0 = self.k
            k, t, n_acc, status = _advance(
                st.velocities, st.t, t_stop, k0, self.block.dt, self.block.i, self.block.j,
                self.block.theta, self.block.phi, self.block.u, self.block.prefactor,
                self.block.accepted, self.block.tev, self.half_gamma, self.eps2,
            )
            st.n_proposals += (k - k0) + (1 if status != 0 else 0)
            st.n_collisions += n_acc
            if status != 0:
                b = self.block
                rec = {"t": t, "i": int(b.i[k]), "j": int(b.j[k]), "theta": float(b.theta[k]),
                       "phi": float(b.phi[k]), "accepted": True}
                raise ConservationError(f"non-finite velocity after event {rec}", rec)
            st.t = t
            self.k = k
            if k < self.block.dt.shape[0]:
                return

    def events(self):
        if self.log_chunks is None:
            return None
        self._flush_log()
        self.block = None
        if not self.log_chunks:
            empty = np.zeros(0)
            return {"t": empty, "i": empty.astype(int), "j": empty.astype(int), "theta": empty,
                    "phi": empty, "accepted": empty.astype(bool)}
        cols = list(zip(*self.log_chunks))
        return dict(zip(("t", "i", "j", "theta", "phi", "accepted"), (np.concatenate(c) for c in cols)))


def step(state: SystemState, config: EngineConfig, rng: np.random.Generator) -> SystemState:
    """Advance ``state`` in place by exactly one proposal and return it.

    Convenience path for small experiments; ``run`` processes events in
    compiled blocks instead.
    """
    n = state.velocities.shape[0]
    rate = total_proposal_rate(config)
    block = _draw_block(rng, n, rate, config, size=1)
    k, t, n_acc, status = _advance(
        state.velocities, state.t, math.inf, 0, block.dt, block.i, block.j, block.theta, block.phi,
        block.u, block.prefactor, block.accepted, block.tev, 0.5 * config.kernel.gamma, config.kernel.eps ** 2,
    )
    state.t = t
    state.n_proposals += 1
    state.n_collisions += n_acc
    if status != 0:
        raise ConservationError("non-finite velocity", {"t": t, "i": int(block.i[0]), "j": int(block.j[0])})
    return state


def run(config: EngineConfig, replica: int = 0, *, audit_every_snapshot: bool = True) -> RunResult:
    """Simulate one replica to ``t_final``, recording snapshots and audits.

    Snapshot times always include 0 and ``t_final``.  Between events the
    velocities are constant, so a snapshot is the state after the last event
    at or before the requested time.
    """
    rng = replica_rng(config.seed, replica)
    v0 = initial_velocities(config.init, config.n_particles, rng)
    state = SystemState(v0.copy())
    runner = _Runner(config, state, rng)
    times = config.all_snapshot_times
    snaps, audit = [], []
    for ts in times:
        runner.advance_to(ts)
        rec = conservation_audit(state.velocities, state.momentum0, state.energy0, t=ts)
        rec.update(n_proposals=state.n_proposals, n_collisions=state.n_collisions)
        if audit_every_snapshot:
            _check_audit(rec)
        audit.append(rec)
        snaps.append(state.velocities.copy())
    _check_audit(audit[-1])
    flow = EmpiricalFlow(np.array(times), np.array(snaps))
    return RunResult(flow, audit, state.n_proposals, state.n_collisions, runner.rate, config, replica, runner.events())


def _run_one(args):
    config, replica = args
    try:
        return run(config, replica)
    except Exception as exc:  # isolated per replica
        return ReplicaFailure(replica, exc)


def run_replicas(config: EngineConfig, n_replicas: int, *, workers: int = 1, first: int = 0,
                 raise_on_failure: bool = True) -> list:
    """Independent replicas ``first .. first + n_replicas - 1`` of ``config``.

    Failures are collected per replica; with ``raise_on_failure`` the first one
    is re-raised after all replicas finished, otherwise the failed entries are
    dropped and logged.
    """
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    jobs = [(config, first + r) for r in range(n_replicas)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    failures = [r for r in results if isinstance(r, ReplicaFailure)]
    for f in failures:
        log.warning("replica %d failed: %s", f.replica, f.error)
    if failures and raise_on_failure:
        raise failures[0].error
    return [r for r in results if not isinstance(r, ReplicaFailure)]


def with_seed(config: EngineConfig, seed: int) -> EngineConfig:
    return replace(config, seed=seed)

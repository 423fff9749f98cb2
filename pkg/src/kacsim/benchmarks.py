"""Reference solutions with independently computable numbers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .engine import EngineConfig, InitialCondition, ReplicaFailure, _run_one
from .estimators.moments import moments
from .estimators.report import EstimatorReport
from .estimators.transport import w2_exact
from .kernel import KernelSpec, maxwell_angular_moment
from .weakform import a_sym, quartic

log = logging.getLogger(__name__)

GAUSSIAN_NORM = (2.0 * math.pi) ** -1.5
GAUSSIAN_ENTROPY = 1.5 * math.log(2.0 * math.pi * math.e)  # differential entropy, -int f log f
GAUSSIAN_FISHER = 3.0
GAUSSIAN_M4 = 15.0


@dataclass(frozen=True)
class ReferenceSolution:
    name: str
    params: dict = field(default_factory=dict)

    NAMES = ("gaussian_equilibrium", "maxwell_moment_relaxation")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise ValueError(f"unknown reference solution {self.name!r}")


def equilibrium_density(v):
    """Unit-temperature Maxwellian ``(2 pi)^(-3/2) exp(-|v|^2 / 2)``."""
    v = np.asarray(v, dtype=float)
    return GAUSSIAN_NORM * np.exp(-0.5 * np.sum(v * v, axis=-1))


def gaussian_equilibrium() -> ReferenceSolution:
    return ReferenceSolution("gaussian_equilibrium", {
        "mean": (0.0, 0.0, 0.0), "m2": 3.0, "m4": GAUSSIAN_M4,
        "H": -GAUSSIAN_ENTROPY, "fisher": GAUSSIAN_FISHER,
    })


# ---------------------------------------------------------------------------
# Maxwell molecules


def maxwell_m4_relaxation_rate(spec: KernelSpec) -> float:
    """Rate ``lam`` in ``d/dt E|v|^4 = -lam (E|v|^4 - 15)`` for ``gamma = 0``.

    For Maxwell molecules the symmetrized collision average of ``|v|^4`` is
    ``(lam/4) [(|v|^2 + |w|^2)^2 - 4 (v.w)^2 - 3 (|v|^2 - |w|^2)^2]``; at the
    pair ``v = e1, w = 0`` the bracket is -2, so the rate follows from one
    sphere quadrature of the weak-form operator.  Averaged over an isotropic
    law with ``m2 = 3`` the bracket equals ``-4 (m4 - 15)``.
    """
    if spec.gamma != 0.0:
        raise ValueError("the m4 relaxation rate is closed only for Maxwell molecules (gamma = 0)")
    val = a_sym(quartic(), np.array([1.0, 0.0, 0.0]), np.zeros(3), spec, order=32, m_phi=32)
    return float(-2.0 * np.asarray(val).reshape(-1)[0])


def maxwell_reference(spec: KernelSpec) -> ReferenceSolution:
    return ReferenceSolution("maxwell_moment_relaxation", {
        "rate": maxwell_m4_relaxation_rate(spec),
        "rate_closed_form": maxwell_angular_moment(spec),
        "m4_equilibrium": GAUSSIAN_M4,
    })


def _fit_rate(times, dev, weight):
    keep = (dev > 0.0) & (weight > 0.0)
    if keep.sum() < 3:
        raise ValueError("too few usable points for a rate fit")
    slope, _ = np.polyfit(times[keep], np.log(dev[keep]), 1, w=weight[keep])
    return -slope


def fit_m4_rate(flows, *, m4_eq: float = GAUSSIAN_M4, min_snr: float = 5.0) -> EstimatorReport:
    """Exponential rate of ``m4(t) -> m4_eq`` from replica flows, jackknife error.

    The log-deviation is fitted on the replica-mean curve, weighted by its
    signal-to-noise ratio, over times where the deviation exceeds ``min_snr``
    standard errors.
    """
    flows = [getattr(f, "flow", f) for f in flows]
    if len(flows) < 2:
        raise ValueError("need at least two replicas")
    times = flows[0].times
    m4 = np.array([[moments(snap)[1] for snap in fl.snapshots] for fl in flows])
    R = m4.shape[0]
    mean = m4.mean(axis=0)
    se = m4.std(axis=0, ddof=1) / math.sqrt(R)
    se[se == 0.0] = np.min(se[se > 0.0]) if np.any(se > 0.0) else 1.0
    dev = np.abs(m4_eq - mean)
    use = dev > min_snr * se
    # only the leading contiguous stretch: later points are noise dominated
    stop = int(np.argmin(use)) if not use.all() else use.size
    use[stop:] = False
    weight = np.where(use, dev / se, 0.0)
    rate = _fit_rate(times, dev, weight)
    jack = []
    for r in range(R):
        sub = np.delete(m4, r, axis=0).mean(axis=0)
        jack.append(_fit_rate(times, np.abs(m4_eq - sub), weight))
    jack = np.array(jack)
    err = float(math.sqrt((R - 1) / R * np.sum((jack - jack.mean()) ** 2)))
    return EstimatorReport("m4_rate", float(rate), err, R * flows[0].n_particles,
                           {"n_replicas": R, "t_fit_max": float(times[use][-1]), "n_fit_points": int(use.sum()),
                            "m4_eq": m4_eq})


# ---------------------------------------------------------------------------
# epsilon schedule


@dataclass
class EpsilonScheduleReport:
    eps: tuple
    t: float
    distances: list  # EstimatorReport per successive pair (eps_k, eps_{k+1})
    failures: list
    per_replica: list = field(default_factory=list)  # {replica: W2} per successive pair

    def paired_drops(self) -> list:
        """``d_k - d_{k+1}`` averaged over replicas present in both pairs, with its error."""
        out = []
        for a, b in zip(self.per_replica, self.per_replica[1:]):
            common = sorted(set(a) & set(b))
            diff = np.array([a[r] - b[r] for r in common])
            se = float(diff.std(ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else float("nan")
            out.append(EstimatorReport("w2_drop", float(diff.mean()) if diff.size else float("nan"), se,
                                       int(diff.size), {}))
        return out

    @property
    def decreasing(self) -> bool:
        """Successive mean distances strictly decrease."""
        vals = [d.value for d in self.distances]
        return all(b < a for a, b in zip(vals, vals[1:]))

    def table(self) -> list:
        return [(a, b, d.value, d.std_error) for (a, b), d in
                zip(zip(self.eps, self.eps[1:]), self.distances)]


def epsilon_schedule_study(template: EngineConfig, eps_list, *, t: float = 1.0, n_replicas: int = 8,
                           first_replica: int = 0) -> EpsilonScheduleReport:
    """Matched-seed runs across a decreasing list of ``eps``.

    Every run thins against the smallest ``eps`` of the list, so replicas with
    the same seed share their proposal streams and differ only where the
    acceptance decisions differ: the marginals are synchronously coupled.
    W2 is the exact assignment distance between the coupled empirical measures.
    """
    eps = tuple(float(e) for e in eps_list)
    if not eps:
        raise ValueError("eps list is empty")
    if any(e <= 0.0 for e in eps):
        raise ValueError("all eps must be > 0")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps list must be strictly decreasing")
    if len(eps) == 1:
        return EpsilonScheduleReport(eps, t, [], [])
    base = replace(template, t_final=t, snapshot_times=())
    dom = eps[-1]
    samples = {}
    failures = []
    for e in eps:
        cfg = replace(base, kernel=base.kernel.with_eps(e), eps_dominating=dom)
        for r in range(first_replica, first_replica + n_replicas):
            res = _run_one((cfg, r))
            if isinstance(res, ReplicaFailure):
                log.warning("eps=%g replica %d failed: %s", e, r, res.error)
                failures.append((e, res))
                continue
            samples[(e, r)] = res.flow.at(t)
    distances, per_replica = [], []
    for a, b in zip(eps, eps[1:]):
        per = {r: w2_exact(samples[(a, r)], samples[(b, r)])
               for r in range(first_replica, first_replica + n_replicas)
               if (a, r) in samples and (b, r) in samples}
        per_replica.append(per)
        vals = np.array(list(per.values()))
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
        distances.append(EstimatorReport("w2", float(vals.mean()) if vals.size else float("nan"), se,
                                         int(vals.size), {"eps_pair": (a, b), "t": t, "coupling": "eps_dominating"}))
    return EpsilonScheduleReport(eps, t, distances, failures, per_replica)


# ---------------------------------------------------------------------------
# two-bump reference density (product form along e1)


def _bump_1d(init: InitialCondition):
    a, b = init.bump_centers
    tau2 = init.bump_variance
    c = 1.0 / math.sqrt(2.0 * math.pi * tau2)
    w = init.mix

    def g(x):
        return c * (w * np.exp(-(x - a) ** 2 / (2 * tau2)) + (1 - w) * np.exp(-(x - b) ** 2 / (2 * tau2)))

    def dg(x):
        return -c * (w * (x - a) * np.exp(-(x - a) ** 2 / (2 * tau2))
                     + (1 - w) * (x - b) * np.exp(-(x - b) ** 2 / (2 * tau2))) / tau2

    lo = min(a, b) - 12.0 * math.sqrt(tau2)
    hi = max(a, b) + 12.0 * math.sqrt(tau2)
    return g, dg, lo, hi, tau2


def two_bump_entropy(init: InitialCondition) -> float:
    """Differential entropy of the unnormalized two-bump law by 1-d quadrature."""
    g, _, lo, hi, tau2 = _bump_1d(init)
    h1 = integrate.quad(lambda x: -g(x) * math.log(g(x)), lo, hi, limit=400, epsabs=1e-13)[0]
    return h1 + math.log(2.0 * math.pi * math.e * tau2)


def two_bump_fisher(init: InitialCondition) -> float:
    g, dg, lo, hi, tau2 = _bump_1d(init)
    i1 = integrate.quad(lambda x: dg(x) ** 2 / g(x), lo, hi, limit=400, epsabs=1e-13)[0]
    return i1 + 2.0 / tau2


def sample_two_bump(init: InitialCondition, n: int, rng: np.random.Generator) -> np.ndarray:
    a, b = init.bump_centers
    v = math.sqrt(init.bump_variance) * rng.standard_normal((n, 3))
    v[:, 0] += np.where(rng.random(n) < init.mix, a, b)
    return v

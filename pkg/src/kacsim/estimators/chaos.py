from __future__ import annotations

import math

import numpy as np

from .report import EstimatorReport

MIN_REPLICAS = 30


def _values(phi, v):
    f = phi.value if hasattr(phi, "value") else phi
    return np.asarray(f(v), dtype=float).reshape(-1)


def _cov(within, means):
    r = means.size
    cross = (means.sum() ** 2 - np.sum(means * means)) / (r * (r - 1))
    return within.mean() - cross


def chaos_covariance(flows, phi, t: float, *, min_replicas: int = MIN_REPLICAS) -> EstimatorReport:
    """Two-particle covariance ``Cov(phi(V1_t), phi(V2_t))`` from independent replicas.

    Within a replica all ordered pairs of distinct particles estimate
    ``E phi(V1) phi(V2)``; the product of means uses only cross-replica
    products so neither term carries an O(1/N) self-interaction bias.
    The error is a jackknife over replicas.
    """
    flows = list(flows)
    if len(flows) < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas, got {len(flows)}")
    within = np.empty(len(flows))
    means = np.empty(len(flows))
    n = None
    for r, fl in enumerate(flows):
        fl = getattr(fl, "flow", fl)
        x = _values(phi, fl.at(t))
        n = x.size
        s = math.fsum(x)
        within[r] = (s * s - math.fsum(x * x)) / (n * (n - 1))
        means[r] = s / n
    value = float(_cov(within, means))
    R = len(flows)
    keep = np.ones(R, dtype=bool)
    jack = np.empty(R)
    for r in range(R):
        keep[r] = False
        jack[r] = _cov(within[keep], means[keep])
        keep[r] = True
    se = float(math.sqrt((R - 1) / R * np.sum((jack - jack.mean()) ** 2)))
    return EstimatorReport("chaos_cov", value, se, n * R, {"t": float(t), "n_replicas": R, "n_particles": n})

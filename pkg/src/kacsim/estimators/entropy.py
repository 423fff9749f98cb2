"""Kozachenko-Leonenko nearest-neighbor entropy.

Returns the differential entropy ``-int f log f``; the functional
``H(f) = int f log f`` that decays along the flow is its negative.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .report import EstimatorReport
from .util import as_sample, jitter_ties

UNIT_BALL_LOG_VOLUME = math.log(4.0 * math.pi / 3.0)


def entropy_knn(sample, k: int = 4, *, seed: int = 0) -> EstimatorReport:
    if k < 1:
        raise ValueError("k must be >= 1")
    x = as_sample(sample, min_n=k + 1)
    x, n_jit = jitter_ties(x, seed)
    n = x.shape[0]
    dist, _ = cKDTree(x).query(x, k=k + 1)
    terms = 3.0 * np.log(dist[:, k])
    const = digamma(n) - digamma(k) + UNIT_BALL_LOG_VOLUME
    value = float(const + terms.mean())
    # neighbor distances are weakly dependent; the per-point CLT error is the usual report
    se = float(terms.std(ddof=1) / math.sqrt(n))
    return EstimatorReport("entropy", value, se, n, {"k": k, "n_jittered": n_jit, "seed": seed})

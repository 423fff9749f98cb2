from __future__ import annotations

import math

import numpy as np

from .report import EstimatorReport
from .util import as_sample

CHUNK = 512


def pairwise_singular_moment(sample, a: float = -1.0, *, chunk: int = CHUNK) -> EstimatorReport:
    """U-statistic for ``E|V1 - V2|^a`` over distinct pairs, ``a`` in (-2, 0).

    Pairs at exactly zero distance are dropped and counted in
    ``parameters["n_coincident"]``.
    """
    a = float(a)
    if not -2.0 < a < 0.0:
        raise ValueError(f"a must lie in (-2, 0), got {a}")
    x = as_sample(sample)
    n = x.shape[0]
    row_sum = np.zeros(n)
    row_cnt = np.zeros(n, dtype=np.int64)
    sq = np.einsum("ij,ij->i", x, x)
    for s in range(0, n, chunk):
        blk = x[s:s + chunk]
        d2 = sq[s:s + chunk, None] + sq[None, :] - 2.0 * blk @ x.T
        # recompute small distances directly to avoid cancellation
        close = d2 < 1e-8 * (sq[s:s + chunk, None] + sq[None, :] + 1.0)
        if close.any():
            r, c = np.nonzero(close)
            d2[r, c] = np.sum((blk[r] - x[c]) ** 2, axis=1)
        rows = np.arange(s, s + blk.shape[0])
        d2[rows - s, rows] = 0.0
        ok = d2 > 0.0
        ok[rows - s, rows] = False
        vals = np.where(ok, np.where(ok, d2, 1.0) ** (0.5 * a), 0.0)
        row_sum[s:s + blk.shape[0]] = vals.sum(axis=1)
        row_cnt[s:s + blk.shape[0]] = ok.sum(axis=1)
    n_pairs = int(row_cnt.sum() // 2)
    n_coincident = n * (n - 1) // 2 - n_pairs
    if n_pairs == 0:
        raise ValueError("no pair of distinct points")
    value = float(math.fsum(row_sum) / (2 * n_pairs))
    have = row_cnt > 0
    row_mean = row_sum[have] / row_cnt[have]
    # Hoeffding projection: Var(U) ~ 4 Var(h_1) / n
    se = float(2.0 * row_mean.std(ddof=1) / math.sqrt(have.sum())) if have.sum() > 2 else float("nan")
    return EstimatorReport("pairwise_a_moment", value, se, n,
                           {"a": a, "n_pairs": n_pairs, "n_coincident": n_coincident})

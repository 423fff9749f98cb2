from __future__ import annotations

import numpy as np


def as_sample(sample, min_n: int = 2) -> np.ndarray:
    x = np.asarray(sample, dtype=float)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("sample must have shape (n, 3)")
    if x.shape[0] < min_n:
        raise ValueError(f"need at least {min_n} points, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    return x


def jitter_ties(x: np.ndarray, seed: int = 0, rel: float = 1e-12):
    """Separate exactly coincident points by a seeded ``rel * scale`` perturbation.

    Returns ``(x, n_jittered)``; ``x`` is returned unchanged when all points
    are distinct.  A sample whose points are all equal is rejected.
    """
    _, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    if counts.size == 1:
        raise ValueError("degenerate sample: all points coincide")
    dup = counts[inverse.ravel()] > 1
    if not dup.any():
        return x, 0
    scale = float(np.sqrt(np.mean(np.var(x, axis=0)))) or 1.0
    rng = np.random.default_rng(seed)
    x = x.copy()
    x[dup] += rel * scale * rng.standard_normal((int(dup.sum()), 3))
    return x, int(dup.sum())

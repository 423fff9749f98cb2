from __future__ import annotations

import math

import numpy as np

from .util import as_sample


def moments(sample):
    """Return ``(m2, m4, mean)`` with ``m2 = <|v|^2>`` and ``m4 = <|v|^4>``."""
    x = as_sample(sample)
    sq = np.einsum("ij,ij->i", x, x)
    n = x.shape[0]
    m2 = math.fsum(sq) / n
    m4 = math.fsum(sq * sq) / n
    mean = np.array([math.fsum(x[:, k]) / n for k in range(3)])
    return m2, m4, mean

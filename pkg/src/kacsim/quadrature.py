"""Angular quadrature rules for integrals over the scattering sphere.

A rule is a pair ``(theta, w)`` with

    sum_k w[k] g(theta[k])  ~  int_0^pi g(theta) beta(theta) dtheta

for smooth ``g``.  For the uncapped power law the rule assumes ``g(theta) =
O(theta**2)`` at 0, which holds for every azimuth-averaged integrand used here
(collision invariants, compensated jumps, second moments); the singular factor
``theta**(1 - nu)`` is then absorbed into a Gauss-Jacobi weight.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .kernel import CUTOFF_UNIFORM, KernelSpec

__all__ = ["theta_rule", "truncated_theta_rule", "phi_nodes"]


def _gauss_legendre(a, b, n):
    x, w = roots_legendre(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _geometric_panels(a, b, ratio):
    edges = [a]
    while edges[-1] * ratio < b:
        edges.append(edges[-1] * ratio)
    edges.append(b)
    return edges


@lru_cache(maxsize=64)
def _rule(beta_form, nu, beta_const, cap_eps, theta_c, order):
    thetas, weights = [], []
    if beta_form == CUTOFF_UNIFORM:
        cap = beta_const if cap_eps == 0.0 else min(beta_const, 1.0 / cap_eps)
        for a, b in ((0.0, math.pi / 2), (math.pi / 2, math.pi)):
            t, w = _gauss_legendre(a, b, order)
            thetas.append(t)
            weights.append(w * cap)
        return np.concatenate(thetas), np.concatenate(weights)

    if cap_eps > 0.0:
        tc = theta_c
        t, w = _gauss_legendre(0.0, tc, max(order // 2, 4))
        thetas.append(t)
        weights.append(w / cap_eps)
        start = tc
    else:
        # [0, t1]: int g(t) t^(-1-nu) dt = int (g/t^2) t^(1-nu) dt, Gauss-Jacobi in t
        t1 = math.pi / 4
        x, w = roots_jacobi(order, 0.0, 1.0 - nu)
        t = 0.5 * t1 * (1.0 + x)
        wt = w * (0.5 * t1) ** (2.0 - nu) / t ** 2
        thetas.append(t)
        weights.append(wt)
        start = t1
    if start < math.pi:
        for a, b in zip(*(lambda e: (e[:-1], e[1:]))(_geometric_panels(start, math.pi, 4.0))):
            t, w = _gauss_legendre(a, b, order)
            thetas.append(t)
            weights.append(w * t ** (-1.0 - nu))
    return np.concatenate(thetas), np.concatenate(weights)


def theta_rule(spec: KernelSpec, order: int = 32):
    """Nodes and weights for ``int_0^pi g(theta) beta_eps(theta) dtheta``.

    ``order`` is the number of Gauss points per panel.  The cap (``eps > 0``)
    splits the range at ``theta_c`` where ``beta_eps`` has a kink.
    """
    eps = spec.cap_eps if spec.regularized else 0.0
    tc = spec.theta_c if eps > 0.0 else 0.0
    t, w = _rule(spec.beta_form, spec.nu, spec.beta_const, eps, tc, int(order))
    return t, w


def phi_nodes(m: int = 32):
    """Equispaced azimuths; the trapezoid rule is spectrally accurate for periodic integrands."""
    phi = 2.0 * math.pi * np.arange(m) / m
    return phi, np.full(m, 2.0 * math.pi / m)


def truncated_theta_rule(spec: KernelSpec, eta: float, order: int = 32):
    """Nodes and weights for ``int_eta^pi g(theta) beta(theta) dtheta`` (uncapped beta)."""
    if not 0.0 < eta < math.pi:
        raise ValueError("eta must lie in (0, pi)")
    edges = _geometric_panels(eta, math.pi, 2.0)
    thetas, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        t, w = _gauss_legendre(a, b, int(order))
        thetas.append(t)
        weights.append(w * spec.beta(t))
    return np.concatenate(thetas), np.concatenate(weights)

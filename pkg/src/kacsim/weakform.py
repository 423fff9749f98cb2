"""Weak collision operators and residuals of simulated empirical flows.

``a_bar`` is the compensated one-sided operator

    Abar phi(v, v*) = int (phi(v') - phi(v) - (v' - v).grad phi(v)) B dsigma
                      - b |v - v*|^gamma (v - v*).grad phi(v)

and ``a_sym(v, v*) = (Abar phi(v, v*) + Abar phi(v*, v)) / 2`` is the symmetric
operator that appears in the weak form of the Boltzmann equation.  Both are
evaluated by a product rule: equispaced azimuths (or a closed-form azimuthal
average when the test function provides one) times the angular rules of
:mod:`kacsim.quadrature`.  After the azimuthal average the integrands vanish
like ``theta**2`` so no principal-value truncation is needed.

When ``spec.eps > 0`` the regularized kernel (``alpha_eps``, ``min(beta, 1/eps)``,
``b_eps``) is used, matching the particle system the engine simulates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import ctypes

import numpy as np
from numba import njit
from numba.extending import get_cython_function_address
from scipy.special import i0e

from .geometry import build_frames
from .kernel import KernelSpec, alpha_eps
from .quadrature import phi_nodes, theta_rule

__all__ = [
    "TestFunction",
    "EmpiricalFlow",
    "constant",
    "coordinate",
    "linear",
    "energy",
    "quartic",
    "gaussian_bump",
    "a_bar",
    "a_sym",
    "a_sym_pair_mean",
    "a_bar_row_means",
    "residual_magnitude",
    "weak_residual",
    "martingale_residual",
    "check_gradient",
]

MAX_PAIRWISE_N = 4096
_CHUNK_EVALS = 2_000_000


@dataclass(frozen=True)
class TestFunction:
    """Smooth test function with vectorized value and gradient.

    ``value`` and ``gradient`` act on arrays of shape ``(..., 3)``.  The
    optional ``phi_average(v, v_star, theta)`` returns the azimuthal mean of
    ``phi(v')`` for pairs ``(P, 3)`` and angles ``(T,)`` as a ``(P, T)`` array.
    """

    __test__ = False  # not a pytest class

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian_bound: float = math.inf
    phi_average: Optional[Callable] = field(default=None, compare=False)
    # (center, kappa) for Gaussian bumps; enables the compiled pair sums
    bump: Optional[tuple] = field(default=None, compare=False)

    def __call__(self, v):
        return self.value(np.asarray(v, dtype=float))


def constant(c: float = 1.0) -> TestFunction:
    return TestFunction(
        "constant",
        lambda v: np.full(v.shape[:-1], c),
        lambda v: np.zeros_like(v),
        0.0,
        lambda v, vs, th: np.full((v.shape[0], np.size(th)), c),
    )


def linear(e) -> TestFunction:
    e = np.asarray(e, dtype=float)
    return TestFunction("linear", lambda v: v @ e, lambda v: np.broadcast_to(e, v.shape).copy(), 0.0)


def coordinate(k: int) -> TestFunction:
    e = np.zeros(3)
    e[k] = 1.0
    return TestFunction(f"v{k + 1}", lambda v: v[..., k], lambda v: np.broadcast_to(e, v.shape).copy(), 0.0)


def energy() -> TestFunction:
    return TestFunction("energy", lambda v: np.einsum("...k,...k->...", v, v), lambda v: 2.0 * v, 2.0)


def quartic() -> TestFunction:
    def value(v):
        s = np.einsum("...k,...k->...", v, v)
        return s * s

    def grad(v):
        return 4.0 * np.einsum("...k,...k->...", v, v)[..., None] * v

    return TestFunction("quartic", value, grad, math.inf)


def gaussian_bump(center=(0.0, 0.0, 0.0), kappa: float = 1.0) -> TestFunction:
    """``exp(-kappa |v - center|^2)`` with an exact azimuthal average.

    Writing ``v' = m + (r/2) sigma`` with ``c = m - center``, the azimuthal
    mean is ``exp(-kappa(|c|^2 + r^2/4 + r c_par cos theta)) I0(kappa r c_perp sin theta)``.
    """
    a = np.asarray(center, dtype=float)

    def value(v):
        d = v - a
        return np.exp(-kappa * np.einsum("...k,...k->...", d, d))

    def grad(v):
        d = v - a
        return -2.0 * kappa * value(v)[..., None] * d

    def average(v, vs, theta):
        z = v - vs
        r = np.sqrt(np.einsum("pk,pk->p", z, z))
        c = 0.5 * (v + vs) - a
        with np.errstate(invalid="ignore", divide="ignore"):
            zhat = z / r[:, None]
        c_par = np.where(r > 0, np.einsum("pk,pk->p", c, np.nan_to_num(zhat)), 0.0)
        c2 = np.einsum("pk,pk->p", c, c)
        c_perp = np.sqrt(np.maximum(c2 - c_par * c_par, 0.0))
        th = np.asarray(theta, dtype=float)[None, :]
        x = kappa * (r * c_perp)[:, None] * np.sin(th)
        expo = -kappa * ((c2 + 0.25 * r * r)[:, None] + (r * c_par)[:, None] * np.cos(th)) + x
        return np.exp(expo) * i0e(x)

    # sup |D^2 phi| = 2 kappa (attained at the center)
    return TestFunction("bump", value, grad, 2.0 * kappa, average, (tuple(a.tolist()), float(kappa)))


def check_gradient(phi: TestFunction, points: np.ndarray, h: float = 1e-5) -> float:
    """Max deviation between ``phi.gradient`` and centered differences."""
    points = np.asarray(points, dtype=float)
    g = phi.gradient(points)
    fd = np.empty_like(g)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd[:, k] = (phi.value(points + e) - phi.value(points - e)) / (2 * h)
    return float(np.abs(g - fd).max())


# ---------------------------------------------------------------------------
# operators


def _numeric_average(phi: TestFunction, v, vs, theta, m_phi):
    """Azimuthal mean of ``phi(v')`` by the trapezoid rule on ``m_phi`` points."""
    z = v - vs
    r = np.sqrt(np.einsum("pk,pk->p", z, z))
    safe = np.where(r[:, None] > 0, z, np.array([0.0, 0.0, 1.0]))
    axis, ei, ej = build_frames(safe)
    ph, _ = phi_nodes(m_phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(ph), np.sin(ph)
    # sigma[p, t, f, :]
    ring = ei[:, None, :] * cp[:, None] + ej[:, None, :] * sp[:, None]  # (P, F, 3)
    sigma = axis[:, None, None, :] * ct[None, :, None, None] + ring[:, None, :, :] * st[None, :, None, None]
    mid = 0.5 * (v + vs)
    vp = mid[:, None, None, :] + 0.5 * r[:, None, None, None] * sigma
    return phi.value(vp).mean(axis=-1)


def _azimuthal_average(phi, v, vs, theta, m_phi):
    if phi.phi_average is not None:
        return phi.phi_average(v, vs, theta)
    return _numeric_average(phi, v, vs, theta, m_phi)


def _as_pairs(v, vs):
    v = np.atleast_2d(np.asarray(v, dtype=float))
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    v, vs = np.broadcast_arrays(v, vs)
    return v, vs


def _a_bar_pairs(phi, v, vs, spec, order, m_phi):
    theta, w = theta_rule(spec, order)
    z = v - vs
    r = np.sqrt(np.einsum("pk,pk->p", z, z))
    if not spec.regularized and spec.gamma < 0 and np.any(r == 0):
        raise ValueError("coincident velocities with eps = 0: the operator is singular there")
    b = spec.b_eps if spec.regularized else spec.b
    grad = phi.gradient(v)
    phi_v = phi.value(v)
    drift = np.einsum("pk,pk->p", vs - v, grad)  # (v* - v).grad phi(v)
    out = np.empty(v.shape[0])
    per = max(1, _CHUNK_EVALS // (theta.size * (1 if phi.phi_average is not None else m_phi)))
    for s in range(0, v.shape[0], per):
        sl = slice(s, s + per)
        avg = _azimuthal_average(phi, v[sl], vs[sl], theta, m_phi)
        # 2 pi (avg - phi(v)) - pi (1 - cos) (v* - v).grad phi: the azimuthal integral
        # of phi(v') - phi(v) - (v' - v).grad phi(v)
        integrand = 2.0 * math.pi * (avg - phi_v[sl, None]) - math.pi * (1.0 - np.cos(theta))[None, :] * drift[sl, None]
        out[sl] = integrand @ w
    alpha = alpha_eps(spec, r)
    res = alpha * (out + b * drift)
    # v' = v for every sigma when the pair coincides
    return np.where(r > 0, res, 0.0)


def a_bar(phi: TestFunction, v, v_star, spec: KernelSpec, *, order: int = 32, m_phi: int = 32):
    """Compensated one-sided operator; vectorized over stacks of pairs."""
    vv, vs = _as_pairs(v, v_star)
    out = _a_bar_pairs(phi, vv, vs, spec, order, m_phi)
    return out[0] if np.ndim(v) == 1 and np.ndim(v_star) == 1 else out


def a_sym(phi: TestFunction, v, v_star, spec: KernelSpec, *, order: int = 32, m_phi: int = 32):
    """Symmetric weak operator ``(Abar(v, v*) + Abar(v*, v)) / 2``."""
    vv, vs = _as_pairs(v, v_star)
    left = _a_bar_pairs(phi, vv, vs, spec, order, m_phi)
    right = _a_bar_pairs(phi, vs, vv, spec, order, m_phi)
    out = 0.5 * (left + right)
    return out[0] if np.ndim(v) == 1 and np.ndim(v_star) == 1 else out


_i0e_c = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double)(
    get_cython_function_address("scipy.special.cython_special", "i0e"))


@njit
def _bump_a_bar(vx, vy, vz, wx, wy, wz, ax, ay, az, kappa, ct, st, w, b, gamma, eps2):
    zx, zy, zz = vx - wx, vy - wy, vz - wz
    r2 = zx * zx + zy * zy + zz * zz
    if r2 == 0.0:
        return 0.0
    r = math.sqrt(r2)
    cx, cy, cz = 0.5 * (vx + wx) - ax, 0.5 * (vy + wy) - ay, 0.5 * (vz + wz) - az
    c2 = cx * cx + cy * cy + cz * cz
    cpar = (cx * zx + cy * zy + cz * zz) / r
    cperp = math.sqrt(max(c2 - cpar * cpar, 0.0))
    dx, dy, dz = vx - ax, vy - ay, vz - az
    phi_v = math.exp(-kappa * (dx * dx + dy * dy + dz * dz))
    # (w - v) . grad phi(v) with grad phi = -2 kappa phi (v - a)
    drift = -2.0 * kappa * phi_v * (-(zx * dx + zy * dy + zz * dz))
    acc = 0.0
    for t in range(ct.size):
        x = kappa * r * cperp * st[t]
        avg = math.exp(-kappa * (c2 + 0.25 * r2 + r * cpar * ct[t]) + x) * _i0e_c(x)
        acc += w[t] * (2.0 * math.pi * (avg - phi_v) - math.pi * (1.0 - ct[t]) * drift)
    alpha = 1.0 if gamma == 0.0 else (eps2 + r2) ** (0.5 * gamma)
    return alpha * (acc + b * drift)


@njit
def _bump_row_sums(x, ax, ay, az, kappa, ct, st, w, b, gamma, eps2):
    n = x.shape[0]
    rows = np.zeros(n)
    for i in range(n - 1):
        s = 0.0
        for j in range(i + 1, n):
            left = _bump_a_bar(x[i, 0], x[i, 1], x[i, 2], x[j, 0], x[j, 1], x[j, 2], ax, ay, az, kappa,
                               ct, st, w, b, gamma, eps2)
            right = _bump_a_bar(x[j, 0], x[j, 1], x[j, 2], x[i, 0], x[i, 1], x[i, 2], ax, ay, az, kappa,
                                ct, st, w, b, gamma, eps2)
            s += 0.5 * (left + right)
        rows[i] = s
    return rows


def _bump_pair_mean(phi, sample, spec, order):
    if not spec.regularized and spec.gamma < 0:
        d = sample[:, None, :] - sample[None, :, :]
        if np.any(np.einsum("ijk,ijk->ij", d, d)[np.triu_indices(sample.shape[0], 1)] == 0.0):
            raise ValueError("coincident velocities with eps = 0: the operator is singular there")
    theta, w = theta_rule(spec, order)
    (ax, ay, az), kappa = phi.bump
    b = spec.b_eps if spec.regularized else spec.b
    rows = _bump_row_sums(np.ascontiguousarray(sample), ax, ay, az, kappa, np.cos(theta), np.sin(theta), w, b,
                          float(spec.gamma), float(spec.eps) ** 2)
    n = sample.shape[0]
    return 2.0 * math.fsum(rows) / (n * (n - 1))


def a_sym_pair_mean(phi: TestFunction, sample, spec: KernelSpec, *, order: int = 16, m_phi: int = 16,
                    compiled: bool = True) -> float:
    """``<mu (x) mu, A phi>`` with the diagonal removed: mean of ``A phi(v_i, v_j)`` over ``i != j``.

    Gaussian bumps use a compiled loop over pairs unless ``compiled`` is off.
    """
    sample = np.asarray(sample, dtype=float)
    n = sample.shape[0]
    if n > MAX_PAIRWISE_N:
        raise ValueError(f"pairwise sums are capped at N={MAX_PAIRWISE_N} (got {n})")
    if phi.bump is not None and compiled:
        return _bump_pair_mean(phi, sample, spec, order)
    total = 0.0
    # row blocks of the upper triangle keep memory bounded
    rows_per = max(1, 200_000 // n)
    for s in range(0, n - 1, rows_per):
        iu, ju = [], []
        for i in range(s, min(s + rows_per, n - 1)):
            iu.append(np.full(n - i - 1, i))
            ju.append(np.arange(i + 1, n))
        iu = np.concatenate(iu)
        ju = np.concatenate(ju)
        total += math.fsum(a_sym(phi, sample[iu], sample[ju], spec, order=order, m_phi=m_phi))
    return 2.0 * total / (n * (n - 1))


def a_bar_row_means(phi: TestFunction, sample, spec: KernelSpec, *, order: int = 16, m_phi: int = 16):
    """``(1/(N-1)) sum_{j != i} Abar phi(v_i, v_j)`` for every ``i``."""
    sample = np.asarray(sample, dtype=float)
    n = sample.shape[0]
    if n > MAX_PAIRWISE_N:
        raise ValueError(f"pairwise sums are capped at N={MAX_PAIRWISE_N} (got {n})")
    out = np.empty(n)
    for i in range(n):
        others = np.delete(sample, i, axis=0)
        vals = _a_bar_pairs(phi, np.broadcast_to(sample[i], others.shape), others, spec, order, m_phi)
        out[i] = math.fsum(vals) / (n - 1)
    return out


# ---------------------------------------------------------------------------
# empirical flows and residuals


@dataclass
class EmpiricalFlow:
    """Snapshots ``(T, N, 3)`` of a particle system at increasing ``times``."""

    times: np.ndarray
    snapshots: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.snapshots = np.asarray(self.snapshots, dtype=float)
        if self.snapshots.ndim != 3 or self.snapshots.shape[-1] != 3:
            raise ValueError("snapshots must have shape (T, N, 3)")
        if self.times.shape != (self.snapshots.shape[0],):
            raise ValueError("one time per snapshot required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def n_particles(self) -> int:
        return self.snapshots.shape[1]

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"no snapshot at t={t}")
        return int(hits[0])

    def at(self, t: float) -> np.ndarray:
        return self.snapshots[self.index(t)]


def _trapezoid(y, x):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.size < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def weak_residual(flow: EmpiricalFlow, phi: TestFunction, spec: KernelSpec, t: float, *, order: int = 16, m_phi: int = 16, pair_means=None) -> float:
    """``<mu_t, phi> - <mu_0, phi> - int_0^t <mu_s (.) mu_s, A phi> ds``.

    The time integral uses the trapezoid rule on the snapshot grid up to ``t``.
    ``pair_means`` may carry precomputed per-snapshot pair averages.
    """
    if flow.times.size < 2:
        raise ValueError("a residual needs at least two snapshots")
    k = flow.index(t)
    mean_phi = [float(np.mean(phi.value(flow.snapshots[i]))) for i in (0, k)]
    if k == 0:
        return 0.0
    if pair_means is None:
        pair_means = [a_sym_pair_mean(phi, flow.snapshots[i], spec, order=order, m_phi=m_phi) for i in range(k + 1)]
    return mean_phi[1] - mean_phi[0] - _trapezoid(pair_means[: k + 1], flow.times[: k + 1])


def martingale_residual(
    flows: Sequence[EmpiricalFlow],
    phi: TestFunction,
    spec: KernelSpec,
    s: float,
    t: float,
    weight: Optional[Callable[[EmpiricalFlow, int], np.ndarray]] = None,
    *,
    order: int = 16,
    m_phi: int = 16,
    row_means=None,
):
    """Replica estimate of ``E[w (M_t - M_s)]`` for the tracked-particle martingale.

    ``M^phi_t = phi(V_t) - phi(V_0) - int_0^t <mu_u, Abar phi(V_u, .)> du``; every
    particle is tracked (the system is exchangeable) and the empirical measure
    excludes the particle itself.  ``weight(flow, k)`` returns one weight per
    particle computed from snapshots with index ``<= k`` (the snapshot at
    ``s``); default 1.  ``row_means`` optionally supplies precomputed
    ``a_bar_row_means`` per replica and snapshot.  Returns ``(mean, std_error)``.
    """
    if len(flows) < 2:
        raise ValueError("need at least two replicas")
    if not s < t:
        raise ValueError("need s < t")
    per_replica = []
    for r, flow in enumerate(flows):
        if flow.times.size < 2:
            raise ValueError("a residual needs at least two snapshots")
        ks, kt = flow.index(s), flow.index(t)
        rows = []
        for k in range(ks, kt + 1):
            if row_means is not None:
                rows.append(row_means[r][k])
            else:
                rows.append(a_bar_row_means(phi, flow.snapshots[k], spec, order=order, m_phi=m_phi))
        rows = np.array(rows)  # (K, N)
        times = flow.times[ks : kt + 1]
        comp = np.sum(0.5 * (rows[1:] + rows[:-1]) * np.diff(times)[:, None], axis=0)
        dm = phi.value(flow.snapshots[kt]) - phi.value(flow.snapshots[ks]) - comp
        w = np.ones(flow.n_particles) if weight is None else np.asarray(weight(flow, ks), dtype=float)
        per_replica.append(float(np.mean(w * dm)))
    per_replica = np.array(per_replica)
    return float(per_replica.mean()), float(per_replica.std(ddof=1) / math.sqrt(per_replica.size))


def residual_magnitude(flows: Sequence[EmpiricalFlow], phi: TestFunction, spec: KernelSpec, t: float, *,
                       order: int = 16, m_phi: int = 16):
    """Root-mean-square of :func:`weak_residual` over replicas.

    Returns ``(rms, std_error, residuals)``; the error follows from the
    replica spread of the squared residuals by the delta method.
    """
    flows = [getattr(f, "flow", f) for f in flows]
    if len(flows) < 2:
        raise ValueError("need at least two replicas")
    res = np.array([weak_residual(f, phi, spec, t, order=order, m_phi=m_phi) for f in flows])
    sq = res * res
    rms = math.sqrt(float(sq.mean()))
    se = float(sq.std(ddof=1) / math.sqrt(sq.size)) / (2.0 * rms) if rms > 0.0 else 0.0
    return rms, se, res

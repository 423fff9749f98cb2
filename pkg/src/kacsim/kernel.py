"""Collision kernel ``B(z, sigma) sin(theta) = alpha(|z|) beta(theta)`` and its cutoff.

Two angular families are supported:

* ``power_law``: ``beta(theta) = theta**(-1 - nu)`` (non-integrable at 0),
* ``cutoff_uniform``: ``beta(theta) = beta_const`` (uniform deflection angle).

The speed factor is ``alpha(r) = r**gamma``.  With ``eps > 0`` both factors are
regularized, ``alpha_eps(r) = (eps**2 + r**2)**(gamma/2)`` and
``beta_eps = min(beta, 1/eps)``, which makes the total jump rate finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import integrate

__all__ = [
    "KernelSpec",
    "QuadratureError",
    "compute_b",
    "b_regularized",
    "sample_theta",
    "alpha_eps",
    "angular_density",
    "angular_cdf",
    "maxwell_angular_moment",
    "kernel_second_moment",
    "kernel_momentum_transfer",
]

POWER_LAW = "power_law"
CUTOFF_UNIFORM = "cutoff_uniform"
_BETA_FORMS = (POWER_LAW, CUTOFF_UNIFORM)

# below this angle (1 - cos) is integrated through its Taylor series
_SERIES_SPLIT = 0.5
_QUAD_RTOL = 1e-10


class QuadratureError(RuntimeError):
    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class KernelSpec:
    gamma: float = -1.0
    nu: float = 0.25
    eps: float = 0.05
    beta_form: str = POWER_LAW
    beta_const: float = 1.0 / math.pi
    # angular cap parameter; tied to eps unless set explicitly
    eps_angle: float | None = field(default=None)

    def __post_init__(self):
        if self.beta_form not in _BETA_FORMS:
            raise ValueError(f"beta_form must be one of {_BETA_FORMS}, got {self.beta_form!r}")
        if not (-2.0 < self.gamma <= 0.0):
            raise ValueError(
                f"gamma={self.gamma} outside the moderately soft range (-2, 0] "
                "(gamma = 0 is admitted for Maxwell molecules)"
            )
        if not (0.0 < self.nu < 1.0):
            raise ValueError(f"nu={self.nu} must lie in (0, 1): beta(theta) ~ theta^(-1-nu)")
        if not (self.eps >= 0.0 and math.isfinite(self.eps)):
            raise ValueError(f"eps={self.eps} must be finite and >= 0")
        if self.eps_angle is not None and not self.eps_angle > 0.0:
            raise ValueError("eps_angle must be > 0 when given")
        if self.beta_form == CUTOFF_UNIFORM and not self.beta_const > 0.0:
            raise ValueError("beta_const must be > 0")

    @classmethod
    def from_force_exponent(cls, s: float, **kw) -> "KernelSpec":
        """Kernel exponents for an inverse-power repulsion ``F ~ 1/r**s``."""
        if not s > 2.0:
            raise ValueError("force exponent s must exceed 2")
        return cls(gamma=(s - 5.0) / (s - 1.0), nu=2.0 / (s - 1.0), **kw)

    def with_eps(self, eps: float) -> "KernelSpec":
        return replace(self, eps=eps, eps_angle=None if self.eps_angle is None else eps)

    # --- regularization parameters -------------------------------------------------
    @property
    def cap_eps(self) -> float:
        return self.eps if self.eps_angle is None else self.eps_angle

    @property
    def regularized(self) -> bool:
        return self.eps > 0.0

    @property
    def theta_c(self) -> float:
        """Angle below which the cap ``1/eps`` is active (``pi`` if everywhere, 0 if nowhere)."""
        e = self.cap_eps
        if e <= 0.0:
            return 0.0
        if self.beta_form == CUTOFF_UNIFORM:
            return math.pi if self.beta_const * e >= 1.0 else 0.0
        return min(e ** (1.0 / (1.0 + self.nu)), math.pi)

    # --- derived constants -------------------------------------------------------
    @cached_property
    def b(self) -> float:
        return compute_b(self)

    @cached_property
    def b_eps(self) -> float:
        return b_regularized(self)

    @property
    def alpha_sup(self) -> float:
        if self.gamma == 0.0:
            return 1.0
        if self.eps == 0.0:
            return math.inf
        return self.eps ** self.gamma

    @cached_property
    def _angular_pieces(self):
        # masses of the capped angular density on (0, theta_c] and (theta_c, pi]
        e = self.cap_eps
        if e <= 0.0:
            if self.beta_form == CUTOFF_UNIFORM:
                return 0.0, self.beta_const * math.pi
            return 0.0, math.inf
        if self.beta_form == CUTOFF_UNIFORM:
            cap = min(self.beta_const, 1.0 / e)
            return cap * math.pi, 0.0
        tc = self.theta_c
        low = tc / e
        if tc >= math.pi:
            return low, 0.0
        nu = self.nu
        return low, (tc ** -nu - math.pi ** -nu) / nu

    @property
    def angular_mass(self) -> float:
        """``int_0^pi min(beta, 1/eps) dtheta``."""
        lo, hi = self._angular_pieces
        return lo + hi

    @property
    def angular_mass_eps(self) -> float:
        """Total angular rate ``2 pi int_0^pi min(beta, 1/eps) dtheta``."""
        return 2.0 * math.pi * self.angular_mass

    def beta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.beta_form == CUTOFF_UNIFORM:
            return np.full_like(theta, self.beta_const)
        with np.errstate(divide="ignore"):
            return theta ** (-1.0 - self.nu)

    def beta_eps(self, theta):
        e = self.cap_eps
        if e <= 0.0:
            return self.beta(theta)
        return np.minimum(self.beta(theta), 1.0 / e)

    def alpha(self, r):
        return alpha_eps(self, r)

    def metadata(self) -> dict:
        """Derived constants echoed into output headers."""
        out = {
            "gamma": self.gamma,
            "nu": self.nu,
            "eps": self.eps,
            "beta_form": self.beta_form,
            "beta_normalization": "c1=c2=1 (beta = theta^(-1-nu))"
            if self.beta_form == POWER_LAW
            else f"beta_const={self.beta_const!r}",
            "b": self.b,
        }
        if self.regularized:
            out.update(
                b_eps=self.b_eps,
                alpha_sup=self.alpha_sup,
                angular_mass_eps=self.angular_mass_eps,
                theta_c=self.theta_c,
            )
        return out


# ---------------------------------------------------------------------------
# momentum-transfer constants


def _one_minus_cos_moment(a: float, nu: float) -> float:
    """``int_0^a (1 - cos t) t**(-1-nu) dt`` by term-wise integration of the series."""
    total = 0.0
    k = 1
    term_pow = a * a  # a**(2k)
    fact = 2.0  # (2k)!
    while True:
        term = term_pow * a ** (-nu) / (fact * (2 * k - nu))
        total += term if k % 2 == 1 else -term
        if term < 1e-18 * abs(total):
            return total
        k += 1
        term_pow *= a * a
        fact *= (2 * k - 1) * (2 * k)


def _quad(f, a, b, what):
    if b <= a:
        return 0.0
    val, err = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=200)
    if err > _QUAD_RTOL * max(abs(val), 1e-300):
        raise QuadratureError(
            f"{what}: quadrature did not converge (estimate {val:.16g}, error {err:.3g})", val, err
        )
    return val


def _power_moment(lo: float, hi: float, nu: float) -> float:
    """``int_lo^hi (1 - cos t) t**(-1-nu) dt`` for ``0 <= lo <= hi <= pi``."""
    split = min(_SERIES_SPLIT, hi)
    total = 0.0
    if lo < split:
        total += _one_minus_cos_moment(split, nu)
        if lo > 0.0:
            total -= _one_minus_cos_moment(lo, nu)
    start = max(lo, split)
    total += _quad(lambda t: (1.0 - math.cos(t)) * t ** (-1.0 - nu), start, hi, "b")
    return total


def _theta_minus_sin(x: float) -> float:
    if x > 0.1:
        return x - math.sin(x)
    # x - sin x = x^3/6 - x^5/120 + ...
    total, term, k = 0.0, x, 1
    while True:
        term *= x * x / ((2 * k) * (2 * k + 1))
        total += term if k % 2 == 1 else -term
        if term < 1e-18 * total:
            return total
        k += 1


def compute_b(spec: KernelSpec) -> float:
    """``b = pi int_0^pi (1 - cos theta) beta(theta) dtheta`` for the uncapped kernel."""
    if spec.beta_form == CUTOFF_UNIFORM:
        return spec.beta_const * math.pi ** 2
    return math.pi * _power_moment(0.0, math.pi, spec.nu)


def b_regularized(spec: KernelSpec) -> float:
    """``b_eps = pi int_0^pi (1 - cos theta) min(beta, 1/eps) dtheta``."""
    e = spec.cap_eps
    if not e > 0.0:
        raise ValueError("b_regularized needs eps > 0")
    if spec.beta_form == CUTOFF_UNIFORM:
        return min(spec.beta_const, 1.0 / e) * math.pi ** 2
    tc = spec.theta_c
    capped = _theta_minus_sin(tc) / e
    return math.pi * (capped + _power_moment(tc, math.pi, spec.nu))


def maxwell_angular_moment(spec: KernelSpec, capped: bool = True) -> float:
    """``pi int_0^pi sin(theta)**2 beta_eps(theta) dtheta``."""
    if spec.beta_form == CUTOFF_UNIFORM:
        cap = spec.beta_const if not capped or spec.cap_eps == 0 else min(spec.beta_const, 1.0 / spec.cap_eps)
        return math.pi * cap * math.pi / 2.0
    nu = spec.nu
    tc = spec.theta_c if capped else 0.0
    total = 0.0
    if tc > 0.0:
        # int_0^tc sin^2 = tc/2 - sin(2 tc)/4
        total += (0.5 * tc - 0.25 * math.sin(2.0 * tc)) / spec.cap_eps
    # sin^2 t t^(-1-nu) ~ t^(1-nu) near 0: integrable, use the algebraic weight
    lo = tc
    if lo < _SERIES_SPLIT:
        # int_lo^split sin^2(t) t^(-1-nu) via series sin^2 t = sum (-1)^(k+1) 2^(2k-1) t^(2k)/(2k)!
        def series(a):
            s, k, fact, p = 0.0, 1, 2.0, a * a
            while True:
                term = 2.0 ** (2 * k - 1) * p * a ** (-nu) / (fact * (2 * k - nu))
                s += term if k % 2 == 1 else -term
                if term < 1e-18 * abs(s):
                    return s
                k += 1
                p *= a * a
                fact *= (2 * k - 1) * (2 * k)

        total += series(_SERIES_SPLIT) - (series(lo) if lo > 0.0 else 0.0)
        lo = _SERIES_SPLIT
    total += _quad(lambda t: math.sin(t) ** 2 * t ** (-1.0 - nu), lo, math.pi, "maxwell moment")
    return math.pi * total


# ---------------------------------------------------------------------------
# speed factor and angular sampling


def alpha_eps(spec: KernelSpec, r):
    """``(eps**2 + r**2)**(gamma/2)``; with ``eps = 0`` this is ``r**gamma``."""
    r = np.asarray(r, dtype=float)
    if spec.gamma == 0.0:
        return np.ones_like(r)
    with np.errstate(divide="ignore"):
        return (spec.eps * spec.eps + r * r) ** (0.5 * spec.gamma)


def angular_density(spec: KernelSpec, theta):
    """Normalized density of the capped deflection angle on ``(0, pi]``."""
    theta = np.asarray(theta, dtype=float)
    out = spec.beta_eps(theta) / spec.angular_mass
    return np.where((theta > 0) & (theta <= math.pi), out, 0.0)


def angular_cdf(spec: KernelSpec, theta):
    """Closed-form CDF of :func:`angular_density`."""
    theta = np.clip(np.asarray(theta, dtype=float), 0.0, math.pi)
    lo, hi = spec._angular_pieces
    mass = lo + hi
    if spec.beta_form == CUTOFF_UNIFORM:
        return theta / math.pi
    tc, e, nu = spec.theta_c, spec.cap_eps, spec.nu
    below = theta / e
    with np.errstate(divide="ignore"):
        above = lo + (tc ** -nu - theta ** -nu) / nu
    return np.where(theta <= tc, below, above) / mass


def sample_theta(spec: KernelSpec, u):
    """Map uniforms ``u`` in [0, 1) to deflection angles by exact inversion.

    The capped density is constant on ``(0, theta_c]`` and follows the power
    law on ``(theta_c, pi]``; each piece has a closed-form inverse CDF.
    """
    if not spec.cap_eps > 0.0:
        raise ValueError("sampling the deflection angle needs eps > 0")
    u = np.asarray(u, dtype=float)
    if spec.beta_form == CUTOFF_UNIFORM:
        # (0, pi]: map u in [0, 1) to pi * (1 - u)
        return math.pi * (1.0 - u)
    lo, hi = spec._angular_pieces
    mass = lo + hi
    s = u * mass
    tc, e, nu = spec.theta_c, spec.cap_eps, spec.nu
    # clamp keeps the branch not taken finite
    x = np.maximum(tc ** -nu - nu * (s - lo), math.pi ** -nu)
    upper = x ** (-1.0 / nu)
    return np.where(s < lo, s * e, upper)


# ---------------------------------------------------------------------------
# sphere integrals of the collision map


def _pair(v, v_star):
    v = np.asarray(v, dtype=float).reshape(3)
    vs = np.asarray(v_star, dtype=float).reshape(3)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(vs))):
        raise ValueError("velocities must be finite")
    if np.array_equal(v, vs):
        raise ValueError("v and v_star must differ")
    return v, vs


def _jumps(v, vs, theta, m_phi):
    """``v' - v`` on a (theta, phi) product grid, shape ``(len(theta), m_phi, 3)``."""
    from .geometry import build_frame
    from .quadrature import phi_nodes

    z = v - vs
    r = float(np.linalg.norm(z))
    fr = build_frame(z)
    phi, wphi = phi_nodes(m_phi)
    th = np.asarray(theta, dtype=float)[:, None, None]
    ph = phi[None, :, None]
    sigma = np.cos(th) * fr.axis + np.sin(th) * (np.cos(ph) * fr.i + np.sin(ph) * fr.j)
    vp = 0.5 * (v + vs) + 0.5 * r * sigma
    return vp - v, wphi, r


def _require_unregularized(spec):
    if spec.regularized:
        raise ValueError("sphere identities are stated for the unregularized kernel (eps = 0)")


def kernel_second_moment(spec: KernelSpec, v, v_star, *, order: int = 32, m_phi: int = 16) -> float:
    """``int_S2 |v' - v|^2 B(v - v_star, sigma) dsigma`` by product quadrature."""
    from .quadrature import theta_rule

    _require_unregularized(spec)
    v, vs = _pair(v, v_star)
    theta, wt = theta_rule(spec, order)
    d, wphi, r = _jumps(v, vs, theta, m_phi)
    inner = np.einsum("tpk,tpk,p->t", d, d, wphi)
    val = float(np.dot(inner, wt)) * float(alpha_eps(spec, r))
    if not math.isfinite(val):
        raise QuadratureError("second moment quadrature produced a non-finite value", val, float("inf"))
    return val


def kernel_momentum_transfer(spec: KernelSpec, v, v_star, *, eta: float = 0.0, order: int = 32,
                             m_phi: int = 16) -> np.ndarray:
    """``int (v' - v) B dsigma`` over ``theta > eta``; ``eta = 0`` is the principal value.

    The azimuthal sum is taken on the collision map itself, so the transverse
    part cancels numerically rather than by construction.
    """
    from .quadrature import theta_rule

    _require_unregularized(spec)
    v, vs = _pair(v, v_star)
    if eta < 0.0 or eta >= math.pi:
        raise ValueError("eta must lie in [0, pi)")
    alpha = float(alpha_eps(spec, np.linalg.norm(v - vs)))
    if eta == 0.0:
        theta, wt = theta_rule(spec, order)
        d, wphi, _ = _jumps(v, vs, theta, m_phi)
        return alpha * np.einsum("tpk,p,t->k", d, wphi, wt)
    from .quadrature import truncated_theta_rule

    theta, wt = truncated_theta_rule(spec, eta, order)
    d, wphi, _ = _jumps(v, vs, theta, m_phi)
    return alpha * np.einsum("tpk,p,t->k", d, wphi, wt)

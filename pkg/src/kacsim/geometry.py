"""Binary collision maps and the polar parametrization of the scattering sphere.

Velocities are plain float arrays of shape ``(3,)`` (or ``(..., 3)`` for the
vectorized helpers).  The scalar ``_nb`` kernels are compiled with numba and
shared with the event engine so that the hot loop and the library surface use
the same arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "DeflectionFrame",
    "build_frame",
    "build_frames",
    "sigma_from_angles",
    "post_collide",
    "deflection_distance",
    "angle_between",
]


@dataclass(frozen=True)
class DeflectionFrame:
    """Right-handed orthonormal triad ``(i, j, axis)`` with ``i x j = axis``."""

    axis: np.ndarray
    i: np.ndarray
    j: np.ndarray

    def check(self, tol: float = 1e-12) -> None:
        m = np.stack([self.axis, self.i, self.j])
        err = np.abs(m @ m.T - np.eye(3)).max()
        if err > tol:
            raise ValueError(f"frame not orthonormal (max defect {err:.3e})")


@njit(cache=True)
def _frame_nb(zx, zy, zz):
    norm = np.sqrt(zx * zx + zy * zy + zz * zz)
    ax, ay, az = zx / norm, zy / norm, zz / norm
    # seed with the coordinate axis least aligned with z (first index on ties)
    k = 0
    best = abs(ax)
    if abs(ay) < best:
        k = 1
        best = abs(ay)
    if abs(az) < best:
        k = 2
    ex = 1.0 if k == 0 else 0.0
    ey = 1.0 if k == 1 else 0.0
    ez = 1.0 if k == 2 else 0.0
    d = ex * ax + ey * ay + ez * az
    ix, iy, iz = ex - d * ax, ey - d * ay, ez - d * az
    inorm = np.sqrt(ix * ix + iy * iy + iz * iz)
    ix, iy, iz = ix / inorm, iy / inorm, iz / inorm
    jx = ay * iz - az * iy
    jy = az * ix - ax * iz
    jz = ax * iy - ay * ix
    return ax, ay, az, ix, iy, iz, jx, jy, jz


@njit(cache=True)
def _collide_nb(v, i, j, theta, phi):
    """Apply the collision of particles ``i`` and ``j`` in place.

    ``theta`` is the deflection angle measured from ``v[i] - v[j]``; the pair
    is left untouched when the velocities coincide.
    """
    zx = v[i, 0] - v[j, 0]
    zy = v[i, 1] - v[j, 1]
    zz = v[i, 2] - v[j, 2]
    r = np.sqrt(zx * zx + zy * zy + zz * zz)
    if r == 0.0:
        return
    ax, ay, az, ix, iy, iz, jx, jy, jz = _frame_nb(zx, zy, zz)
    ct = np.cos(theta)
    st = np.sin(theta)
    cp = np.cos(phi)
    sp = np.sin(phi)
    sx = ax * ct + (ix * cp + jx * sp) * st
    sy = ay * ct + (iy * cp + jy * sp) * st
    sz = az * ct + (iz * cp + jz * sp) * st
    mx = 0.5 * (v[i, 0] + v[j, 0])
    my = 0.5 * (v[i, 1] + v[j, 1])
    mz = 0.5 * (v[i, 2] + v[j, 2])
    h = 0.5 * r
    v[i, 0] = mx + h * sx
    v[i, 1] = my + h * sy
    v[i, 2] = mz + h * sz
    v[j, 0] = mx - h * sx
    v[j, 1] = my - h * sy
    v[j, 2] = mz - h * sz


def build_frame(z) -> DeflectionFrame:
    """Deterministic polar frame with axis ``z/|z|``.

    The auxiliary direction is the coordinate axis on which ``z/|z|`` has the
    smallest magnitude, so the frame depends only on the direction of ``z``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (3,):
        raise ValueError("z must be a 3-vector")
    if not np.all(np.isfinite(z)) or not np.any(z != 0.0):
        raise ValueError("cannot build a frame around a zero or non-finite vector")
    c = _frame_nb(z[0], z[1], z[2])
    return DeflectionFrame(axis=np.array(c[0:3]), i=np.array(c[3:6]), j=np.array(c[6:9]))


def build_frames(z: np.ndarray):
    """Vectorized :func:`build_frame` for ``z`` of shape ``(..., 3)``.

    Returns ``(axis, i, j)`` arrays with the same leading shape.  Rows with
    ``z == 0`` yield NaNs; callers mask them out.
    """
    z = np.asarray(z, dtype=float)
    norm = np.sqrt(np.einsum("...k,...k->...", z, z))
    with np.errstate(invalid="ignore", divide="ignore"):
        a = z / norm[..., None]
    absa = np.abs(a)
    # argmin returns the first index on ties, matching _frame_nb
    k = np.argmin(absa, axis=-1)
    e = np.zeros_like(a)
    np.put_along_axis(e, k[..., None], 1.0, axis=-1)
    d = np.take_along_axis(a, k[..., None], axis=-1)
    i = e - d * a
    i = i / np.sqrt(np.einsum("...k,...k->...", i, i))[..., None]
    j = np.cross(a, i)
    return a, i, j


def sigma_from_angles(frame: DeflectionFrame, theta, phi) -> np.ndarray:
    """Unit vector at polar angle ``theta`` from ``frame.axis`` and azimuth ``phi``.

    Broadcasts over array-valued ``theta``/``phi``; the result has shape
    ``broadcast(theta, phi).shape + (3,)``.
    """
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    return frame.axis * np.cos(theta) + (frame.i * np.cos(phi) + frame.j * np.sin(phi)) * np.sin(theta)


def post_collide(v, v_star, sigma):
    """Post-collision velocities ``(v', v'_*)`` for scattering direction ``sigma``.

    Works on single vectors or on broadcastable stacks of shape ``(..., 3)``.
    Coincident inputs return the pair unchanged.
    """
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    mid = 0.5 * (v + v_star)
    z = v - v_star
    half = 0.5 * np.sqrt(np.einsum("...k,...k->...", z, z))[..., None]
    return mid + half * sigma, mid - half * sigma


def deflection_distance(v, v_star, theta):
    """``|v' - v| = sin(theta/2) |v - v_*|`` (same for the partner)."""
    z = np.asarray(v, dtype=float) - np.asarray(v_star, dtype=float)
    return np.sin(0.5 * np.asarray(theta, dtype=float)) * np.sqrt(np.einsum("...k,...k->...", z, z))


def angle_between(z, sigma):
    """Deflection angle in ``[0, pi]`` between ``z`` and unit ``sigma``.

    Uses ``atan2(|z x s|, z . s)``, which stays accurate near 0 and pi where
    ``arccos`` loses digits.
    """
    z = np.asarray(z, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    cr = np.cross(z, sigma)
    return np.arctan2(np.sqrt(np.einsum("...k,...k->...", cr, cr)), np.einsum("...k,...k->...", z, sigma))

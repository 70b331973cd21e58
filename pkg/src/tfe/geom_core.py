"""Pointwise conversions between null coordinates, mu, U and J."""

import cmath
import math
from dataclasses import dataclass

import numpy as np

INF = complex(math.inf, 0.0)

ORTHO_TOL = 1e-10
UNIT_TOL = 1e-12


def is_inf(u):
    return not cmath.isfinite(complex(u))


@dataclass(frozen=True)
class NullCoords:
    """A point of C^4 held in Cartesian and null form at once."""

    x: tuple
    z: tuple

    @property
    def z1(self):
        return self.z[0]

    @property
    def zt1(self):
        return self.z[1]

    @property
    def z2(self):
        return self.z[2]

    @property
    def zt2(self):
        return self.z[3]

    @classmethod
    def from_z(cls, z):
        z1, zt1, z2, zt2 = (complex(v) for v in z)
        x = ((z1 + zt1) / 2, (z1 - zt1) / 2j, (z2 + zt2) / 2, (z2 - zt2) / 2j)
        return cls(x, (z1, zt1, z2, zt2))

    def is_real(self, tol=0.0):
        return (abs(self.zt1 - self.z1.conjugate()) <= tol
                and abs(self.zt2 - self.z2.conjugate()) <= tol)

    def on_minkowski_slice(self, p, tol=0.0):
        """True when self lies on the Minkowski slice through p (x0 = -i t)."""
        q = p.x if isinstance(p, NullCoords) else tuple(complex(v) for v in p)
        if abs(self.x[0].real - q[0].real) > tol:
            return False
        return all(abs(self.x[k].imag - q[k].imag) <= tol for k in (1, 2, 3))

    def __add__(self, other):
        return null_coords(tuple(a + b for a, b in zip(self.x, other.x)))

    def __sub__(self, other):
        return null_coords(tuple(a - b for a, b in zip(self.x, other.x)))

    def __neg__(self):
        return null_coords(tuple(-a for a in self.x))


def null_coords(x):
    x0, x1, x2, x3 = (complex(v) for v in x)
    z = (x0 + 1j * x1, x0 - 1j * x1, x2 + 1j * x3, x2 - 1j * x3)
    return NullCoords((x0, x1, x2, x3), z)


def null_z(x):
    """Vectorised null coordinates of an (..., 4) array."""
    x = np.asarray(x, dtype=complex)
    x0, x1, x2, x3 = np.moveaxis(x, -1, 0)
    return x0 + 1j * x1, x0 - 1j * x1, x2 + 1j * x3, x2 - 1j * x3


def stereo_inv(u):
    """Inverse stereographic projection from (-1,0,0); vectorised."""
    u = np.asarray(u, dtype=complex)
    out = np.empty(u.shape + (3,))
    fin = np.isfinite(u)
    small = fin & (np.abs(u) <= 1.0)
    big = ~small
    us = u[small]
    n = np.abs(us) ** 2
    out[small] = np.stack([1 - n, 2 * us.real, 2 * us.imag], -1) / (1 + n)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(fin[big], 1 / np.where(fin[big], u[big], 1), 0)
    m = np.abs(v) ** 2
    out[big] = np.stack([m - 1, 2 * v.real, -2 * v.imag], -1) / (1 + m)[:, None]
    return out if out.ndim > 1 else out.reshape(3)


def stereo(U):
    """Stereographic projection from (-1,0,0) to C ∪ {inf}; scalar input."""
    U1, U2, U3 = (float(c) for c in U)
    if U1 >= 0:
        return complex(U2, U3) / (1 + U1)
    w = complex(U2, -U3)
    if w == 0:
        return INF
    return (1 - U1) / w


def mu_to_direction(mu):
    mu = np.asarray(mu, dtype=complex)
    fin = np.isfinite(mu)
    u = np.where(fin, 1j * np.where(fin, mu, 0), INF)
    return stereo_inv(u)


def direction_to_mu(U):
    u = stereo(U)
    return INF if is_inf(u) else -1j * u


def chordal(a, b):
    """Chordal distance on the Riemann sphere, inf allowed; vectorised."""
    pa = stereo_inv(a)
    pb = stereo_inv(b)
    return np.linalg.norm(pa - pb, axis=-1) / 2


def check_unit(U, tol=UNIT_TOL):
    U = np.asarray(U, dtype=float)
    if U.shape != (3,) or abs(np.linalg.norm(U) - 1) > tol:
        raise ValueError(f"not a unit 3-vector: {U}")
    return U


def frame_from_direction(U):
    """Orthonormal (e2, e3) with (U, e2, e3) positive and e2 + i e3 from u."""
    U = check_unit(U, 1e-10)
    if U[0] >= 0:
        u = stereo(U)
        n = abs(u) ** 2
        c = np.array([-2 * u, 1 - u * u, 1j * (1 + u * u)]) / (1 + n)
    else:
        w = complex(U[1], -U[2])
        if w == 0:
            v, ph = 0j, 1.0
        else:
            v = w / (1 - U[0])
            ph = v.conjugate() / v
        m = abs(v) ** 2
        c = np.array([-2 * v.conjugate(), m - ph, 1j * (m + ph)]) / (1 + m)
    return c.real.copy(), c.imag.copy()


def hermitian_from_direction(U):
    """Matrix of J on R^4 with J e0 = (0,U) and J (0,e2) = (0,e3)."""
    U = check_unit(U, 1e-10)
    e2, e3 = frame_from_direction(U)
    B = np.zeros((4, 4))
    B[0, 0] = 1.0
    B[1:, 1] = U
    B[1:, 2] = e2
    B[1:, 3] = e3
    Js = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], float)
    return B @ Js @ B.T


def jperp_rotate(U, X):
    """Rotate X in the plane orthogonal to U by a right angle: U x X."""
    U = check_unit(U, 1e-10)
    X = np.asarray(X, dtype=float)
    if abs(U @ X) > ORTHO_TOL * max(1.0, np.linalg.norm(X)):
        raise ValueError("X is not orthogonal to U")
    return np.cross(U, X)


def null_direction_from_U(U):
    U = check_unit(U, 1e-10)
    return np.concatenate([[1.0], U])

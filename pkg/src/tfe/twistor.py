"""Twistor space CP^3: incidence, projection to slices, contact forms."""

from dataclasses import dataclass

import numpy as np

from .geom_core import NullCoords, null_coords

SLICE_KINDS = ("R4", "R3", "M4")


class TwistorPoint:
    """Homogeneous coordinates [w0, w1, w2, w3] with projective equality."""

    __slots__ = ("w",)

    def __init__(self, w):
        w = np.array(w, dtype=complex).reshape(4)
        if not np.any(w):
            raise ValueError("twistor point needs a nonzero component")
        self.w = w

    def normalized(self):
        k = int(np.argmax(np.abs(self.w)))
        return self.w / self.w[k]

    def __iter__(self):
        return iter(self.w)

    def __getitem__(self, k):
        return self.w[k]

    def __eq__(self, other, tol=1e-12):
        if not isinstance(other, TwistorPoint):
            return NotImplemented
        a, b = self.normalized(), other.normalized()
        wedge = np.abs(np.outer(a, b) - np.outer(b, a)).max()
        return wedge <= tol * np.abs(a).max() * np.abs(b).max()

    __hash__ = None

    def __repr__(self):
        return "TwistorPoint([" + ", ".join(f"{c:.6g}" for c in self.w) + "])"


def _w(w):
    return w.w if isinstance(w, TwistorPoint) else np.asarray(w, dtype=complex)


class SliceInfinity:
    """The single point at infinity added to a real slice."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "SLICE_INFINITY"


SLICE_INFINITY = SliceInfinity()


@dataclass(frozen=True)
class SliceSpec:
    """A slice of C^4 through base point a.

    R4: x = a + y with y real.  R3: x = (a0 - i t, a1 + y1, a2 + y2, a3 + y3).
    M4: x = (a0 - i y0, a1 + y1, a2 + y2, a3 + y3) with y0 the time.
    """

    a: tuple = (0j, 0j, 0j, 0j)
    kind: str = "R4"
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in SLICE_KINDS:
            raise ValueError(f"unknown slice kind {self.kind!r}")
        object.__setattr__(self, "a", tuple(complex(v) for v in self.a))
        object.__setattr__(self, "t", float(self.t))

    @property
    def base(self):
        """Effective base point; for R3 the time shift is folded into a0."""
        a = list(self.a)
        if self.kind == "R3":
            a[0] = a[0] - 1j * self.t
        return tuple(a)

    @property
    def dim(self):
        return 3 if self.kind == "R3" else 4

    def embed(self, y):
        """Cartesian C^4 point of slice coordinates y."""
        y = np.asarray(y, dtype=float)
        b = np.array(self.base)
        if self.kind == "R3":
            x = b.copy()
            x[1:] = b[1:] + y
        elif self.kind == "R4":
            x = b + y
        else:
            x = b + y.astype(complex)
            x[0] = b[0] - 1j * y[0]
        return x

    def point(self, y):
        return null_coords(self.embed(y))

    @property
    def holo_scale(self):
        """Factors c_k with d/dx_k = c_k d/dy_k for the holomorphic x_k."""
        if self.kind == "M4":
            return np.array([1j, 1, 1, 1])
        if self.kind == "R3":
            return np.array([1, 1, 1])
        return np.array([1, 1, 1, 1], dtype=complex)


def incidence_residual(w, p: NullCoords):
    """Incidence defect of p against the normalised representative of w."""
    v = _w(w)
    w0, w1, w2, w3 = v / v[int(np.argmax(np.abs(v)))]
    return (w0 * p.z1 - w1 * p.zt2 - w2, w0 * p.z2 + w1 * p.zt1 - w3)


def _project0(w):
    w0, w1, w2, w3 = w
    n = abs(w0) ** 2 + abs(w1) ** 2
    if n == 0:
        return None
    z1 = (w0.conjugate() * w2 + w1 * w3.conjugate()) / n
    z2 = (w0.conjugate() * w3 - w1 * w2.conjugate()) / n
    return z1, z2


def twistor_project(w, s: SliceSpec = None):
    """Point of the real slice R^4_a whose alpha-plane contains w.

    The result lives in R^4_a = a + R^4; the fibre w0 = w1 = 0 maps to the
    point at infinity.
    """
    if s is None:
        s = SliceSpec()
    if s.kind != "R4":
        raise ValueError("twistor_project needs a real-R4 slice")
    a = s.a
    v = translate_twistor(tuple(-c for c in a), w).w if any(a) else _w(w)
    r = _project0(v)
    if r is None:
        return SLICE_INFINITY
    z1, z2 = r
    p = NullCoords.from_z((z1, z1.conjugate(), z2, z2.conjugate()))
    if any(a):
        p = p + null_coords(a)
    return p


def n5_value(w, s: SliceSpec = None):
    """Real quadric whose zero set is the twistors over an R^3 slice.

    Evaluated on the representative normalised by its largest component,
    after undoing the slice translation.
    """
    v = _w(w)
    if s is not None and any(s.base):
        a = s.base
        v = translate_twistor(tuple(-c for c in a), v).w
    v = v / v[int(np.argmax(np.abs(v)))]
    w0, w1, w2, w3 = v
    return float((w0 * w2.conjugate() + w0.conjugate() * w2
                  + w1 * w3.conjugate() + w1.conjugate() * w3).real)


def fundamental_map(p: NullCoords, w01):
    w0, w1 = (complex(c) for c in w01)
    if w0 == 0 and w1 == 0:
        raise ValueError("[w0, w1] must not vanish")
    return TwistorPoint([w0, w1, w0 * p.z1 - w1 * p.zt2, w0 * p.z2 + w1 * p.zt1])


def contact_form(a0, w, dw):
    """Theta_a evaluated on the tangent vector dw at w."""
    w0, w1, w2, w3 = _w(w)
    d0, d1, d2, d3 = np.asarray(dw, dtype=complex)
    a0 = complex(a0)
    return (-2 * a0 * (w1 * d0 - w0 * d1)
            + w1 * d2 - w2 * d1 - w0 * d3 + w3 * d0)


def translate_twistor(a, w):
    """Lift of the translation x -> x + a (a Cartesian) to twistor space."""
    pa = null_coords(a)
    w0, w1, w2, w3 = _w(w)
    return TwistorPoint([w0, w1,
                         w2 + pa.z1 * w0 - pa.zt2 * w1,
                         w3 + pa.z2 * w0 + pa.zt1 * w1])


def translation_matrix(a):
    """Linear map of translate_twistor as a 4x4 matrix."""
    pa = null_coords(a)
    M = np.eye(4, dtype=complex)
    M[2, 0], M[2, 1] = pa.z1, -pa.zt2
    M[3, 0], M[3, 1] = pa.z2, pa.zt1
    return M

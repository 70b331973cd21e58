"""Residuals of the mu-equations and harmonic-morphism PDEs; the superminimal solve."""

from dataclasses import dataclass

import numpy as np

from .foliation import ResidualSample
from .geom_core import chordal, null_coords
from .numdiff import Stencil, fd_complex_derivative, fd_gradient, fd_gradient_and_second
from .surface import builtin_surface, kerr_polynomial, rotsym_zeta_tilde, solve_mu
from .twistor import SliceSpec, contact_form, fundamental_map


EPS = np.finfo(float).eps


class BranchLocusError(ArithmeticError):
    pass


class CharacteristicDegenerate(ArithmeticError):
    pass


# ---------------------------------------------------------------- mu equations

def _wirtinger(g, kind):
    c = SliceSpec(kind=kind).holo_scale
    g0, g1, g2, g3 = g * c
    return (g0 - 1j * g1) / 2, (g0 + 1j * g1) / 2, (g2 - 1j * g3) / 2, (g2 + 1j * g3) / 2


def mu_residuals(mu, kind, p, h):
    """ER pair on R4 slices, EM pair on Minkowski slices.

    mu maps slice coordinates y (4 reals) to C ∪ {inf}.  When |mu(p)| > 1
    the equations are checked for nu = 1/mu instead.
    """
    if kind not in ("R4", "M4"):
        raise ValueError("mu_residuals needs an R4 or M4 slice")
    p = tuple(float(v) for v in p)
    m0 = complex(mu(np.array(p)))
    flip = not np.isfinite(m0) or abs(m0) > 1
    if flip:
        def f(y):
            v = complex(mu(y))
            return 0j if not np.isfinite(v) else 1 / v
    else:
        f = mu
    m = complex(f(np.array(p)))
    g = fd_gradient(f, Stencil(p, h))
    dz1, dzt1, dz2, dzt2 = _wirtinger(g, kind)
    if flip:
        r1, r2 = m * dzt1 - dz2, m * dzt2 + dz1
    else:
        r1, r2 = dzt1 - m * dz2, dzt2 + m * dz1
    ids = ("ER1", "ER2") if kind == "R4" else ("EM1", "EM2")
    floor = 32 * EPS * max(1.0, abs(m)) / h
    return (ResidualSample(ids[0], p, h, abs(r1), floor),
            ResidualSample(ids[1], p, h, abs(r2), floor))


def charted(f, y):
    """f or 1/f, whichever is bounded by 1 at y; used for mu-valued fields."""
    v = complex(f(np.asarray(y, float)))
    if np.isfinite(v) and abs(v) <= 1:
        return f

    def g(x):
        w = complex(f(x))
        return 0j if not np.isfinite(w) else 1 / w
    return g


PDE_KIND = {"LAPLACE": "R4", "HWC_EUCL": "R4", "HYP": "R4", "ORTHOG": "R4",
            "WAVE": "M4", "HWC_MINK": "M4"}


def pde_residual(phi, which, p, h):
    """Second-order harmonic-morphism residuals from central differences.

    phi maps slice coordinates y to C; for WAVE and HWC_MINK y = (t, x1, x2, x3),
    otherwise y is the offset from the slice base point in R^4.
    """
    if which not in PDE_KIND:
        raise ValueError(f"unknown equation {which}")
    p = np.array(p, dtype=float)
    if which == "ORTHOG":
        p[0] = 0.0
        F = max(1.0, abs(complex(phi(p))))
        g = fd_gradient(phi, Stencil(tuple(p), h, (0,)))
        return ResidualSample(which, tuple(p), h, float(abs(g[0])), 16 * EPS * F / h)
    f0, g, d2 = fd_gradient_and_second(phi, Stencil(tuple(p), h))
    F = max(1.0, float(abs(f0)))
    second = 64 * EPS * F / h**2
    first = 64 * EPS * F * (1 + np.abs(g).max()) / h
    if which == "LAPLACE":
        r, floor = d2.sum(), second
    elif which == "HWC_EUCL":
        r, floor = (g * g).sum(), first
    elif which == "WAVE":
        r, floor = -d2[0] + d2[1:].sum(), second
    elif which == "HWC_MINK":
        r, floor = -g[0] ** 2 + (g[1:] ** 2).sum(), first
    else:
        r = p[0] * d2.sum() - 2 * g[0]
        floor = max(1.0, abs(p[0])) * second + first
    return ResidualSample(which, tuple(p), h, float(abs(r)), floor)


# ---------------------------------------------------------------- charts

@dataclass(frozen=True)
class ChartParam:
    """Affine chart (zeta, eta) -> [w] of a surface, with Theta_a components."""

    name: str
    w: object
    theta: object
    inverse: object
    zeta_tilde: object = None

    def eval_w(self, zeta, eta):
        return np.array(self.w(complex(zeta), complex(eta)), dtype=complex)

    def eval_theta(self, a0, zeta, eta):
        return self.theta(complex(a0), zeta, eta)

    def theta_numeric(self, a0, zeta, eta, h=1e-5):
        w = self.eval_w(zeta, eta)
        dz = (self.eval_w(zeta + h, eta) - self.eval_w(zeta - h, eta)) / (2 * h)
        de = (self.eval_w(zeta, eta + h) - self.eval_w(zeta, eta - h)) / (2 * h)
        return contact_form(a0, w, dz), contact_form(a0, w, de)


def _cubic_zt(a0, zeta, eta):
    if a0 == 0:
        return zeta * (eta - 1) ** 3 / eta
    D = np.sqrt(1 + 8j * a0)
    al1, al2 = (1 + D) / 2, (1 - D) / 2
    return -zeta * (2j * a0 + eta - eta**2) * ((eta - al1) / (eta - al2)) ** (2 / D)


def make_chart(name, s=1.0):
    if name == "villarceau":
        return ChartParam(
            "villarceau",
            lambda z, e: (1, z, e, -s * z),
            lambda a0, z, e: (2 * a0 - e + s, z),
            lambda w: (w[1] / w[0], w[2] / w[0]),
            lambda a0, z, e: -(-2 * a0 + e - s) / z)
    if name == "radial":
        return ChartParam(
            "radial",
            lambda z, e: (1, z, e, z * e),
            lambda a0, z, e: (2 * a0 - 2 * e, 0 * z),
            lambda w: (w[1] / w[0], w[2] / w[0]),
            lambda a0, z, e: z)
    if name == "circles":
        return ChartParam(
            "circles",
            lambda z, e: (1, e, -z, z * e),
            lambda a0, z, e: (-2 * e, 2 * a0 + 0 * z),
            lambda w: (-w[2] / w[0], w[1] / w[0]),
            lambda a0, z, e: z - a0 * np.log(e))
    if name == "rotsym":
        return ChartParam(
            "rotsym",
            lambda z, e: (1, z * e, -e, z),
            lambda a0, z, e: (e * e + 2 * a0 * e - 1, 2 * a0 * z),
            lambda w: (w[3] / w[0], -w[2] / w[0]),
            rotsym_zeta_tilde)
    if name == "cubic":
        return ChartParam(
            "cubic",
            lambda z, e: (1, 1j * z, 1j * e, z * e * e),
            lambda a0, z, e: (2j * a0 + e - e * e, -z - 2 * z * e),
            lambda w: (-1j * w[1] / w[0], -1j * w[2] / w[0]),
            _cubic_zt)
    raise KeyError(f"no chart for {name!r}")


def solve_superminimal(chart, a0, method="closed", eta0=0.5 + 0.5j, steps=200):
    """Return zeta_tilde(zeta, eta) solving A d/deta - B d/dzeta = 0.

    The characteristic method integrates d zeta / d eta = -B/A along the
    straight segment from eta to the transversal eta = eta0 and returns the
    zeta reached there.
    """
    a0 = complex(a0)
    if method == "closed":
        if chart.zeta_tilde is None:
            raise ValueError(f"chart {chart.name} has no closed-form solution")
        return lambda zeta, eta: chart.zeta_tilde(a0, zeta, eta)
    if method != "characteristic":
        raise ValueError(f"unknown method {method!r}")
    eta0 = complex(eta0)

    def rhs(zeta, eta, de):
        A, B = chart.eval_theta(a0, zeta, eta)
        A, B = complex(A), complex(B)
        if abs(A) + abs(B) < 1e-12:
            raise CharacteristicDegenerate(f"Theta_a vanishes on the chart at {(zeta, eta)}")
        if abs(A) < 1e-8:
            raise CharacteristicDegenerate(f"path to eta0 crosses A = 0 near eta = {eta}")
        return -de * B / A

    def zt(zeta, eta):
        z, e = complex(zeta), complex(eta)
        de = eta0 - e
        dl = 1.0 / steps
        for k in range(steps):
            el = e + k * dl * de
            k1 = rhs(z, el, de)
            k2 = rhs(z + 0.5 * dl * k1, el + 0.5 * dl * de, de)
            k3 = rhs(z + 0.5 * dl * k2, el + 0.5 * dl * de, de)
            k4 = rhs(z + dl * k3, el + dl * de, de)
            z = z + dl / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return z
    return zt


def superminimality_residual(zt, chart, a0, zeta, eta, h=1e-3):
    A, B = chart.eval_theta(a0, zeta, eta)
    d_eta = fd_complex_derivative(lambda e: zt(zeta, e), eta, h)
    d_zeta = fd_complex_derivative(lambda z: zt(z, eta), zeta, h)
    return abs(A * d_eta - B * d_zeta)


# ---------------------------------------------------------------- built-in evaluators

def _as_null(p):
    if hasattr(p, "z"):
        return p
    return null_coords(p)


class BuiltinEvaluator:
    """mu and phi_a of a built-in surface with explicit branch choice.

    With ref given, the root nearest ref (chordal) is used; this keeps
    finite-difference stencils on one sheet across square-root cuts.
    """

    def __init__(self, name, branch="+", **params):
        self.name = name
        self.builtin = builtin_surface(name, **params)
        self.params = dict(self.builtin.params)
        self.chart = make_chart(name, **self.params)
        if branch not in self.builtin.branches:
            if name == "cubic" and branch in ("+", "-"):
                branch = 0 if branch == "+" else 1
            elif name == "villarceau":
                branch = "+"
            else:
                raise ValueError(f"branch {branch!r} not available for {name}")
        self.branch = branch

    def roots(self, p):
        p = _as_null(p)
        b = self.builtin
        if b.mu is None:
            return np.array(solve_mu(kerr_polynomial(b.surface, p)))
        return np.array([complex(b.mu(p, br)) for br in b.branches])

    def mu(self, p, ref=None):
        if ref is None:
            p = _as_null(p)
            if self.builtin.mu is not None:
                return complex(self.builtin.mu(p, self.branch))
            return complex(self.roots(p)[self.branch])
        r = self.roots(p)
        return complex(r[int(np.argmin(chordal(r, ref)))])

    def phi(self, a0, p, ref=None):
        """phi_a(p) = zeta_tilde_a(c(w)) with w the branch twistor over p."""
        p = _as_null(p)
        m = self.mu(p, ref)
        if not np.isfinite(m):
            raise BranchLocusError("twistor of the branch lies on w0 = 0")
        w = fundamental_map(p, (1, m)).w
        with np.errstate(divide="ignore", invalid="ignore"):
            zeta, eta = self.chart.inverse(w)
            v = complex(self.chart.zeta_tilde(complex(a0), zeta, eta))
        if not np.isfinite(v):
            raise BranchLocusError(f"phi undefined at {p.x}")
        return v

    def phi_closed(self, a0, p):
        if self.builtin.phi is None:
            raise ValueError(f"{self.name} has no closed-form phi")
        return complex(self.builtin.phi(complex(a0), _as_null(p), self.branch))

    # slice restrictions, tracked from the branch value at y_ref
    def mu_on(self, s, y_ref):
        ref = self.mu(s.point(y_ref))
        return lambda y: self.mu(s.point(y), ref)

    def phi_on(self, s, y_ref, a0=None):
        a0 = s.base[0] if a0 is None else a0
        ref = self.mu(s.point(y_ref))
        return lambda y: self.phi(a0, s.point(y), ref)

    def U_on(self, s, y_ref):
        from .geom_core import mu_to_direction
        f = self.mu_on(s, y_ref)
        return lambda x: mu_to_direction(f(x))


def eval_phi_a(name, a, p, branch="+", **params):
    a0 = complex(tuple(a)[0])
    return BuiltinEvaluator(name, branch, **params).phi(a0, p)


@dataclass(frozen=True)
class PhiField:
    source: str
    a: tuple
    eval: object

    def __call__(self, p):
        return self.eval(p)


def phi_field(name, a, branch="+", method="closed", eta0=0.5 + 0.5j, **params):
    ev = BuiltinEvaluator(name, branch, **params)
    a0 = complex(tuple(a)[0])
    if method == "closed":
        return PhiField("closed_form", tuple(a), lambda p: ev.phi(a0, p))
    zt = solve_superminimal(ev.chart, a0, "characteristic", eta0)

    def f(p):
        p = _as_null(p)
        w = fundamental_map(p, (1, ev.mu(p))).w
        return zt(*ev.chart.inverse(w))
    return PhiField("characteristic_traced", tuple(a), f)


def involute_foliation(t, p):
    """phi_t of the circles example on R^3_t, off the cylinder rho <= |t|."""
    x1, x2, x3 = (float(v) for v in p)
    rho2 = x2 * x2 + x3 * x3
    if rho2 <= t * t:
        raise ValueError("point lies inside the cylinder x2^2 + x3^2 <= t^2")
    r = np.sqrt(rho2 - t * t)
    return -1j * x1 + r - t * np.angle((r - 1j * t) / complex(x2, -x3))


# ---------------------------------------------------------------- residual suite

CHECKS = ("ER", "EM", "CONF", "HC0", "LAPLACE", "HWC_EUCL", "WAVE", "HWC_MINK", "HYP", "ORTHOG")
GROUP = {"ER": "R4", "LAPLACE": "R4", "HWC_EUCL": "R4", "HYP": "R4", "ORTHOG": "R4_0",
         "EM": "M4", "WAVE": "M4", "HWC_MINK": "M4", "CONF": "R3", "HC0": "R3"}
MU_CHECKS = {"ER", "EM", "CONF", "LAPLACE", "HWC_EUCL", "WAVE", "HWC_MINK"}
PHI_CHECKS = {"HC0", "HYP", "ORTHOG"}

# admissible points: roots well separated and the fields tame on a ball
PROBE_DELTA = 0.1
PROBE_BOUNDS = (2.0, 2.0, 1.0, 20.0)
ROOT_SEPARATION = 0.1
ORDER_MIN = 1.8


def smooth_at(f, y, delta=PROBE_DELTA, bounds=None):
    """Probe difference quotients of orders 1 to 4 of f along every axis."""
    b1, b2, b3, b4 = PROBE_BOUNDS if bounds is None else bounds
    y = np.asarray(y, float)
    f0 = complex(f(y))
    if not np.isfinite(f0):
        return False
    for k in range(len(y)):
        e = np.zeros(len(y))
        e[k] = delta
        p1, m1 = complex(f(y + e)), complex(f(y - e))
        p2, m2 = complex(f(y + 2 * e)), complex(f(y - 2 * e))
        if not all(np.isfinite(v) for v in (p1, m1, p2, m2)):
            return False
        if (abs(p1 - m1) / (2 * delta) > b1
                or abs(p1 - 2 * f0 + m1) / delta**2 > b2
                or abs(p2 - 2 * p1 + 2 * m1 - m2) / (2 * delta**3) > b3
                or abs(p2 - 4 * p1 + 6 * f0 - 4 * m1 + m2) / delta**4 > b4):
            return False
    return True


class PerturbedEvaluator:
    """mu + eps * zt1: a deliberately non-shear-free control field."""

    def __init__(self, base, eps):
        self.base, self.eps = base, complex(eps)
        self.name = f"{base.name}+perturbed"

    def roots(self, p):
        p = _as_null(p)
        return self.base.roots(p) + self.eps * p.zt1

    def mu(self, p, ref=None):
        p = _as_null(p)
        r = None if ref is None else ref - self.eps * p.zt1
        return self.base.mu(p, r) + self.eps * p.zt1


def sheared_field(x):
    """U = normalize(1, x2, 0): a unit field with nonzero shear."""
    v = np.array([1.0, x[1], 0.0])
    return v / np.linalg.norm(v)


@dataclass
class CheckResult:
    equation: str
    samples: tuple
    order: float

    @property
    def value(self):
        return self.samples[0].value

    def passed(self, tol):
        if not self.value < tol:
            return False
        return np.isnan(self.order) or self.order >= ORDER_MIN


class ResidualSuite:
    """Runs the residual checks of one field on its R4, M4 and R3 slices."""

    def __init__(self, ev=None, a=(0, 0, 0, 0), t=0.0, h=1e-3, box=1.5, U=None):
        self.ev, self.h, self.box = ev, float(h), float(box)
        a = tuple(complex(v) for v in a)
        self.a = a
        self.slices = {"R4": SliceSpec(a, "R4"), "R4_0": SliceSpec(a, "R4"),
                       "M4": SliceSpec(a, "M4"), "R3": SliceSpec(a, "R3", t)}
        self.U_override = U

    @property
    def applicable(self):
        if self.ev is None:
            return ("CONF",) if self.U_override is not None else ()
        has_phi = hasattr(self.ev, "phi")
        return tuple(c for c in CHECKS if c in MU_CHECKS or has_phi)

    def _coords(self, group, y):
        y = np.asarray(y, float)
        if group == "R3":
            return y[-3:]
        if group == "R4_0":
            y = y.copy()
            y[0] = 0.0
        return y

    def _mu(self, s, y):
        ref = self.ev.mu(s.point(y))
        return lambda x: self.ev.mu(s.point(x), ref)

    def _phi(self, s, y):
        ref = self.ev.mu(s.point(y))
        a0 = s.base[0]
        return lambda x: self.ev.phi(a0, s.point(x), ref)

    def _U(self, s, y):
        if self.U_override is not None:
            return self.U_override
        from .geom_core import mu_to_direction
        f = self._mu(s, y)
        return lambda x: mu_to_direction(f(x))

    def fields(self, check, y):
        group = GROUP[check]
        s = self.slices[group]
        y = self._coords(group, y)
        if check == "CONF":
            return [self._U(s, y)], y
        if check in PHI_CHECKS:
            return [self._phi(s, y)], y
        if check in ("ER", "EM"):
            return [self._mu(s, y)], y
        return [charted(self._mu(s, y), y)], y

    def admissible(self, group, y):
        s = self.slices[group]
        y = self._coords(group, y)
        checks = [c for c in self.applicable if GROUP[c] == group]
        if not checks:
            return True
        try:
            if self.ev is not None:
                p = s.point(y)
                r = self.ev.roots(p)
                m = self.ev.mu(p)
                if len(r) > 1 and np.sort(chordal(r, m))[1] < ROOT_SEPARATION:
                    return False
                if not smooth_at(charted(self._mu(s, y), y), y):
                    return False
                if any(c in PHI_CHECKS for c in checks) and not smooth_at(self._phi(s, y), y):
                    return False
            return True
        except (ArithmeticError, ValueError):
            return False

    def sample(self, group, n, rng, max_tries=None):
        max_tries = max_tries or 400 * n
        out = []
        for _ in range(max_tries):
            y = rng.uniform(-self.box, self.box, 4)
            if self.admissible(group, y):
                out.append(y)
                if len(out) == n:
                    return out
        raise ArithmeticError(f"found only {len(out)} admissible points for {group}")

    def evaluate(self, check, y, h):
        (f,), y = self.fields(check, y)
        group = GROUP[check]
        if check in ("ER", "EM"):
            return mu_residuals(f, "R4" if group == "R4" else "M4", y, h)
        if check == "CONF":
            from .foliation import shear_residual
            return (shear_residual(f, y, h),)
        if check == "HC0":
            from .foliation import hwc3_residual
            return (hwc3_residual(f, y, h),)
        return (pde_residual(f, check, y, h),)

    def check(self, check, y):
        """Residuals at h and h/2 with the order estimate for each equation."""
        from .numdiff import order_estimate
        a = self.evaluate(check, y, self.h)
        b = self.evaluate(check, y, self.h / 2)
        out = []
        for sa, sb in zip(a, b):
            order = order_estimate(sa.value, sb.value, 10 * sb.floor)
            out.append(CheckResult(sa.equation_id, (sa, sb), order))
        return out

    def run(self, checks, n=None, rng=None, points=None, threads=1):
        """Run checks at n admissible points per slice group, or at given points."""
        checks = [c for c in checks if c in self.applicable]
        jobs = []
        if points is not None:
            for c in checks:
                jobs.extend((c, np.asarray(y, float)) for y in points)
        else:
            pts = {}
            for c in checks:
                g = GROUP[c]
                if g not in pts:
                    pts[g] = self.sample(g, n, rng)
                jobs.extend((c, y) for y in pts[g])
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(threads) as pool:
                res = list(pool.map(lambda j: self.check(*j), jobs))
        else:
            res = [self.check(*j) for j in jobs]
        return [r for rs in res for r in rs]


class SurfaceEvaluator:
    """Pointwise mu of an arbitrary surface; branch k is the k-th sorted root."""

    def __init__(self, surface, branch=0, name="file"):
        self.surface, self.branch, self.name = surface, int(branch), name

    def roots(self, p):
        return np.array(solve_mu(kerr_polynomial(self.surface, _as_null(p))))

    def mu(self, p, ref=None):
        r = self.roots(p)
        if ref is None:
            return complex(r[self.branch])
        return complex(r[int(np.argmin(chordal(r, ref)))])


class RootTracker:
    """Stateful x -> mu on an R3 slice that follows the nearest root.

    Used for leaf tracing on surfaces without a closed-form branch; calls
    must come in path order (as they do inside an integrator).
    """

    def __init__(self, ev, s, start):
        self.ev, self.s = ev, s
        self.last = ev.mu(s.point(start))

    def __call__(self, x):
        m = self.ev.mu(self.s.point(x), self.last)
        self.last = m
        return m

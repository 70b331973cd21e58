"""Direction fields on R^3 slices: leaves, associated family, CONF/HC0 residuals."""

import csv
from dataclasses import dataclass

import numpy as np

from .geom_core import frame_from_direction, mu_to_direction
from .numdiff import FDEvaluationError, Stencil, fd_gradient

ANGLE_CAP = 0.1
MAX_HALVINGS = 2
CLOSE_DOT = 0.999
EPS = np.finfo(float).eps

EQUATIONS = ("HC0", "CONF", "ER1", "ER2", "EM1", "EM2", "WAVE", "HWC_MINK",
             "LAPLACE", "HWC_EUCL", "HYP", "ORTHOG")


class SingularField(ArithmeticError):
    """The field is masked or undefined at the requested point."""


class OutsideDomain(ValueError):
    """The requested point lies outside the sampled region."""


class AssociatedFieldError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ResidualSample:
    equation_id: str
    point: tuple
    h: float
    value: float
    floor: float = 0.0

    def __post_init__(self):
        if self.equation_id not in EQUATIONS:
            raise ValueError(f"unknown equation {self.equation_id}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.value >= 0:
            raise ValueError("residual must be nonnegative")


@dataclass
class Leaf:
    points: np.ndarray
    arclength: np.ndarray
    closed: bool
    stop_reason: str
    gap: float = float("nan")


# ---------------------------------------------------------------- fields

def _unit(v):
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise SingularField("zero or undefined direction")
    return v / n


def closed_form_field(mu_of_x):
    """Wrap x -> mu (3 reals to extended complex) as x -> U."""
    def U(x):
        m = complex(mu_of_x(np.asarray(x, float)))
        if np.isnan(m.real) or np.isnan(m.imag):
            raise SingularField(f"mu undefined at {tuple(x)}")
        return mu_to_direction(m)
    return U


class GridField:
    """Trilinear interpolation of a DirectionField, done on mu in a chart."""

    def __init__(self, field):
        self.field = field
        self.coords = field.grid.coords
        self.lo = np.array([c[0] for c in self.coords])
        self.step = np.array([a[2] for a in field.grid.axes])
        self.n = np.array(field.grid.shape)

    def mu(self, x):
        x = np.asarray(x, float)
        g = (x - self.lo) / self.step
        i = np.floor(g).astype(int)
        i = np.minimum(i, self.n - 2)
        f = g - i
        if np.any(g < -1e-12) or np.any(g > self.n - 1 + 1e-12):
            raise OutsideDomain(f"{tuple(x)} is outside the grid")
        cube = self.field.mu[i[0]:i[0] + 2, i[1]:i[1] + 2, i[2]:i[2] + 2]
        if np.any(self.field.singular_mask[i[0]:i[0] + 2, i[1]:i[1] + 2, i[2]:i[2] + 2]):
            raise SingularField(f"masked node next to {tuple(x)}")
        w = np.array([[[(1 - f[0] if a == 0 else f[0]) * (1 - f[1] if b == 0 else f[1])
                        * (1 - f[2] if c == 0 else f[2]) for c in (0, 1)] for b in (0, 1)]
                      for a in (0, 1)])
        fin = np.isfinite(cube)
        if fin.all() and np.abs(cube).mean() <= 1:
            return complex((w * cube).sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            nu = np.where(fin, 1 / np.where(fin, cube, 1), 0)
        v = complex((w * nu).sum())
        return complex("inf") if v == 0 else 1 / v

    def __call__(self, x):
        return mu_to_direction(self.mu(x))


def direction_field_r3(field):
    """Unit vectors at every grid node; NaN where masked."""
    if field.slice.kind != "R3":
        raise ValueError("direction_field_r3 needs an R3 slice")
    if field.singular_mask.all():
        raise SingularField("field has no regular nodes")
    return field.directions()


# ---------------------------------------------------------------- leaves

def _eval(U, x, bounds):
    if bounds is not None:
        lo, hi = bounds
        if np.any(x < lo) or np.any(x > hi):
            raise OutsideDomain(f"{tuple(x)} left the bounds")
    return _unit(U(x))


def _rk4(U, x, h, bounds):
    k1 = _eval(U, x, bounds)
    k2 = _eval(U, x + 0.5 * h * k1, bounds)
    k3 = _eval(U, x + 0.5 * h * k2, bounds)
    k4 = _eval(U, x + h * k3, bounds)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), k1


def _stop(exc):
    return "boundary" if isinstance(exc, OutsideDomain) else "singular_mask"


def trace_leaf(U, seed, step, max_len, closure_tol=1e-3, bounds=None):
    """Integrate x' = U(x) from seed by RK4 until closure, exit or max_len."""
    if not step > 0 or not max_len > 0:
        raise ValueError("step and max_len must be positive")
    if bounds is not None:
        bounds = (np.asarray(bounds[0], float), np.asarray(bounds[1], float))
    x0 = np.asarray(seed, float)
    pts, arc = [x0], [0.0]
    try:
        t0 = _eval(U, x0, bounds)
    except (SingularField, OutsideDomain, ArithmeticError) as exc:
        return Leaf(np.array(pts), np.array(arc), False, _stop(exc))
    x, s = x0, 0.0
    far = 0.0
    reason = "step_limit"
    closed = False
    while max_len - s > 1e-12 * max_len:
        rem = max_len - s
        h = rem if rem < 1.25 * step else step
        try:
            for k in range(MAX_HALVINGS + 1):
                xn, k1 = _rk4(U, x, h, bounds)
                kn = _eval(U, xn, bounds)
                if np.arccos(np.clip(k1 @ kn, -1, 1)) <= ANGLE_CAP or k == MAX_HALVINGS:
                    break
                h /= 2
        except (SingularField, OutsideDomain, ArithmeticError) as exc:
            reason = _stop(exc)
            break
        if far > 10 * closure_tol:
            d = xn - x
            lam = np.clip((x0 - x) @ d / (d @ d), 0.0, 1.0)
            if np.linalg.norm(x + lam * d - x0) < closure_tol and kn @ t0 > CLOSE_DOT:
                xc, hc = x, lam * h
                if hc < 0.25 * step and len(pts) > 1:
                    pts.pop()
                    s = arc.pop()
                    xc = pts[-1]
                    hc += s - arc[-1]
                    s = arc[-1]
                try:
                    xe, _ = _rk4(U, xc, hc, bounds)
                except (SingularField, OutsideDomain, ArithmeticError):
                    xe = xc + hc * _unit(U(xc))
                pts.append(xe)
                arc.append(s + hc)
                closed, reason = True, "closure"
                break
        x, s = xn, s + h
        pts.append(x)
        arc.append(s)
        far = max(far, np.linalg.norm(x - x0))
    P = np.array(pts)
    gap = float(np.linalg.norm(P[-1] - P[0])) if closed else float("nan")
    return Leaf(P, np.array(arc), closed, reason, gap)


def write_leaves_csv(path, leaves):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["leaf_id", "s", "x1", "x2", "x3"])
        for i, leaf in enumerate(leaves):
            for s, p in zip(leaf.arclength, leaf.points):
                w.writerow([i, f"{s:.17g}"] + [f"{v:.17g}" for v in p])


def fit_circle(points):
    """Best-fit circle (center, normal, radius) and the max point distance."""
    from scipy.optimize import least_squares

    P = np.asarray(points, float)
    c = P.mean(axis=0)
    _, _, vt = np.linalg.svd(P - c)
    n = vt[2]
    r0 = np.linalg.norm(P - c, axis=1).mean()

    def resid(q):
        cen, nn, r = q[:3], q[3:6] / np.linalg.norm(q[3:6]), q[6]
        d = P - cen
        h = d @ nn
        rad = np.linalg.norm(d - np.outer(h, nn), axis=1)
        return np.concatenate([h, rad - r])

    sol = least_squares(resid, np.concatenate([c, n, [r0]]), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    cen, nn, r = sol.x[:3], sol.x[3:6] / np.linalg.norm(sol.x[3:6]), sol.x[6]
    d = P - cen
    h = d @ nn
    dist = np.hypot(h, np.linalg.norm(d - np.outer(h, nn), axis=1) - r)
    return cen, nn, abs(r), float(dist.max())


# ---------------------------------------------------------------- associated family

def _jacobian(U0, q, eps=1e-6):
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        J[:, k] = (_unit(U0(q + e)) - _unit(U0(q - e))) / (2 * eps)
    return J


def associated_field(U0, t, p, tol=1e-13):
    """Solve W = U0(p - t W): the direction at time t of the ray through p."""
    p = np.asarray(p, float)
    try:
        W = _unit(U0(p))
        if t == 0:
            return W
        for it in range(500):
            G = _unit(U0(p - t * W))
            F = W - G
            if np.linalg.norm(F) < tol:
                return G
            if it < 8:
                W = _unit(0.5 * W + 0.5 * G)
            else:
                J = np.eye(3) + t * _jacobian(U0, p - t * W)
                W = _unit(W - np.linalg.solve(J, F))
    except (SingularField, OutsideDomain, np.linalg.LinAlgError) as exc:
        raise AssociatedFieldError(f"no associated direction at {tuple(p)}: {exc}") from exc
    raise AssociatedFieldError(f"associated direction did not converge at {tuple(p)}")


# ---------------------------------------------------------------- residuals

def shear_residual(U, p, h):
    """CONF: |grad_{JX} U - J grad_X U| on the plane orthogonal to U."""
    p = np.asarray(p, float)
    Up = _unit(U(p))
    X, Y = frame_from_direction(Up)

    def d(v):
        try:
            a, b = _unit(U(p + h * v)), _unit(U(p - h * v))
        except (SingularField, OutsideDomain, ArithmeticError) as exc:
            raise FDEvaluationError(p, exc) from exc
        return (a - b) / (2 * h)

    R = d(Y) - np.cross(Up, d(X))
    R = R - (R @ Up) * Up
    return ResidualSample("CONF", tuple(p), h, float(np.linalg.norm(R)), 16 * EPS / h)


def hwc3_residual(f, p, h):
    """HC0: |sum (df/dx_i)^2| on R^3."""
    p = tuple(float(v) for v in p)
    F = max(1.0, abs(complex(f(np.array(p)))))
    g = fd_gradient(f, Stencil(p, h))
    floor = 48 * EPS * F * (1 + np.abs(g).max()) / h
    return ResidualSample("HC0", p, h, float(abs(np.sum(g * g))), floor)


def leaf_tangent_error(U, leaf):
    """Max angle between the leaf chords and the field at chord midpoints."""
    P = leaf.points
    worst = 0.0
    for a, b in zip(P[:-1], P[1:]):
        d = b - a
        u = _unit(U((a + b) / 2))
        worst = max(worst, float(np.arccos(np.clip(u @ d / np.linalg.norm(d), -1, 1))))
    return worst


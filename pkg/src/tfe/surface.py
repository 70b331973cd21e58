"""Twistor surfaces, the Kerr polynomial in mu, and branch continuation on grids."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geom_core import INF, NullCoords, chordal, mu_to_direction, null_z
from .twistor import SliceSpec

COLLISION_TOL = 1e-4
DISC_TOL = 1e-10
JUMP_TOL = 0.3
AMBIGUITY = 0.5
ROOT_RESIDUAL_TOL = 1e-8

# reason codes stored per grid node
OK, FIBER, COLLISION, DISCRIMINANT, JUMP, UNREACHED = range(6)
REASONS = ("ok", "fiber", "collision", "discriminant", "jump", "unreached")


class SurfaceFormatError(ValueError):
    pass


class SurfaceContainsFiber(ArithmeticError):
    def __init__(self, where=""):
        super().__init__("surface contains the fiber" + (f" over {where}" if where else ""))


class SeedError(ArithmeticError):
    pass


class TwistorSurface:
    """Homogeneous polynomial psi(w) = sum c * w^e of degree d."""

    def __init__(self, degree, terms):
        self.degree = int(degree)
        if self.degree < 1:
            raise ValueError("degree must be positive")
        clean = []
        for k, (e, c) in enumerate(terms):
            e = tuple(int(v) for v in e)
            if len(e) != 4 or min(e) < 0:
                raise ValueError(f"term {k}: exponent must be four nonnegative integers")
            if sum(e) != self.degree:
                raise ValueError(f"term {k}: exponents sum to {sum(e)}, expected {self.degree}")
            clean.append((e, complex(c)))
        if not any(c != 0 for _, c in clean):
            raise ValueError("surface needs at least one nonzero coefficient")
        self.terms = tuple(clean)

    def __call__(self, w):
        w = np.asarray(w.w if hasattr(w, "w") else w, dtype=complex)
        return sum(c * np.prod(w ** np.array(e)) for e, c in self.terms)

    def scaled(self, lam):
        return TwistorSurface(self.degree, [(e, lam * c) for e, c in self.terms])

    def to_json(self):
        return {"degree": self.degree,
                "terms": [{"exp": list(e), "re": c.real, "im": c.imag} for e, c in self.terms]}

    def __repr__(self):
        return f"TwistorSurface(degree={self.degree}, terms={list(self.terms)})"


def _line_of(text, pos):
    return text.count("\n", 0, pos) + 1


def parse_surface_json(text, source="<string>"):
    """Parse the surface file format, reporting the line of any bad term."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SurfaceFormatError(f"{source}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise SurfaceFormatError(f"{source}:1: top level must be an object")
    for key in ("degree", "terms"):
        if key not in doc:
            raise SurfaceFormatError(f"{source}:1: missing key '{key}'")
    d = doc["degree"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise SurfaceFormatError(f"{source}:{_key_line(text, 'degree')}: 'degree' must be a positive integer")
    terms = doc["terms"]
    if not isinstance(terms, list) or not terms:
        raise SurfaceFormatError(f"{source}:{_key_line(text, 'terms')}: 'terms' must be a nonempty list")
    lines = _term_lines(text, len(terms))
    out = []
    for k, t in enumerate(terms):
        where = f"{source}:{lines[k]}: term {k}"
        if not isinstance(t, dict) or "exp" not in t:
            raise SurfaceFormatError(f"{where}: needs an 'exp' field")
        e = t["exp"]
        if (not isinstance(e, list) or len(e) != 4
                or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in e)):
            raise SurfaceFormatError(f"{where}: 'exp' must be four nonnegative integers")
        if sum(e) != d:
            raise SurfaceFormatError(f"{where}: exponents sum to {sum(e)}, degree is {d}")
        re, im = t.get("re", 0.0), t.get("im", 0.0)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (re, im)):
            raise SurfaceFormatError(f"{where}: 're' and 'im' must be numbers")
        out.append((tuple(e), complex(re, im)))
    try:
        return TwistorSurface(d, out)
    except ValueError as exc:
        raise SurfaceFormatError(f"{source}:{_key_line(text, 'terms')}: {exc}") from None


def _key_line(text, key):
    i = text.find(f'"{key}"')
    return _line_of(text, max(i, 0))


def _term_lines(text, n):
    """Line numbers where each element of the terms array starts."""
    dec = json.JSONDecoder()
    i = text.find('"terms"')
    i = text.find("[", i) + 1
    lines = []
    for _ in range(n):
        while text[i] in " \t\r\n,":
            i += 1
        lines.append(_line_of(text, i))
        _, i = dec.raw_decode(text, i)
    return lines


def load_surface(path):
    with open(path, encoding="utf-8") as fh:
        return parse_surface_json(fh.read(), str(path))


# ---------------------------------------------------------------- Kerr polynomial

@dataclass
class KerrPoly:
    coeffs: tuple

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, mu):
        return sum(c * mu**k for k, c in enumerate(self.coeffs))


def _zs(p):
    if isinstance(p, NullCoords):
        return tuple(np.asarray(v) for v in p.z)
    return tuple(np.asarray(v, dtype=complex) for v in p)


def kerr_coefficients(surface, z):
    """Coefficients c_0..c_d of psi(1, mu, z1 - mu zt2, z2 + mu zt1); vectorised."""
    z1, zt1, z2, zt2 = _zs(z)
    A, B, C, D = z1, -zt2, z2, zt1
    shape = np.broadcast(z1, zt1, z2, zt2).shape
    d = surface.degree
    out = [np.zeros(shape, complex) for _ in range(d + 1)]
    for (e0, e1, e2, e3), c in surface.terms:
        if c == 0:
            continue
        p2 = [math.comb(e2, k) * A ** (e2 - k) * B**k for k in range(e2 + 1)]
        p3 = [math.comb(e3, k) * C ** (e3 - k) * D**k for k in range(e3 + 1)]
        for i, u in enumerate(p2):
            for j, v in enumerate(p3):
                out[e1 + i + j] = out[e1 + i + j] + c * u * v
    return np.stack(out, axis=-1)


def kerr_polynomial(surface, p: NullCoords):
    c = kerr_coefficients(surface, p)
    return KerrPoly(tuple(complex(v) for v in c))


def kerr_residual(coeffs, mu):
    """|p(mu)| after scaling by max|c|, evaluated in the mu or 1/mu chart."""
    c = np.asarray(coeffs, dtype=complex)
    c = c / np.abs(c).max(axis=-1, keepdims=True)
    mu = np.asarray(mu, dtype=complex)
    d = c.shape[-1] - 1
    fin = np.isfinite(mu)
    inner = fin & (np.abs(mu) <= 1)
    m = np.where(inner, mu, 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(fin & ~inner, 1 / np.where(fin & ~inner, mu, 1), 0)
    r_in = np.zeros(mu.shape, complex)
    r_out = np.zeros(mu.shape, complex)
    for k in range(d + 1):
        r_in = r_in + c[..., k] * m**k
        r_out = r_out + c[..., k] * nu ** (d - k)
    return np.abs(np.where(inner, r_in, r_out))


def _div(n, d):
    # n/0 is the point at infinity; 0/0 only happens on fibres, where mu is undefined
    n = np.asarray(n, complex)
    d = np.asarray(d, complex)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = n / np.where(d == 0, 1, d)
    return np.where(d == 0, np.where(n == 0, complex("nan"), INF), q)


def quad_root(c0, c1, c2, S, sigma):
    """Root (-c1 + sigma S) / (2 c2) in a cancellation-free form."""
    n1 = -c1 + sigma * S
    d2 = -c1 - sigma * S
    use1 = np.abs(n1) >= np.abs(d2)
    return np.where(use1, _div(n1, 2 * c2), _div(2 * c0, d2))


def _polish(c, r, steps=2):
    """Newton steps on the polynomial in the chart where |root| <= 1."""
    d = len(c) - 1
    if not np.isfinite(r):
        return r
    if abs(r) <= 1:
        q, x = c, r
    else:
        q, x = c[::-1], 1 / r
    dq = [k * q[k] for k in range(1, d + 1)]
    for _ in range(steps):
        f = sum(q[k] * x**k for k in range(d + 1))
        g = sum(dq[k - 1] * x ** (k - 1) for k in range(1, d + 1))
        if g == 0:
            break
        xn = x - f / g
        fn = sum(q[k] * xn**k for k in range(d + 1))
        if abs(fn) >= abs(f):
            break
        x = xn
    if abs(r) <= 1:
        return x
    return INF if x == 0 else 1 / x


def _roots_general(c):
    """All roots of one polynomial (ascending coefficients), inf allowed."""
    d = len(c) - 1
    hi = d
    while hi >= 0 and c[hi] == 0:
        hi -= 1
    lo = 0
    while c[lo] == 0:
        lo += 1
    roots = [0j] * lo + [INF] * (d - hi)
    mid = c[lo:hi + 1]
    m = len(mid) - 1
    if m == 1:
        roots.append(-mid[0] / mid[1])
    elif m >= 2:
        if abs(mid[-1]) >= abs(mid[0]):
            rs = np.roots(mid[::-1])
        else:
            nu = np.roots(mid)
            rs = [INF if v == 0 else 1 / v for v in nu]
        roots.extend(_polish(list(mid), complex(r)) for r in rs)
    return roots


def solve_roots(coeffs):
    """Roots for a batch of Kerr polynomials.

    Returns (roots (N, d), fiber mask (N,)).  Degrees one and two use closed
    formulas; higher degrees use companion eigenvalues with Newton polishing.
    """
    c = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    N, d1 = c.shape
    d = d1 - 1
    fiber = ~np.any(c != 0, axis=1)
    cs = np.where(fiber[:, None], 1, c)
    cs = cs / np.abs(cs).max(axis=1, keepdims=True)
    if d == 1:
        roots = _div(-cs[:, 0], cs[:, 1])[:, None]
    elif d == 2:
        c0, c1, c2 = cs.T
        S = np.sqrt(c1 * c1 - 4 * c0 * c2)
        roots = np.stack([quad_root(c0, c1, c2, S, 1), quad_root(c0, c1, c2, S, -1)], axis=1)
    else:
        roots = np.array([_roots_general(list(row)) for row in cs], dtype=complex).reshape(N, d)
    roots[fiber] = np.nan
    return roots, fiber


def _direction_key(r):
    U = mu_to_direction(r)
    return tuple(-np.round(U, 12))


def solve_mu(poly):
    coeffs = poly.coeffs if isinstance(poly, KerrPoly) else poly
    roots, fiber = solve_roots([coeffs])
    if fiber[0]:
        raise SurfaceContainsFiber()
    return sorted((complex(r) for r in roots[0]), key=_direction_key)


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned rectilinear grid over (x1, x2, x3)."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(tuple(float(v) for v in a) for a in self.axes)
        if len(axes) != 3:
            raise ValueError("grid needs three axes")
        for lo, hi, st in axes:
            if not st > 0:
                raise ValueError("grid step must be positive")
            if not lo < hi:
                raise ValueError("grid min must be below max")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def cube(cls, lo, hi, step):
        return cls(((lo, hi, step),) * 3)

    @property
    def coords(self):
        out = []
        for lo, hi, st in self.axes:
            n = int(math.floor((hi - lo) / st + 1e-9)) + 1
            out.append(lo + st * np.arange(n))
        return out

    @property
    def shape(self):
        return tuple(len(c) for c in self.coords)

    def points(self):
        g = np.meshgrid(*self.coords, indexing="ij")
        return np.stack(g, axis=-1)


@dataclass
class DirectionField:
    slice: SliceSpec
    grid: GridSpec
    mu: np.ndarray
    branch: np.ndarray
    singular_mask: np.ndarray
    reason: np.ndarray = field(default=None)

    def directions(self):
        U = mu_to_direction(np.where(self.singular_mask, 0, self.mu))
        U[self.singular_mask] = np.nan
        return U


def _grid_nullz(s, pts):
    y = pts.reshape(-1, 3)
    b = np.array(s.base)
    x = np.empty((len(y), 4), complex)
    x[:, 0] = b[0]
    x[:, 1:] = b[1:] + y
    return null_z(x)


def _neighbors(shape):
    n = np.arange(int(np.prod(shape))).reshape(shape)
    out = []
    for ax in range(3):
        for step in (1, -1):
            nb = np.full(shape, -1)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if step == 1:
                src[ax], dst[ax] = slice(0, -1), slice(1, None)
            else:
                src[ax], dst[ax] = slice(1, None), slice(0, -1)
            nb[tuple(src)] = n[tuple(dst)]
            out.append(nb.ravel())
    return out


def _pick(parent_mu, roots):
    """Nearest root to parent_mu and whether the match is unambiguous."""
    d = chordal(roots, parent_mu[:, None])
    order = np.argsort(d, axis=1, kind="stable")
    best = order[:, 0]
    db = np.take_along_axis(d, best[:, None], 1)[:, 0]
    if roots.shape[1] > 1:
        ds = np.take_along_axis(d, order[:, 1:2], 1)[:, 0]
        ok = db <= AMBIGUITY * ds
    else:
        ok = np.ones(len(best), bool)
    return best, ok


def field_over_grid(surface, s: SliceSpec, grid: GridSpec, seed, label=0):
    """Solve the Kerr polynomial at every grid node and continue one branch.

    seed is (point (x1,x2,x3), mu0).  Continuation is a breadth-first sweep
    in fixed order; each node takes the root nearest its parent's root in the
    chordal metric and ambiguous matches are not propagated.
    """
    shape = grid.shape
    pts = grid.points()
    z = _grid_nullz(s, pts)
    coeffs = kerr_coefficients(surface, z)
    roots, fiber = solve_roots(coeffs)
    N, d = roots.shape

    reason = np.zeros(N, np.int8)
    reason[fiber] = FIBER
    if d >= 2:
        sep = np.full(N, np.inf)
        for i in range(d):
            for j in range(i + 1, d):
                sep = np.minimum(sep, chordal(roots[:, i], roots[:, j]))
        reason[(reason == OK) & (sep < COLLISION_TOL)] = COLLISION
        if d == 2:
            cs = coeffs / np.maximum(np.abs(coeffs).max(axis=1, keepdims=True), 1e-300)
            disc = np.abs(cs[:, 1] ** 2 - 4 * cs[:, 0] * cs[:, 2])
            reason[(reason == OK) & (disc < DISC_TOL)] = DISCRIMINANT

    seed_pt = np.asarray(seed[0], float)
    mu0 = complex(seed[1])
    zs = _grid_nullz(s, seed_pt.reshape(1, 1, 1, 3))
    c_seed = kerr_coefficients(surface, zs)
    r_seed, f_seed = solve_roots(c_seed)
    if f_seed[0]:
        raise SeedError("surface contains the fiber over the seed point")
    if kerr_residual(c_seed[0], mu0) >= ROOT_RESIDUAL_TOL:
        raise SeedError(f"seed value {mu0} is not a root at {tuple(float(v) for v in seed_pt)}")
    mu_ref = r_seed[0][np.argmin(chordal(r_seed[0], mu0))]

    flat = pts.reshape(-1, 3)
    dist = np.linalg.norm(flat - seed_pt, axis=1)
    dist[reason != OK] = np.inf
    start = int(np.argmin(dist))
    if not np.isfinite(dist[start]):
        raise SeedError("no regular grid node to start from")

    nbrs = _neighbors(shape)
    chosen = np.full(N, -1)
    chosen[start] = int(np.argmin(chordal(roots[start], mu_ref)))
    value = np.full(N, np.nan + 0j)
    value[start] = roots[start, chosen[start]]
    frontier = np.array([start])
    while len(frontier):
        kids, pars = [], []
        for nb in nbrs:
            c = nb[frontier]
            keep = (c >= 0)
            c, p = c[keep], frontier[keep]
            keep = (chosen[c] < 0) & (reason[c] == OK)
            kids.append(c[keep])
            pars.append(p[keep])
        kids = np.concatenate(kids)
        pars = np.concatenate(pars)
        if not len(kids):
            break
        best, ok = _pick(value[pars], roots[kids])
        kids, pars, best = kids[ok], pars[ok], best[ok]
        kids, first = np.unique(kids, return_index=True)
        chosen[kids] = best[first]
        value[kids] = roots[kids, best[first]]
        frontier = kids

    reason[(reason == OK) & (chosen < 0)] = UNREACHED

    # consistency: every edge between assigned nodes must be a nearest match
    # and stay below the jump bound; otherwise both ends are masked
    bad = np.zeros(N, bool)
    for nb in nbrs[0::2]:
        a = np.nonzero((nb >= 0) & (reason == OK))[0]
        b = nb[a]
        m = reason[b] == OK
        a, b = a[m], b[m]
        if not len(a):
            continue
        jump = chordal(value[a], value[b]) >= JUMP_TOL
        ba, oka = _pick(value[b], roots[a])
        bb, okb = _pick(value[a], roots[b])
        inc = (ba != chosen[a]) | (bb != chosen[b]) | jump
        bad[a[inc]] = True
        bad[b[inc]] = True
    reason[bad & (reason == OK)] = JUMP

    mask = reason != OK
    mu = np.where(mask, np.nan + 0j, value)
    branch = np.where(mask, -1, label)
    return DirectionField(s, grid, mu.reshape(shape), branch.reshape(shape),
                          mask.reshape(shape), reason.reshape(shape))


# ---------------------------------------------------------------- built-ins

def _branch_sign(branch):
    if branch in ("+", 1, 0, None):
        return 1
    if branch in ("-", -1):
        return -1
    raise ValueError(f"unknown branch {branch!r}")


def _villarceau_mu(s):
    def mu(p, branch="+"):
        z1, zt1, z2, zt2 = _zs(p)
        return _div(-z2, zt1 + s)
    return mu


def _villarceau_phi(s):
    def phi(a0, p, branch="+"):
        z1, zt1, z2, zt2 = _zs(p)
        num = z1 * zt1 + z2 * zt2 - 2 * a0 * (zt1 + s) + (z1 - zt1) * s - s * s
        return -_div(num, z2)
    return phi


def _radial_mu(p, branch="+"):
    z1, zt1, z2, zt2 = _zs(p)
    c0, c1, c2 = z2, zt1 - z1, zt2
    D = c1 * c1 - 4 * c0 * c2
    S = -1j * np.sqrt(-D)
    return quad_root(c0, c1, c2, S, _branch_sign(branch))


def _circles_mu(p, branch="+"):
    z1, zt1, z2, zt2 = _zs(p)
    x0 = (z1 + zt1) / 2
    s = np.sqrt(x0 * x0 + z2 * zt2)
    return quad_root(z2, 2 * x0, -zt2, -2 * s, _branch_sign(branch))


def _circles_phi(a0, p, branch="+"):
    z1, zt1, z2, zt2 = _zs(p)
    x0, x1 = (z1 + zt1) / 2, (z1 - zt1) / 2j
    s = _branch_sign(branch) * np.sqrt(x0 * x0 + z2 * zt2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -1j * x1 + s - a0 * np.log((x0 + s) / zt2)


def _rotsym_disc(z1, zt1, z2, zt2):
    P, Q = z1 * zt1, z2 * zt2
    return np.sqrt((1 + P + Q) ** 2 - 4 * Q)


def _rotsym_mu(p, branch="+"):
    z1, zt1, z2, zt2 = _zs(p)
    P, Q = z1 * zt1, z2 * zt2
    S = _rotsym_disc(z1, zt1, z2, zt2)
    return quad_root(z1 * z2, 1 + P - Q, -zt1 * zt2, -S, _branch_sign(branch))


def rotsym_zeta_eta(p, branch="+"):
    """Chart values (zeta, eta) of the rotsym solution at p."""
    z1, zt1, z2, zt2 = _zs(p)
    P, Q = z1 * zt1, z2 * zt2
    S = _rotsym_disc(z1, zt1, z2, zt2)
    zeta = quad_root(z2, -(1 + P + Q), zt2, S, _branch_sign(branch))
    eta = _div(z1, zeta * zt2 - 1)
    return zeta, eta


def rotsym_zeta_tilde(a0, zeta, eta):
    a0 = complex(a0)
    if a0 == 0:
        return zeta
    R = np.sqrt(a0 * a0 + 1)
    return zeta * ((eta + a0 + R) / (eta + a0 - R)) ** (-a0 / R)


def _rotsym_phi(a0, p, branch="+"):
    zeta, eta = rotsym_zeta_eta(p, branch)
    return rotsym_zeta_tilde(a0, zeta, eta)


@dataclass(frozen=True)
class Builtin:
    name: str
    surface: TwistorSurface
    mu: object = None
    phi: object = None
    params: tuple = ()
    branches: tuple = ("+", "-")


def builtin_surface(name, **params):
    """Built-in surfaces with closed-form mu and phi_a where known."""
    if name == "villarceau":
        s = float(params.get("s", 1.0))
        surf = TwistorSurface(1, [((0, 1, 0, 0), s), ((0, 0, 0, 1), 1)])
        return Builtin("villarceau", surf, _villarceau_mu(s), _villarceau_phi(s),
                       (("s", s),), ("+",))
    if name == "radial":
        surf = TwistorSurface(2, [((1, 0, 0, 1), 1), ((0, 1, 1, 0), -1)])
        return Builtin("radial", surf, _radial_mu, None)
    if name == "circles":
        surf = TwistorSurface(2, [((1, 0, 0, 1), 1), ((0, 1, 1, 0), 1)])
        return Builtin("circles", surf, _circles_mu, _circles_phi)
    if name == "rotsym":
        surf = TwistorSurface(2, [((1, 1, 0, 0), 1), ((0, 0, 1, 1), 1)])
        return Builtin("rotsym", surf, _rotsym_mu, _rotsym_phi)
    if name == "cubic":
        surf = TwistorSurface(3, [((0, 1, 2, 0), 1), ((2, 0, 0, 1), 1j)])
        return Builtin("cubic", surf, None, None, (), (0, 1, 2))
    raise KeyError(f"unknown built-in surface {name!r}")


BUILTIN_NAMES = ("villarceau", "radial", "circles", "rotsym", "cubic")

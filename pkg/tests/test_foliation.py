import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tfe.foliation import (AssociatedFieldError, GridField, Leaf, OutsideDomain, ResidualSample,
                           SingularField, associated_field, closed_form_field, direction_field_r3,
                           fit_circle, hwc3_residual, leaf_tangent_error, shear_residual,
                           trace_leaf, write_leaves_csv)
from tfe.geom_core import null_coords
from tfe.morphism import BuiltinEvaluator, sheared_field
from tfe.surface import GridSpec, builtin_surface, field_over_grid
from tfe.twistor import SliceSpec


def U_of(name, t=0.0, branch="+"):
    b = builtin_surface(name)
    return closed_form_field(lambda x: b.mu(null_coords((-1j * t, *x)), branch))


def radial_f(x):
    x1, x2, x3 = x
    return complex(x2, x3) / (np.linalg.norm(x) - x1)


def circles_f(x):
    return -1j * x[0] + np.hypot(x[1], x[2])


def E2(t, x):
    x1, x2, x3 = x
    rho2 = x2 * x2 + x3 * x3
    r = np.sqrt(rho2 - t * t)
    return r / rho2 * np.array([0.0, -x3 + t / r * x2, x2 + t / r * x3])


# ---------------------------------------------------------------- types

def test_residual_sample_validation():
    with pytest.raises(ValueError):
        ResidualSample("NOPE", (0, 0, 0), 1e-3, 0.0)
    with pytest.raises(ValueError):
        ResidualSample("CONF", (0, 0, 0), 0.0, 0.0)
    with pytest.raises(ValueError):
        ResidualSample("CONF", (0, 0, 0), 1e-3, -1.0)


# ---------------------------------------------------------------- direction fields

def test_direction_field_radial_grid():
    psi = builtin_surface("radial").surface
    F = field_over_grid(psi, SliceSpec(kind="R3"), GridSpec.cube(-1, 1, 0.5), ((1, 0, 0), 0j))
    U = direction_field_r3(F)
    X = F.grid.points()
    ok = ~F.singular_mask
    R = X[ok] / np.linalg.norm(X[ok], axis=1)[:, None]
    err = np.minimum(np.linalg.norm(U[ok] - R, axis=1), np.linalg.norm(U[ok] + R, axis=1))
    assert err.max() < 1e-8
    assert np.isnan(U[~ok]).all()


def test_direction_field_needs_r3():
    psi = builtin_surface("radial").surface
    F = field_over_grid(psi, SliceSpec(kind="R3"), GridSpec.cube(0.5, 1.5, 0.5), ((1, 0, 0), 0j))
    object.__setattr__(F, "slice", SliceSpec(kind="R4"))
    with pytest.raises(ValueError):
        direction_field_r3(F)


def test_circles_direction_t0():
    U = U_of("circles")
    for x in [(0.3, 1.0, 0.5), (-1, -0.2, 0.7), (2, 0.1, -1.5)]:
        e = np.array([0, -x[2], x[1]]) / np.hypot(x[1], x[2])
        u = U(x)
        assert min(np.linalg.norm(u - e), np.linalg.norm(u + e)) < 1e-12


def test_grid_field_interpolates_constant_and_masks():
    psi = builtin_surface("radial").surface
    F = field_over_grid(psi, SliceSpec(kind="R3"), GridSpec.cube(-1, 1, 0.25), ((1, 0, 0), 0j))
    G = GridField(F)
    x = np.array([0.8, 0.55, -0.3])
    u = G(x)
    r = x / np.linalg.norm(x)
    assert min(np.linalg.norm(u - r), np.linalg.norm(u + r)) < 2e-2
    with pytest.raises(OutsideDomain):
        G((1.5, 0, 0))
    with pytest.raises(SingularField):
        G((0.01, 0.02, 0.0))


# ---------------------------------------------------------------- leaves

def test_constant_field_straight_line():
    L = trace_leaf(lambda x: np.array([1.0, 0, 0]), (0, 0, 0), 0.1, 2.0)
    assert L.stop_reason == "step_limit" and not L.closed
    assert L.arclength[-1] == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(L.points[-1], (2, 0, 0), atol=1e-12)
    assert np.allclose(L.points[:, 1:], 0)


def test_radial_leaf_is_radius():
    U = U_of("radial")
    L = trace_leaf(U, (0, 2, 0), 0.05, 1.0)
    assert np.allclose(L.points[:, [0, 2]], 0, atol=1e-12)
    assert abs(abs(L.points[-1, 1] - 2) - 1) < 1e-9


def test_circles_leaf_closes():
    U = U_of("circles")
    L = trace_leaf(U, (0, 1, 0), 0.01, 20)
    assert L.closed and L.stop_reason == "closure"
    assert L.gap < 1e-3
    assert np.abs(L.points[:, 0]).max() < 1e-12
    assert np.abs(np.linalg.norm(L.points[:, 1:], axis=1) - 1).max() < 1e-8
    assert L.arclength[-1] == pytest.approx(2 * np.pi, abs=1e-3)


def test_leaf_spacing_invariant():
    L = trace_leaf(U_of("circles"), (0.3, 1.2, 0.4), 0.02, 20)
    d = np.linalg.norm(np.diff(L.points, axis=0), axis=1)
    assert d.min() >= 0.25 * 0.02 - 1e-12 and d.max() <= 4 * 0.02


def test_leaf_stops_on_bounds_and_mask():
    L = trace_leaf(U_of("radial"), (0, 1, 0), 0.05, 10, bounds=((-2,) * 3, (2,) * 3))
    assert L.stop_reason == "boundary"
    assert np.abs(L.points).max() <= 2

    def U(x):
        if x[0] > 0.5:
            raise SingularField("masked")
        return np.array([1.0, 0, 0])
    L = trace_leaf(U, (0, 0, 0), 0.1, 10)
    assert L.stop_reason == "singular_mask"
    assert L.points[-1, 0] <= 0.5


def test_invalid_seed():
    def U(x):
        raise SingularField("masked")
    L = trace_leaf(U, (0, 0, 0), 0.05, 1)
    assert L.stop_reason == "singular_mask" and len(L.points) == 1
    with pytest.raises(ValueError):
        trace_leaf(U_of("radial"), (0, 1, 0), 0.0, 1)


@pytest.mark.parametrize("name,f,seed", [
    ("radial", radial_f, (0.4, -0.7, 1.1)),
    ("circles", circles_f, (0.4, -0.7, 1.1)),
    ("circles", circles_f, (-1.0, 0.2, 0.3)),
])
def test_leaf_field_consistency_and_f_constancy(name, f, seed):
    U = U_of(name)
    L = trace_leaf(U, seed, 0.02, 4.0, bounds=((-3,) * 3, (3,) * 3))
    assert leaf_tangent_error(U, L) < 5e-3
    vals = np.array([f(p) for p in L.points])
    assert np.abs(vals - vals[0]).max() < 1e-5


def test_grid_leaf_tangent():
    psi = builtin_surface("circles").surface
    m = builtin_surface("circles").mu(null_coords((0, 0, 1, 0)), "+")
    F = field_over_grid(psi, SliceSpec(kind="R3"), GridSpec.cube(-2, 2, 0.1), ((0, 1, 0), m))
    G = GridField(F)
    L = trace_leaf(G, (0.5, 1.5, 0), 0.02, 3.0)
    assert leaf_tangent_error(G, L) < 5e-3


def test_write_leaves_csv(tmp_path):
    leaves = [trace_leaf(lambda x: np.array([0, 1.0, 0]), (0.1, 0, 0), 0.5, 1.0),
              Leaf(np.array([[1 / 3, 0, 0]]), np.array([0.0]), False, "singular_mask")]
    p = tmp_path / "leaves.csv"
    write_leaves_csv(p, leaves)
    raw = p.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["leaf_id", "s", "x1", "x2", "x3"]
    assert len(rows) == 1 + 3 + 1
    assert rows[-1][2] == "0.33333333333333331"
    assert float(rows[-1][2]) == 1 / 3


# ---------------------------------------------------------------- circle fit

def test_fit_circle_exact():
    th = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    n = np.array([1.0, 2, 2]) / 3
    a = np.cross(n, [1, 0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(n, a)
    P = np.array([0.5, -1, 2]) + 1.7 * (np.outer(np.cos(th), a) + np.outer(np.sin(th), b))
    c, nn, r, dist = fit_circle(P)
    assert np.allclose(c, (0.5, -1, 2), atol=1e-10)
    assert abs(abs(nn @ n) - 1) < 1e-10
    assert r == pytest.approx(1.7, abs=1e-10)
    assert dist < 1e-10


def test_fit_circle_detects_non_circle():
    s = np.linspace(0, 1, 30)
    P = np.stack([s, s**3, np.zeros_like(s)], 1)
    assert fit_circle(P)[3] > 1e-3


def test_villarceau_leaf_is_circle():
    ev = BuiltinEvaluator("villarceau")
    U = closed_form_field(lambda x: ev.mu(null_coords((0, *x))))
    L = trace_leaf(U, (0.2, 0.5, -0.3), 0.01, 200)
    assert L.closed and L.gap < 1e-3
    assert fit_circle(L.points)[3] < 1e-4


# ---------------------------------------------------------------- associated family

def test_associated_field_t0_identity():
    U = U_of("circles")
    x = np.array([0.2, 1.0, -0.4])
    assert np.array_equal(associated_field(U, 0.0, x), U(x))


# the ray p - t W must stay clear of the centre, so |p| > |t|
@pytest.mark.parametrize("t", [0.5, -1.0, 1.1])
def test_associated_radial_independent_of_t(t):
    U = U_of("radial")
    for x in [(0.5, 1.0, -0.3), (-1.2, 0.4, 0.9)]:
        x = np.array(x)
        W = associated_field(U, t, x)
        assert abs(abs(W @ x) / np.linalg.norm(x) - 1) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.sampled_from([0.5, 1.0, -0.7]))
def test_associated_circles_matches_E2(x1, x2, x3, t):
    x = np.array([x1, x2, x3])
    if x2 * x2 + x3 * x3 <= t * t + 0.1:
        return
    W = associated_field(U_of("circles"), t, x)
    assert np.linalg.norm(W - E2(t, x)) < 1e-8
    assert abs(np.linalg.norm(W) - 1) < 1e-12


def test_associated_matches_closed_slice():
    # U_t from the congruence equals the mu field restricted to x0 = -i t
    U0, t = U_of("circles"), 0.5
    Ut = U_of("circles", t=t)
    for x in [(0.1, 1.0, 0.6), (1.0, -0.9, 0.2)]:
        assert np.linalg.norm(associated_field(U0, t, x) - Ut(x)) < 1e-8


def test_associated_field_failure():
    def U(x):
        if np.linalg.norm(x) < 1e-3:
            raise SingularField("centre")
        return x / np.linalg.norm(x)

    with pytest.raises(AssociatedFieldError):
        associated_field(U, 1.0, (0.0, 0.0, 0.0))


# ---------------------------------------------------------------- CONF and HC0

def test_shear_constant_field_zero():
    r = shear_residual(lambda x: np.array([0.0, 0.6, 0.8]), (0.3, -1, 2), 1e-3)
    assert r.value == 0.0 and r.equation_id == "CONF"


def test_shear_radial():
    assert shear_residual(U_of("radial"), (0, 2, 0), 1e-3).value < 1e-6


def test_shear_sheared_field():
    assert shear_residual(sheared_field, (0, 1, 0), 1e-3).value > 0.05


def test_shear_sheared_analytic():
    # dU/dx2 at (0,1,0) is (-1/2, 1/2, 0)/sqrt2; the shear part has modulus 1/(2 sqrt2)
    assert shear_residual(sheared_field, (0, 1, 0), 1e-4).value == pytest.approx(
        1 / (2 * np.sqrt(2)), rel=1e-6)


def test_hwc3_examples():
    r = hwc3_residual(lambda x: complex(x[1], x[2]), (0.3, -0.2, 1.0), 1e-3)
    assert r.value < 1e-12 and r.equation_id == "HC0"
    assert hwc3_residual(lambda x: 2 * x[0] + 1j * x[1], (0.1, 0.2, 0.3), 1e-3).value == \
        pytest.approx(3, abs=1e-10)
    assert hwc3_residual(radial_f, (0, 2, 0), 1e-3).value < 1e-6


def _order(res, x, hs):
    v = [res(x, h).value for h in hs]
    return v[0] / v[1], v[1] / v[2]


@pytest.mark.parametrize("name", ["radial", "circles", "rotsym", "villarceau"])
def test_conf_second_order_on_shear_free_fields(name):
    U = U_of(name) if name != "villarceau" else closed_form_field(
        lambda x: BuiltinEvaluator("villarceau").mu(null_coords((0, *x))))
    x = np.array([0.4, 0.8, -0.5])
    v = [shear_residual(U, x, h).value for h in (1e-2, 5e-3, 2.5e-3)]
    if name in ("radial", "circles"):
        # the symmetric stencil cancels exactly on these fields
        assert max(v) < 1e-12
        return
    assert v[0] / v[1] >= 3.5 and v[1] / v[2] >= 3.5


@pytest.mark.parametrize("name", ["circles", "rotsym"])
def test_hc0_second_order(name):
    ev = BuiltinEvaluator(name)
    f = lambda x: ev.phi_closed(0, (0, *x))  # noqa: E731
    x = np.array([0.4, 0.8, -0.5])
    v = [hwc3_residual(f, x, h).value for h in (1e-2, 5e-3, 2.5e-3)]
    assert v[0] / v[1] >= 3.5 and v[1] / v[2] >= 3.5


def test_hc0_radial_second_order():
    x = np.array([0.4, 0.8, -0.5])
    v = [hwc3_residual(radial_f, x, h).value for h in (1e-2, 5e-3, 2.5e-3)]
    assert v[0] / v[1] >= 3.5 and v[1] / v[2] >= 3.5


def test_conf_order_on_sheared_field_is_not_vanishing():
    # a truly sheared field converges to a nonzero limit instead
    v = [shear_residual(sheared_field, (0, 1, 0), h).value for h in (1e-2, 5e-3)]
    assert abs(v[0] / v[1] - 1) < 1e-3

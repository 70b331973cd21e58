"""Central finite-difference kernels shared by the residual checks."""

from dataclasses import dataclass

import numpy as np


class FDEvaluationError(RuntimeError):
    """Raised when the field cannot be evaluated at a stencil point."""

    def __init__(self, point, cause):
        self.point = tuple(float(v) for v in point)
        self.cause = cause
        super().__init__(f"evaluation failed at {self.point}: {cause}")


@dataclass(frozen=True)
class Stencil:
    center: tuple
    h: float
    axes: tuple = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("stencil step must be positive")
        c = tuple(float(v) for v in self.center)
        object.__setattr__(self, "center", c)
        axes = tuple(range(len(c))) if self.axes is None else tuple(int(a) for a in self.axes)
        if len(set(axes)) != len(axes):
            raise ValueError("stencil axes must be distinct")
        if any(a < 0 or a >= len(c) for a in axes):
            raise ValueError("stencil axis out of range")
        object.__setattr__(self, "axes", axes)

    def shifted(self, axis, k):
        x = np.array(self.center)
        x[axis] += k * self.h
        return x


def _call(f, x):
    try:
        v = f(x)
    except FDEvaluationError:
        raise
    except (ArithmeticError, ValueError) as exc:
        raise FDEvaluationError(x, exc) from exc
    v = np.asarray(v, dtype=complex)
    if not np.all(np.isfinite(v)):
        raise FDEvaluationError(x, "non-finite value")
    return v


def fd_gradient(f, s: Stencil):
    """Central first differences along each stencil axis."""
    out = []
    for ax in s.axes:
        fp = _call(f, s.shifted(ax, 1))
        fm = _call(f, s.shifted(ax, -1))
        out.append((fp - fm) / (2 * s.h))
    return np.array(out)


def fd_second(f, s: Stencil, f0=None):
    """Pure second differences along each stencil axis."""
    if f0 is None:
        f0 = _call(f, np.array(s.center))
    out = []
    for ax in s.axes:
        fp = _call(f, s.shifted(ax, 1))
        fm = _call(f, s.shifted(ax, -1))
        out.append((fp - 2 * f0 + fm) / s.h**2)
    return np.array(out)


def fd_gradient_and_second(f, s: Stencil):
    """First and pure second differences sharing the same samples."""
    f0 = _call(f, np.array(s.center))
    g, d2 = [], []
    for ax in s.axes:
        fp = _call(f, s.shifted(ax, 1))
        fm = _call(f, s.shifted(ax, -1))
        g.append((fp - fm) / (2 * s.h))
        d2.append((fp - 2 * f0 + fm) / s.h**2)
    return f0, np.array(g), np.array(d2)


def fd_complex_derivative(f, z, h):
    """Derivative of a holomorphic function of one complex variable.

    Averages the real and imaginary central differences, which cancels the
    h^2 error term and leaves an O(h^4) stencil.
    """
    z = complex(z)
    try:
        a = f(z + h) - f(z - h)
        b = f(z + 1j * h) - f(z - 1j * h)
    except (ArithmeticError, ValueError) as exc:
        raise FDEvaluationError((z.real, z.imag), exc) from exc
    return (a - 1j * b) / (4 * h)


def order_estimate(r_h, r_half, floor=0.0):
    """log2 of the residual ratio under halving; nan when unresolved."""
    if not (r_h > floor and r_half > floor):
        return float("nan")
    return float(np.log2(r_h / r_half))

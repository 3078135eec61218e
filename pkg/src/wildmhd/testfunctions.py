"""Polynomial-bump test functions and exact one-dimensional moments.

A test function is a tensor product ``A(t) X(x) Y(y)`` of bumps
``(1 - xi**2)**4`` on ``|xi| < 1``.  Vector members carry one such product per
component; the normal component is multiplied by the boundary factor
``x (Lx - x)`` (resp. ``y (Ly - y)``) so it vanishes on the domain boundary.
All factors stay separable, so integrals against tensor-product B-spline
fields reduce to products of 1D moments, which are computed exactly with
Gauss-Legendre rules on the polynomial pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .core import Rect
from .splines import Axis

_GAUSS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class Factor:
    """``f(s) = q(s) * (1 - ((s - c) / w)**2)**4`` on ``|s - c| < w``; ``q`` a polynomial."""

    c: float
    w: float
    extra: tuple[float, ...] = (1.0,)

    @property
    def support(self) -> tuple[float, float]:
        return self.c - self.w, self.c + self.w

    def __call__(self, s, order: int = 0):
        """``f^(order)(s)``, evaluated in the centred variable to avoid cancellation."""
        s = np.asarray(s, dtype=float)
        xi = (s - self.c) / self.w
        q = np.array(self.extra, dtype=float)
        out = np.zeros_like(xi)
        for k in range(order + 1):
            qk = P.polyder(q, order - k) if order - k else q
            if not np.any(qk):
                continue
            bk = P.polyder(_BUMP, k) if k else _BUMP
            out = out + math.comb(order, k) * P.polyval(s, qk) * P.polyval(xi, bk) / self.w**k
        return np.where(np.abs(xi) < 1.0, out, 0.0)


_BUMP = P.polypow([1.0, 0.0, -1.0], 4)


@dataclass(frozen=True)
class TestFunction:
    """Scalar (``factors`` holds one triple) or vector (two triples, x and y components)."""

    kind: str
    factors: tuple[tuple[Factor, Factor, Factor], ...]

    __test__ = False

    @property
    def components(self) -> int:
        return len(self.factors)

    def time_support(self) -> tuple[float, float]:
        return self.factors[0][0].support

    def evaluate(self, t, x, y, component: int = 0, deriv: tuple[int, int, int] = (0, 0, 0)) -> np.ndarray:
        """Values on the tensor grid ``t x x x y``."""
        ft, fx, fy = self.factors[component]
        return (ft(t, deriv[0])[:, None, None] * fx(x, deriv[1])[None, :, None]
                * fy(y, deriv[2])[None, None, :])

    def divergence(self, t, x, y) -> np.ndarray:
        return self.evaluate(t, x, y, 0, (0, 1, 0)) + self.evaluate(t, x, y, 1, (0, 0, 1))

    def meets_initial_time(self) -> bool:
        return self.time_support()[0] < 0.0

    def meets_boundary(self, domain: Rect) -> bool:
        _, fx, fy = self.factors[0]
        (xa, xb), (ya, yb) = fx.support, fy.support
        return xa < domain.x0 or xb > domain.x1 or ya < domain.y0 or yb > domain.y1


def _boundary_factor(lo: float, hi: float) -> tuple[float, ...]:
    # (s - lo)(hi - s) = -lo*hi + (lo + hi) s - s^2
    return (-lo * hi, lo + hi, -1.0)


def bump_test_function(kind: str, centre, halfwidth, domain: Rect) -> TestFunction:
    (tc, xc, yc), (wt, wx, wy) = centre, halfwidth
    ft, fx, fy = Factor(tc, wt), Factor(xc, wx), Factor(yc, wy)
    if kind == "scalar":
        return TestFunction("scalar", ((ft, fx, fy),))
    if kind != "vector":
        raise ValueError(f"unknown test-function kind {kind!r}")
    gx = Factor(xc, wx, _boundary_factor(domain.x0, domain.x1))
    gy = Factor(yc, wy, _boundary_factor(domain.y0, domain.y1))
    return TestFunction("vector", ((ft, gx, fy), (ft, fx, gy)))


def free_vector(fn: TestFunction) -> TestFunction:
    """The same bumps without the boundary factor (fields free on the boundary)."""
    if fn.kind != "vector":
        raise ValueError("expected a vector test function")
    (ft, gx, fy), (_, fx, gy) = fn.factors
    return TestFunction("vector", ((ft, Factor(gx.c, gx.w), fy), (ft, fx, Factor(gy.c, gy.w))))


@dataclass(frozen=True)
class TestSuite:
    scalars: tuple[TestFunction, ...]
    vectors: tuple[TestFunction, ...]
    domain: Rect
    T: float
    seed: int

    __test__ = False

    def __len__(self) -> int:
        return len(self.scalars)


def make_test_suite(domain: Rect, T: float, seed: int, count: int) -> TestSuite:
    """Seeded suite of ``count`` scalar and ``count`` vector bumps sharing supports.

    Supports lie in ``[-T, T) x R^2``: a quarter (rounded up) meet ``t = 0``,
    another quarter meet the spatial boundary, the rest are unconstrained.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng([seed, 0x7E57])
    quota = -(-count // 4)
    scalars, vectors = [], []
    L = min(domain.lx, domain.ly)
    for i in range(count):
        role = "initial" if i < quota else ("boundary" if i < 2 * quota else "free")
        wt = rng.uniform(0.15, 0.45) * T
        wx = rng.uniform(0.15, 0.35) * L
        wy = rng.uniform(0.15, 0.35) * L
        if role == "initial":
            tc = rng.uniform(-0.8 * wt, 0.8 * wt)
        else:
            tc = rng.uniform(-0.8 * wt, T - wt)
        tc = min(tc, T - wt - 1e-3 * T)
        xc = rng.uniform(domain.x0, domain.x1)
        yc = rng.uniform(domain.y0, domain.y1)
        if role == "boundary":
            side = rng.integers(4)
            off = rng.uniform(0.0, 0.8)
            if side == 0:
                xc = domain.x0 + off * wx
            elif side == 1:
                xc = domain.x1 - off * wx
            elif side == 2:
                yc = domain.y0 + off * wy
            else:
                yc = domain.y1 - off * wy
        centre, width = (tc, xc, yc), (wt, wx, wy)
        scalars.append(bump_test_function("scalar", centre, width, domain))
        vectors.append(bump_test_function("vector", centre, width, domain))
    return TestSuite(tuple(scalars), tuple(vectors), domain, T, seed)


# -- exact 1D moments ------------------------------------------------------------

def moments(axis: Axis, factor: Factor, order: int, lo: float | None = None, hi: float | None = None,
            forder: int = 0) -> np.ndarray:
    """``mu[j] = integral over [lo, hi] of B_j^(order)(s) f^(forder)(s) ds`` for every basis ``j``.

    Exact: the integrand is polynomial on each knot interval cut by the bump support.
    """
    lo = axis.s0 if lo is None else lo
    hi = axis.s1 if hi is None else hi
    a, b = factor.support
    lo, hi = max(lo, a), min(hi, b)
    out = np.zeros(axis.nbasis)
    if hi <= lo:
        return out
    cuts = np.unique(np.concatenate([[lo, hi], axis.knots[(axis.knots > lo) & (axis.knots < hi)]]))
    x, w = _GAUSS
    mid = 0.5 * (cuts[1:] + cuts[:-1])
    half = 0.5 * (cuts[1:] - cuts[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    fv = factor(pts, forder) * wts
    return axis.design(pts, order).T @ fv


def point_values(axis: Axis, s: float, order: int) -> np.ndarray:
    return axis.design(np.array([s]), order)[0]

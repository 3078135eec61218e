import numpy as np
import pytest

from wildmhd.splines import Axis, apply_axis, stencil_axis


@pytest.fixture
def axis():
    return Axis(-0.5, 0.25, 8)


def test_partition_of_unity(axis):
    s = np.linspace(axis.s0, axis.s1, 97)
    assert np.allclose(axis.design(s).sum(axis=1), 1.0, atol=1e-14)
    for order in (1, 2, 3):
        assert np.allclose(axis.design(s, order).sum(axis=1), 0.0, atol=1e-10)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivatives_match_finite_differences(axis, order):
    rng = np.random.default_rng(3)
    c = rng.normal(size=axis.nbasis)
    # stay inside cells so the piecewise polynomial is smooth around each point
    s = axis.centers + 0.1 * axis.h * rng.uniform(-1, 1, axis.n)
    eps = 1e-4 * axis.h
    lo = axis.design(s - eps, order - 1) @ c
    hi = axis.design(s + eps, order - 1) @ c
    assert np.allclose(axis.design(s, order) @ c, (hi - lo) / (2 * eps), rtol=1e-6, atol=1e-6)


def test_support_of_basis(axis):
    s = np.linspace(axis.s0, axis.s1, 401)[:-1]
    D = axis.design(s)
    for j in range(axis.nbasis):
        nz = s[np.abs(D[:, j]) > 0]
        assert nz.min() >= axis.s0 + (j - 3) * axis.h - 1e-12
        assert nz.max() <= axis.s0 + (j + 1) * axis.h + 1e-12


@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_center_stencil_matches_design(axis, order):
    c = np.random.default_rng(5).normal(size=(axis.nbasis, 2, 3))
    direct = apply_axis(c, axis.design(axis.centers, order), 0)
    assert np.allclose(stencil_axis(c, axis.center_stencil(order), 0), direct, atol=1e-10)


def test_cubic_reproduction(axis):
    # cubic polynomials lie in the spline space; third derivative is constant
    s = np.linspace(axis.s0, axis.s1, 50)
    fine = np.linspace(axis.s0, axis.s1, 400)
    target = 2 * fine**3 - fine + 0.5
    c, *_ = np.linalg.lstsq(axis.design(fine), target, rcond=None)
    assert np.allclose(axis.design(s, 3) @ c, 12.0, atol=1e-8)

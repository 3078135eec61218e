import time

import numpy as np
import pytest

from wildmhd.core import SolutionFields
from wildmhd.reduction import (ReductionError, lift_2d_to_3d, magnetic_pressure_defect, manufactured_fields,
                               residual_equivalence_check)
from wildmhd.splines import Axis


def _fields(n, rho, p, u, b, nt=None):
    nt = nt or n
    axes = (Axis(0.0, 2 * np.pi / nt, nt), Axis(0.0, 2 * np.pi / n, n), Axis(0.0, 2 * np.pi / n, n))
    t, x, y = np.meshgrid(*(a.centers for a in axes), indexing="ij")
    return SolutionFields(axes, rho(t, x, y), p(t, x, y), np.stack(u(t, x, y)), b(t, x, y))


def test_lift_definition():
    f = _fields(4, lambda t, x, y: 1 + 0 * x, lambda t, x, y: 1 + 0 * x,
                lambda t, x, y: (1 + 0 * x, 2 + 0 * x), lambda t, x, y: 3 + 0 * x)
    lf = lift_2d_to_3d(f)
    assert np.all(lf.u3[0] == 1) and np.all(lf.u3[1] == 2) and np.all(lf.u3[2] == 0)
    assert np.all(lf.B3[:2] == 0) and np.all(lf.B3[2] == 3)


def test_lift_zero_and_round_trip():
    f = manufactured_fields(8, 3)
    back = lift_2d_to_3d(f).project()
    for name in ("rho", "p", "b", "u"):
        assert np.array_equal(getattr(back, name), getattr(f, name))
    z = _fields(4, lambda t, x, y: 1 + 0 * x, lambda t, x, y: 1 + 0 * x,
                lambda t, x, y: (0 * x, 0 * x), lambda t, x, y: 0 * x)
    lz = lift_2d_to_3d(z)
    assert not np.any(lz.u3) and not np.any(lz.B3)


def test_constant_fields_have_zero_residuals():
    f = _fields(8, lambda t, x, y: 2 + 0 * x, lambda t, x, y: 3 + 0 * x,
                lambda t, x, y: (0.5 + 0 * x, -1 + 0 * x), lambda t, x, y: 0.7 + 0 * x)
    rep = residual_equivalence_check(f)
    assert rep.passed
    assert max(rep.discrepancy.values()) < 1e-13


@pytest.mark.parametrize("n", [8, 16, 32])
def test_shear_example_identity_at_any_resolution(n):
    f = _fields(n, lambda t, x, y: 1 + 0 * x, lambda t, x, y: 1 + 0 * x,
                lambda t, x, y: (np.sin(y), 0 * x), lambda t, x, y: np.cos(x))
    rep = residual_equivalence_check(f)
    assert max(rep.discrepancy.values()) < 1e-12
    assert rep.passed


def test_injected_z_dependence_fails():
    f = manufactured_fields(16, 0)
    lf = lift_2d_to_3d(f)
    lf.rho = lf.rho * (1 + 0.01 * np.cos(np.arange(lf.rho.shape[-1]) * 2 * np.pi / lf.rho.shape[-1]))
    rep = residual_equivalence_check(f, lifted=lf)
    assert not rep.passed
    assert rep.z_dependence > 0


def test_jump_data_refused():
    f = _fields(16, lambda t, x, y: np.where(x < np.pi, 1.0, 2.0), lambda t, x, y: 1 + 0 * x,
                lambda t, x, y: (0 * x, 0 * x), lambda t, x, y: 0 * x)
    with pytest.raises(ReductionError, match="not smooth"):
        residual_equivalence_check(f)


def test_structural_zeros_exact():
    rep = residual_equivalence_check(manufactured_fields(16, 1))
    assert rep.div_b == 0.0 and rep.b_dot_u == 0.0 and rep.z_momentum == 0.0


def test_magnetic_pressure_second_order():
    errs = [magnetic_pressure_defect(manufactured_fields(n, 2)) for n in (16, 32, 64)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.7), rates
    assert magnetic_pressure_defect(manufactured_fields(16, 2), method="spectral") < 1e-12


def test_ten_fields_quickly():
    t0 = time.perf_counter()
    reports = [residual_equivalence_check(manufactured_fields(16, v)) for v in range(10)]
    assert all(r.passed for r in reports)
    assert time.perf_counter() - t0 < 10

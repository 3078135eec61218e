"""Uniform cubic B-spline bases on a single axis.

A field potential is stored as tensor-product cubic B-spline coefficients.
Axis convention: an axis with origin ``s0``, spacing ``h`` and ``n`` cells
carries ``n + 3`` basis functions; basis ``j`` is supported on
``[s0 + (j - 3) h, s0 + (j + 1) h]``, i.e. on cells ``j - 3 .. j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

# Pieces of the cardinal cubic B-spline on [0, 4], lowest-order coefficient first.
_PIECES = (
    np.array([0.0, 0.0, 0.0, 1.0]) / 6.0,
    np.array([4.0, -12.0, 12.0, -3.0]) / 6.0,
    np.array([-44.0, 60.0, -24.0, 3.0]) / 6.0,
    np.array([64.0, -48.0, 12.0, -1.0]) / 6.0,
)


def _piece_derivs(order: int) -> list[np.ndarray]:
    return [P.polyder(c, order) if order else c for c in _PIECES]


_DERIVS = [_piece_derivs(p) for p in range(4)]


@dataclass(frozen=True)
class Axis:
    """Uniform grid on ``[s0, s0 + n h]``."""

    s0: float
    h: float
    n: int

    @property
    def s1(self) -> float:
        return self.s0 + self.n * self.h

    @property
    def nbasis(self) -> int:
        return self.n + 3

    @property
    def knots(self) -> np.ndarray:
        return self.s0 + self.h * np.arange(self.n + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.s0 + self.h * (np.arange(self.n) + 0.5)

    def sub(self, start: int, stop: int) -> "Axis":
        return Axis(self.s0 + start * self.h, self.h, stop - start)

    def design(self, s: np.ndarray, order: int = 0) -> np.ndarray:
        """Dense matrix ``D[i, j] = d^order B_j / ds^order (s_i)``.

        Points outside ``[s0, s1]`` are clamped to the boundary cell.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        u = (s - self.s0) / self.h
        k = np.clip(np.floor(u).astype(int), 0, self.n - 1)
        loc = u - k
        out = np.zeros((s.size, self.nbasis))
        rows = np.arange(s.size)
        pieces = _DERIVS[order]
        scale = self.h ** (-order)
        for shift in range(4):
            # basis k + 3 - shift sees piece index ``shift`` at local coordinate loc + shift
            out[rows, k + 3 - shift] = P.polyval(loc + shift, pieces[shift]) * scale
        return out

    def center_stencil(self, order: int) -> np.ndarray:
        """Weights ``w`` with ``f(center of cell k) = sum_s w[s] c[k + s]``."""
        loc = 0.5
        pieces = _DERIVS[order]
        return np.array([P.polyval(loc + 3 - s, pieces[3 - s]) for s in range(4)]) * self.h ** (-order)


def apply_axis(c: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    """Contract coefficient axis ``axis`` of ``c`` with ``mat`` (npts x nbasis)."""
    out = np.tensordot(c, mat, axes=([axis], [1]))
    return np.moveaxis(out, -1, axis)


def stencil_axis(c: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    """Valid-mode 4-tap correlation along ``axis``: n + 3 coefficients -> n values."""
    n = c.shape[axis] - 3
    out = None
    for s in range(4):
        sl = [slice(None)] * c.ndim
        sl[axis] = slice(s, s + n)
        term = w[s] * c[tuple(sl)]
        out = term if out is None else out + term
    return out

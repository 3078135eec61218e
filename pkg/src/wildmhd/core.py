"""Equation of state, piecewise-constant data and the elementary state algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .splines import Axis


class DomainError(ValueError):
    """Raised for thermodynamic inputs outside ``rho > 0, p > 0``."""


class AdmissibilityError(ValueError):
    """Raised when a constant such as the total pressure level is not admissible."""


class ConfigurationError(ValueError):
    """Raised for malformed partitions or grids."""


def _check_positive(name: str, value) -> None:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class EquationOfState:
    """Ideal-gas closure with an optional isentropic override.

    ``mode="full"`` uses ``e = p / ((gamma - 1) rho)``.  ``mode="isentropic"``
    pins ``rho e(rho, p) = P(rho)``, the pressure potential of the power law
    ``p(rho) = rho ** law_exponent``; the second argument of ``e`` is then ignored.
    ``literal_potential`` switches the potential integrand from ``p(r) / r**2``
    to ``p(r) / r``.
    """

    gamma: float = 2.0
    entropy_ref: float = 0.0
    mode: str = "full"
    law_exponent: float | None = None
    literal_potential: bool = False

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if self.mode not in ("full", "isentropic"):
            raise ValueError(f"unknown EOS mode {self.mode!r}")
        if self.mode == "isentropic":
            exponent = self.gamma if self.law_exponent is None else self.law_exponent
            if not exponent > 1.0:
                raise ValueError("pressure-law exponent must exceed 1")
            object.__setattr__(self, "law_exponent", float(exponent))

    def isentropic(self, law_exponent: float | None = None) -> "EquationOfState":
        return EquationOfState(
            gamma=self.gamma,
            entropy_ref=self.entropy_ref,
            mode="isentropic",
            law_exponent=self.gamma if law_exponent is None else law_exponent,
            literal_potential=self.literal_potential,
        )

    def internal_energy(self, rho, p):
        _check_positive("rho", rho)
        _check_positive("p", p)
        if self.mode == "isentropic":
            return pressure_potential(self, rho, self.law_exponent) / np.asarray(rho, dtype=float)
        return np.asarray(p, dtype=float) / ((self.gamma - 1.0) * np.asarray(rho, dtype=float))

    def specific_entropy(self, rho, p):
        _check_positive("rho", rho)
        _check_positive("p", p)
        rho = np.asarray(rho, dtype=float)
        p = np.asarray(p, dtype=float)
        return (np.log(p) - self.gamma * np.log(rho)) / (self.gamma - 1.0) + self.entropy_ref

    def temperature(self, rho, p):
        """Integrating factor of the Gibbs relation ``T ds = de - p / rho**2 drho``."""
        _check_positive("rho", rho)
        _check_positive("p", p)
        return np.asarray(p, dtype=float) / np.asarray(rho, dtype=float)

    def pressure_law(self, rho):
        _check_positive("rho", rho)
        exponent = self.gamma if self.law_exponent is None else self.law_exponent
        return np.asarray(rho, dtype=float) ** exponent


def eos_internal_energy(eos: EquationOfState, rho, p):
    return eos.internal_energy(rho, p)


def eos_specific_entropy(eos: EquationOfState, rho, p):
    return eos.specific_entropy(rho, p)


def pressure_potential(eos: EquationOfState, rho, law_exponent: float):
    """``P(rho) = rho * int_1^rho p(r) / r**2 dr`` for ``p(r) = r**law_exponent``.

    With ``eos.literal_potential`` the integrand is ``p(r) / r`` instead.
    """
    _check_positive("rho", rho)
    if not law_exponent > 1.0:
        raise ValueError("pressure-law exponent must exceed 1")
    rho = np.asarray(rho, dtype=float)
    a = float(law_exponent)
    if eos.literal_potential:
        return rho * (rho**a - 1.0) / a
    return rho * (rho ** (a - 1.0) - 1.0) / (a - 1.0)


# -- state algebra -------------------------------------------------------------

def kinetic_energy(rho, u):
    u = np.asarray(u, dtype=float)
    return 0.5 * np.asarray(rho, dtype=float) * np.sum(u * u, axis=0)


def magnetic_energy(b):
    b = np.asarray(b, dtype=float)
    return 0.5 * b * b


def total_energy(eos: EquationOfState, rho, p, u, b):
    return kinetic_energy(rho, u) + np.asarray(rho) * eos.internal_energy(rho, p) + magnetic_energy(b)


def energy_flux_coefficient(eos: EquationOfState, rho, p, u, b):
    """Bracket multiplying ``u`` in the energy flux: ``E + p + b**2 / 2``."""
    return total_energy(eos, rho, p, u, b) + np.asarray(p, dtype=float) + magnetic_energy(b)


# -- partitions ----------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    """Open axis-aligned rectangle ``(x0, x1) x (y0, y1)``."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ConfigurationError(f"degenerate rectangle {self}")

    @property
    def lx(self) -> float:
        return self.x1 - self.x0

    @property
    def ly(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def overlap_area(self, other: "Rect") -> float:
        wx = min(self.x1, other.x1) - max(self.x0, other.x0)
        wy = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(wx, 0.0) * max(wy, 0.0)

    def contains(self, other: "Rect", tol: float = 1e-12) -> bool:
        return (other.x0 >= self.x0 - tol and other.x1 <= self.x1 + tol
                and other.y0 >= self.y0 - tol and other.y1 <= self.y1 + tol)


@dataclass(frozen=True)
class Piece:
    rect: Rect
    rho: float
    p: float
    b: float = 0.0

    def __post_init__(self):
        if not (self.rho > 0.0 and math.isfinite(self.rho)):
            raise DomainError(f"piece density must be positive (vacuum excluded), got {self.rho}")
        if not (self.p > 0.0 and math.isfinite(self.p)):
            raise DomainError(f"piece pressure must be positive (vacuum excluded), got {self.p}")
        if not math.isfinite(self.b):
            raise DomainError(f"piece magnetic field must be finite, got {self.b}")

    @property
    def total_pressure(self) -> float:
        return self.p + 0.5 * self.b * self.b


@dataclass(frozen=True)
class PiecewiseConstantData:
    """Piecewise-constant ``(rho0, p0, b0)`` on a rectangle tiled by rectangles."""

    domain: Rect
    pieces: tuple[Piece, ...]
    T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise ConfigurationError("at least one piece is required")
        if not self.T > 0.0:
            raise ConfigurationError(f"final time must be positive, got {self.T}")
        scale = self.domain.area
        for i, piece in enumerate(self.pieces):
            if not self.domain.contains(piece.rect):
                raise ConfigurationError(f"piece {i + 1} leaves the domain")
            for j in range(i):
                if piece.rect.overlap_area(self.pieces[j].rect) > 1e-12 * scale:
                    raise ConfigurationError(f"pieces {j + 1} and {i + 1} overlap")
        covered = sum(pc.rect.area for pc in self.pieces)
        if abs(covered - scale) > 1e-12 * scale:
            raise ConfigurationError(
                f"pieces cover area {covered:.15g}, domain has area {scale:.15g}")

    @classmethod
    def single(cls, rho: float = 1.0, p: float = 1.0, b: float = 0.0,
               lx: float = 1.0, ly: float = 1.0, T: float = 1.0) -> "PiecewiseConstantData":
        dom = Rect(0.0, lx, 0.0, ly)
        return cls(dom, (Piece(dom, rho, p, b),), T)


def compute_c_constants(data: PiecewiseConstantData, lam: float) -> list[float]:
    """Per-piece kinetic energy levels ``C_i = lam - p_i - b_i**2 / 2``."""
    out = []
    for i, piece in enumerate(data.pieces):
        c = lam - piece.total_pressure
        if not c > 0.0:
            raise AdmissibilityError(
                f"piece {i + 1} requires Lambda > {piece.total_pressure:g} (got {lam:g})")
        out.append(c)
    return out


# -- grids ---------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    nt: int
    nx: int
    ny: int

    def __post_init__(self):
        if min(self.nt, self.nx, self.ny) < 1:
            raise ConfigurationError(f"grid sizes must be positive, got {self}")

    def axes(self, data: PiecewiseConstantData) -> tuple[Axis, Axis, Axis]:
        d = data.domain
        return (Axis(0.0, data.T / self.nt, self.nt),
                Axis(d.x0, d.lx / self.nx, self.nx),
                Axis(d.y0, d.ly / self.ny, self.ny))

    def piece_slices(self, data: PiecewiseConstantData) -> list[tuple[slice, slice]]:
        """Cell index ranges of every piece; pieces must sit on grid lines."""
        _, ax, ay = self.axes(data)
        out = []
        for i, piece in enumerate(data.pieces):
            ix = [_grid_index(v, ax, f"piece {i + 1} x-edge") for v in (piece.rect.x0, piece.rect.x1)]
            iy = [_grid_index(v, ay, f"piece {i + 1} y-edge") for v in (piece.rect.y0, piece.rect.y1)]
            out.append((slice(*ix), slice(*iy)))
        return out


def _grid_index(v: float, ax: Axis, what: str) -> int:
    k = (v - ax.s0) / ax.h
    r = round(k)
    if abs(k - r) > 1e-9:
        raise ConfigurationError(f"{what} at {v:g} is not on a grid line (spacing {ax.h:g})")
    return int(r)


@dataclass
class SolutionFields:
    """Cell-centre samples of ``(rho, p, u, b)`` on a uniform space-time grid.

    ``u`` has shape ``(2, nt, nx, ny)``; the scalar fields ``(nt, nx, ny)``.
    ``u0`` holds the ``t = 0`` trace, shape ``(2, nx, ny)``.
    """

    axes: tuple[Axis, Axis, Axis]
    rho: np.ndarray
    p: np.ndarray
    u: np.ndarray
    b: np.ndarray
    u0: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = tuple(a.n for a in self.axes)
        for name in ("rho", "p", "b"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.u.shape != (2,) + shape:
            raise ValueError(f"u has shape {self.u.shape}, expected {(2,) + shape}")
        if self.u0 is None:
            self.u0 = self.u[:, 0].copy()
        if np.any(self.rho <= 0) or np.any(self.p <= 0):
            raise DomainError("rho and p must be positive everywhere")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(a.n for a in self.axes)


def cell_pieces(data: PiecewiseConstantData, grid: Grid) -> np.ndarray:
    """Piece index of every spatial cell, shape ``(nx, ny)``."""
    owner = np.full((grid.nx, grid.ny), -1, dtype=int)
    for i, (sx, sy) in enumerate(grid.piece_slices(data)):
        owner[sx, sy] = i
    if np.any(owner < 0):
        raise ConfigurationError("pieces do not tile the grid")
    return owner


def piece_constant_field(data: PiecewiseConstantData, grid: Grid, values: Sequence[float]) -> np.ndarray:
    owner = cell_pieces(data, grid)
    plane = np.asarray(values, dtype=float)[owner]
    return np.broadcast_to(plane, (grid.nt, grid.nx, grid.ny)).copy()

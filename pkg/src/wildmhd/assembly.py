"""Gluing per-piece convex-integration outputs into full and isentropic solutions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .convint import Potential, Schedule, iterate
from .core import (AdmissibilityError, EquationOfState, Grid, PiecewiseConstantData, SolutionFields,
                   compute_c_constants, piece_constant_field, pressure_potential)
from .verify import FULL_IDENTITIES, ISENTROPIC_IDENTITIES, PieceSource

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def piece_seed(master: int, index: int) -> int:
    """Independent per-piece stream: split the master seed by piece index."""
    return splitmix64((int(master) & _MASK64) ^ splitmix64(index + 1))


def choose_lambda(data: PiecewiseConstantData, margin: float = 1.0) -> float:
    if not margin > 0.0:
        raise AdmissibilityError(f"margin must be strictly positive, got {margin}")
    return max(pc.total_pressure for pc in data.pieces) + margin


@dataclass
class AssembledSolution:
    data: PiecewiseConstantData
    eos: EquationOfState
    lam: float
    C: tuple[float, ...]
    seed: int | None
    piece_seeds: tuple[int | None, ...]
    grid: Grid
    potentials: tuple[Potential, ...]
    fields: SolutionFields
    histories: tuple[list, ...] = ()
    iterations: tuple[int, ...] = ()
    subsolution_only: bool = False
    identities: tuple[str, ...] = FULL_IDENTITIES
    provenance: dict = field(default_factory=dict)

    def sources(self) -> list[PieceSource]:
        out = []
        for piece, pot in zip(self.data.pieces, self.potentials):
            e = float(self.eos.internal_energy(piece.rho, piece.p))
            s = float(self.eos.specific_entropy(piece.rho, piece.p))
            out.append(PieceSource(piece.rect, pot, piece.rho, piece.p, piece.b, e, s, piece.rho * e))
        return out

    def relative_deficits(self) -> list[float]:
        return [h[-1] / h[0] if h and h[0] > 0 else 0.0 for h in self.histories]

    def energy_density(self) -> np.ndarray:
        f = self.fields
        kin = 0.5 * f.rho * (f.u[0] ** 2 + f.u[1] ** 2)
        return kin + f.rho * self.eos.internal_energy(f.rho, f.p) + 0.5 * f.b**2

    def energy_target(self) -> np.ndarray:
        f = self.fields
        return self.lam + f.rho * self.eos.internal_energy(f.rho, f.p) - f.p

    def kinetic_gap(self) -> np.ndarray:
        """``C_i - |u|^2 rho / 2`` per cell (the kinetic deficit density)."""
        f = self.fields
        C = piece_constant_field(self.data, self.grid, self.C)
        return C - 0.5 * f.rho * (f.u[0] ** 2 + f.u[1] ** 2)

    def scaled_velocity(self, factor: float) -> "AssembledSolution":
        """A copy with ``u`` (and the generating potentials) multiplied by ``factor``."""
        pots = tuple(Potential(p.axes, p.coef * factor) for p in self.potentials)
        f = self.fields
        fields = SolutionFields(f.axes, f.rho, f.p, f.u * factor, f.b, f.u0 * factor)
        return replace(self, potentials=pots, fields=fields,
                       provenance=dict(self.provenance, velocity_scale=factor))


def build_solution(data: PiecewiseConstantData, lam: float, seed: int | None, budget: int,
                   grid: Grid = Grid(32, 32, 32), eos: EquationOfState = EquationOfState(),
                   target_deficit: float = 0.0, schedule: Schedule | None = None) -> AssembledSolution:
    """Run convex integration on every piece and glue ``u = m / rho0``."""
    C = compute_c_constants(data, lam)
    axes = grid.axes(data)
    slices = grid.piece_slices(data)
    nt = grid.nt
    u = np.zeros((2, grid.nt, grid.nx, grid.ny))
    u0 = np.zeros((2, grid.nx, grid.ny))
    potentials, histories, iterations, seeds = [], [], [], []
    for i, (piece, (sx, sy), Ci) in enumerate(zip(data.pieces, slices, C)):
        si = None if seed is None else piece_seed(seed, i)
        shape = (nt, sx.stop - sx.start, sy.stop - sy.start)
        logger.info("piece %d: rho=%g C=%g grid=%s seed=%s", i + 1, piece.rho, Ci, shape, si)
        sub = iterate(piece.rect, data.T, piece.rho, Ci, si, budget, target_deficit, shape, schedule,
                      shared_stream=i)
        # fields are re-derived from the spline coefficients so that artifacts reproduce them bit-exactly
        u[:, :, sx, sy] = sub.potential.center_states()[:2] / piece.rho
        u0[:, sx, sy] = sub.potential.initial_states()[:2] / piece.rho
        potentials.append(sub.potential)
        histories.append(list(sub.history))
        iterations.append(sub.iteration)
        seeds.append(si)
    rho = piece_constant_field(data, grid, [pc.rho for pc in data.pieces])
    p = piece_constant_field(data, grid, [pc.p for pc in data.pieces])
    b = piece_constant_field(data, grid, [pc.b for pc in data.pieces])
    fields = SolutionFields(axes, rho, p, u, b, u0)
    # momentum: m (x) m / rho + (p + b^2/2) I = (m (x) m / rho - C I) + Lambda I on every piece
    cancellation = [Ci + pc.total_pressure for Ci, pc in zip(C, data.pieces)]
    provenance = {
        "seed": seed,
        "piece_seeds": seeds,
        "lambda": lam,
        "C": list(C),
        "lambda_cancellation": cancellation,
        "iterations": iterations,
        "final_relative_deficits": [h[-1] / h[0] for h in histories],
        "grid": [grid.nt, grid.nx, grid.ny],
        "gamma": eos.gamma,
    }
    return AssembledSolution(data, eos, lam, tuple(C), seed, tuple(seeds), grid, tuple(potentials), fields,
                             tuple(histories), tuple(iterations), budget == 0, FULL_IDENTITIES, provenance)


class PressureLawError(ValueError):
    pass


@dataclass
class IsentropicSolution:
    """``(rho, u, b)`` of an assembled solution read through the isentropic system."""

    base: AssembledSolution
    eos: EquationOfState
    law_exponent: float
    identities: tuple[str, ...] = ISENTROPIC_IDENTITIES

    @property
    def fields(self) -> SolutionFields:
        return self.base.fields

    @property
    def subsolution_only(self) -> bool:
        return self.base.subsolution_only

    def override_energy(self) -> list[float]:
        """Per-piece ``e`` with ``rho0 e = P(rho0)``."""
        return [float(self.eos.internal_energy(pc.rho, pc.p)) for pc in self.base.data.pieces]

    def sources(self) -> list[PieceSource]:
        out = []
        for piece, pot in zip(self.base.data.pieces, self.base.potentials):
            p_law = float(self.eos.pressure_law(piece.rho))
            P = float(pressure_potential(self.eos, piece.rho, self.law_exponent))
            s = float(self.eos.specific_entropy(piece.rho, p_law))
            out.append(PieceSource(piece.rect, pot, piece.rho, p_law, piece.b, P / piece.rho, s, P))
        return out


def isentropic_view(sol: AssembledSolution, law_exponent: float, rtol: float = 1e-12) -> IsentropicSolution:
    eos = sol.eos.isentropic(law_exponent)
    bad = [i + 1 for i, pc in enumerate(sol.data.pieces)
           if abs(pc.p - pc.rho**law_exponent) > rtol * max(pc.p, 1.0)]
    if bad:
        raise PressureLawError(f"pieces {bad} violate p = rho^{law_exponent:g}")
    return IsentropicSolution(sol, eos, float(law_exponent))

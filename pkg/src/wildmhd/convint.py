"""Convex integration for the relaxed kinetic-energy constraint on one rectangle.

States are ``z = (m, U)`` with ``U`` symmetric and trace-free, stored as the
two entries ``(U11, U12)``.  Every field the engine produces is generated by a
scalar potential ``chi`` (a tensor-product cubic B-spline in ``(t, x, y)``):

    m   = (d_y lap chi, -d_x lap chi)
    U11 = -2 d_txy chi
    U12 = d_t (d_xx - d_yy) chi

so ``div m = 0`` and ``d_t m + div U = 0`` hold identically, and the potential's
spatial support inside the rectangle makes ``m.n`` and ``U n`` vanish on its
boundary.  Plane waves of this form span the wave cone of the linear system.

The iteration is greedy: the worst block (largest integrated gap
``C - e(z)``) receives a localized plane wave whose amplitude is set by an
exact line search keeping ``e(z) <= C`` at every cell centre.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Rect
from .splines import Axis, apply_axis, stencil_axis

logger = logging.getLogger(__name__)

# (sign, (d_t, d_x, d_y)) terms of each state component in terms of the potential
STATE_TERMS = (
    ((1.0, (0, 2, 1)), (1.0, (0, 0, 3))),
    ((-1.0, (0, 3, 0)), (-1.0, (0, 1, 2))),
    ((-2.0, (1, 1, 1)),),
    ((1.0, (1, 2, 0)), (-1.0, (1, 0, 2))),
)
STATE_NAMES = ("m1", "m2", "U11", "U12")


class StagnationError(RuntimeError):
    """The deficit failed to decrease over a full sweep of blocks."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class WaveRejected(ValueError):
    pass


# -- relaxed set geometry -----------------------------------------------------------

@dataclass(frozen=True)
class SubsolutionState:
    m: tuple[float, float]
    U: tuple[float, float]  # (U11, U12); U22 = -U11

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.m[0], self.m[1], self.U[0], self.U[1]], dtype=float)

    @classmethod
    def from_vector(cls, z) -> "SubsolutionState":
        z = np.asarray(z, dtype=float)
        return cls((float(z[0]), float(z[1])), (float(z[2]), float(z[3])))

    def matrix(self) -> np.ndarray:
        return np.array([[self.U[0], self.U[1]], [self.U[1], -self.U[0]]])

    @property
    def trace(self) -> float:
        return self.U[0] + (-self.U[0])


def gap(m1, m2, u11, u12, rho):
    """``lambda_max(m (x) m / rho - U)`` for 2x2 symmetric trace-free ``U``, vectorized."""
    a = m1 * m1 / rho - u11
    d = m2 * m2 / rho + u11
    off = m1 * m2 / rho - u12
    half = 0.5 * (a - d)
    return 0.5 * (a + d) + np.sqrt(half * half + off * off)


def relaxed_gap(z: SubsolutionState, rho: float) -> float:
    return float(gap(z.m[0], z.m[1], z.U[0], z.U[1], rho))


def kinetic(m1, m2, rho):
    return 0.5 * (m1 * m1 + m2 * m2) / rho


def wave_state(theta: float, tau: float) -> np.ndarray:
    """State direction of the plane wave with spatial direction ``theta`` and time slope ``tau``."""
    s2, c2 = math.sin(2 * theta), math.cos(2 * theta)
    return np.array([math.sin(theta), -math.cos(theta), -tau * s2, tau * c2])


def _segment_extent(z: np.ndarray, dirs: np.ndarray, rho: float, C: float, steps: int = 60) -> np.ndarray:
    """Largest ``s >= 0`` with ``e(z + s d) <= C`` for each row ``d`` of ``dirs``."""
    lo = np.zeros(len(dirs))
    hi = np.full(len(dirs), 1.0)
    scale = math.sqrt(2 * rho * C)
    hi *= 4 * scale + 4 * C
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        w = z[None, :] + mid[:, None] * dirs
        ok = gap(w[:, 0], w[:, 1], w[:, 2], w[:, 3], rho) <= C
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def admissible_segment(z: SubsolutionState, rho: float, C: float, n_theta: int = 72,
                       taus: np.ndarray | None = None):
    """Wave-cone segment ``[z-, z+]`` centred at ``z`` inside ``{e <= C}``.

    Returns ``None`` when ``e(z) >= C``.  The segment length, measured as the
    velocity span ``|m+ - m-| / rho``, is at least ``SEGMENT_KAPPA (C - e(z)) / sqrt(2 rho C)``.
    """
    e0 = relaxed_gap(z, rho)
    if e0 >= C:
        return None
    if taus is None:
        taus = np.linspace(-2.0, 2.0, 41) * math.sqrt(C / rho)
    thetas = np.arange(n_theta) * math.pi / n_theta
    dirs = np.array([wave_state(th, ta) for th in thetas for ta in taus])
    zv = z.vector
    plus = _segment_extent(zv, dirs, rho, C)
    minus = _segment_extent(zv, -dirs, rho, C)
    s = np.minimum(plus, minus)
    best = int(np.argmax(s))
    d = dirs[best] * s[best]
    return SubsolutionState.from_vector(zv - d), SubsolutionState.from_vector(zv + d)


SEGMENT_KAPPA = 0.5


def segment_length(seg, rho: float) -> float:
    lo, hi = seg
    return float(np.hypot(hi.m[0] - lo.m[0], hi.m[1] - lo.m[1]) / rho)


# -- potential-generated fields -----------------------------------------------------

class Potential:
    """Cubic B-spline potential on a rectangle with ``nt x nx x ny`` cells.

    Spatial coefficients are confined to indices ``3 .. n - 1`` so that the
    potential and all its derivatives vanish at the spatial boundary.
    """

    def __init__(self, axes: tuple[Axis, Axis, Axis], coef: np.ndarray | None = None):
        self.axes = tuple(axes)
        shape = tuple(a.nbasis for a in self.axes)
        if min(a.n for a in self.axes[1:]) < 4:
            raise ValueError("each spatial direction needs at least 4 cells")
        self.coef = np.zeros(shape) if coef is None else np.array(coef, dtype=float)
        if self.coef.shape != shape:
            raise ValueError(f"coefficient shape {self.coef.shape} != {shape}")

    @property
    def free_x(self) -> tuple[int, int]:
        return 3, self.axes[1].n

    @property
    def free_y(self) -> tuple[int, int]:
        return 3, self.axes[2].n

    def copy(self) -> "Potential":
        return Potential(self.axes, self.coef.copy())

    def center_states(self, coef: np.ndarray | None = None) -> np.ndarray:
        """States at cell centres, shape ``(4, nt, nx, ny)`` (valid-mode stencils)."""
        coef = self.coef if coef is None else coef
        W = [[ax.center_stencil(p) for p in range(4)] for ax in self.axes]
        return _stencil_states(coef, W)

    def states_at(self, t, x, y) -> np.ndarray:
        """States on the tensor grid ``t x x x y``, shape ``(4, len(t), len(x), len(y))``."""
        mats = [[ax.design(pts, p) for p in range(4)] for ax, pts in zip(self.axes, (t, x, y))]
        cache = {}
        out = []
        for terms in STATE_TERMS:
            acc = 0.0
            for sign, (pt, px, py) in terms:
                key = (pt, px, py)
                if key not in cache:
                    v = apply_axis(self.coef, mats[0][pt], 0)
                    v = apply_axis(v, mats[1][px], 1)
                    cache[key] = apply_axis(v, mats[2][py], 2)
                acc = acc + sign * cache[key]
            out.append(acc)
        return np.stack(out)

    def initial_states(self) -> np.ndarray:
        """States on the ``t = 0`` plane at spatial cell centres, shape ``(4, nx, ny)``."""
        ax_t, ax_x, ax_y = self.axes
        return self.states_at(np.array([ax_t.s0]), ax_x.centers, ax_y.centers)[:, 0]


def _stencil_states(coef: np.ndarray, W) -> np.ndarray:
    cache = {}
    out = []
    for terms in STATE_TERMS:
        acc = 0.0
        for sign, (pt, px, py) in terms:
            key = (pt, px, py)
            if key not in cache:
                v = stencil_axis(coef, W[0][pt], 0)
                v = stencil_axis(v, W[1][px], 1)
                cache[key] = stencil_axis(v, W[2][py], 2)
            acc = acc + sign * cache[key]
        out.append(acc)
    return np.stack(out)


# -- waves -------------------------------------------------------------------------

def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**4 * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x**3)


def plateau(s: np.ndarray, lo: float, hi: float, ramp: float) -> np.ndarray:
    """Flat-top bump: 1 inside ``[lo + ramp, hi - ramp]``, C^3 ramps, 0 outside ``(lo, hi)``."""
    return _smoothstep(np.minimum(s - lo, hi - s) / ramp)


PROFILES = ("sawtooth", "square", "sine")


def profile_potential(s: np.ndarray, profile: str, harmonics: int = 3) -> np.ndarray:
    """Third antiderivative ``H`` of a Lanczos-smoothed periodic profile ``h`` (``H''' = h``)."""
    out = np.zeros_like(s, dtype=float)
    if profile == "sine":
        return np.cos(s)
    for n in range(1, harmonics + 1):
        sigma = np.sinc(n / (harmonics + 1))
        if profile == "square":
            if n % 2 == 0:
                continue
            bn = 4.0 / (math.pi * n)
        elif profile == "sawtooth":
            bn = 2.0 * (-1) ** (n + 1) / (math.pi * n)
        else:
            raise ValueError(f"unknown profile {profile!r}")
        out += sigma * bn * np.cos(n * s) / n**3
    return out


@dataclass(frozen=True)
class WavePerturbation:
    """A localized plane wave ``amplitude * bump * H(k xi.(t, x, y) + phase) / k**3`` in the potential.

    ``direction`` is ``(tau, cos theta, sin theta)``; to leading order the wave
    adds ``amplitude * bump * h(...) * wave_state(theta, tau)`` to the state.
    ``box`` is the bump support ``((t0, t1), (x0, x1), (y0, y1))`` in physical units.
    """

    theta: float
    tau: float
    k: float
    phase: float
    box: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    ramp: tuple[float, float, float]
    amplitude: float = 1.0
    profile: str = "square"

    @property
    def direction(self) -> np.ndarray:
        return np.array([self.tau, math.cos(self.theta), math.sin(self.theta)])

    @property
    def increment(self) -> np.ndarray:
        return wave_state(self.theta, self.tau)

    def with_amplitude(self, amplitude: float) -> "WavePerturbation":
        return WavePerturbation(self.theta, self.tau, self.k, self.phase, self.box, self.ramp,
                                amplitude, self.profile)


@dataclass(frozen=True)
class Block:
    """Half-open cell-index box ``[t0, t1) x [x0, x1) x [y0, y1)``; time may extend past the grid."""

    t0: int
    t1: int
    x0: int
    x1: int
    y0: int
    y1: int

    def box(self, axes) -> tuple:
        return tuple((ax.s0 + lo * ax.h, ax.s0 + hi * ax.h)
                     for ax, (lo, hi) in zip(axes, ((self.t0, self.t1), (self.x0, self.x1), (self.y0, self.y1))))


class LocalWave:
    """Unit-amplitude coefficient increment of a wave and its state increment on the affected cells."""

    def __init__(self, potential: Potential, wave: WavePerturbation, first_time_coef: int = 0,
                 envelope=None):
        axes = potential.axes
        (ta, tb), (xa, xb), (ya, yb) = wave.box
        ranges = []
        for d, (ax, (lo, hi)) in enumerate(zip(axes, wave.box)):
            # coefficient j is centred at s0 + (j - 1) h
            j = np.arange(ax.nbasis)
            centre = ax.s0 + (j - 1) * ax.h
            inside = (centre > lo) & (centre < hi)
            if d == 0:
                inside &= j >= first_time_coef
            else:
                fa, fb = (potential.free_x if d == 1 else potential.free_y)
                inside &= (j >= fa) & (j < fb)
            idx = np.nonzero(inside)[0]
            ranges.append(idx)
        self.empty = any(len(r) == 0 for r in ranges)
        if self.empty:
            return
        tc, xc, yc = [ax.s0 + (r - 1) * ax.h for ax, r in zip(axes, ranges)]
        loc = (plateau(tc, ta, tb, wave.ramp[0])[:, None, None]
               * plateau(xc, xa, xb, wave.ramp[1])[None, :, None]
               * plateau(yc, ya, yb, wave.ramp[2])[None, None, :])
        arg = wave.k * (wave.tau * tc[:, None, None] + math.cos(wave.theta) * xc[None, :, None]
                        + math.sin(wave.theta) * yc[None, None, :]) + wave.phase
        if envelope is not None:
            loc = loc * envelope(ranges)
        self.ranges = ranges
        self.dcoef = loc * profile_potential(arg, wave.profile) / wave.k**3
        self.cslice = tuple(slice(int(r[0]), int(r[-1]) + 1) for r in ranges)
        # cells touched: coefficient j influences cells j-3 .. j
        cells = []
        for ax, r in zip(axes, ranges):
            cells.append((max(int(r[0]) - 3, 0), min(int(r[-1]) + 1, ax.n)))
        self.cells = tuple(slice(a, b) for a, b in cells)
        local = np.zeros(tuple(b - a + 3 for a, b in cells))
        off = tuple(int(r[0]) - a for r, (a, _) in zip(ranges, cells))
        local[tuple(slice(o, o + len(r)) for o, r in zip(off, ranges))] = self.dcoef
        W = [[ax.center_stencil(p) for p in range(4)] for ax in axes]
        self.dstate = _stencil_states(local, W)
        if self.cells[0].start == 0:
            # increment of the t = 0 trace on the spatial cells
            t0 = np.array([axes[0].s0])
            mats = [axes[0].design(t0, p)[:, :local.shape[0]] for p in range(4)]
            sub = [[mats[p]] for p in range(4)]
            Wx = [axes[1].center_stencil(p) for p in range(4)]
            Wy = [axes[2].center_stencil(p) for p in range(4)]
            out = []
            for terms in STATE_TERMS:
                acc = 0.0
                for sign, (pt, px, py) in terms:
                    v = apply_axis(local, sub[pt][0], 0)
                    v = stencil_axis(v, Wx[px], 1)
                    acc = acc + sign * stencil_axis(v, Wy[py], 2)
                out.append(acc[0])
            self.dinit = np.stack(out)
        else:
            self.dinit = None


# -- subsolution fields -------------------------------------------------------------

@dataclass
class SubsolutionField:
    """Cell-centre states of a potential-generated subsolution on ``[0, T] x Q``."""

    potential: Potential
    rho: float
    C: float
    seed: int | None = None
    iteration: int = 0
    states: np.ndarray = field(default=None, repr=False)
    init_states: np.ndarray = field(default=None, repr=False)
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.C > 0 or 2.0 * self.rho * self.C < 1e-12:
            raise ValueError(f"kinetic level C={self.C} is not representable")
        if self.states is None:
            self.states = self.potential.center_states()
        if self.init_states is None:
            self.init_states = self.potential.initial_states()
        self.e = gap(*self.states, self.rho)
        self.e_init = gap(*self.init_states, self.rho)
        if not self.history:
            self.history.append(self.deficit)

    @classmethod
    def zero(cls, Q: Rect, T: float, shape: tuple[int, int, int], rho: float, C: float,
             seed=None) -> "SubsolutionField":
        nt, nx, ny = shape
        axes = (Axis(0.0, T / nt, nt), Axis(Q.x0, Q.lx / nx, nx), Axis(Q.y0, Q.ly / ny, ny))
        return cls(Potential(axes), rho, C, seed)

    @property
    def axes(self):
        return self.potential.axes

    @property
    def cell_volume(self) -> float:
        return float(np.prod([a.h for a in self.axes]))

    @property
    def deficit(self) -> float:
        return float(np.sum(self.C - self.e) * self.cell_volume)

    @property
    def initial_deficit(self) -> float:
        ax = self.axes
        return float(np.sum(self.C - self.e_init) * ax[1].h * ax[2].h)

    @property
    def m(self) -> np.ndarray:
        return self.states[:2]

    @property
    def m0(self) -> np.ndarray:
        return self.init_states[:2]

    def kinetic(self) -> np.ndarray:
        return kinetic(self.states[0], self.states[1], self.rho)

    def kinetic_initial(self) -> np.ndarray:
        return kinetic(self.init_states[0], self.init_states[1], self.rho)

    def kinetic_fraction(self, tol: float = 0.1) -> float:
        return float(np.mean(np.abs(self.kinetic() - self.C) < tol * self.C))

    def copy(self) -> "SubsolutionField":
        out = SubsolutionField(self.potential.copy(), self.rho, self.C, self.seed, self.iteration,
                               self.states.copy(), self.init_states.copy(), list(self.history))
        return out


def _check_wave_box(field: SubsolutionField, block: Block, wave: WavePerturbation) -> None:
    axes = field.axes
    bbox = block.box(axes)
    tol = 1e-12
    for d, ((lo, hi), (blo, bhi)) in enumerate(zip(wave.box, bbox)):
        if lo < blo - tol or hi > bhi + tol:
            raise WaveRejected(f"wave support {wave.box} exceeds its block {bbox}")
        if d > 0:
            ax = axes[d]
            if lo < ax.s0 - tol or hi > ax.s1 + tol:
                raise WaveRejected("wave support leaves the spatial domain")


def add_localized_wave(field: SubsolutionField, block: Block, wave: WavePerturbation,
                       first_time_coef: int = 0, local: LocalWave | None = None) -> SubsolutionField:
    """Add ``wave`` (support inside ``block``) to the potential and update the states in place."""
    _check_wave_box(field, block, wave)
    if wave.amplitude == 0.0:
        return field
    if local is None:
        local = LocalWave(field.potential, wave, first_time_coef)
    if local.empty:
        return field
    a = wave.amplitude
    field.potential.coef[local.cslice] += a * local.dcoef
    region = (slice(None),) + local.cells
    field.states[region] += a * local.dstate
    field.e[local.cells] = gap(*field.states[region], field.rho)
    if local.dinit is not None:
        r0 = (slice(None),) + local.cells[1:]
        field.init_states[r0] += a * local.dinit
        field.e_init[local.cells[1:]] = gap(*field.init_states[r0], field.rho)
    return field


# -- iteration ---------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Tuning of the greedy wave iteration.

    The wave number at iteration ``n`` is ``k0 * 2**ceil(n / n0)`` oscillations
    per unit length, capped so a wavelength never spans fewer than
    ``min_wavelength_cells`` grid cells.  Blocks span ``block_wavelengths``
    wavelengths plus the two ramps.
    """

    k0: float = 4.0
    n0: int = 500
    min_wavelength_cells: float = 4.0
    block_wavelengths: float = 1.5
    ramp_cells: float = 2.0
    candidates: int = 8
    guided: int = 2
    line_steps: int = 12
    safety: float = 0.98
    tau_max: float = 1.5
    profile: str = "sine"
    shared_fraction: float = 0.5
    initial_fraction: float = 0.1
    patience: int = 200
    cooldown: int = 0
    envelope_cells: int = 3

    def wavenumber(self, n: int, h: float) -> float:
        k = self.k0 * 2.0 ** math.ceil(n / self.n0)
        return min(k, 1.0 / (self.min_wavelength_cells * h))

    def wavelength_cells(self, n: int, h: float) -> float:
        return 1.0 / (self.wavenumber(n, h) * h)

    def block_cells(self, n: int, h: float) -> int:
        return int(round(self.block_wavelengths * self.wavelength_cells(n, h) + 2 * self.ramp_cells))


def _room(z: np.ndarray, dz: np.ndarray, rho: float, C: float, steps: int = 10) -> np.ndarray:
    """Per-cell largest ``s`` in ``[0, smax]`` with ``e(z + s dz) <= C`` (bisection)."""
    shape = z.shape[1:]
    smax = 2.0 * math.sqrt(2.0 * rho * C) + 2.0 * C
    lo = np.zeros(shape)
    hi = np.full(shape, smax)
    d = dz.reshape((4,) + (1,) * len(shape))
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        ok = gap(*(z + mid * d), rho) <= C
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def _smooth(a: np.ndarray, axis: int, width: int) -> np.ndarray:
    """Running minimum then running mean over ``width`` cells along ``axis`` (edge padded)."""
    if width <= 1 or a.shape[axis] == 1:
        return a
    lo, hi = width // 2, width - 1 - width // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (lo, hi)
    win = np.lib.stride_tricks.sliding_window_view(np.pad(a, pad, mode="edge"), width, axis=axis)
    m = win.min(axis=-1)
    win = np.lib.stride_tricks.sliding_window_view(np.pad(m, pad, mode="edge"), width, axis=axis)
    return win.mean(axis=-1)


SHARED_STREAM = 0x5EED


def _box_sums(g: np.ndarray, bs: tuple[int, int, int], starts) -> np.ndarray:
    S = np.pad(g, ((1, 0), (1, 0), (1, 0))).cumsum(0).cumsum(1).cumsum(2)
    lo = [np.clip(s, 0, n) for s, n in zip(starts, g.shape)]
    hi = [np.clip(s + b, 0, n) for s, b, n in zip(starts, bs, g.shape)]
    I = np.ix_
    return (S[I(hi[0], hi[1], hi[2])] - S[I(lo[0], hi[1], hi[2])] - S[I(hi[0], lo[1], hi[2])]
            - S[I(hi[0], hi[1], lo[2])] + S[I(lo[0], lo[1], hi[2])] + S[I(lo[0], hi[1], lo[2])]
            + S[I(hi[0], lo[1], lo[2])] - S[I(lo[0], lo[1], lo[2])])


class _Engine:
    def __init__(self, field: SubsolutionField, schedule: Schedule):
        self.f = field
        self.s = schedule
        self.tabu: dict[Block, int] = {}
        self.amp_guess = 0.0

    def pick_block(self, n: int, rng, initial: bool, first_time_coef: int) -> Block:
        f, s = self.f, self.s
        nt, nx, ny = f.e.shape
        h = min(f.axes[1].h, f.axes[2].h)
        b = min(s.block_cells(n, h), nx, ny)
        bt = min(b, nt + 4)
        stride = max(b // 2, 1)
        ts = np.arange(-2, max(nt - bt + 2, -2) + 1, max(bt // 2, 1))
        if initial:
            ts = np.array([-2])
        elif first_time_coef:
            ts = ts[ts >= first_time_coef - 2] if np.any(ts >= first_time_coef - 2) else ts[-1:]
        xs = np.unique(np.r_[np.arange(0, nx - b + 1, stride), nx - b])
        ys = np.unique(np.r_[np.arange(0, ny - b + 1, stride), ny - b])
        if initial:
            g2 = (f.C - f.e_init)[None]
            sums = _box_sums(g2, (1, b, b), (np.array([0]), xs, ys))
        else:
            sums = _box_sums(f.C - f.e, (bt, b, b), (ts, xs, ys))
        order = np.argsort(sums, axis=None)[::-1]
        for flat in order:
            i, j, k = np.unravel_index(flat, sums.shape)
            blk = Block(int(ts[i]), int(ts[i]) + bt, int(xs[j]), int(xs[j]) + b, int(ys[k]), int(ys[k]) + b)
            if self.tabu.get(blk, -1) < n:
                break
        else:
            return None
        jt, jx, jy = rng.integers(-(stride // 2), stride // 2 + 1, 3)
        x0 = int(np.clip(blk.x0 + jx, 0, nx - b))
        y0 = int(np.clip(blk.y0 + jy, 0, ny - b))
        t0 = blk.t0 if initial else int(np.clip(blk.t0 + jt, ts.min(), ts.max()))
        self.last_key = blk
        return Block(t0, t0 + bt, x0, x0 + b, y0, y0 + b)

    def candidate_waves(self, n: int, block: Block, rng) -> list[WavePerturbation]:
        f, s = self.f, self.s
        axes = f.axes
        h = min(axes[1].h, axes[2].h)
        k = 2 * math.pi * s.wavenumber(n, h)
        box = block.box(axes)
        ramp = tuple(s.ramp_cells * ax.h for ax in axes)
        tau_scale = axes[1].h / axes[0].h * s.tau_max
        dirs = []
        if s.guided:
            sl = (slice(max(block.t0, 0), max(block.t1, 1)), slice(block.x0, block.x1), slice(block.y0, block.y1))
            zbar = f.states[(slice(None),) + sl].reshape(4, -1).mean(axis=1)
            seg = admissible_segment(SubsolutionState.from_vector(zbar), f.rho, f.C, n_theta=24,
                                     taus=np.linspace(-1.0, 1.0, 9) * tau_scale)
            if seg is not None:
                d = seg[1].vector - seg[0].vector
                theta = math.atan2(d[0], -d[1]) % math.pi
                cth = math.cos(2 * theta) if abs(math.cos(2 * theta)) > 0.5 else 0.0
                tau = d[3] / (d[0] * 0 + 1) / cth if cth else -d[2] / math.sin(2 * theta)
                sign = 1.0 if math.sin(theta) * d[0] - math.cos(theta) * d[1] >= 0 else -1.0
                tau = tau * sign
                for _ in range(s.guided):
                    dirs.append((theta, float(np.clip(tau + rng.normal(0, 0.1 * tau_scale), -tau_scale, tau_scale))))
        while len(dirs) < s.candidates:
            dirs.append((rng.uniform(0, math.pi), rng.uniform(-tau_scale, tau_scale)))
        return [WavePerturbation(th, ta, k, rng.uniform(0, 2 * math.pi), box, ramp, 1.0, s.profile)
                for th, ta in dirs]

    def line_search(self, local: LocalWave, initial: bool):
        f, s = self.f, self.s
        z = f.states[(slice(None),) + local.cells].reshape(4, -1)
        dz = local.dstate.reshape(4, -1)
        if initial:
            if local.dinit is None:
                return 0.0, 0.0
            zi = f.init_states[(slice(None),) + local.cells[1:]].reshape(4, -1)
            z = np.concatenate([zi, z], axis=1)
            dz = np.concatenate([local.dinit.reshape(4, -1), dz], axis=1)
            n0 = zi.shape[1]
            scored = slice(0, n0)
            e_in = gap(*z[:, n0:], f.rho)
        else:
            scored = slice(None)
        e0 = gap(*z[:, scored], f.rho)
        best = (0.0, 0.0)
        scale = np.max(np.abs(dz))
        if scale == 0.0:
            return best
        guess = self.amp_guess or 1.0 / scale
        for sign in (1.0, -1.0):
            lo, hi = 0.0, guess
            while np.max(gap(*(z + sign * hi * dz), f.rho)) <= f.C and hi < 1e6 / scale:
                lo, hi = hi, 2 * hi
            for _ in range(s.line_steps):
                mid = 0.5 * (lo + hi)
                if np.max(gap(*(z + sign * mid * dz), f.rho)) <= f.C:
                    lo = mid
                else:
                    hi = mid
            amp = sign * lo * s.safety
            for _ in range(6 if initial else 1):
                # the deficit in the interior must not grow while the initial trace is refined
                if not initial or np.sum(gap(*(z[:, n0:] + amp * dz[:, n0:]), f.rho) - e_in) >= 0:
                    break
                amp *= 0.5
            else:
                continue
            if amp == 0.0:
                continue
            gain = float(np.sum(gap(*(z[:, scored] + amp * dz[:, scored]), f.rho) - e0))
            if gain > best[0]:
                best = (gain, amp)
        return best

    def envelope(self, local: LocalWave, wave: WavePerturbation, initial: bool):
        """Amplitude envelope following the room ``e(z +- s dz) <= C`` along the wave state."""
        f = self.f
        z = f.states[(slice(None),) + local.cells]
        dz = wave.increment
        room = np.minimum(_room(z, dz, f.rho, f.C), _room(z, -dz, f.rho, f.C))
        for ax in range(3):
            room = _smooth(room, ax, self.s.envelope_cells)
        room = room / max(float(room.max()), 1e-300)
        origin = [c.start for c in local.cells]

        def at_coefficients(ranges):
            vals = []
            for ax, r in enumerate(ranges):
                # coefficient j sits on the knot between cells j - 2 and j - 1
                idx = np.clip(r - 2 - origin[ax], 0, room.shape[ax] - 1)
                idx2 = np.clip(r - 1 - origin[ax], 0, room.shape[ax] - 1)
                vals.append((idx, idx2))
            out = 0.0
            for a in vals[0]:
                for b in vals[1]:
                    for c in vals[2]:
                        out = out + room[np.ix_(a, b, c)]
            return out / 8.0

        return at_coefficients

    def step(self, n: int, rng, initial: bool = False, first_time_coef: int = 0) -> bool:
        f = self.f
        block = self.pick_block(n, rng, initial, first_time_coef)
        if block is None:
            return None
        best = None
        for wave in self.candidate_waves(n, block, rng):
            local = LocalWave(f.potential, wave, first_time_coef)
            if local.empty:
                continue
            if self.s.envelope_cells:
                local = LocalWave(f.potential, wave, first_time_coef, self.envelope(local, wave, initial))
            gain, amp = self.line_search(local, initial)
            if gain > 0 and (best is None or gain > best[0]):
                best = (gain, wave.with_amplitude(amp), local)
        if best is None:
            self.tabu[self.last_key] = n + self.s.patience
            return False
        _, wave, local = best
        self.amp_guess = 2.0 * abs(wave.amplitude)
        if self.s.cooldown:
            self.tabu[self.last_key] = n + self.s.cooldown
        before = (f.e_init if initial else f.e).copy()
        add_localized_wave(f, block, wave, first_time_coef, local)
        # the centre constraint is rechecked exactly; roll back on round-off violations
        if np.max(f.e[local.cells]) > f.C or (local.dinit is not None and np.max(f.e_init) > f.C):
            add_localized_wave(f, block, wave.with_amplitude(-wave.amplitude), first_time_coef, local)
            self.tabu[self.last_key] = n + self.s.patience
            return False
        del before
        return True


def iterate(Q: Rect, T: float, rho: float, C: float, seed: int | None, max_iter: int,
            target_deficit: float = 0.0, shape: tuple[int, int, int] = (32, 32, 32),
            schedule: Schedule | None = None, field: SubsolutionField | None = None,
            log_every: int = 0, shared_stream: int = 0) -> SubsolutionField:
    """Run the greedy wave iteration from the zero subsolution (or ``field``).

    ``target_deficit`` is relative to the starting deficit ``C |Q| T``.  The
    first ``shared_fraction`` of the iterations and the initial-time refinement
    use a fixed stream, so every seed produces the same trace at ``t = 0``;
    the seeded iterations only touch the potential away from ``t = 0``.
    """
    schedule = schedule or Schedule()
    if field is None:
        field = SubsolutionField.zero(Q, T, shape, rho, C, seed)
    field.seed = seed
    D0 = C * Q.area * T
    n_shared = int(round(max_iter * schedule.shared_fraction)) if seed is not None else max_iter
    n_init = int(round(max_iter * schedule.initial_fraction))
    n_shared = max(n_shared - n_init, 0)
    phases = [(n_shared, np.random.default_rng([SHARED_STREAM, shared_stream, 0]), False, 0),
              (n_init, np.random.default_rng([SHARED_STREAM, shared_stream, 1]), True, 0)]
    if seed is not None:
        phases.append((max_iter - n_shared - n_init, np.random.default_rng(seed), False, 3))
    engine = _Engine(field, schedule)
    n = 0
    stalled = 0
    for count, rng, initial, first in phases:
        engine.tabu.clear()
        for _ in range(count):
            if field.deficit <= target_deficit * D0 and not initial:
                break
            before = field.deficit
            ok = engine.step(n, rng, initial, first)
            if ok is None:
                raise StagnationError("every block was exhausted without decreasing the deficit",
                                      {"iteration": n, "deficit": field.deficit / D0})
            after = field.deficit
            if after > before + 1e-12 * D0:
                raise AssertionError("deficit increased")
            stalled = 0 if after < before else stalled + 1
            if stalled > schedule.patience * 4:
                raise StagnationError(f"no decrease in {stalled} iterations",
                                      {"iteration": n, "deficit": after / D0})
            n += 1
            field.iteration = n
            field.history.append(after)
            if log_every and n % log_every == 0:
                logger.info("iteration %d deficit %.4f initial %.4f", n, after / D0,
                            field.initial_deficit / (C * Q.area))
    return field

"""Acceptance criteria at desk scale; each test records one pass/fail line in the terminal summary.

Criteria 4 to 8 share 32^3 builds with a 1500-wave budget per piece; criterion 3
runs the default 64^3 configuration with the full 5000-wave budget.
"""

import time

import numpy as np
import pytest

from wildmhd import io
from wildmhd.assembly import build_solution, choose_lambda, isentropic_view
from wildmhd.cli import EXIT_CONFIG, EXIT_VERIFY, main
from wildmhd.convint import gap, kinetic
from wildmhd.core import Grid, Piece, PiecewiseConstantData, Rect, piece_constant_field
from wildmhd.reduction import manufactured_fields, residual_equivalence_check
from wildmhd.testfunctions import make_test_suite
from wildmhd.verify import FULL_IDENTITIES, Quadrature, distinctness, lambda_term, residual, verify

pytestmark = pytest.mark.slow

TOL = 1e-6
GRID = Grid(32, 32, 32)
BUDGET = 1500
SUITE_SIZE = 20
# smallest pairwise distance of the seed 7/8/9 pilot at GRID and BUDGET was 0.076
DELTA_STAR = 0.05
DECAY_RATIO = 3.0
KINETIC_BAND = 0.1


def _single(margin=1.0, seed=7):
    data = PiecewiseConstantData.single()
    return build_solution(data, choose_lambda(data, margin), seed, BUDGET, GRID)


def _two_piece():
    dom = Rect(0.0, 1.0, 0.0, 1.0)
    data = PiecewiseConstantData(dom, (Piece(Rect(0.0, 0.5, 0.0, 1.0), 1.0, 1.0, 1.0),
                                       Piece(Rect(0.5, 1.0, 0.0, 1.0), 1.0, 2.0, 0.0)))
    return build_solution(data, choose_lambda(data, 1.0), 7, BUDGET, GRID)


@pytest.fixture(scope="module")
def builds():
    cache = {}

    def get(key):
        if key not in cache:
            kind, arg = key
            cache[key] = {"seed": lambda: _single(seed=arg), "margin": lambda: _single(margin=arg),
                          "rerun": lambda: _single(seed=arg), "two": _two_piece}[kind]()
        return cache[key]

    return get


def _suite(sol):
    return make_test_suite(sol.data.domain, sol.data.T, 0, SUITE_SIZE)


def certify(sol):
    """Criterion 4 on one solution: residuals, midpoint decay under refinement, exact scalars."""
    suite = _suite(sol)
    report = verify(sol, suite, TOL, Quadrature(1), FULL_IDENTITIES)
    coarse = verify(sol, suite, TOL, Quadrature(1, exact_linear=False), FULL_IDENTITIES)
    fine = verify(sol, suite, TOL, Quadrature(2, exact_linear=False), FULL_IDENTITIES)
    decay = {}
    for name in FULL_IDENTITIES:
        a, b = coarse[name].max, fine[name].max
        decay[name] = b <= 1e-13 or a / b >= DECAY_RATIO
    scalars = all(np.array_equal(getattr(sol.fields, k), _piece_values(sol, k)) for k in ("rho", "p", "b"))
    outcome = {name: report[name].passed for name in FULL_IDENTITIES}
    passed = report.passed and all(decay.values()) and scalars
    worst = {name: report[name].max for name in FULL_IDENTITIES}
    ratios = {name: coarse[name].max / fine[name].max if fine[name].max > 1e-13 else float("inf")
              for name in FULL_IDENTITIES}
    return passed, outcome, worst, ratios, scalars


def _piece_values(sol, name):
    return piece_constant_field(sol.data, sol.grid, [getattr(pc, name) for pc in sol.data.pieces])


def _fmt(d):
    return " ".join(f"{k}={v:.2e}" for k, v in d.items())


def test_criterion_1_reduction_identity(criterion):
    start = time.perf_counter()
    reports = [residual_equivalence_check(manufactured_fields(32, v)) for v in range(10)]
    elapsed = time.perf_counter() - start
    worst = max(max(r.relative.values()) for r in reports)
    exact = all(r.div_b == 0.0 and r.b_dot_u == 0.0 for r in reports)
    ok = worst <= 1e-12 and exact and all(r.passed for r in reports) and elapsed < 10.0
    assert criterion(1, ok, f"max relative {worst:.2e}, divB and B.u exactly zero={exact}, {elapsed:.1f}s")


def test_criterion_2_relaxed_set_geometry(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 10_000
    m = rng.normal(size=(2, n)) * 3
    u11, u12 = rng.normal(size=(2, n)) * 3
    rho = rng.uniform(0.05, 10.0, n)
    U = np.stack([np.stack([u11, u12], -1), np.stack([u12, -u11], -1)], -2)
    trace_exact = bool(np.all(np.trace(U, axis1=-2, axis2=-1) == 0.0))
    e = gap(m[0], m[1], u11, u12, rho)
    M = np.einsum("in,jn->nij", m, m) / rho[:, None, None] - U
    oracle = np.linalg.eigvalsh(M)[:, -1]
    scale = np.maximum(1.0, np.abs(np.linalg.eigvalsh(M)).max(axis=1))
    err = float(np.max(np.abs(e - oracle) / scale))
    dominance = bool(np.all(e >= kinetic(m[0], m[1], rho) - 1e-12 * scale))
    elapsed = time.perf_counter() - start
    ok = trace_exact and err <= 1e-12 and dominance and elapsed < 5.0
    assert criterion(2, ok, f"trace exact={trace_exact}, e>=kinetic={dominance}, "
                            f"max eig error {err:.1e}, {elapsed:.2f}s")


def test_criterion_3_convex_integration_progress(criterion):
    cfg = io.parse_config("")
    data = cfg.data
    start = time.perf_counter()
    sol = build_solution(data, choose_lambda(data, cfg.margin), cfg.seed, cfg.iterations, cfg.grid, cfg.eos,
                         cfg.target_deficit, cfg.schedule)
    elapsed = time.perf_counter() - start
    hist = np.asarray(sol.histories[0])
    monotone = bool(np.all(np.diff(hist) <= 0.0))
    relative = float(hist[-1] / hist[0])
    C = sol.C[0]
    kin = C - sol.kinetic_gap()
    fraction = float(np.mean(np.abs(kin - C) < KINETIC_BAND * C))
    ok = monotone and len(hist) == cfg.iterations + 1 and relative <= 0.5 and fraction >= 0.5 and elapsed < 600
    assert criterion(3, ok, f"monotone={monotone} over {len(hist) - 1} waves, final deficit {relative:.3f} "
                            f"of initial (need <= 0.5), kinetic band fraction {fraction:.3f} (need >= 0.5), "
                            f"{elapsed:.0f}s"), "see the decisions ledger for the blocking analysis"


def test_criterion_4_weak_solution_certification(criterion, builds):
    passed, _, worst, ratios, scalars = certify(builds(("seed", 7)))
    assert criterion(4, passed, f"max residuals {_fmt(worst)}; midpoint h/(h/2) ratios {_fmt(ratios)}; "
                                f"scalars exact={scalars}")


def test_criterion_5_lambda_invariance(criterion, builds):
    base, wide = builds(("seed", 7)), builds(("margin", 5.0))
    _, out1, _, _, _ = certify(base)
    _, out5, _, _, _ = certify(wide)
    term = max(lambda_term(_suite(base)), lambda_term(_suite(wide)))
    levels_changed = base.C != wide.C
    ok = out1 == out5 and term <= TOL and levels_changed
    assert criterion(5, ok, f"C {base.C} -> {wide.C}; outcomes equal={out1 == out5} "
                            f"(margin 1: {out1}); Lambda term {term:.1e}")


def test_criterion_6_non_uniqueness(criterion, builds):
    sols = {s: builds(("seed", s)) for s in (7, 8, 9)}
    certified = {s: certify(sol)[0] for s, sol in sols.items()}
    pairs = [(7, 8), (7, 9), (8, 9)]
    dists = {p: distinctness(sols[p[0]], sols[p[1]]) for p in pairs}
    again = builds(("rerun", 7))
    identical = np.array_equal(again.fields.u, sols[7].fields.u) and all(
        np.array_equal(a.coef, b.coef) for a, b in zip(again.potentials, sols[7].potentials))
    separated = min(dists.values()) > DELTA_STAR
    ok = all(certified.values()) and separated and identical
    dist_text = " ".join(f"d{a}{b}={d:.4f}" for (a, b), d in dists.items())
    assert criterion(6, ok, f"certified {certified}; {dist_text} (delta*={DELTA_STAR}); "
                            f"seed 7 rerun bit-identical={identical}")


def test_criterion_7_isentropic_corollary(criterion, builds):
    sol = builds(("seed", 7))
    view = isentropic_view(sol, sol.eos.gamma)
    suite = _suite(sol)
    report = verify(view, suite, TOL, Quadrature(1))
    # the full-system identities evaluated on the same fields with the overridden internal energy
    pairs = (("isen.conserving", "weak3"), ("isen.weak1", "weak1"), ("isen.weak2", "weak2"),
             ("isen.weak3", "weak4"))
    diff = {a: max(abs(residual(a, view, phi, vec=vec) - residual(b, view, phi, vec=vec))
                   for phi, vec in zip(suite.scalars, suite.vectors)) for a, b in pairs}
    ok = report.passed and max(diff.values()) <= 1e-12
    worst = {name: r.max for name, r in report.results.items()}
    assert criterion(7, ok, f"max residuals {_fmt(worst)}; |isen.conserving - weak3| {diff['isen.conserving']:.1e}, "
                            f"all pairs {max(diff.values()):.1e}")


def test_criterion_8_two_piece_gluing(criterion, builds):
    sol = builds(("two", None))
    passed, _, worst, _, _ = certify(sol)
    C = piece_constant_field(sol.data, sol.grid, sol.C)
    gap_ = sol.kinetic_gap()
    met = np.abs(gap_) < KINETIC_BAND * C
    deviation = np.abs(sol.energy_density() - sol.energy_target())
    matches = bool(met.any()) and bool(np.all(deviation[met] <= KINETIC_BAND * C[met]))
    ok = passed and matches
    assert criterion(8, ok, f"C={sol.C}; max residuals {_fmt(worst)}; cells within band {int(met.sum())} "
                            f"of {met.size}, energy matches there={matches}")


def test_criterion_9_negative_controls(criterion, builds, tmp_path):
    sol = builds(("seed", 7)).scaled_velocity(1.1)
    report = verify(sol, _suite(sol), TOL, Quadrature(1), ("weak2",))
    corrupted = report["weak2"].max >= 10 * TOL
    cfg = tmp_path / "tiny.toml"
    cfg.write_text("[grid]\nnt = 8\nnx = 8\nny = 8\n[run]\niterations = 20\n[verify]\ncount = 4\n")
    bad = tmp_path / "bad.toml"
    bad.write_text(cfg.read_text().replace("iterations = 20", "iterations = 20\nmargin = 0.0"))
    lam_code = main(["build", "--config", str(bad), "--out", str(tmp_path / "b"), "--quiet"])
    dup_code = main(["compare", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seeds", "7,7", "--quiet"])
    ok = corrupted and lam_code == EXIT_CONFIG and dup_code == EXIT_VERIFY
    assert criterion(9, ok, f"u*1.1 weak2 {report['weak2'].max:.2e} (need >= {10 * TOL:.0e}); "
                            f"margin 0 exit {lam_code}; duplicate seeds exit {dup_code}")

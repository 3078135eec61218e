"""Command-line front end: build, verify, reduce-check, isentropic, compare."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .assembly import PressureLawError, build_solution, choose_lambda, isentropic_view
from .convint import StagnationError
from .core import AdmissibilityError, ConfigurationError, DomainError
from .reduction import ReductionError, manufactured_fields, residual_equivalence_check
from .testfunctions import make_test_suite
from .verify import ISENTROPIC_IDENTITIES, Quadrature, distinctness, verify

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_STAGNATION = 4

logger = logging.getLogger("wildmhd")


def _config(args) -> io.RunConfig:
    cfg = io.load_config(args.config) if args.config else io.RunConfig(
        data=io.parse_config("").data, grid=io.parse_config("").grid)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _build(cfg: io.RunConfig, seed: int):
    lam = choose_lambda(cfg.data, cfg.margin)
    return build_solution(cfg.data, lam, seed, cfg.iterations, cfg.grid, cfg.eos, cfg.target_deficit,
                          cfg.schedule)


def _tolerances(cfg: io.RunConfig, args) -> dict | float:
    if args.tol is not None:
        return float(args.tol)
    base = {}
    from .verify import ALL_IDENTITIES

    for k in ALL_IDENTITIES:
        base[k] = cfg.tolerances.get(k, cfg.tolerance)
    return base


def _verify(sol, cfg: io.RunConfig, args, identities=None):
    suite = make_test_suite(cfg.data.domain, cfg.data.T, cfg.suite_seed, cfg.count)
    return verify(sol, suite, _tolerances(cfg, args), Quadrature(cfg.refine), identities)


def _emit_report(report, out: Path, stem: str, quiet: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.txt").write_text("\n".join(report.lines()) + "\n")
    (out / f"{stem}.json").write_text(report.to_json() + "\n")
    if not quiet:
        for line in report.lines():
            print(line)
        if report.meta.get("subsolution_only"):
            print("note: subsolution-only artifacts; kinetic identities are expected to fail")


def cmd_build(args) -> int:
    cfg = _config(args)
    sol = _build(cfg, cfg.seed)
    out = io.write_solution(cfg.out, sol)
    if not args.quiet:
        print(f"wrote {out}  Lambda={sol.lam:g}  C={list(sol.C)}  "
              f"relative deficits={[round(d, 4) for d in sol.relative_deficits()]}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    sol = io.read_solution(cfg.out, cfg)
    report = _verify(sol, cfg, args)
    _emit_report(report, Path(cfg.out), "report", args.quiet)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_isentropic(args) -> int:
    cfg = _config(args)
    law = cfg.law_exponent if cfg.law_exponent is not None else cfg.eos.gamma
    out = Path(cfg.out)
    if (out / io.PROVENANCE).exists():
        sol = io.read_solution(out, cfg)
    else:
        sol = _build(cfg, cfg.seed)
        io.write_solution(out, sol)
    view = isentropic_view(sol, law)
    report = _verify(view, cfg, args, ISENTROPIC_IDENTITIES)
    report.meta["law_exponent"] = law
    report.meta["override_e"] = view.override_energy()
    _emit_report(report, out, "report_isentropic", args.quiet)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_reduce_check(args) -> int:
    n = args.resolution
    ok = True
    lines = []
    for variant in range(args.fields):
        rep = residual_equivalence_check(manufactured_fields(n, variant))
        worst = max(rep.relative.values())
        lines.append(f"field {variant} max-relative {worst:.3e} divB {rep.div_b:.1e} "
                     f"B.u {rep.b_dot_u:.1e} {'pass' if rep.passed else 'FAIL'}")
        ok &= rep.passed
    if not args.quiet:
        print("\n".join(lines))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "reduce_check.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_compare(args) -> int:
    cfg = _config(args)
    seeds = list(args.seeds) if args.seeds else list(cfg.seeds)
    if len(seeds) < 2:
        raise ConfigurationError("compare needs at least two seeds")
    sols, passed = [], []
    out = Path(cfg.out)
    for s in seeds:
        sol = _build(cfg, s)
        io.write_solution(out / f"seed_{s}", sol)
        rep = _verify(sol, cfg, args)
        _emit_report(rep, out / f"seed_{s}", "report", True)
        sols.append(sol)
        passed.append(rep.passed)
    n = len(sols)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = distinctness(sols[i], sols[j])
    result = {"seeds": seeds, "verified": passed, "distance": dist.tolist()}
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.json").write_text(json.dumps(result, indent=2) + "\n")
    if not args.quiet:
        print("seeds " + " ".join(str(s) for s in seeds))
        for s, row, ok in zip(seeds, dist, passed):
            print(f"{s} " + " ".join(f"{v:.6e}" for v in row) + f"  verify={'pass' if ok else 'FAIL'}")
    off = dist[~np.eye(n, dtype=bool)]
    if len(set(seeds)) < n:
        print("duplicate seeds produce identical solutions", file=sys.stderr)
    return EXIT_OK if all(passed) and np.all(off > 0) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="master seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", help="artifact directory (overrides the config)")
    common.add_argument("--tol", type=float, metavar="X", help="tolerance for every identity")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")
    parser = argparse.ArgumentParser(prog="wildmhd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="construct a solution and write artifacts")
    sub.add_parser("verify", parents=[common], help="check every weak identity on built artifacts")
    rc = sub.add_parser("reduce-check", parents=[common], help="3D/2D residual equivalence on smooth fields")
    rc.add_argument("--resolution", type=int, default=32)
    rc.add_argument("--fields", type=int, default=10)
    sub.add_parser("isentropic", parents=[common], help="verify the isentropic reading of a solution")
    cp = sub.add_parser("compare", parents=[common], help="build several seeds and measure distances")
    cp.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",") if v], metavar="N,N,...")
    return parser


COMMANDS = {"build": cmd_build, "verify": cmd_verify, "reduce-check": cmd_reduce_check,
            "isentropic": cmd_isentropic, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, AdmissibilityError, PressureLawError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except io.ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReductionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except StagnationError as exc:
        print(f"error: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_STAGNATION


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration (TOML) and solution artifacts."""

from __future__ import annotations

import csv
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convint import Potential, Schedule
from .core import (ConfigurationError, EquationOfState, Grid, Piece, PiecewiseConstantData, Rect,
                   SolutionFields, piece_constant_field)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA = {
    "domain": {"x0": float, "y0": float, "lx": float, "ly": float, "T": float},
    "grid": {"nt": int, "nx": int, "ny": int},
    "eos": {"gamma": float, "literal_potential": bool},
    "run": {"margin": float, "seed": int, "iterations": int, "target_deficit": float, "out": str},
    "engine": {k: type(v) for k, v in Schedule().__dict__.items()},
    "verify": {"count": int, "suite_seed": int, "refine": int, "tolerance": float, "tolerances": dict},
    "compare": {"seeds": list},
    "isentropic": {"law_exponent": float},
}
PIECE_KEYS = {"x0": float, "x1": float, "y0": float, "y1": float, "rho": float, "p": float, "b": float}


@dataclass
class RunConfig:
    data: PiecewiseConstantData
    grid: Grid
    eos: EquationOfState = EquationOfState()
    margin: float = 1.0
    seed: int = 7
    iterations: int = 5000
    target_deficit: float = 0.0
    out: str = "out"
    schedule: Schedule = Schedule()
    count: int = 20
    suite_seed: int = 0
    refine: int = 1
    tolerance: float = 1e-6
    tolerances: dict = field(default_factory=dict)
    seeds: tuple[int, ...] = (7, 8, 9)
    law_exponent: float | None = None
    source: str = "<defaults>"


def _line_of(text: str, section: str | None, key: str | None) -> int | None:
    """Best-effort line number of ``key`` (inside ``[section]`` when given)."""
    lines = text.splitlines()
    start = 0
    if section:
        pat = re.compile(r"^\s*\[\[?\s*" + re.escape(section) + r"\s*\]\]?\s*$")
        hits = [i for i, ln in enumerate(lines) if pat.match(ln)]
        if not hits:
            return None
        start = hits[0]
        if key is None:
            return start + 1
    if key is None:
        return None
    kp = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i in range(start, len(lines)):
        if i > start and section and re.match(r"^\s*\[", lines[i]) and not lines[i].strip().startswith(f"[{section}."):
            break
        if kp.match(lines[i]):
            return i + 1
    return None


def _fail(src: str, text: str, section, key, message, line=None) -> ConfigurationError:
    line = line or _line_of(text, section, key)
    where = f"{src}:{line}" if line else src
    return ConfigurationError(f"{where}: {message}")


def _coerce(value, kind, src, text, section, key, line=None):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, kind):
        return value
    raise _fail(src, text, section, key, f"{key} must be {kind.__name__}, got {value!r}", line)


def _piece_lines(text: str) -> list[int]:
    return [i + 1 for i, ln in enumerate(text.splitlines()) if re.match(r"^\s*\[\[\s*pieces\s*\]\]", ln)]


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise _fail(source, text, None, None, f"invalid TOML: {exc}", int(m.group(1)) if m else None) from exc
    for top in raw:
        if top not in SCHEMA and top != "pieces":
            raise _fail(source, text, top, None, f"unknown section [{top}]")
    vals = {}
    for section, keys in SCHEMA.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise _fail(source, text, None, section, f"{section} must be a table")
        for key, value in body.items():
            if key not in keys:
                raise _fail(source, text, section, key, f"unknown key {section}.{key}")
            vals[(section, key)] = _coerce(value, keys[key], source, text, section, key)

    def get(section, key, default):
        return vals.get((section, key), default)

    dom = Rect(get("domain", "x0", 0.0), get("domain", "x0", 0.0) + get("domain", "lx", 1.0),
               get("domain", "y0", 0.0), get("domain", "y0", 0.0) + get("domain", "ly", 1.0)) \
        if get("domain", "lx", 1.0) > 0 and get("domain", "ly", 1.0) > 0 else None
    if dom is None:
        raise _fail(source, text, "domain", "lx", "domain lengths must be positive")
    T = get("domain", "T", 1.0)
    if not T > 0:
        raise _fail(source, text, "domain", "T", "T must be positive")
    plines = _piece_lines(text)
    raw_pieces = raw.get("pieces", None)
    if raw_pieces is None:
        pieces = [Piece(dom, 1.0, 1.0, 0.0)]
    else:
        if not isinstance(raw_pieces, list) or not raw_pieces:
            raise _fail(source, text, None, "pieces", "pieces must be a non-empty array of tables")
        pieces = []
        for i, body in enumerate(raw_pieces):
            line = plines[i] if i < len(plines) else None
            for key in body:
                if key not in PIECE_KEYS:
                    raise _fail(source, text, None, None, f"piece {i + 1}: unknown key {key}", line)
            pv = {k: _coerce(body.get(k, d), PIECE_KEYS[k], source, text, None, k, line)
                  for k, d in (("x0", dom.x0), ("x1", dom.x1), ("y0", dom.y0), ("y1", dom.y1),
                               ("rho", 1.0), ("p", 1.0), ("b", 0.0))}
            try:
                rect = Rect(pv["x0"], pv["x1"], pv["y0"], pv["y1"])
                pieces.append(Piece(rect, pv["rho"], pv["p"], pv["b"]))
            except ValueError as exc:
                raise _fail(source, text, None, None, f"piece {i + 1}: {exc}", line) from exc
    try:
        data = PiecewiseConstantData(dom, tuple(pieces), T)
    except ValueError as exc:
        named = [int(n) for n in re.findall(r"\d+", str(exc).split(":")[0])] if "piece" in str(exc) else []
        idx = named[-1] - 1 if named and named[-1] <= len(plines) else 0
        raise _fail(source, text, None, None, str(exc), plines[idx] if plines else None) from exc
    try:
        grid = Grid(get("grid", "nt", 64), get("grid", "nx", 64), get("grid", "ny", 64))
        grid.piece_slices(data)
    except ConfigurationError as exc:
        raise _fail(source, text, "grid", None, str(exc)) from exc
    try:
        eos = EquationOfState(gamma=get("eos", "gamma", 2.0),
                              literal_potential=get("eos", "literal_potential", False))
    except ValueError as exc:
        raise _fail(source, text, "eos", "gamma", str(exc)) from exc
    engine = {k: v for (s, k), v in vals.items() if s == "engine"}
    try:
        schedule = Schedule(**engine)
    except (TypeError, ValueError) as exc:
        raise _fail(source, text, "engine", None, str(exc)) from exc
    seeds = get("compare", "seeds", [7, 8, 9])
    if not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise _fail(source, text, "compare", "seeds", "seeds must be integers")
    iterations = get("run", "iterations", 5000)
    if iterations < 0:
        raise _fail(source, text, "run", "iterations", "iterations must be non-negative")
    tolerances = get("verify", "tolerances", {})
    for k, v in tolerances.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise _fail(source, text, "verify.tolerances", k, f"tolerance for {k} must be a number")
    law = get("isentropic", "law_exponent", None)
    return RunConfig(data=data, grid=grid, eos=eos, margin=get("run", "margin", 1.0),
                     seed=get("run", "seed", 7), iterations=iterations,
                     target_deficit=get("run", "target_deficit", 0.0), out=get("run", "out", "out"),
                     schedule=schedule, count=get("verify", "count", 20),
                     suite_seed=get("verify", "suite_seed", 0), refine=get("verify", "refine", 1),
                     tolerance=get("verify", "tolerance", 1e-6),
                     tolerances={k: float(v) for k, v in tolerances.items()},
                     seeds=tuple(seeds), law_exponent=law, source=source)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, str(path))


# -- artifacts ---------------------------------------------------------------------

FIELDS_CSV = "fields.csv"
INITIAL_CSV = "initial.csv"
HISTORY_CSV = "history.csv"
PROVENANCE = "provenance.json"


class ArtifactError(RuntimeError):
    pass


def _grid_header(fields: SolutionFields) -> str:
    (at, ax, ay) = fields.axes
    return (f"# grid nt={at.n} nx={ax.n} ny={ay.n} T={at.s1!r} x0={ax.s0!r} x1={ax.s1!r} "
            f"y0={ay.s0!r} y1={ay.s1!r} samples=cell-centres")


def write_fields_csv(path: Path, fields: SolutionFields) -> None:
    at, ax, ay = fields.axes
    T, X, Y = np.meshgrid(at.centers, ax.centers, ay.centers, indexing="ij")
    cols = [T, X, Y, fields.rho, fields.p, fields.u[0], fields.u[1], fields.b]
    table = np.stack([c.ravel() for c in cols], axis=1)
    with open(path, "w", newline="") as fh:
        fh.write(_grid_header(fields) + "\n")
        fh.write("t,x,y,rho,p,u,v,b\n")
        np.savetxt(fh, table, fmt="%.17g", delimiter=",")


def write_initial_csv(path: Path, fields: SolutionFields) -> None:
    _, ax, ay = fields.axes
    X, Y = np.meshgrid(ax.centers, ay.centers, indexing="ij")
    table = np.stack([X.ravel(), Y.ravel(), fields.u0[0].ravel(), fields.u0[1].ravel()], axis=1)
    with open(path, "w", newline="") as fh:
        fh.write(_grid_header(fields) + " t=0\n")
        fh.write("x,y,u0,v0\n")
        np.savetxt(fh, table, fmt="%.17g", delimiter=",")


def write_history_csv(path: Path, histories) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["piece", "iteration", "deficit"])
        for i, hist in enumerate(histories):
            for n, d in enumerate(hist):
                w.writerow([i + 1, n, repr(float(d))])


def read_history_csv(path: Path, pieces: int) -> tuple[list, ...]:
    out = [[] for _ in range(pieces)]
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["piece"]) - 1].append(float(row["deficit"]))
    return tuple(out)


def write_solution(out: str | Path, sol) -> Path:
    """Snapshots (CSV), deficit history, provenance and the spline potentials (``.npy``)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_fields_csv(out / FIELDS_CSV, sol.fields)
    write_initial_csv(out / INITIAL_CSV, sol.fields)
    write_history_csv(out / HISTORY_CSV, sol.histories)
    for i, pot in enumerate(sol.potentials):
        np.save(out / f"potential_{i + 1}.npy", pot.coef)
    prov = dict(sol.provenance)
    prov["subsolution_only"] = sol.subsolution_only
    (out / PROVENANCE).write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return out


def read_solution(out: str | Path, cfg: RunConfig):
    """Rebuild an :class:`~wildmhd.assembly.AssembledSolution` from artifacts and its config."""
    from .assembly import AssembledSolution
    from .core import compute_c_constants

    out = Path(out)
    try:
        prov = json.loads((out / PROVENANCE).read_text())
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"{out}: missing or corrupt {PROVENANCE}") from exc
    data, grid = cfg.data, cfg.grid
    if prov.get("grid") != [grid.nt, grid.nx, grid.ny]:
        raise ArtifactError(f"artifact grid {prov.get('grid')} does not match config grid "
                            f"{[grid.nt, grid.nx, grid.ny]}")
    lam = float(prov["lambda"])
    C = compute_c_constants(data, lam)
    axes = grid.axes(data)
    slices = grid.piece_slices(data)
    u = np.zeros((2, grid.nt, grid.nx, grid.ny))
    u0 = np.zeros((2, grid.nx, grid.ny))
    pots = []
    for i, (piece, (sx, sy)) in enumerate(zip(data.pieces, slices)):
        path = out / f"potential_{i + 1}.npy"
        try:
            coef = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ArtifactError(f"{path}: missing or corrupt potential") from exc
        paxes = (axes[0], axes[1].sub(sx.start, sx.stop), axes[2].sub(sy.start, sy.stop))
        try:
            pot = Potential(paxes, coef)
        except ValueError as exc:
            raise ArtifactError(f"{path}: {exc}") from exc
        states = pot.center_states()
        u[:, :, sx, sy] = states[:2] / piece.rho
        u0[:, sx, sy] = pot.initial_states()[:2] / piece.rho
        pots.append(pot)
    rho = piece_constant_field(data, grid, [pc.rho for pc in data.pieces])
    p = piece_constant_field(data, grid, [pc.p for pc in data.pieces])
    b = piece_constant_field(data, grid, [pc.b for pc in data.pieces])
    fields = SolutionFields(axes, rho, p, u, b, u0)
    try:
        hist = read_history_csv(out / HISTORY_CSV, len(data.pieces))
    except (OSError, KeyError, ValueError) as exc:
        raise ArtifactError(f"{out}: missing or corrupt {HISTORY_CSV}") from exc
    return AssembledSolution(data, cfg.eos, lam, tuple(C), prov.get("seed"), tuple(prov.get("piece_seeds", ())),
                             grid, tuple(pots), fields, hist, tuple(prov.get("iterations", ())),
                             bool(prov.get("subsolution_only", False)), provenance=prov)

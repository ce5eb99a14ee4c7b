"""pdmforge command line.

    pdmforge construct|perturb|verify|solve --config run.json --out DIR

Exit codes: 0 ok, 1 verification ran but did not pass, 2 config/usage,
3 split inconsistency, 4 node proximity, 5 boundary leak, 6 solver or
quadrature failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import pct, vonroos
from .errors import PdmError
from .field import MassProfile, constant, make_exp_map, polynomial, reciprocal

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2


class ConfigError(PdmError):
    exit_code = EXIT_CONFIG

    def __init__(self, message, path=()):
        super().__init__(message)
        self.path = tuple(path)


# -- config schema -------------------------------------------------------------

_BLOCKS = {
    "system": {"beta", "nu", "n_max"},
    "grid": {"x_lo", "x_hi", "n_points"},
    "perturbation": {"kind", "level", "custom"},
    "solver": {"k", "solver_tol", "boundary_tol"},
    "output": {"format", "vectors"},
    "solve": {"mass", "potential", "vonroos"},
}

_CUSTOM_KEYS = {
    "zero": set(),
    "constant": {"value"},
    "two_over_g": set(),
    "linear": {"slope", "intercept"},
}

_MASS_KEYS = {"exponential": {"rate"}, "constant": {"value"}, "rational": {"kappa"}}
_POTENTIAL_KEYS = {
    "zero": set(),
    "constant": {"value"},
    "harmonic": {"k"},
    "exponential": {"amplitude", "rate"},
    "laguerre_exponential": {"beta", "nu"},
}


def _number(block, key, path, default=None, *, positive=False, above=None):
    if key not in block:
        if default is None:
            raise ConfigError(f"missing required key '{key}'", path + (key,))
        return float(default)
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"'{key}' must be a finite number, got {v!r}", path + (key,))
    if positive and not v > 0:
        raise ConfigError(f"'{key}' must be positive, got {v!r}", path + (key,))
    if above is not None and not v > above:
        raise ConfigError(f"'{key}' must exceed {above}, got {v!r}", path + (key,))
    return float(v)


def _integer(block, key, path, default, *, minimum=0):
    v = block.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"'{key}' must be an integer, got {v!r}", path + (key,))
    if v < minimum:
        raise ConfigError(f"'{key}' must be >= {minimum}, got {v!r}", path + (key,))
    return v


def _object(parent, key, path, allowed):
    block = parent.get(key, {})
    if not isinstance(block, dict):
        raise ConfigError(f"'{key}' must be an object", path + (key,))
    for extra in sorted(set(block) - set(allowed)):
        raise ConfigError(f"unknown key '{extra}'", path + (key, extra))
    return block


def _kinded(parent, key, path, registry):
    block = parent.get(key)
    if block is None:
        return None
    if not isinstance(block, dict):
        raise ConfigError(f"'{key}' must be an object", path + (key,))
    kind = block.get("kind", block.get("name"))
    name_key = "name" if "name" in block else "kind"
    if kind not in registry:
        raise ConfigError(
            f"'{name_key}' must be one of {sorted(registry)}, got {kind!r}", path + (key, name_key)
        )
    for extra in sorted(set(block) - registry[kind] - {name_key}):
        raise ConfigError(f"unknown key '{extra}' for {kind}", path + (key, extra))
    return kind, block


@dataclass(frozen=True)
class RunConfig:
    beta: float
    nu: float
    n_max: int
    grid: pct.Grid1D
    grid_given: bool
    perturb_kind: str
    level: int
    custom: Optional[tuple]
    k: Optional[int]
    solver_tol: float
    boundary_tol: float
    vectors: bool
    solve: Optional[dict]


def parse_config(doc: Any) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for extra in sorted(set(doc) - set(_BLOCKS)):
        raise ConfigError(f"unknown block '{extra}'", (extra,))
    blocks = {name: _object(doc, name, (), keys) for name, keys in _BLOCKS.items()}

    s = blocks["system"]
    beta = _number(s, "beta", ("system",), 1.0, positive=True)
    nu = _number(s, "nu", ("system",), 2.0, above=-1.0)
    n_max = _integer(s, "n_max", ("system",), 3)

    gb = blocks["grid"]
    default_grid = pct.default_exponential_grid(beta)
    x_lo = _number(gb, "x_lo", ("grid",), default_grid.x_lo)
    x_hi = _number(gb, "x_hi", ("grid",), default_grid.x_hi)
    n_points = _integer(gb, "n_points", ("grid",), default_grid.n_points, minimum=16)
    if not x_hi > x_lo:
        raise ConfigError("'x_hi' must exceed 'x_lo'", ("grid", "x_hi"))
    grid = pct.Grid1D(x_lo, x_hi, n_points)

    pb = blocks["perturbation"]
    kind = pb.get("kind", "two_over_g")
    if kind not in ("two_over_g", "custom"):
        raise ConfigError(f"'kind' must be 'two_over_g' or 'custom', got {kind!r}", ("perturbation", "kind"))
    level = _integer(pb, "level", ("perturbation",), 0)
    if level > n_max:
        raise ConfigError(f"'level' {level} exceeds system.n_max {n_max}", ("perturbation", "level"))
    custom = None
    if kind == "custom":
        got = _kinded(pb, "custom", ("perturbation",), _CUSTOM_KEYS)
        if got is None:
            raise ConfigError("kind 'custom' needs a 'custom' block", ("perturbation", "kind"))
        name, cb = got
        path = ("perturbation", "custom")
        params = {key: _number(cb, key, path, 0.0 if key == "intercept" else None) for key in _CUSTOM_KEYS[name]}
        custom = (name, tuple(sorted(params.items())))

    sv = blocks["solver"]
    k = None
    if "k" in sv:
        k = _integer(sv, "k", ("solver",), None, minimum=1)
        if k > n_max + 1:
            raise ConfigError(f"'k' {k} exceeds the {n_max + 1} constructed levels", ("solver", "k"))
    solver_tol = _number(sv, "solver_tol", ("solver",), vonroos.SOLVER_TOL, positive=True)
    boundary_tol = _number(sv, "boundary_tol", ("solver",), vonroos.BOUNDARY_TOL, positive=True)

    ob = blocks["output"]
    if ob.get("format", "csv") != "csv":
        raise ConfigError("'format' must be 'csv'", ("output", "format"))
    vectors = ob.get("vectors", False)
    if not isinstance(vectors, bool):
        raise ConfigError("'vectors' must be true or false", ("output", "vectors"))

    solve = None
    if "solve" in doc:
        sb = blocks["solve"]
        mass = _kinded(sb, "mass", ("solve",), _MASS_KEYS) or ("constant", {})
        pot = _kinded(sb, "potential", ("solve",), _POTENTIAL_KEYS) or ("zero", {})
        vr = _object(sb, "vonroos", ("solve",), {"a", "b", "c"})
        solve = {
            "mass": (mass[0], {key: _number(mass[1], key, ("solve", "mass"), _MASS_DEFAULTS[key]) for key in _MASS_KEYS[mass[0]]}),
            "potential": (pot[0], {key: _number(pot[1], key, ("solve", "potential"), _POT_DEFAULTS[key]) for key in _POTENTIAL_KEYS[pot[0]]}),
            "vonroos": tuple(_number(vr, key, ("solve", "vonroos"), d) for key, d in (("a", 0.0), ("b", -1.0), ("c", 0.0))),
        }
        mk, mp = solve["mass"]
        if mk == "constant" and not mp["value"] > 0:
            raise ConfigError("constant mass must be positive", ("solve", "mass", "value"))
        if mk == "rational" and not mp["kappa"] >= 0:
            raise ConfigError("'kappa' must be >= 0", ("solve", "mass", "kappa"))
        try:
            vonroos.VonRoosParams(*solve["vonroos"])
        except PdmError as exc:
            raise ConfigError(str(exc), ("solve", "vonroos")) from None
    return RunConfig(
        beta=beta, nu=nu, n_max=n_max, grid=grid, grid_given=bool(gb), perturb_kind=kind,
        level=level, custom=custom, k=k, solver_tol=solver_tol, boundary_tol=boundary_tol,
        vectors=vectors, solve=solve,
    )


_MASS_DEFAULTS = {"rate": -1.0, "value": 1.0, "kappa": 1.0}
_POT_DEFAULTS = {"value": 0.0, "k": 1.0, "amplitude": 1.0, "rate": 1.0, "beta": 1.0, "nu": 2.0}


def locate(text: str, path) -> Optional[int]:
    """1-based line of the last key in ``path``, searching after its parents."""
    lines = text.splitlines()
    start = 0
    found = None
    for key in path:
        pat = re.compile(r'"' + re.escape(str(key)) + r'"\s*:')
        for i in range(start, len(lines)):
            if pat.search(lines[i]):
                found, start = i + 1, i
                break
    return found


def load_config(path: Path) -> RunConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    try:
        return parse_config(doc)
    except ConfigError as exc:
        line = locate(text, exc.path) if exc.path else None
        where = f"{path}:{line}" if line else str(path)
        dotted = ".".join(map(str, exc.path))
        raise ConfigError(f"{where}: {dotted + ': ' if dotted else ''}{exc}", exc.path) from None


# -- output --------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path: Path, columns: dict):
    names = list(columns)
    data = [np.asarray(columns[name], dtype=float) for name in names]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([_fmt(v) for v in row])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path: Path, obj):
    path.write_text(json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _grid_echo(grid: pct.Grid1D) -> dict:
    return {"x_lo": grid.x_lo, "x_hi": grid.x_hi, "n_points": grid.n_points}


# -- commands ------------------------------------------------------------------


def _system(cfg: RunConfig) -> pct.ConstructedSystem:
    return pct.construct_laguerre_exponential(cfg.beta, cfg.nu, cfg.n_max, cfg.grid)


def cmd_construct(cfg: RunConfig, out: Path, **_) -> int:
    sys_ = _system(cfg)
    cols = {"x": sys_.x, "V": sys_.V}
    cols.update({f"psi_{n}": sys_.psi[n] for n in range(sys_.n_max + 1)})
    write_csv(out / "system.csv", cols)
    write_json(out / "levels.json", {
        "E": sys_.E,
        "gauge_note": sys_.gauge_note,
        "split_residual": sys_.split_residual,
        "provenance": {"beta": cfg.beta, "nu": cfg.nu, "n_max": cfg.n_max, "grid": _grid_echo(cfg.grid)},
    })
    return EXIT_OK


def _custom_generator(custom) -> pct.DeltaQ:
    name, params = custom
    p = dict(params)
    if name == "zero":
        return pct.deltaq_zero()
    if name == "constant":
        return pct.deltaq_constant(p["value"])
    if name == "two_over_g":
        return pct.deltaq_two_over_g()
    return pct.deltaq_linear(p["slope"], p["intercept"])


def cmd_perturb(cfg: RunConfig, out: Path, override_node_guard: bool = False) -> int:
    sys_ = _system(cfg)
    if cfg.perturb_kind == "two_over_g":
        res = pct.deltaQ_2_over_g(sys_, cfg.level, override_node_guard)
    else:
        res = pct.apply_deltaQ(sys_, cfg.level, _custom_generator(cfg.custom), override_node_guard)
    write_csv(out / "perturbation.csv", {
        "x": sys_.x, "h": res.h, "deltaV": res.deltaV, "psi_ext": res.psi_ext,
    })
    write_json(out / "delta.json", {
        "deltaE": res.deltaE,
        "gauge_note": res.gauge_note,
        "deltaQ_label": res.deltaQ_label,
        "level": res.n,
        "E_base": sys_.E[res.n],
        "E_total": sys_.E[res.n] + res.deltaE,
        "masked_points": int(np.count_nonzero(~res.valid)),
        "logderiv_residual": res.logderiv_residual,
        "provenance": {"beta": cfg.beta, "nu": cfg.nu, "grid": _grid_echo(cfg.grid)},
    })
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, **_) -> int:
    sys_ = _system(cfg)
    report = vonroos.verify_system(
        sys_, cfg.k, solver_tol=cfg.solver_tol, boundary_tol=cfg.boundary_tol
    )
    body = report.to_dict()
    body["provenance"] = {"beta": cfg.beta, "nu": cfg.nu, "grid": _grid_echo(cfg.grid)}
    write_json(out / "verify.json", body)
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def _mass_profile(kind, p, grid):
    if kind == "exponential":
        m = make_exp_map(p["rate"])
    elif kind == "constant":
        m = constant(p["value"])
    else:
        m = reciprocal(polynomial([1.0, 0.0, p["kappa"]]))
    return MassProfile(m.restrict(grid.x_lo, grid.x_hi))


def _potential(kind, p):
    if kind == "zero":
        return constant(0.0)
    if kind == "constant":
        return constant(p["value"])
    if kind == "harmonic":
        return polynomial([0.0, 0.0, p["k"]])
    if kind == "exponential":
        return p["amplitude"] * make_exp_map(p["rate"])
    return lambda x: pct.exponential_potential(p["beta"], p["nu"], x)


def cmd_solve(cfg: RunConfig, out: Path, **_) -> int:
    if cfg.solve is None:
        raise ConfigError("the solve command needs a 'solve' block")
    grid = cfg.grid if cfg.grid_given else pct.default_harmonic_grid()
    a, b, c = cfg.solve["vonroos"]
    params = vonroos.VonRoosParams(a, b, c)
    M = _mass_profile(*cfg.solve["mass"], grid)
    V = _potential(*cfg.solve["potential"])
    k = cfg.k if cfg.k is not None else 4
    veff, eig = vonroos.solve_direct(M, V, params, grid, k, cfg.solver_tol)
    x = grid.x
    write_json(out / "spectrum.json", {
        "values": eig.values,
        "residuals": eig.residuals,
        "vonroos": {"a": a, "b": b, "c": c},
        "mass": {"kind": cfg.solve["mass"][0], **cfg.solve["mass"][1]},
        "potential": {"kind": cfg.solve["potential"][0], **cfg.solve["potential"][1]},
        "grid": _grid_echo(grid),
    })
    cols = {"x": x, "M": M.m(x), "V": V(x), "V_eff": veff}
    if cfg.vectors:
        cols.update({f"v_{j}": v for j, v in enumerate(eig.padded())})
    write_csv(out / "fields.csv", cols)
    return EXIT_OK


COMMANDS = {
    "construct": cmd_construct,
    "perturb": cmd_perturb,
    "verify": cmd_verify,
    "solve": cmd_solve,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdmforge", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    ap.add_argument("--out", required=True, type=Path, help="output directory")
    ap.add_argument(
        "--override-node-guard", action="store_true",
        help="perturb levels whose F_n has nodes; node-adjacent points are left as NaN",
    )
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, args.out, override_node_guard=args.override_node_guard)
    except PdmError as exc:
        print(f"pdmforge {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    if code == EXIT_VERIFY_FAILED:
        print(f"pdmforge {args.command}: verification failed; see verify.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line frontend.

Every subcommand resolves one configuration from built-in defaults, an
optional YAML file (``--config``) and command-line flags, in that order of
precedence.  The resolved configuration and seed are written into every
report so a run can be repeated exactly.

Config schema (all keys optional)::

    model: cthrv                # builtin name, or a mapping for a custom model
    theta: [0.0216, 0.1943, 1.2293]   # reference/true parameters
    seed: 0
    jobs: 1
    output_dir: results
    scenario:
      x0: [72.7, 32.5]          # or "equilibrium"
      u0: null                  # equilibrium lead speed, default u(0)
      input: lead               # lead | constant:U | poly:c0,c1,... | csv:path
      T: 80
      dt: 0.1
      output: gap               # gap | gap-and-speed
    structural: {mode: generic, degree: 0, trials: 20, tol: 1.0e-9, max_extra: 3, max_degree: 3}
    direct: {eps: 1.0e-6, starts: 16, max_evals: 20000, directions: paired}
    sweep: {eps_grid: null, fresh_starts: 2}
    grid: {axes: [k1, k2], ranges: null, resolution: 41}

Exit codes: 0 success, 2 configuration error, 3 model-domain violation,
4 infeasible direct test.
"""
from __future__ import annotations

import argparse
import configparser
import copy
import io
import os
import sys
import time
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .directtest import (
    DEFAULT_EPS_GRID,
    VERDICT_CAVEAT,
    DirectTestProblem,
    DirectTestResult,
    GPSSettings,
    solve,
    sweep,
)
from .expr import DomainError, ExprError
from .models import BUILTINS, ModelSpec, builtin_model, display_name, equilibrium_ic
from .simulate import Scenario, error_grid, parse_input, simulate
from .structural import (
    OUTPUTS,
    equilibrium_mode,
    generic_mode,
    generic_rank,
    oi_matrix,
    render_table1,
    table1,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_INFEASIBLE = 4

OUTPUT_DIR_ENV = "CFIDENT_OUTPUT_DIR"

DEFAULTS: dict[str, Any] = {
    "model": "cthrv",
    "theta": None,
    "seed": 0,
    "jobs": 1,
    "output_dir": None,
    "scenario": {"x0": [72.7, 32.5], "u0": None, "input": "lead", "T": 80.0, "dt": 0.1, "output": "gap"},
    "structural": {"mode": "generic", "degree": 0, "trials": 20, "tol": 1e-9, "max_extra": 3, "max_degree": 3},
    "direct": {"eps": 1e-6, "starts": 16, "max_evals": 20000, "directions": "paired"},
    "sweep": {"eps_grid": None, "fresh_starts": 2},
    "grid": {"axes": None, "ranges": None, "resolution": 41},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {k!r} (known: {', '.join(sorted(out))})")
        if isinstance(out[k], dict) and k != "model":
            if not isinstance(v, Mapping):
                raise ConfigError(f"config key {k!r} must be a mapping")
            for kk in v:
                if kk not in out[k]:
                    raise ConfigError(f"unknown config key {k}.{kk!r} (known: {', '.join(sorted(out[k]))})")
            out[k].update(copy.deepcopy(dict(v)))
        else:
            out[k] = copy.deepcopy(v)
    return out


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _flag_overrides(args: argparse.Namespace) -> dict:
    """Turn the flags the user actually gave into a config fragment."""
    o: dict[str, Any] = {}

    def put(section: str | None, key: str, value):
        if value is None:
            return
        if section is None:
            o[key] = value
        else:
            o.setdefault(section, {})[key] = value

    g = vars(args)
    put(None, "model", g.get("model"))
    put(None, "seed", g.get("seed"))
    put(None, "jobs", g.get("jobs"))
    put(None, "output_dir", g.get("out"))
    if g.get("theta") is not None:
        put(None, "theta", _floats(g["theta"], "--theta"))
    if g.get("x0") is not None:
        x0 = g["x0"].strip()
        put("scenario", "x0", "equilibrium" if x0.lower() == "equilibrium" else _floats(x0, "--x0"))
    put("scenario", "u0", g.get("u0"))
    put("scenario", "input", g.get("input"))
    put("scenario", "T", g.get("T"))
    put("scenario", "dt", g.get("dt"))
    put("scenario", "output", g.get("output"))
    put("structural", "mode", g.get("mode"))
    if g.get("degree") is not None:
        put("structural", "degree", [int(x) for x in _floats(g["degree"], "--degree")])
    put("structural", "trials", g.get("trials"))
    put("structural", "tol", g.get("tol"))
    put("structural", "max_extra", g.get("max_extra"))
    put("structural", "max_degree", g.get("max_degree"))
    put("direct", "eps", g.get("eps"))
    put("direct", "starts", g.get("starts"))
    put("direct", "max_evals", g.get("max_evals"))
    put("direct", "directions", g.get("directions"))
    if g.get("eps_grid") is not None:
        put("sweep", "eps_grid", _floats(g["eps_grid"], "--eps-grid"))
    put("sweep", "fresh_starts", g.get("fresh_starts"))
    if g.get("axes") is not None:
        put("grid", "axes", [a.strip() for a in g["axes"].split(",")])
    if g.get("ranges") is not None:
        try:
            put("grid", "ranges", [[float(x) for x in r.split(":")] for r in g["ranges"].split(",")])
        except ValueError:
            raise ConfigError(f"--ranges: expected lo:hi,lo:hi, got {g['ranges']!r}") from None
    put("grid", "resolution", g.get("resolution"))
    return o


def load_config(path: str | os.PathLike | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"config file {str(path)!r} is not valid YAML: {err}") from None
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"config file {str(path)!r} must hold a mapping at top level")
    return dict(data)


def resolve(args: argparse.Namespace) -> dict:
    cfg = _merge(DEFAULTS, load_config(args.config))
    cfg = _merge(cfg, _flag_overrides(args))
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_DIR_ENV, "cfident-out")
    return cfg


def _base_dir(args) -> Path | None:
    return Path(args.config).resolve().parent if args.config else None


def model_from(cfg_model) -> ModelSpec:
    if isinstance(cfg_model, Mapping):
        try:
            return ModelSpec.from_dict(cfg_model)
        except (ValueError, ExprError) as err:
            raise ConfigError(f"custom model: {err}") from None
    try:
        return builtin_model(str(cfg_model))
    except (KeyError, ValueError):
        raise ConfigError(f"unknown model {cfg_model!r}; builtin models are {', '.join(BUILTINS)}") from None


def reference_theta(m: ModelSpec, cfg: dict) -> np.ndarray:
    """Configured ``theta`` or, when absent, the midpoint of the bounds."""
    if cfg["theta"] is None:
        return (m.lower + m.upper) / 2
    theta = np.asarray(cfg["theta"], float)
    if theta.shape != (m.n_params,):
        raise ConfigError(f"theta needs {m.n_params} values ({', '.join(m.param_names)}), got {theta.size}")
    if not m.in_bounds(theta):
        raise ConfigError(f"theta {theta.tolist()} is outside the bounds of {display_name(m)}")
    return theta


def scenario_from(m: ModelSpec, cfg: dict, base: Path | None) -> Scenario:
    sc = cfg["scenario"]
    if sc["output"] not in OUTPUTS:
        raise ConfigError(f"output must be one of {', '.join(OUTPUTS)}, got {sc['output']!r}")
    try:
        profile = parse_input(sc["input"], base)
        T, dt = float(sc["T"]), float(sc["dt"])
        if sc["x0"] == "equilibrium":
            u0 = sc["u0"]
            if u0 is None:
                K = round(T / dt)
                u0 = float(profile.samples(T, dt, K)[0])
            x0 = equilibrium_ic(m, float(u0), reference_theta(m, cfg))
        else:
            x0 = [float(x) for x in sc["x0"]]
            if len(x0) != 2:
                raise ConfigError(f"x0 needs two values (s, v), got {x0}")
        return Scenario(x0, profile, T, dt, sc["output"])
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"scenario: {err}") from None


def _gps(cfg: dict) -> GPSSettings:
    d = cfg["direct"]
    try:
        return GPSSettings(
            max_evals=int(d["max_evals"]), starts=int(d["starts"]), seed=int(cfg["seed"]),
            directions=str(d["directions"]),
        )
    except ValueError as err:
        raise ConfigError(f"direct: {err}") from None


# ---------------------------------------------------------------------------
# reports


def _flatten(d: Mapping, prefix: str = "") -> dict[str, str]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            out[key] = ", ".join(str(x) for x in v)
        else:
            out[key] = "" if v is None else str(v)
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return ", ".join(_fmt(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in v)
    return str(v)


def write_report(path: Path, command: str, cfg: dict, sections: Sequence[tuple[str, Mapping]]) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case
    cp["run"] = {"command": command, "version": __version__, "seed": str(cfg["seed"])}
    cp["config"] = _flatten({k: v for k, v in cfg.items() if k != "output_dir"})
    for name, body in sections:
        cp[name] = {k: _fmt(v) for k, v in body.items()}
    buf = io.StringIO()
    cp.write(buf)
    path.write_text(buf.getvalue())


def _header(command: str, cfg: dict) -> list[str]:
    """Comment lines embedded in CSV outputs."""
    lines = [f"cfident {__version__} {command} seed={cfg['seed']}"]
    lines += [f"{k} = {v}" for k, v in _flatten({k: v for k, v in cfg.items() if k != "output_dir"}).items()]
    return lines


def _outdir(cfg: dict) -> Path:
    p = Path(cfg["output_dir"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def _stem(m: ModelSpec) -> str:
    return m.name.lower().replace(" ", "_")


# ---------------------------------------------------------------------------
# subcommands


def _structural_reports(m: ModelSpec, cfg: dict):
    st = cfg["structural"]
    modes = st["mode"] if isinstance(st["mode"], list) else [m_.strip() for m_ in str(st["mode"]).split(",")]
    degrees = st["degree"] if isinstance(st["degree"], list) else [st["degree"]]
    M = oi_matrix(m, cfg["scenario"]["output"])
    reps = []
    for mode_name in modes:
        if mode_name == "generic":
            mode = generic_mode()
        elif mode_name == "equilibrium":
            if m.equilibrium_gap is None:
                raise ConfigError(f"{display_name(m)} has no equilibrium-gap expression")
            mode = equilibrium_mode(m)
        else:
            raise ConfigError(f"structural mode must be generic or equilibrium, got {mode_name!r}")
        for n in degrees:
            try:
                reps.append(
                    generic_rank(M, mode, int(n), int(st["trials"]), int(cfg["seed"]), float(st["tol"]),
                                 int(st["max_extra"]))
                )
            except ValueError as err:
                raise ConfigError(f"structural: {err}") from None
    return reps


def cmd_structural(args, cfg: dict) -> int:
    if args.table1:
        return cmd_table1(args, cfg)
    m = model_from(cfg["model"])
    reps = _structural_reports(m, cfg)
    for r in reps:
        names = ",".join(r.unidentifiable) or "-"
        print(f"{display_name(m)} {r.mode} degree={r.degree}: rank {r.generic_rank}/{r.n_aug} "
              f"{r.verdict}; unidentifiable: {names}")
    out = _outdir(cfg) / f"structural_{_stem(m)}.ini"
    write_report(out, "structural", cfg, [(f"report.{i}", r.to_dict()) for i, r in enumerate(reps)])
    print(f"report: {out}")
    return EXIT_OK


def cmd_table1(args, cfg: dict) -> int:
    st = cfg["structural"]
    models = [builtin_model(n) for n in BUILTINS]
    rows = table1(models, cfg["scenario"]["output"], int(st["max_degree"]), int(st["trials"]), int(cfg["seed"]),
                  float(st["tol"]), int(st["max_extra"]))
    text = render_table1(rows)
    print(f"Minimum admissible input degree (output: {cfg['scenario']['output']}; generic verdicts)")
    print(text)
    d = _outdir(cfg)
    (d / "table1.txt").write_text(text + "\n")
    sections = []
    for r in rows:
        sections.append((f"table1.{r.model}", {"generic": r.generic, "equilibrium": r.equilibrium}))
        sections += [(f"report.{r.model}.{rep.mode}.{rep.degree}", rep.to_dict()) for rep in r.reports]
    write_report(d / "table1.ini", "table1", cfg, sections)
    print(f"report: {d / 'table1.ini'}")
    return EXIT_OK


def _check_scenario(m: ModelSpec, sc: Scenario, cfg: dict) -> None:
    # surfaces domain problems of x0/input before the optimizer swallows them
    simulate(m, sc, reference_theta(m, cfg))


def _direct_one(m: ModelSpec, cfg: dict, base) -> tuple[DirectTestResult, Scenario]:
    sc = scenario_from(m, cfg, base)
    _check_scenario(m, sc, cfg)
    p = DirectTestProblem(m, sc, float(cfg["direct"]["eps"]), _gps(cfg))
    return solve(p, jobs=int(cfg["jobs"])), sc


def _result_section(res: DirectTestResult, sc: Scenario) -> dict:
    d = res.to_dict()
    d["scenario"] = sc.describe()
    d["caveat"] = VERDICT_CAVEAT
    return d


def cmd_direct(args, cfg: dict) -> int:
    m = model_from(cfg["model"])
    t0 = time.perf_counter()
    res, sc = _direct_one(m, cfg, _base_dir(args))
    print(f"{res.model}: delta* = {res.delta:.6g}, e* = {res.error:.3g} (eps = {res.eps:g}), "
          f"{res.verdict}  [{time.perf_counter() - t0:.1f} s]", file=sys.stdout)
    print(f"note: {VERDICT_CAVEAT}")
    d = _outdir(cfg)
    stem = f"direct_{_stem(m)}"
    write_report(d / f"{stem}.ini", "direct", cfg, [("result", _result_section(res, sc))])
    print(f"report: {d / f'{stem}.ini'}")
    if not res.feasible:
        print("no feasible pair passed the re-simulation check", file=sys.stderr)
        return EXIT_INFEASIBLE
    hdr = _header("direct", cfg)
    for tag, th in (("theta1", res.theta1), ("theta2", res.theta2)):
        path = d / f"{stem}_{tag}.csv"
        simulate(m, sc, th).to_csv(path, hdr + [f"{tag} = {_fmt(th)}"])
    print(f"trajectories: {d / (stem + '_theta1.csv')}, {d / (stem + '_theta2.csv')}")
    return EXIT_OK


def cmd_table3(args, cfg: dict) -> int:
    names = list(BUILTINS) if str(cfg["model"]).lower() == "all" else [cfg["model"]]
    rows, sections, code = [], [], EXIT_OK
    for name in names:
        m = model_from(name)
        res, sc = _direct_one(m, cfg, _base_dir(args))
        sections.append((f"result.{res.model}", _result_section(res, sc)))
        if not res.feasible:
            code = EXIT_INFEASIBLE
        for k, pn in enumerate(m.param_names):
            rows.append((res.model if k == 0 else "", pn, f"{res.theta1[k]:.4f}", f"{res.theta2[k]:.4f}",
                         f"{res.delta:.4f}" if k == 0 else "", f"{res.error:.2e}" if k == 0 else "",
                         res.verdict if k == 0 else ""))
    head = ("Model", "Param", "theta1*", "theta2*", "delta*", "e*", "verdict")
    widths = [max(len(str(x)) for x in col) for col in zip(head, *rows)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))] + [fmt.format(*r) for r in rows]
    text = "\n".join(lines)
    print(f"Direct test, eps = {float(cfg['direct']['eps']):g}, output = {cfg['scenario']['output']}")
    print(text)
    print(f"note: {VERDICT_CAVEAT}")
    d = _outdir(cfg)
    (d / "table3.txt").write_text(text + "\n")
    write_report(d / "table3.ini", "table3", cfg, sections)
    print(f"report: {d / 'table3.ini'}")
    return code


def cmd_sweep(args, cfg: dict) -> int:
    m = model_from(cfg["model"])
    sc = scenario_from(m, cfg, _base_dir(args))
    _check_scenario(m, sc, cfg)
    grid = cfg["sweep"]["eps_grid"]
    grid = DEFAULT_EPS_GRID if grid is None else [float(x) for x in grid]
    p = DirectTestProblem(m, sc, float(grid[0]), _gps(cfg))
    try:
        curve = sweep(p, grid, int(cfg["sweep"]["fresh_starts"]), int(cfg["jobs"]))
    except ValueError as err:
        raise ConfigError(f"sweep: {err}") from None
    for pt in curve.points:
        tag = " (carried)" if pt.carried else ""
        print(f"eps = {pt.eps:9.3g}  delta* = {pt.delta:.6g}{tag}")
    d = _outdir(cfg)
    path = d / f"sweep_{_stem(m)}.csv"
    curve.to_csv(path, _header("sweep", cfg) + [f"scenario = {sc.describe()}"])
    print(f"curve: {path}")
    if not any(pt.feasible for pt in curve.points):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_grid(args, cfg: dict) -> int:
    m = model_from(cfg["model"])
    g = cfg["grid"]
    axes = g["axes"] or m.param_names[:2]
    if len(axes) != 2:
        raise ConfigError(f"grid needs exactly two axes, got {axes}")
    theta = reference_theta(m, cfg)
    sc = scenario_from(m, cfg, _base_dir(args))
    res = g["resolution"]
    try:
        eg = error_grid(m, sc, theta, tuple(axes), g["ranges"], res if np.isscalar(res) else tuple(res))
    except ValueError as err:
        raise ConfigError(f"grid: {err}") from None
    finite = eg.values[np.isfinite(eg.values)]
    print(f"{display_name(m)} grid over ({eg.x_name}, {eg.y_name}): {eg.values.shape[1]}x{eg.values.shape[0]}, "
          f"min {finite.min():.3g}, max {finite.max():.3g}, failed cells {eg.values.size - finite.size}")
    d = _outdir(cfg)
    path = d / f"grid_{_stem(m)}_{eg.x_name}_{eg.y_name}.csv"
    eg.to_csv(path, _header("grid", cfg) + [f"theta_true = {_fmt(theta)}", f"scenario = {sc.describe()}"])
    print(f"grid: {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, scenario: bool = True) -> None:
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--model", help=f"builtin model ({', '.join(BUILTINS)})")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for multistart")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./cfident-out)")
    p.add_argument("--output", choices=OUTPUTS, help="measured output")
    if scenario:
        p.add_argument("--theta", help="reference parameters, comma-separated")
        p.add_argument("--x0", help='initial state "s,v" or "equilibrium"')
        p.add_argument("--u0", type=float, help="lead speed for an equilibrium start")
        p.add_argument("--input", help="lead | constant:U | poly:c0,c1,... | csv:PATH")
        p.add_argument("--T", type=float, help="horizon in seconds")
        p.add_argument("--dt", type=float, help="Euler step in seconds")


def _gps_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, help="output-error cap (m^2)")
    p.add_argument("--starts", type=int, help="diagonal multistart count")
    p.add_argument("--max-evals", type=int, dest="max_evals", help="evaluation budget per start")
    p.add_argument("--directions", choices=("paired", "coordinate"))


def _structural_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trials", type=int, help="random points per rank estimate")
    p.add_argument("--tol", type=float, help="relative singular-value tolerance")
    p.add_argument("--max-extra", type=int, dest="max_extra", help="extra Lie orders allowed per output")
    p.add_argument("--max-degree", type=int, dest="max_degree", help="highest input degree tried by the minimum-degree table")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfident", description="Identifiability analysis of car-following models.")
    ap.add_argument("--version", action="version", version=f"cfident {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("structural", help="generic rank of the observability-identifiability matrix")
    _common(p, scenario=False)
    _structural_flags(p)
    p.add_argument("--mode", help="generic, equilibrium, or both comma-separated")
    p.add_argument("--degree", help="input polynomial degree(s), comma-separated")
    p.add_argument("--table1", action="store_true", help="run all models and render the minimum-degree table")
    p.set_defaults(func=cmd_structural)

    p = sub.add_parser("table1", help="minimum admissible input degree for all builtin models")
    _common(p, scenario=False)
    _structural_flags(p)
    p.set_defaults(func=cmd_table1, table1=True)

    p = sub.add_parser("direct", help="direct test for practical identifiability")
    _common(p)
    _gps_flags(p)
    p.set_defaults(func=cmd_direct)

    p = sub.add_parser("table3", help="direct-test table for one model or --model all")
    _common(p)
    _gps_flags(p)
    p.set_defaults(func=cmd_table3)

    p = sub.add_parser("sweep", help="delta* over an increasing eps grid")
    _common(p)
    _gps_flags(p)
    p.add_argument("--eps-grid", dest="eps_grid", help="comma-separated eps values (default 13 log points 1e-6..1)")
    p.add_argument("--fresh-starts", type=int, dest="fresh_starts", help="new starts per eps besides the warm start")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grid", help="output-error surface over two parameters")
    _common(p)
    p.add_argument("--axes", help="two parameter names, e.g. k1,k2")
    p.add_argument("--ranges", help="axis ranges lo:hi,lo:hi (default: bounds)")
    p.add_argument("--resolution", type=int, help="points per axis")
    p.set_defaults(func=cmd_grid)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return args.func(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as err:
        print(f"domain violation: {err}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ValueError, ExprError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

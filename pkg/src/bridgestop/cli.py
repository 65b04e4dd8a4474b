"""Command-line front end.

Every command writes its tables (CSV or JSON) and a ``manifest.json`` into the
output directory.  The manifest carries the full run configuration, so
``bridgestop rerun <manifest>`` reproduces the tables byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import __version__, classical, dp_solver, montecarlo, normal_boundary, regions
from .filtering import FilterError
from .priors import Normal, Prior, PriorError, parse_prior, prior_from_dict, prior_to_dict

COMMANDS = ("beta", "classify", "solve", "boundary", "simulate", "check-condition")
FORMATS = ("csv", "json")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(f"{float(x):.12g}")
        return x if np.isfinite(x) else None
    return x


@dataclass
class RunConfig:
    command: str
    prior: Prior | None = None
    grid: dp_solver.GridSpec | None = None
    output_dir: str = "bridgestop-out"
    seed: int = 0
    format: str = "csv"
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "prior": None if self.prior is None else prior_to_dict(self.prior),
            "grid": None if self.grid is None else self.grid.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "format": self.format,
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        try:
            return cls(
                command=d["command"],
                prior=None if d.get("prior") is None else prior_from_dict(d["prior"]),
                grid=None if d.get("grid") is None else dp_solver.GridSpec.from_dict(d["grid"]),
                output_dir=d.get("output_dir", "bridgestop-out"),
                seed=int(d.get("seed", 0)),
                format=d.get("format", "csv"),
                options=dict(d.get("options", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed run config: {exc}") from exc


# --- output -------------------------------------------------------------------

def table_text(header, rows, form: str) -> str:
    if form == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(x) for x in row])
        return buf.getvalue()
    records = [{h: _json_value(x) for h, x in zip(header, row)} for row in rows]
    return json.dumps(records, indent=1) + "\n"


def write_table(out: Path, stem: str, header, rows, form: str) -> Path:
    path = out / f"{stem}.{form}"
    path.write_text(table_text(header, rows, form))
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# --- commands -----------------------------------------------------------------

def _need_prior(cfg: RunConfig) -> Prior:
    if cfg.prior is None:
        raise ConfigError(f"command {cfg.command!r} needs --prior")
    return cfg.prior


def _grid_for(cfg: RunConfig, prior: Prior) -> dp_solver.GridSpec:
    if cfg.grid is not None:
        return cfg.grid
    opts = cfg.options
    return dp_solver.GridSpec.for_prior(prior, n_t=int(opts.get("n_t", 2000)),
                                        n_z=int(opts.get("n_z", 1201)),
                                        epsilon_horizon=float(opts.get("epsilon", 1e-3)))


def cmd_beta(cfg, out):
    b = classical.solve_beta()
    print(f"beta = {b.value:.12g}  residual = {b.residual:.3g}")
    path = write_table(out, "beta", ["beta", "residual"], [(b.value, b.residual)], cfg.format)
    return [path], {"beta": b.value, "residual": b.residual}


def cmd_classify(cfg, out):
    prior = _need_prior(cfg)
    grid = cfg.grid or dp_solver.GridSpec.for_prior(prior, n_t=200, n_z=241)
    times = np.linspace(grid.t0, grid.t1, grid.n_t)
    zs = grid.space()
    labels, masks = regions.classify_grid(prior, times[:, None], zs[None, :])
    rows = []
    for i, t in enumerate(times):
        for j, z in enumerate(zs):
            fired = [name for name in regions.RULE_NAMES if masks[name][i, j]]
            for layer in fired or ["none"]:
                rows.append((t, z, layer, labels[i, j]))
    path = write_table(out, "classify", ["t", "z", "layer", "label"], rows, cfg.format)
    counts = {name: int(masks[name].sum()) for name in regions.RULE_NAMES}
    print(json.dumps({"nodes": int(labels.size), "layers": counts}))
    return [path], {"layers": counts}


def cmd_solve(cfg, out):
    prior = _need_prior(cfg)
    grid = _grid_for(cfg, prior)
    terminal = cfg.options.get("terminal", dp_solver.REVEAL)
    field_ = dp_solver.solve(prior, grid, terminal=terminal)
    region, bounds = dp_solver.extract_regions(field_)
    rows = []
    for i, t in enumerate(field_.times):
        for j, z in enumerate(field_.z):
            stop = bool(field_.labels[i, j])
            rows.append((t, z, field_.values[i, j], field_.gap[i, j], "Stop" if stop else "Continue"))
    paths = [write_table(out, "values", ["t", "z", "v", "gap", "label"], rows, cfg.format)]
    b = bounds[0]
    paths.append(write_table(out, "boundary", ["t", "level", "kind"], b.rows(), cfg.format))
    v0 = field_.value_at(grid.t0, 0.0) if grid.z_min <= 0.0 <= grid.z_max else float("nan")
    summary = {"v_t0_z0": v0, "boundary_kind": b.kind, "label_tol": field_.label_tol,
               "stop_loss_nodes": int(region.stop_loss.sum()),
               "too_good_nodes": int(region.too_good.sum())}
    print(json.dumps({k: _json_value(v) for k, v in summary.items()}))
    return paths, summary


def cmd_boundary(cfg, out):
    prior = _need_prior(cfg)
    if not isinstance(prior, Normal):
        raise ConfigError("boundary needs a normal prior")
    prob = normal_boundary.NormalProblem(prior.m, prior.var)
    opts = cfg.options
    b = normal_boundary.solve_boundary(prob, n_t=int(opts.get("n_t", 400)),
                                       tol=float(opts.get("tol", 1e-6)),
                                       max_iter=int(opts.get("max_iter", 500)))
    path = write_table(out, "boundary", ["t", "b"], zip(b.times, b.levels), cfg.format)
    summary = {k: b.meta[k] for k in ("m", "gamma2", "pin", "T_ext", "tol", "iterations", "residual")}
    summary["ou_deviation"] = normal_boundary.ou_consistency_check(prob, b)
    print(json.dumps({k: _json_value(v) for k, v in summary.items()}))
    return [path], summary


def _make_rule(spec: str, cfg: RunConfig, prior: Prior):
    name, _, arg = spec.partition(":")
    if name == "hold":
        return montecarlo.HoldToEnd()
    if name == "level":
        return montecarlo.StopAtLevel(float(arg))
    if name == "known-pin":
        return montecarlo.KnownPinRule(float(arg) if arg else float(getattr(prior, "r", 0.0)))
    if name == "region":
        field_ = dp_solver.solve(prior, _grid_for(cfg, prior),
                                 terminal=cfg.options.get("terminal", dp_solver.REVEAL))
        return montecarlo.RegionMap(field_)
    if name == "boundary":
        if not isinstance(prior, Normal):
            raise ConfigError("rule 'boundary' needs a normal prior")
        b = normal_boundary.solve_boundary(normal_boundary.NormalProblem(prior.m, prior.var))
        return montecarlo.SingleBoundary(b)
    raise ConfigError(f"unknown rule {spec!r}; use hold, level:<c>, known-pin[:r], region or boundary")


def cmd_simulate(cfg, out):
    prior = _need_prior(cfg)
    opts = cfg.options
    rule = _make_rule(opts.get("rule", "hold"), cfg, prior)
    res = montecarlo.evaluate_rule(rule, prior, n_paths=int(opts.get("paths", montecarlo.DEFAULT_PATHS)),
                                   n_steps=int(opts.get("steps", montecarlo.DEFAULT_STEPS)),
                                   seed=cfg.seed, monitoring=opts.get("monitoring", "bridge"))
    record = res.to_dict()
    record["rule"] = opts.get("rule", "hold")
    print(json.dumps({k: _json_value(v) for k, v in record.items()}))
    path = write_table(out, "simulate", list(record), [list(record.values())], cfg.format)
    return [path], record


def cmd_check_condition(cfg, out):
    prior = _need_prior(cfg)
    rep = regions.single_boundary_condition(prior)
    summary = {"verdict": rep.verdict.value, "worst_t": rep.worst_point[0], "worst_z": rep.worst_point[1],
               "max_slope": rep.max_slope, "min_slope": rep.min_slope,
               "proven": rep.proven, "analytic_decreasing": rep.analytic_decreasing}
    print(f"{rep.verdict.value} worst point (t={rep.worst_point[0]:.6g}, z={rep.worst_point[1]:.6g})"
          f" max slope {rep.max_slope:.6g}")
    path = write_table(out, "condition", list(summary), [list(summary.values())], cfg.format)
    return [path], summary


HANDLERS = {
    "beta": cmd_beta,
    "classify": cmd_classify,
    "solve": cmd_solve,
    "boundary": cmd_boundary,
    "simulate": cmd_simulate,
    "check-condition": cmd_check_condition,
}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    paths, summary = HANDLERS[cfg.command](cfg, out)
    manifest = {
        "config": cfg.to_dict(),
        "outputs": [p.name for p in paths],
        "summary": {k: _json_value(v) for k, v in summary.items()},
        "versions": {"bridgestop": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "elapsed_seconds": round(time.perf_counter() - start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------

def parse_grid(text: str) -> dp_solver.GridSpec:
    parts = text.split(",")
    if len(parts) != 6:
        raise ConfigError("--grid expects t0,t1,nt,zmin,zmax,nz")
    try:
        t0, t1, nt, zmin, zmax, nz = (float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad --grid value: {exc}") from exc
    return dp_solver.GridSpec(n_t=int(nt), z_min=zmin, z_max=zmax, n_z=int(nz),
                              epsilon_horizon=1.0 - t1, t0=t0)


def load_prior(text: str) -> Prior:
    path = Path(text)
    if not text.lstrip().startswith("{") and path.suffix == ".json" and path.exists():
        text = path.read_text()
    return parse_prior(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bridgestop",
                                     description="Optimal stopping of a Brownian bridge with an unknown pin.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, prior=True):
        if prior:
            p.add_argument("--prior", help="prior as JSON, a .json file, or shorthand like two_point{r:1,l:-1,p:0.5}")
        p.add_argument("--out", default="bridgestop-out", help="output directory")
        p.add_argument("--format", choices=FORMATS, default="csv")
        p.add_argument("--seed", type=int, default=0)
        return p

    common(sub.add_parser("beta", help="print the constant beta"), prior=False)
    p = common(sub.add_parser("classify", help="solver-free region layers"))
    p.add_argument("--grid")
    p = common(sub.add_parser("solve", help="finite-difference value function and regions"))
    p.add_argument("--grid")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--terminal", choices=dp_solver.TERMINALS, default=dp_solver.REVEAL)
    p = common(sub.add_parser("boundary", help="normal-prior boundary from the integral equation"))
    p.add_argument("--steps", type=int, default=400, help="time nodes")
    p.add_argument("--tol", type=float, default=1e-6)
    p = common(sub.add_parser("simulate", help="Monte Carlo value of a stopping rule"))
    p.add_argument("--rule", default="hold", help="hold, level:<c>, known-pin[:r], region or boundary")
    p.add_argument("--paths", type=int, default=montecarlo.DEFAULT_PATHS)
    p.add_argument("--steps", type=int, default=montecarlo.DEFAULT_STEPS)
    p.add_argument("--grid")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--terminal", choices=dp_solver.TERMINALS, default=dp_solver.REVEAL)
    p.add_argument("--monitoring", choices=montecarlo.MONITORING, default="bridge")
    common(sub.add_parser("check-condition", help="single-boundary monotonicity diagnostic"))
    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: the recorded one)")
    return parser


def config_from_args(args) -> RunConfig:
    if args.command == "rerun":
        data = json.loads(Path(args.manifest).read_text())
        cfg = RunConfig.from_dict(data.get("config", data))
        if args.out:
            cfg.output_dir = args.out
        return cfg
    options: dict[str, Any] = {}
    for key in ("epsilon", "terminal", "rule", "paths", "steps", "tol", "monitoring"):
        if hasattr(args, key):
            options[key] = getattr(args, key)
    if args.command == "boundary":
        options["n_t"] = options.pop("steps")
    prior = load_prior(args.prior) if getattr(args, "prior", None) else None
    grid = parse_grid(args.grid) if getattr(args, "grid", None) else None
    return RunConfig(args.command, prior, grid, args.out, args.seed, args.format, options)


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return run(cfg)
    except (ConfigError, PriorError, dp_solver.GridError, FilterError, OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (normal_boundary.ConvergenceError, FloatingPointError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, exc)


if __name__ == "__main__":
    sys.exit(main())

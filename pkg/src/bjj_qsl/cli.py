"""Command-line entry point: ``bjj-qsl {simulate,optimize,sweep,calibrate}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, preset_path
from .control import ControlPulse
from .errors import BJJError, ConfigError
from .gpe import DoubleWellSpec, Grid1D, calibrate
from .harness import CRAB_STRATEGIES, STRATEGIES, TIERS, crab_guess, make_tier, run_cell, run_sweep, summary_document
from .optimize import crab_optimize

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _load_config(args) -> RunConfig:
    if getattr(args, "preset", None):
        return RunConfig.load(preset_path(args.preset))
    if args.config:
        return RunConfig.load(args.config)
    return RunConfig.from_dict({})


def _write_json(path: Path, doc) -> None:
    with path.open("w") as fh:
        json.dump(doc, fh, indent=2, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _cell_args(args, cfg: RunConfig):
    d = cfg.data
    tier = args.tier or d["model"]["tier"]
    strategy = args.strategy or d["control"]["strategy"]
    T = args.T if args.T is not None else d["sweep"]["T_values"][0]
    g = args.interaction if args.interaction is not None else d["sweep"]["interactions"][0]
    if tier not in TIERS:
        raise ConfigError(f"unknown tier {tier!r}")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if not T > 0 or g < 0:
        raise ConfigError("need T > 0 and a non-negative interaction")
    return tier, strategy, float(T), float(g)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    tier, strategy, T_over, g = _cell_args(args, cfg)
    if strategy in CRAB_STRATEGIES:
        raise ConfigError("CRAB strategies run through the 'optimize' subcommand")
    pulse = ControlPulse.load(args.pulse) if args.pulse else None
    out = Path(args.out or cfg.data["output"]["dir"])

    model = make_tier(tier, g, cfg.numerics())
    T = T_over * model.t_qsl
    if pulse is not None:
        seg = model.run(pulse, T, series=True)
        label = "custom-pulse"
    else:
        seg = run_cell(model, strategy, T_over, cfg.seeds[0], series=True)[1]["segment"]
        label = strategy
    out.mkdir(parents=True, exist_ok=True)
    ser = seg.series
    with (out / "timeseries.csv").open("w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "z", "epsilon", "D"])
        for row_ in zip(ser["t"], ser["z"], ser["epsilon"], ser["D"]):
            w.writerow(["%.12g" % v for v in row_])
    if cfg.data["output"]["snapshots"] and "trajectory" in ser:
        ser["trajectory"].export_snapshots(out / "snapshots")
    summary = {
        "version": __version__, "config_hash": cfg.hash(), "tier": tier, "strategy": label,
        "interaction": g, "T_over_TqslL": T_over, "T": T, "epsilon": seg.epsilon,
        "path_length": seg.path_length, "depletion_max": seg.depletion_max,
        "min_left_population": seg.min_left, "self_trapped": bool(seg.min_left > 0.5),
        "J_eff": model.J_eff, "seed": cfg.seeds[0],
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("tier", "strategy", "interaction", "T_over_TqslL", "epsilon",
                                               "self_trapped")}))
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    if args.strategy is None and cfg.data["control"]["strategy"] not in CRAB_STRATEGIES:
        args.strategy = "crab"
    tier, strategy, T_over, g = _cell_args(args, cfg)
    if strategy not in CRAB_STRATEGIES:
        raise ConfigError(f"optimize needs a CRAB strategy {CRAB_STRATEGIES}, got {strategy!r}")
    opt = cfg.optimizer()
    for name in ("max_evals", "n_restarts", "seed"):
        val = getattr(args, name)
        if val is not None:
            setattr(opt, name, val)
    opt.__post_init__()
    out = Path(args.out or cfg.data["output"]["dir"])

    model = make_tier(tier, g, cfg.numerics())
    T = T_over * model.t_qsl
    problem = model.problem(T, crab_guess(model, strategy, T))
    report = crab_optimize(problem, opt, jobs=args.jobs or 1)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc.update(strategy=strategy, interaction=g, T_over_TqslL=T_over, version=__version__,
               config_hash=cfg.hash(), reduction=report.reduction)
    _write_json(out / "report.json", doc)
    report.pulse.save(out / "pulse.txt")
    print(json.dumps({"tier": tier, "strategy": strategy, "guess_cost": report.guess_cost,
                      "best_cost": report.best_cost, "n_evals": report.n_evals, "flag": report.flag}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    spec = cfg.sweep_spec()
    out = Path(args.out or cfg.data["output"]["dir"])
    result = run_sweep(spec, jobs=args.jobs, tqsl=cfg.data["sweep"]["tqsl"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(result.to_csv())
    _write_json(out / "summary.json", summary_document(result, cfg.hash(), cfg.to_dict()))
    n_ok = len(result.rows) - result.n_failed
    print(f"{len(result.rows)} rows ({result.n_failed} failed) in {result.runtime:.1f} s -> {out}", file=sys.stderr)
    return EXIT_OK if n_ok > 0 else EXIT_RUNTIME


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    m = cfg.data["model"]
    a = args.a if args.a is not None else m["a"]
    values = args.Ng if args.Ng else cfg.data["sweep"]["interactions"]
    if a < 1.5:
        raise ConfigError("calibration needs separated wells (a >= 1.5)")
    grid = Grid1D(-m["x_max"], m["x_max"], m["n_points"])
    docs = [calibrate(DoubleWellSpec(a=a), grid, float(Ng), dt=m["dt_gpe"]).to_dict() for Ng in values]
    doc = {"version": __version__, "a": a, "grid": [grid.x_min, grid.x_max, grid.n_points], "calibration": docs}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "calibration.json", doc)
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bjj-qsl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("config", nargs="?", help="TOML run configuration")
        sp.add_argument("--preset", help="bundled preset name (fig1d, fig2, fig3)")
        sp.add_argument("--out", help="output directory (default: [output] dir)")

    def cell(sp):
        sp.add_argument("--tier", choices=TIERS)
        sp.add_argument("--strategy", choices=STRATEGIES)
        sp.add_argument("--T", type=float, help="transfer time in units of T_QSL^L")
        sp.add_argument("--interaction", type=float, help="Lambda (two-mode, dimer) or Ng (gpe)")

    sp = sub.add_parser("simulate", help="run one cell and write its time series")
    common(sp)
    cell(sp)
    sp.add_argument("--pulse", help="two-column (t, D) pulse file to apply instead of the strategy")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("optimize", help="CRAB optimization of one cell")
    common(sp)
    cell(sp)
    sp.add_argument("--max-evals", dest="max_evals", type=int)
    sp.add_argument("--restarts", dest="n_restarts", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, default=1, help="parallel restarts")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("sweep", help="run a full sweep from a config")
    common(sp)
    sp.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("calibrate", help="extract effective two-mode parameters of the GPE double well")
    common(sp)
    sp.add_argument("--Ng", type=float, nargs="+")
    sp.add_argument("--a", type=float)
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print("bjj-qsl: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"bjj-qsl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BJJError, ValueError, ArithmeticError, OSError) as exc:
        print(f"bjj-qsl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

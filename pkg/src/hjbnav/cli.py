"""Command-line entry point: ``hjbnav {train,export-grid,simulate,validate}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, gp
from .env import ConfigurationError, MotionProfile, Polygon, Rectangle, TrainingRange, ElementConfig
from .models import ElementModel, atomic_write_text, load_model, make_training_meta, save_model
from .trainer import CostParams, TrainConfig, train, write_history_csv

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2
OUT_ENV = "HJBNAV_OUT"

log = logging.getLogger("hjbnav")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- manifest ---------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | list | None
    artifacts: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    version: str = __version__
    started: str = ""

    def write(self, path) -> None:
        atomic_write_text(path, json.dumps(asdict(self), indent=1, default=str) + "\n")


def _out_path(p: str) -> Path:
    path = Path(p)
    base = os.environ.get(OUT_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    return path


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json") if out.suffix else out / "manifest.json"


# -- argument parsing helpers -----------------------------------------------

def parse_shape(text: str):
    try:
        kind, _, arg = text.partition(":")
        if kind == "rect":
            w, _, h = arg.lower().partition("x")
            return Rectangle(float(w), float(h))
        if kind == "polygon":
            if not arg.startswith("@"):
                raise UsageError("polygon shapes are given as polygon:@file.json")
            with open(arg[1:]) as fh:
                data = json.load(fh)
            verts = data["vertices"] if isinstance(data, dict) else data
            return Polygon(tuple(tuple(v) for v in verts))
    except (ValueError, KeyError, OSError) as exc:
        raise UsageError(f"invalid shape {text!r}: {exc}") from exc
    raise UsageError(f"invalid shape {text!r}: expected rect:WxH or polygon:@file")


def parse_vector(text: str, n: int, what: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"invalid {what} {text!r}") from exc
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        raise UsageError(f"{what} needs {n} finite comma-separated numbers, got {text!r}")
    return vals


def parse_bounds(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) == 1:
        b = parse_vector(text, 1, "bounds")[0]
        if not b > 0:
            raise UsageError("single-number bounds must be positive")
        return (-b, b, -b, b)
    x0, x1, y0, y1 = parse_vector(text, 4, "bounds")
    if not (x1 > x0 and y1 > y0):
        raise UsageError("bounds must be xmin,xmax,ymin,ymax with max > min")
    return (x0, x1, y0, y1)


# -- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    shape = parse_shape(args.shape)
    motion = MotionProfile(parse_vector(args.motion, 2, "motion"))
    element = ElementConfig(shape, motion, TrainingRange(args.radius), args.dt)
    cost = CostParams(lam=args.lam, qc=args.qc)
    config = TrainConfig(
        epochs=args.epochs,
        max_steps=args.max_steps,
        eta=args.eta,
        eta_final=args.eta_final,
        sigma_explore=args.sigma if args.sigma is not None else 0.5 * args.u_max,
        u_max=args.u_max,
        w_term=args.w_term,
        seed=args.seed,
        spacing=args.spacing,
        kernel=gp.KernelParams(lengthscale=args.lengthscale, variance=args.variance, jitter=args.jitter),
    )
    out = _out_path(args.out)
    loss_csv = _out_path(args.loss_csv) if args.loss_csv else out.with_name(out.stem + ".loss.csv")
    t0 = time.time()
    result = train(element, cost, config, progress_every=args.progress)
    meta = make_training_meta(config, element, cost)
    model = ElementModel(result.model, shape, motion, args.radius, cost, meta)
    save_model(model, out)
    loss_csv.parent.mkdir(parents=True, exist_ok=True)
    write_history_csv(result.history, loss_csv)
    RunManifest(
        "train", _echo(args), args.seed, [str(out), str(loss_csv)], time.time() - t0, started=_now()
    ).write(_manifest_path(out))
    if result.aborted:
        print(f"training aborted: {result.diagnostic}", file=sys.stderr)
        return EXIT_FAIL
    print(f"wrote {out} and {loss_csv}")
    return EXIT_OK


# -- export-grid ------------------------------------------------------------

def export_grid(model: ElementModel, bounds, res: int) -> np.ndarray:
    x0, x1, y0, y1 = bounds
    gx, gy = np.meshgrid(np.linspace(x0, x1, res), np.linspace(y0, y1, res))
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    values, _, policies = gp.predict_batch(model.gp, pts)
    return np.column_stack([pts, values, policies])


def cmd_export_grid(args) -> int:
    try:
        model = load_model(args.model)
    except FileNotFoundError as exc:
        raise UsageError(f"model file not found: {args.model}") from exc
    if model.gp.state_dim != 2 or model.gp.control_dim != 2:
        raise UsageError("export-grid needs a planar model (state_dim = control_dim = 2)")
    if args.res < 2:
        raise UsageError("--res must be >= 2")
    bounds = parse_bounds(args.bounds) if args.bounds else (-model.radius, model.radius, -model.radius, model.radius)
    t0 = time.time()
    rows = export_grid(model, bounds, args.res)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "V", "u_x", "u_y"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    RunManifest("export-grid", _echo(args), None, [str(out)], time.time() - t0, started=_now()).write(_manifest_path(out))
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    from . import scene
    from .safety import SafetyParams, contact_v_min

    if bool(args.scenario) == bool(args.preset):
        raise UsageError("give exactly one of --scenario or --preset")
    if args.preset:
        scenario = scene.build_street_crossing(scene.StreetConfig(mirror=args.mirror))
        base = Path(args.models_dir)
    else:
        scenario = scene.load_scenario(args.scenario)
        base = Path(args.models_dir) if args.models_dir != "." else Path(args.scenario).parent
    if args.max_steps is not None:
        scenario.max_steps = args.max_steps
    models = scene.load_models(scenario, base)
    obstacle_models = [models[o.model] for o in scenario.obstacles]
    v_min = args.v_min if args.v_min is not None else contact_v_min(obstacle_models, args.q)
    params = SafetyParams(c=args.c, q=args.q, v_min=v_min, u_max=args.u_max, margin=args.margin)

    seeds = range(args.seed_offset, args.seed_offset + args.seeds)
    t0 = time.time()
    traces = scene.run_many(scenario, models, params, seeds, jobs=args.jobs)
    out_dir = _out_path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for tr in traces:
        p = out_dir / f"trace_seed{tr.seed}.csv"
        scene.write_trace_csv(tr, p)
        paths.append(str(p))
    summary = out_dir / "summary.csv"
    scene.write_summary_csv(traces, summary)
    paths.append(str(summary))
    cfg = _echo(args)
    cfg["v_min"] = v_min
    RunManifest("simulate", cfg, list(seeds), paths, time.time() - t0, started=_now()).write(out_dir / "manifest.json")

    bad = [tr for tr in traces if tr.outcome in (scene.Outcome.COLLISION, scene.Outcome.ABORTED)]
    reached = sum(tr.outcome is scene.Outcome.GOAL_REACHED for tr in traces)
    print(f"{len(traces)} runs: {reached} reached the goal, {len(bad)} collided or aborted; summary in {summary}")
    return EXIT_FAIL if bad else EXIT_OK


# -- validate ---------------------------------------------------------------

def cmd_validate(args) -> int:
    from .checks import run_checks

    t0 = time.time()
    report = run_checks(seed=args.seed, perturb_solver=args.perturb_solver)
    for c in report:
        mark = "PASS" if c["passed"] else "FAIL"
        print(f"{mark}  {c['name']}: measured {c['measured']:.3e} (tolerance {c['tolerance']:.1e})")
    out = _out_path(args.report)
    atomic_write_text(out, json.dumps({"checks": report, "passed": all(c["passed"] for c in report)}, indent=1) + "\n")
    RunManifest("validate", _echo(args), args.seed, [str(out)], time.time() - t0, started=_now()).write(_manifest_path(out))
    return EXIT_OK if all(c["passed"] for c in report) else EXIT_FAIL


# -- plumbing ---------------------------------------------------------------

def _echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hjbnav", description="GP actor-critic navigation primitives composed with barrier constraints.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one element model")
    t.add_argument("--shape", required=True, help="rect:WxH or polygon:@vertices.json")
    t.add_argument("--motion", default="0,0", help="element velocity vx,vy")
    t.add_argument("--epochs", type=int, default=20_000)
    t.add_argument("--max-steps", type=int, default=100)
    t.add_argument("--lambda", dest="lam", type=float, default=0.1)
    t.add_argument("--qc", type=float, default=0.0)
    t.add_argument("--eta", type=float, default=1e-2)
    t.add_argument("--eta-final", type=float, default=None, help="decay eta geometrically to this value")
    t.add_argument("--sigma", type=float, default=None, help="exploration std (default 0.5 u_max)")
    t.add_argument("--u-max", type=float, default=1.0)
    t.add_argument("--w-term", type=float, default=10.0)
    t.add_argument("--radius", type=float, default=8.0)
    t.add_argument("--lengthscale", type=float, default=1.0)
    t.add_argument("--variance", type=float, default=1.0)
    t.add_argument("--jitter", type=float, default=1e-6)
    t.add_argument("--spacing", type=float, default=None)
    t.add_argument("--dt", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--progress", type=int, default=0, help="log every N epochs")
    t.add_argument("--loss-csv", default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("export-grid", help="evaluate a model on a dense grid")
    e.add_argument("--model", required=True)
    e.add_argument("--bounds", default=None, help="B or xmin,xmax,ymin,ymax (default: training disc box)")
    e.add_argument("--res", type=int, default=101)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_grid)

    s = sub.add_parser("simulate", help="run a composed scenario over several seeds")
    s.add_argument("--scenario", default=None)
    s.add_argument("--preset", choices=["street-crossing"], default=None)
    s.add_argument("--mirror", action="store_true", help="mirror the preset layout")
    s.add_argument("--models-dir", default=".")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--seed-offset", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--max-steps", type=int, default=None)
    s.add_argument("--c", type=float, default=1.0)
    s.add_argument("--q", type=float, default=0.5)
    s.add_argument("--v-min", type=float, default=None, help="default: largest learned V^q on an obstacle outline + 0.1")
    s.add_argument("--margin", type=float, default=0.3, help="allowance for error in the reconstructed dV/dt")
    s.add_argument("--u-max", type=float, default=1.0)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", help="run the oracle checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", default="validation.json")
    v.add_argument("--perturb-solver", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        parser.print_usage(sys.stderr)
        print(f"hjbnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

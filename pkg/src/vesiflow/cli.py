"""Command line entry point: ``vesiflow run | check | derivcheck``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, parse_config, preset_names
from .derivcheck import run_derivcheck
from .orchestrator import ScenarioError, metrics_rows, run_scenario
from .outputs import render_svg, viewbox_for, write_frame, write_metrics

log = logging.getLogger("vesiflow")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUN = 0, 1, 2, 3


def run(config, out: Path, frames_every: int | None = None, svg: bool | None = None):
    """Run a parsed config and write metrics, frames and (optionally) SVGs into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    frames = out / "frames"
    frames.mkdir(exist_ok=True)
    stride = frames_every or config.frames_every
    want_svg = config.svg if svg is None else svg
    if want_svg:
        (out / "svg").mkdir(exist_ok=True)
    meshes = config.build_meshes()
    viewbox = viewbox_for(meshes)
    written = []

    def emit(state):
        name = f"frame_{state.n:06d}"
        write_frame(state.meshes, frames / f"{name}.csv", state.n, state.t, state.barrier)
        if want_svg:
            render_svg(state.meshes, state.barrier, out / "svg" / f"{name}.svg", viewbox)
        written.append(state.n)

    def on_step(state):
        if state.n % stride == 0:
            emit(state)

    state = run_scenario(meshes, config.params, config.barrier, config.moving, on_step)
    if written[-1:] != [state.n]:
        emit(state)
    write_metrics(metrics_rows(state), out / "metrics.csv")
    meta = {"stop_reason": state.stop_reason, "iterations": state.n, "t": state.t,
            "schedule": "cyclic rotation by iteration mod vesicle count",
            "frames": written, "config": config.raw}
    (out / "run.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return state


def _cmd_run(args) -> int:
    config = parse_config(args.config)
    state = run(config, Path(args.out), args.frames_every, True if args.svg else None)
    print(f"stopped after {state.n} iterations ({state.stop_reason}); output in {args.out}")
    return EXIT_OK


def _cmd_check(args) -> int:
    config = parse_config(args.config)
    config.build_meshes()
    print(f"config ok: {config.model}, {len(config.shapes)} shape(s), tau={config.params.tau:g}")
    return EXIT_OK


def _cmd_derivcheck(args) -> int:
    config = parse_config(args.config)
    result = run_derivcheck(config, tuple(args.resolutions), args.fields, args.seed)
    print(result.table())
    print("derivcheck:", "PASS" if result.passed else "FAIL")
    return EXIT_OK if result.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vesiflow",
                                description="Constrained Willmore flow of closed planar curves.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    cfg_help = f"config file or preset name ({', '.join(preset_names())})"

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--config", required=True, help=cfg_help)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--frames-every", type=int, default=None, help="frame stride (iterations)")
    r.add_argument("--svg", action="store_true", help="also render SVG frames")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("check", help="validate a config without running it")
    c.add_argument("--config", required=True, help=cfg_help)
    c.set_defaults(func=_cmd_check)

    d = sub.add_parser("derivcheck", help="finite-difference check of shape derivatives")
    d.add_argument("--config", required=True, help=cfg_help)
    d.add_argument("--resolutions", type=int, nargs="+", default=[64, 128])
    d.add_argument("--fields", type=int, default=5, help="number of random test fields")
    d.add_argument("--seed", type=int, default=None)
    d.set_defaults(func=_cmd_derivcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "frames_every", None) is not None and args.frames_every < 1:
        print("error: --frames-every must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())

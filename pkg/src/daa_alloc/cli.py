"""Command-line entry point: build wait maps, generate encounters, run groups, merge reports."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .encounters import EncounterSchemaError, generate_specs, read_csv, write_csv
from .metrics import (
    UnpairedBatchError,
    batch_report,
    dumps_report,
    merge_reports,
    write_tables,
    write_trace,
)
from .sim import GROUPS, SimConfig, SimConfigError, run_batch
from .waitmap import (
    ConvergenceError,
    IntruderMotionModel,
    MapError,
    MdpConfig,
    build_map,
    grid_from_spec,
    load_map,
    save_map,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CONVERGENCE, EXIT_VALIDATION = 0, 2, 3, 4, 5
GROUP_ORDER = ("B-1", "B-2", "IC-1", "ID-1", "ID-2")


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "grid": grid_from_spec("default").to_dict(),
        "mdp": MdpConfig().to_dict(),
        "motion_model": IntruderMotionModel().to_dict(),
        "sim": SimConfig().to_dict(),
    }


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = set(user) - set(cfg)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    for key, val in user.items():
        if key == "grid":
            cfg[key] = val
        else:
            cfg[key] = {**cfg[key], **val}
    return cfg


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_build_map(args) -> int:
    cfg = load_config(args.config)
    mdp = MdpConfig.from_dict(cfg["mdp"])
    model = IntruderMotionModel.from_dict(cfg["motion_model"])
    over = {k: v for k, v in (("gamma", args.gamma), ("convergence_tol", args.tol),
                              ("max_sweeps", args.max_sweeps)) if v is not None}
    mdp = replace(mdp, **over)
    if args.class_mix is not None:
        model = replace(model, class_mix=args.class_mix)
    if args.turn_bias is not None:
        model = replace(model, turn_bias=args.turn_bias)
    grid = grid_from_spec(args.grid if args.grid is not None else cfg["grid"])
    try:
        mdp.validate()
        model.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _log(f"building wait map over {grid.n_cells} cells")
    history: list = []
    wmap = build_map(grid, model, mdp, threads=args.threads, history=history)
    digest = save_map(wmap, args.out)
    summary = {"path": str(args.out), "content_hash": digest, "cells": grid.n_cells,
               "sweeps": len(history), "residual": history[-1] if history else None,
               "histogram": {k: v for k, v in wmap.histogram().items() if k not in ("counts", "edges")}}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gen_encounters(args) -> int:
    if args.count < 0 or args.seed < 0:
        raise ConfigError("count and seed must be non-negative")
    specs = generate_specs(args.count, args.seed)
    write_csv(specs, args.out)
    _log(f"wrote {len(specs)} encounters to {args.out}")
    return EXIT_OK


def _sim_config(cfg: dict, seed: int) -> SimConfig:
    try:
        return SimConfig.from_dict({**cfg["sim"], "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sim config: {exc}") from exc


def _execute_run(params: dict, out: Path, dump_traces: bool) -> dict:
    cfg = params["config"]
    groups = list(GROUP_ORDER) if params["group"] == "all" else [params["group"]]
    needs_map = any(GROUPS[g].wait_source == "map" for g in groups)
    if needs_map and not params.get("map"):
        raise ConfigError(f"groups {groups} need --map")
    sim_cfg = _sim_config(cfg, params["seed"])
    specs = read_csv(params["encounters"])
    wmap = load_map(params["map"]) if needs_map else None
    out.mkdir(parents=True, exist_ok=True)
    _log(f"running {len(specs)} encounters x {len(groups)} groups")
    logs = run_batch(specs, groups, sim_cfg, wmap, threads=params["threads"])
    ref = params.get("reference", "B-2")
    rep = batch_report(logs, sim_cfg, specs, reference=ref)
    (out / "report.json").write_text(dumps_report(rep))
    write_tables(rep, out)
    if dump_traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for g, gl in logs.items():
            for log in gl:
                write_trace(log, tdir / f"{g}_{log.spec.seed}.csv")
    return rep


def _manifest(params: dict, args_config: str | None) -> dict:
    hashes = {"encounters": _sha256_file(params["encounters"])}
    if params.get("map"):
        hashes["map"] = _sha256_file(params["map"])
    return {"tool": "daa-alloc", "version": __version__, "config_file": args_config,
            "params": params, "input_hashes": hashes}


def cmd_run(args) -> int:
    if args.from_manifest:
        man = json.loads(Path(args.from_manifest).read_text())
        params = man["params"]
        for key, h in man.get("input_hashes", {}).items():
            if _sha256_file(params[key]) != h:
                raise UnpairedBatchError(f"{key} file changed since the manifest was written")
    else:
        if args.encounters is None:
            raise ConfigError("--encounters is required")
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        params = {"group": args.group, "encounters": str(args.encounters),
                  "map": str(args.map) if args.map else None, "seed": args.seed,
                  "threads": args.threads, "config": load_config(args.config)}
    out = Path(args.out)
    _execute_run(params, out, args.dump_traces)
    man = _manifest(params, args.config)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    _log(f"report written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for p in args.reports:
        try:
            reports.append(json.loads(Path(p).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    try:
        merged = merge_reports(reports, args.reference)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(dumps_report(merged))
    write_tables(merged, out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="daa-alloc", description=__doc__)
    p.add_argument("--print-config", action="store_true", help="print the full default configuration and exit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command")

    b = sub.add_parser("build-map", help="solve the wait-map MDP and save it")
    b.add_argument("--out", required=True)
    b.add_argument("--gamma", type=float)
    b.add_argument("--class-mix", type=float)
    b.add_argument("--turn-bias", type=float, help="deg/s added to every intruder turn")
    b.add_argument("--grid", help="preset name (default, small) or JSON file")
    b.add_argument("--tol", type=float)
    b.add_argument("--max-sweeps", type=int)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--config")
    b.set_defaults(func=cmd_build_map)

    g = sub.add_parser("gen-encounters", help="sample encounter specs to CSV")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_encounters)

    r = sub.add_parser("run", help="simulate experiment groups over an encounter set")
    r.add_argument("--group", choices=[*GROUP_ORDER, "all"], default="all")
    r.add_argument("--encounters")
    r.add_argument("--map")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--out", required=True)
    r.add_argument("--dump-traces", action="store_true")
    r.add_argument("--config")
    r.add_argument("--from-manifest", help="rerun with the parameters recorded in a manifest")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("report", help="merge group reports into comparison tables")
    c.add_argument("reports", nargs="+")
    c.add_argument("--reference", default="B-2")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(json.dumps(default_config(), indent=2, sort_keys=True))
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConvergenceError as exc:
        _log(f"error: {exc}")
        return EXIT_CONVERGENCE
    except (ConfigError, SimConfigError) as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG
    except (MapError, EncounterSchemaError, UnpairedBatchError) as exc:
        _log(f"validation error: {exc}")
        return EXIT_VALIDATION
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

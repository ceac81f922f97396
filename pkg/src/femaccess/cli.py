"""Command line entry point: ``femaccess run|stage|metrics|batch``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .errors import FemAccessError, PipelineError, ValidationError
from .phantom import build_phantom
from .pipeline import (STAGES, ConfigError, bundled_scenario, dumps, header, load_scenario, read_inputs,
                       run_pipeline, run_stage, stage_metrics, write_artifacts)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3

METRICS_INPUTS = ("path.json", "vessels.json", "trial.json")


def _resolve_config(arg):
    p = Path(arg)
    if p.exists() or p.suffix == ".json" or "/" in arg:
        return p
    return bundled_scenario(arg)


def _fail(code, message, out_dir=None, reason=None, stage=None):
    print(f"error: {message}", file=sys.stderr)
    if out_dir is not None and code == EXIT_PIPELINE:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(dumps({**header("error"), "stage": stage,
                                               "reason": reason or "pipeline error", "message": message}))
    return code


def _out_dir(args, scn):
    out = args.out or scn.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir in the config")
    return Path(out)


def cmd_run(args) -> int:
    try:
        scn = load_scenario(_resolve_config(args.config), seed=args.seed)
        out = _out_dir(args, scn)
    except ValidationError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        res = run_pipeline(scn, out)
    except ValidationError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except FemAccessError as exc:
        return _fail(EXIT_PIPELINE, str(exc), out, getattr(exc, "reason", None))
    if res.error is not None:
        print(f"error: {res.error['message']} ({res.error['reason']})", file=sys.stderr)
        return EXIT_PIPELINE
    print(res.artifacts.get("summary.txt", "").strip())
    return EXIT_OK


def cmd_stage(args) -> int:
    try:
        scn = load_scenario(_resolve_config(args.config), seed=args.seed)
        out = _out_dir(args, scn)
        if args.stage not in STAGES:
            raise ConfigError(f"unknown stage {args.stage!r}; choose from {', '.join(STAGES)}")
        src = Path(args.input) if args.input else out
        inputs = read_inputs(src, args.stage)
        produced = run_stage(scn, args.stage, inputs)
    except ValidationError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except PipelineError as exc:
        return _fail(EXIT_PIPELINE, str(exc), args.out, exc.reason, args.stage)
    except FemAccessError as exc:
        return _fail(EXIT_PIPELINE, str(exc), args.out, None, args.stage)
    write_artifacts(out, produced)
    return EXIT_OK


def cmd_metrics(args) -> int:
    run_dir = Path(args.input)
    missing = [n for n in METRICS_INPUTS if not (run_dir / n).exists()]
    if missing:
        msg = f"incomplete run in {run_dir}: missing {', '.join(missing)}"
        print(f"error: {msg}", file=sys.stderr)
        if run_dir.is_dir():
            (run_dir / "error.json").write_text(dumps({**header("error"), "stage": "metrics",
                                                       "reason": "incomplete run", "missing": missing,
                                                       "message": msg}))
        return EXIT_PIPELINE
    try:
        if args.phantom:
            phantom = build_phantom(args.phantom)
        elif args.config:
            phantom = load_scenario(_resolve_config(args.config)).phantom
        else:
            raise ConfigError("metrics needs --phantom or --config")
        docs = {n: json.loads((run_dir / n).read_text()) for n in METRICS_INPUTS}
        produced = stage_metrics(phantom, docs["path.json"], docs["vessels.json"], docs["trial.json"],
                                 run_dir.name)
    except (ValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    write_artifacts(Path(args.out) if args.out else run_dir, produced)
    print(produced["summary.txt"].strip())
    return EXIT_OK


def parse_seeds(text: str) -> list:
    """``"3"``, ``"0-9"`` or ``"1,4,7"`` (ranges inclusive, combinable)."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


def _batch_one(config, seed, out):
    ns = argparse.Namespace(config=str(config), seed=seed, out=str(out))
    return seed, cmd_run(ns)


def cmd_batch(args) -> int:
    try:
        seeds = parse_seeds(args.seeds)
        cfg = _resolve_config(args.config)
        load_scenario(cfg)
    except (ValueError, ValidationError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if not args.out:
        return _fail(EXIT_CONFIG, "batch needs --out")
    root = Path(args.out)
    jobs = [(cfg, s, root / f"seed_{s}") for s in seeds]
    if args.workers <= 1:
        results = [_batch_one(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_batch_one, *zip(*jobs)))
    root.mkdir(parents=True, exist_ok=True)
    (root / "batch.json").write_text(dumps({**header("batch"),
                                            "runs": [{"seed": s, "exit_code": c} for s, c in results]}))
    return max(c for _, c in results)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="femaccess", description="Simulated autonomous femoral vascular access.")
    ap.add_argument("--version", action="version", version=f"femaccess {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="scenario JSON path or bundled scenario name (nominal, paper_shock)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("run", help="run scan, track, recon, plan, insert and metrics")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("stage", help="run a single stage from serialized inputs")
    common(p)
    p.add_argument("--stage", required=True, help=" | ".join(STAGES))
    p.add_argument("--in", dest="input", default=None, help="directory holding upstream artifacts (default --out)")
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("metrics", help="score a run directory against phantom ground truth")
    p.add_argument("--in", dest="input", required=True, help="run directory")
    p.add_argument("--phantom", default=None, help="phantom spec JSON")
    p.add_argument("--config", default=None, help="scenario whose phantom to use instead of --phantom")
    p.add_argument("--out", default=None, help="where to write metrics (default the run directory)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("batch", help="run many seeds, one directory per seed")
    common(p)
    p.add_argument("--seeds", required=True, help='e.g. "0-9" or "1,5,9"')
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_batch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

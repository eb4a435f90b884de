"""Command-line entry point.

Subcommands map onto pipeline stages: ``run`` executes the whole workflow,
the stage names stop after that stage, ``generate`` writes a synthetic dataset
to CSV, and ``report`` regenerates figures from their CSV sidecars.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .pipeline import (
    ConfigError,
    StageError,
    load_config,
    parse_config,
    regenerate_reports,
    run_pipeline,
)
from .synth import calibrated_spec, default_spec, generate
from .table import write_csv

log = logging.getLogger("wellcast")

_STAGE_COMMANDS = {
    "ingest": "ingest",
    "preprocess": "preprocess",
    "train": "train",
    "tune": "tune",
    "evaluate": "evaluate",
    "uncertainty": "uncertainty",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the JSON pipeline config")
    p.add_argument("--out", default="out", help="artifact directory (default: ./out)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--workers", type=int, default=1, help="worker threads for parallel stages")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wellcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset to CSV")
    gen.add_argument("--out", default="out", help="output directory")
    gen.add_argument("--wells", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=121)
    gen.add_argument("--noise-fraction", type=float, default=0.1,
                     help="response noise as a fraction of the noiseless signal std")

    for name in ("run", *_STAGE_COMMANDS):
        p = sub.add_parser(name, help=f"run the pipeline through the {name} stage"
                           if name != "run" else "run the full pipeline")
        _add_common(p)

    rep = sub.add_parser("report", help="regenerate figures from CSV sidecars")
    rep.add_argument("--out", default="out", help="existing artifact directory")
    return parser


def _cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = (
        calibrated_spec(args.wells, args.noise_fraction, args.seed)
        if args.noise_fraction > 0
        else default_spec(args.wells, 0.0, args.seed)
    )
    data = generate(spec)
    write_csv(data.table, out / "wells.csv")
    with open(out / "monthly.csv", "w", encoding="utf-8") as fh:
        fh.write("well_id,month,production\n")
        for wid, series in data.monthly.items():
            for month, value in enumerate(series):
                fh.write(f"{wid},{month},{float(value)!r}\n")
    truth = {k: {str(kk): vv for kk, vv in v.items()} if isinstance(v, dict) else v
             for k, v in data.truth.items()}
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    print(f"wrote wells.csv, monthly.csv, truth.json to {out}")
    return 0


def _cmd_pipeline(args, stop_after: str | None) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            raw = dict(cfg.raw)
            raw["seed"] = args.seed
            cfg = parse_config(raw)
        out = run_pipeline(cfg, args.out, stop_after=stop_after, n_workers=args.workers)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(str(e), file=sys.stderr)
        return 1
    print(f"artifacts in {out}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        return _cmd_generate(args)
    if args.command == "report":
        rebuilt = regenerate_reports(args.out)
        print(f"regenerated: {', '.join(rebuilt) if rebuilt else 'nothing to do'}")
        return 0
    if args.command == "run":
        return _cmd_pipeline(args, stop_after=None)
    return _cmd_pipeline(args, stop_after=_STAGE_COMMANDS[args.command])


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line entry point: ``nutsedge <subcommand> [flags]``.

Logs go to standard error as one JSON object per line; data goes only to the
declared output paths (or standard output for the small query commands).
Relative paths resolve against ``--root``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import PipelineConfig, load_config
from .losses import KL_MODES
from .pipeline import (compose_dataset, decode_file, estimate_sigma_dir, evaluate_dirs, extract_templates,
                       finalize, loss_files, nspm_file, sample_strata, synth_backgrounds, write_json)

EXIT_USAGE = 2
EXIT_FAILURE = 1


def log(event: str, level: str = "info", **fields) -> None:
    rec = {"level": level, "event": event, **fields}
    sys.stderr.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
    sys.stderr.flush()


class _Parser(argparse.ArgumentParser):
    """argparse with a machine-readable error line next to the usage text."""

    def error(self, message):
        self.print_usage(sys.stderr)
        log("usage", level="error", error="UsageError", message=message)
        sys.exit(EXIT_USAGE)


def _path(root: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else root / q


def _config(args) -> PipelineConfig:
    cfg = load_config(_path(args.root, args.config)) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _emit(result, args) -> None:
    out = getattr(args, "out", None)
    if out:
        write_json(result, _path(args.root, out))
    else:
        sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- commands

def cmd_sample_strata(args):
    return sample_strata(_path(args.root, args.images), _config(args), _path(args.root, args.out))


def cmd_extract_templates(args):
    return extract_templates(_path(args.root, args.annotations), _path(args.root, args.templates),
                             _path(args.root, args.backgrounds), _path(args.root, args.selection))


def cmd_synth_background(args):
    cfg = _config(args)
    return synth_backgrounds(_path(args.root, args.patches), args.width, args.height,
                             args.count if args.count is not None else cfg.count, cfg,
                             _path(args.root, args.out), args.jobs)


def cmd_compose(args):
    return compose_dataset(_path(args.root, args.backgrounds), _path(args.root, args.templates),
                           _config(args), _path(args.root, args.out), args.jobs)


def cmd_nspm(args):
    sigma = args.sigma if args.sigma is not None else _config(args).sigma
    return nspm_file(_path(args.root, args.annotations), sigma, _path(args.root, args.out))


def cmd_estimate_sigma(args):
    res = estimate_sigma_dir(_path(args.root, args.templates))
    _emit(res, args)
    return res


def cmd_loss(args):
    res = loss_files(args.mode, _path(args.root, args.label), _path(args.root, args.pred),
                     _path(args.root, args.boxes))
    _emit(res, args)
    return {"mode": res["mode"], "total": res["total"]}


def cmd_decode(args):
    cfg = load_config(_path(args.root, args.params)) if args.params else PipelineConfig()
    return decode_file(_path(args.root, args.map), cfg.decode(), _path(args.root, args.out))


def cmd_evaluate(args):
    return evaluate_dirs(_path(args.root, args.annotations), _path(args.root, args.model_out),
                         _config(args).evaluation(), _path(args.root, args.report),
                         _path(args.root, args.review_queue), args.jobs)


def cmd_finalize(args):
    report = _path(args.root, args.report)
    out = _path(args.root, args.out) if args.out else report
    return finalize(report, _path(args.root, args.verdicts), out)


def cmd_demo(args):
    from .demo import run_demo
    report = run_demo(_path(args.root, args.out), seed=args.seed or 0, jobs=args.jobs,
                      log=lambda event, **kw: log(event, stage="demo", **kw))
    return {"mean_iou": report["mean_iou"], "mean_cs": report["mean_cs"], "r_d": report["r_d"],
            **report["rates"]}


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nutsedge", description="Synthetic nutsedge data, skeleton label maps and evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--root", type=Path, default=Path("."), help="base directory for relative paths")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output does not depend on it)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("sample-strata", cmd_sample_strata, "pick a lighting-stratified subset of raw images")
    sp.add_argument("--images", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True, help="selection JSON")

    sp = add("extract-templates", cmd_extract_templates, "cut templates and background patches from labelme files")
    sp.add_argument("--annotations", required=True, help="directory of labelme JSON files")
    sp.add_argument("--selection", help="selection JSON from sample-strata")
    sp.add_argument("--templates", required=True, help="template library output directory")
    sp.add_argument("--backgrounds", required=True, help="background patch output directory")

    sp = add("synth-background", cmd_synth_background, "grow background images from turf patches")
    sp.add_argument("--patches", required=True)
    sp.add_argument("--width", type=int, required=True)
    sp.add_argument("--height", type=int, required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)

    sp = add("compose", cmd_compose, "paste templates onto backgrounds")
    sp.add_argument("--backgrounds", required=True)
    sp.add_argument("--templates", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("nspm", cmd_nspm, "rasterize the skeleton label map of one labelme file")
    sp.add_argument("--annotations", required=True, help="labelme JSON file")
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True, help="PFM output")

    sp = add("estimate-sigma", cmd_estimate_sigma, "fit sigma to a template library")
    sp.add_argument("--templates", required=True)
    sp.add_argument("--out")

    sp = add("loss", cmd_loss, "score a predicted map against a label map")
    sp.add_argument("--mode", choices=("ce",) + KL_MODES, default="kl")
    sp.add_argument("--label", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--boxes", required=True, help="JSON box list or labelme file")
    sp.add_argument("--out")

    sp = add("decode", cmd_decode, "decode a skeleton from a probability map")
    sp.add_argument("--map", required=True)
    sp.add_argument("--params", help="config file with the decode keys")
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "score model outputs against human labels")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--model-out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--report", required=True)
    sp.add_argument("--review-queue", required=True)

    sp = add("finalize", cmd_finalize, "fold review verdicts into the report rates")
    sp.add_argument("--report", required=True)
    sp.add_argument("--verdicts", required=True)
    sp.add_argument("--out", help="defaults to rewriting --report")

    sp = add("demo", cmd_demo, "run the whole chain on the bundled toy images")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        log("usage", level="error", error="UsageError", message="--jobs must be >= 1")
        return EXIT_USAGE
    start = time.perf_counter()
    try:
        result = args.func(args)
    except (ValueError, OSError) as exc:
        log(args.command, level="error", error=type(exc).__name__, message=str(exc))
        return EXIT_FAILURE
    log(args.command, seconds=round(time.perf_counter() - start, 3), **(result or {}))
    return 0


if __name__ == "__main__":
    sys.exit(main())

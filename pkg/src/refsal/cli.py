"""Command-line interface: run, eval, overlay, and fixtures subcommands.

A key=value config file can mirror every flag of the run command; values
given on the command line win over the file. Exit codes: 0 on success,
1 when some samples failed or predictions are missing, 2 on fatal errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, InputError, RefsalError
from .fixtures import write_fixture_tree
from .harness import (
    PipelineConfig,
    load_dataset,
    load_predictions,
    make_backend_factory,
    run_pipeline,
)
from .heatmap import load_tensor_dump
from .metrics import aggregate_metrics
from .parsing import load_lexicon
from .refinement import RefinementConfig
from .render import render_overlay

RUN_DEFAULTS = {
    "backend": None,
    "dataset": None,
    "out": None,
    "lambda": 0.8,
    "theta": 0.5,
    "kappa": 12,
    "nu": 3,
    "mask_mode": "feature",
    "connectivity": 4,
    "tie_tol": 1e-9,
    "workers": 1,
    "trace": False,
    "lexicon": None,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refsal")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full localization pipeline over a dataset")
    run.add_argument("--dataset", help="JSON-lines dataset path")
    run.add_argument("--backend", help="synth:SCENES.json | bridge:HOST:PORT | bridge:stdio")
    run.add_argument("--out", help="output directory for predictions and report")
    run.add_argument("--config", help="key=value config file mirroring these flags")
    run.add_argument("--lambda", dest="lambda_", type=float, help="heatmap blend factor")
    run.add_argument("--theta", type=float, help="drop-mask threshold")
    run.add_argument("--kappa", type=int, help="max connected components per proposal")
    run.add_argument("--nu", type=int, help="max refinement iterations")
    run.add_argument("--mask-mode", choices=["feature", "image"], dest="mask_mode")
    run.add_argument("--connectivity", type=int, choices=[4, 8])
    run.add_argument("--tie-tol", dest="tie_tol", type=float, help="peak tie tolerance")
    run.add_argument("--workers", type=int, help="parallel sample workers")
    run.add_argument("--trace", action="store_true", default=None,
                     help="write per-iteration heatmaps")
    run.add_argument("--lexicon", help="override the bundled tagging lexicon")

    ev = sub.add_parser("eval", help="score an existing predictions file against a dataset")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--out", help="write the report JSON here (default: stdout)")
    ev.add_argument("--lexicon")

    ov = sub.add_parser("overlay", help="render a heat/mask overlay for one sample")
    ov.add_argument("--run-dir", required=True, help="output directory of a previous run")
    ov.add_argument("--dataset", required=True)
    ov.add_argument("--sample", required=True)
    ov.add_argument("--out", required=True, help="output PNG path")

    fx = sub.add_parser("fixtures", help="emit the bundled synthetic fixtures")
    fx.add_argument("--out", required=True, help="directory to write fixtures into")
    return parser


def _parse_config_file(path) -> dict:
    values = {}
    converters = {
        "lambda": float, "theta": float, "tie_tol": float,
        "kappa": int, "nu": int, "connectivity": int, "workers": int,
        "trace": lambda s: s.lower() in ("1", "true", "yes", "on"),
    }
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if key not in RUN_DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = converters.get(key, str)(value)
    return values


def _merge_run_settings(args) -> dict:
    settings = dict(RUN_DEFAULTS)
    if args.config:
        settings.update(_parse_config_file(args.config))
    overrides = {
        "dataset": args.dataset, "backend": args.backend, "out": args.out,
        "lambda": args.lambda_, "theta": args.theta, "kappa": args.kappa,
        "nu": args.nu, "mask_mode": args.mask_mode, "connectivity": args.connectivity,
        "tie_tol": args.tie_tol, "workers": args.workers, "trace": args.trace,
        "lexicon": args.lexicon,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return settings


def _cmd_run(args) -> int:
    settings = _merge_run_settings(args)
    if not settings["dataset"] or not settings["backend"]:
        raise ConfigError("run requires --dataset and --backend (flag or config file)")
    cfg = PipelineConfig(
        refinement=RefinementConfig(
            blend=settings["lambda"],
            drop_threshold=settings["theta"],
            max_iterations=settings["nu"],
            mask_mode=settings["mask_mode"],
        ),
        kappa=settings["kappa"],
        connectivity=settings["connectivity"],
        tie_tol=settings["tie_tol"],
        workers=settings["workers"],
        trace=bool(settings["trace"]),
    )
    lexicon = load_lexicon(settings["lexicon"]) if settings["lexicon"] else None
    records = load_dataset(settings["dataset"])
    factory = make_backend_factory(settings["backend"])
    predictions, report, failures = run_pipeline(
        records, cfg, factory, out_dir=settings["out"], lexicon=lexicon
    )
    summary = report.to_dict()
    print(json.dumps({"metrics": summary, "failures": failures}, indent=2, sort_keys=True))
    if failures or report.missing:
        return 1
    return 0


def _cmd_eval(args) -> int:
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    records = load_dataset(args.dataset)
    predictions = load_predictions(args.predictions)
    report = aggregate_metrics(records, predictions, lexicon)
    payload = json.dumps({"metrics": report.to_dict()}, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return 1 if report.missing else 0


def _cmd_overlay(args) -> int:
    records = {r.sample_id: r for r in load_dataset(args.dataset)}
    try:
        record = records[args.sample]
    except KeyError:
        raise InputError(f"sample {args.sample!r} not in dataset") from None
    run_dir = Path(args.run_dir)
    heat = load_tensor_dump(run_dir / "heatmaps" / f"{args.sample}.irpe")[0].astype(float)
    predictions = load_predictions(run_dir / "predictions.json")
    if args.sample not in predictions:
        raise InputError(f"no prediction for sample {args.sample!r} in {run_dir}")
    render_overlay(record.image_path, heat, predictions[args.sample], args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_fixtures(args) -> int:
    manifest = write_fixture_tree(args.out)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "eval": _cmd_eval,
        "overlay": _cmd_overlay,
        "fixtures": _cmd_fixtures,
    }
    try:
        return handlers[args.command](args)
    except RefsalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

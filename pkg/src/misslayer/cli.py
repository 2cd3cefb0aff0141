"""Command-line entry point: ``misslayer run|impute|verify|bench``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__, kernels
from .errors import ConfigError, ParseError, TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _load_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _plain_report(kind, options, seed, runs, t0):
    from .experiments import _clean

    return _clean({"experiment": kind, "config": options, "seed": seed, "version": __version__,
                   "backend": kernels.BACKEND, "runs": runs,
                   "wall_clock_s": time.perf_counter() - t0})


def cmd_run(args):
    from .experiments import ExperimentConfig, emit_report, run

    doc = _load_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out"] = args.out
    cfg = ExperimentConfig.from_dict(doc)
    report = run(cfg)
    emit_report(report, cfg.out, stream=sys.stdout)


def cmd_impute(args):
    from . import imputers
    from .data import DatasetWithMask, load_csv

    doc = _load_json(args.config)
    data_path = args.data or doc.get("dataset", {}).get("path")
    if data_path is None:
        raise ConfigError("impute needs --data or dataset.path in the config")
    if not Path(data_path).exists():
        raise ConfigError(f"dataset file not found: {data_path}")
    ds = doc.get("dataset", {})
    if str(data_path).endswith(".json"):
        data = DatasetWithMask.load(data_path)
    else:
        data = load_csv(data_path, ds.get("missing_tokens", ("?", "", "NA", "NaN")),
                        ds.get("label_column"), ds.get("delimiter", ","), ds.get("header", False),
                        ds.get("drop_columns", ()))
    method = args.method or doc.get("method", "mean")
    if method not in imputers.KINDS:
        raise ConfigError(f"unknown imputer {method!r}")
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    imp = imputers.fit(method, data, seed=seed, **doc.get("options", {}))
    filled, meta = imp.transform_data(data)
    out = args.out or doc.get("out")
    text = json.dumps({"dataset": filled.to_dict(), "method": method, "metadata": meta,
                       "seed": seed}, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(f"imputed {int(data.mask.sum())} cells in {data.n} rows with {method}"
          + (f"; {len(meta['fallback_rows'])} rows fell back to column means"
             if meta.get("fallback_rows") else ""))


def _suite(kind, args, default):
    from .experiments import emit_report
    from .verification import run_suite

    options = {**default, **_load_json(args.config)}
    seed = args.seed if args.seed is not None else options.get("seed", 0)
    t0 = time.perf_counter()
    runs = run_suite(options, seed)
    report = _plain_report(kind, options, seed, runs, t0)
    emit_report(report, args.out or options.get("out"), stream=sys.stdout)


def cmd_verify(args):
    _suite("verify", args, {"checks": ["mc-relu", "mc-rbf", "distinguish"]})


def cmd_bench(args):
    _suite("bench", args, {"checks": ["bench"]})


def build_parser():
    parser = argparse.ArgumentParser(prog="misslayer", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in [
        ("run", cmd_run, "run an experiment described by a JSON config"),
        ("impute", cmd_impute, "complete a data set with a baseline imputer"),
        ("verify", cmd_verify, "run the Monte-Carlo and identification checks"),
        ("bench", cmd_bench, "time the generalized first layer against the classical one"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path")
        if name == "impute":
            p.add_argument("--data", help="CSV or dataset JSON")
            p.add_argument("--method", help="mean, knn, dropout or gmm-sample")
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""``intec`` command line: run, suite, train, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from intec.errors import InvalidConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("intec")


def _emit_csv(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    from intec.harness.config import load_config
    from intec.harness.report import write_svgs
    from intec.harness.scenario import run_experiment
    from intec.harness.suite import rows_to_csv

    cfg = load_config(args.config)
    row = run_experiment(cfg)
    _emit_csv(rows_to_csv([row]), args.out)
    if args.svg:
        write_svgs([row], args.svg)
    return EXIT_OK


def cmd_suite(args) -> int:
    from intec.harness.config import ExperimentConfig
    from intec.harness.report import write_svgs
    from intec.harness.suite import experiment_grid, rows_to_csv, run_suite

    overrides = {k: getattr(args, k) for k in ("seed", "duration", "repeats")
                 if getattr(args, k) is not None}
    base = ExperimentConfig(**overrides)
    cells = experiment_grid(args.experiment, base)
    result = run_suite(cells, jobs=args.jobs)
    _emit_csv(rows_to_csv(result.rows), args.out)
    if args.svg:
        write_svgs(result.rows, args.svg)
    for cfg, error in result.failures:
        print(f"cell failed ({cfg.variant}, {cfg.reduction_model}, W={cfg.window}, "
              f"sensors={cfg.sensors}, users={cfg.users}): {error}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_RUNTIME


def cmd_train(args) -> int:
    import numpy as np

    from intec.cloud import split_80_20
    from intec.harness.config import ExperimentConfig
    from intec.harness.datasets import concat_streams, ingest_mhealth, synthesize_dataset
    from intec.harness.scenario import make_reducer
    from intec.model import (ModelArtifact, TrainConfig, classifier_to_bytes, compress_model,
                             evaluate, save_artifact, train_classifier)
    from intec.numerics import ZScoreScaler, window_arrays

    cfg = ExperimentConfig(reduction_model=args.reduction, reduction_rate=args.rate,
                           window=args.window, seed=args.seed)
    if args.dataset == "synthetic":
        stream = synthesize_dataset(per_class_windows=40, window=cfg.window, seed=cfg.seed)
    else:
        if not Path(args.dataset).exists():
            raise InvalidConfig(f"dataset {args.dataset} does not exist")
        stream = concat_streams(ingest_mhealth(args.dataset).values())
    scaler = ZScoreScaler().fit(stream.features)
    scaled = scaler.transform(stream.features)
    reducer = make_reducer(cfg.reduction_model, cfg.k, cfg.seed).fit(scaled)
    X, y = window_arrays(reducer.transform(scaled), stream.labels, cfg.window)
    X_tr, y_tr, X_val, y_val = split_80_20(X, y)
    train_cfg = TrainConfig(max_epochs=args.epochs, patience=min(args.patience, args.epochs),
                            seed=cfg.seed, test_window=args.test_window)
    model, history = train_classifier(X_tr, y_tr, X_val, y_val, train_cfg)
    if train_cfg.test_window not in (None, cfg.window):
        # re-cut the held-out rows at the test window size
        rows = X_val.reshape(-1, X_val.shape[-1])
        X_val, y_val = window_arrays(rows, np.repeat(y_val, cfg.window), train_cfg.test_window)
    report = evaluate(model, X_val, y_val)
    artifact = ModelArtifact(1, cfg.window, scaler, reducer, compress_model(model, 1),
                             report.accuracy)
    blob = save_artifact(artifact)
    if args.out:
        Path(args.out).write_bytes(blob)
    summary = {k: v for k, v in report.as_dict().items() if k != "confusion"}
    summary.update(windows=int(X.shape[0]), k=cfg.k, epochs=history.epochs,
                   best_epoch=history.best_epoch, artifact_bytes=len(blob),
                   full_model_bytes=len(classifier_to_bytes(model)))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    from intec.harness.report import summary, write_svgs
    from intec.harness.suite import read_csv

    try:
        rows = read_csv(args.csv)
    except (OSError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None
    text = summary(rows)
    if text:
        print(text)
    if args.svg:
        for path in write_svgs(rows, args.svg):
            print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intec", description="Three-tier IoT pipeline emulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment cell from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--svg", help="directory for SVG charts")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run one of the five experiment grids")
    p.add_argument("--experiment", type=int, required=True, choices=range(1, 6))
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="virtual seconds per run")
    p.add_argument("--repeats", type=int)
    p.add_argument("--jobs", type=int, default=1, help="cells run in parallel")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--svg", help="directory for SVG charts")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("train", help="train and package a model from a dataset")
    p.add_argument("--dataset", required=True,
                   help="MHEALTH .log file or directory, or 'synthetic'")
    p.add_argument("--window", type=int, default=25)
    p.add_argument("--reduction", choices=("PCA", "AE"), default="PCA")
    p.add_argument("--rate", type=float, default=0.66)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-window", type=int,
                   help="evaluate on windows of this size (must match --window)")
    p.add_argument("--out", help="write the packaged artifact here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="summarise a metrics CSV and draw charts")
    p.add_argument("--csv", required=True)
    p.add_argument("--svg", help="directory for SVG charts")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

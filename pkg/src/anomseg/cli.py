"""Command-line entry point: ``anomseg {synth,train,eval,ablate,plot}``.

Exit codes: 0 success, 1 validation error, 2 runtime or training error.
``ANOMSEG_OUTPUT_ROOT``, when set, is prefixed to relative ``--out`` paths.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import datagen, experiments, plots
from .errors import (CheckpointError, ConfigError, DatasetError, EmptyDatasetError, GenerationError,
                     TrainingError, UndefinedMetricError)
from .metrics import EvalPair, evaluate, pr_curve, roc_curve
from .trainer import TrainConfig, load_config, load_predictor, train_run

LOGGER = logging.getLogger("anomseg")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
OUTPUT_ROOT_ENV = "ANOMSEG_OUTPUT_ROOT"


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolve_train_config(config_path, overrides) -> TrainConfig:
    cfg = load_config(config_path) if config_path else TrainConfig()
    return cfg.with_overrides(overrides or [])


def cmd_synth(args) -> int:
    raw = {}
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text())
        except FileNotFoundError:
            raise ConfigError(f"spec file not found: {args.spec}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec file {args.spec} is not valid JSON: {exc}") from exc
    domains = tuple(raw.pop("domains", ("V", "A")))
    bad = [d for d in domains if d not in datagen.DOMAINS]
    if bad:
        raise ConfigError(f"domains has unknown entries {bad}; allowed {list(datagen.DOMAINS)}")
    if args.count < 1:
        raise ConfigError(f"count must be >= 1, got {args.count}")
    if args.seed < 0:
        raise ConfigError(f"seed must be >= 0, got {args.seed}")
    spec = datagen.SceneSpec.from_dict(raw)
    out = _out_path(args.out)
    samples = datagen.generate_dataset(spec, args.count, args.seed, domains)
    manifest = datagen.write_dataset(samples, out, spec)
    # record generation parameters in the manifest for downstream eval-set derivation
    doc = json.loads((out / datagen.MANIFEST_NAME).read_text())
    doc.update({"seed": args.seed, "count_per_domain": args.count, "domains": list(domains)})
    _write_json(out / datagen.MANIFEST_NAME, doc)
    _write_json(out / "config.json", {"spec": spec.to_dict(), "count": args.count, "seed": args.seed,
                                      "domains": list(domains)})
    print(f"wrote {len(manifest.samples)} samples to {out}")
    return EXIT_OK


def _load_data(path) -> list:
    if not Path(path).is_dir():
        raise DatasetError(f"data directory does not exist: {path}")
    return datagen.read_dataset(path)


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args.config, args.override)
    samples = _load_data(args.data)
    out = _out_path(args.out)

    def progress(rep):
        if rep.iteration % 50 == 0:
            LOGGER.info("iter %d L_total %.5f L_CE %.5f tau %.4f lr %.3g", rep.iteration, rep.L_total, rep.L_CE,
                        rep.tau, rep.lr)

    _, reports = train_run(samples, cfg, out, progress)
    if reports:
        print(f"trained {reports[-1].iteration + 1} iterations; final L_total {reports[-1].L_total:.6f}")
    return EXIT_OK


def _write_curve(path, header, cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def cmd_eval(args) -> int:
    try:
        samples = _load_data(args.data)
    except EmptyDatasetError as exc:
        raise UndefinedMetricError(f"undefined metric: {exc}") from exc
    predictor = load_predictor(args.checkpoint)
    out = _out_path(args.out)
    report = evaluate(predictor, samples)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    scores = predictor.predict(samples)
    pairs = [EvalPair(sc, s.gt_map) for sc, s in zip(scores, samples)]
    prec, rec, thr = pr_curve(pairs)
    _write_curve(out / "pr_curve.csv", ["threshold", "precision", "recall"], (thr, prec, rec))
    fpr, tpr, thr = roc_curve(pairs)
    _write_curve(out / "roc_curve.csv", ["threshold", "fpr", "tpr"], (thr, fpr, tpr))
    _write_json(out / "config.json", {"data": str(args.data), "checkpoint": str(args.checkpoint)})
    s = report.summary()
    print(f"ap={report.ap:.4f} fpr95={report.fpr95:.4f} (AP {s['ap_pct']}%, FPR95 {s['fpr95_pct']}%)")
    return EXIT_OK


def cmd_ablate(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be a comma-separated list of integers, got {args.seeds!r}") from None
    if not seeds:
        raise ConfigError("--seeds is empty")
    base = load_config(args.config) if args.config else TrainConfig(max_iters=experiments.ABLATION_MAX_ITERS)
    base = base.with_overrides(args.override or [])
    manifest = datagen.read_manifest(args.data) if Path(args.data).is_dir() else None
    if manifest is None:
        raise DatasetError(f"data directory does not exist: {args.data}")
    samples = datagen.read_dataset(args.data)
    spec = datagen.SceneSpec.from_dict(manifest.spec) if manifest.spec else datagen.SceneSpec()
    train_seed = json.loads((Path(args.data) / datagen.MANIFEST_NAME).read_text()).get("seed")
    out = _out_path(args.out)
    experiments.run_ablation(samples, spec, seeds, out, base, train_seed)
    _write_json(out / "config.json", {"data": str(args.data), "seeds": seeds, "base": base.to_dict()})
    print((out / "ablation.csv").read_text(), end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise CliValidationError(f"run directory does not exist: {run}")
    has_train = (run / "losses.csv").is_file()
    has_eval = (run / "pr_curve.csv").is_file()
    if not (has_train or has_eval):
        raise CliValidationError(f"{run} contains neither losses.csv nor pr_curve.csv")
    out = _out_path(args.out)
    written = []
    if has_train:
        written += plots.plot_training(run, out)
    if has_eval:
        written.append(plots.plot_pr(run, out))
    _write_json(out / "config.json", {"run": str(run)})
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="anomseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a two-domain toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON scene spec (fields of SceneSpec, optional 'domains')")
    p.add_argument("--count", type=int, default=100, help="samples per domain")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--override", nargs="*", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (AP, FPR95)")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the nine-row ablation sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--config", help="base training config (default: toy-scale run length)")
    p.add_argument("--override", nargs="*", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render figures from a train or eval output directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


_VALIDATION = (ConfigError, DatasetError, UndefinedMetricError, CheckpointError, CliValidationError)
_RUNTIME = (GenerationError, TrainingError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except _VALIDATION as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _RUNTIME as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything unexpected is a runtime failure
        LOGGER.exception("unexpected failure")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

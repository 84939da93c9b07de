"""Command-line interface: data generation, training, evaluation, ensembling,
HSIC testing and embedding export.

Every run writes a `manifest.json` into the output directory echoing the
resolved configuration and seed.  Option precedence is CLI flag > config
file (JSON) > built-in default.  On failure the process exits nonzero
after printing a single `error: ...` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .datasets import (
    Dataset,
    SynthSpec,
    apply_modality,
    center_dataset,
    generate_synthetic_split,
    load_dataset,
    save_dataset,
)
from .ensemble import StreamPrediction, ensemble_average, load_predictions, save_predictions
from .kernels import MaternParams, hsic_permutation_test
from .model import feature_bundle
from .skeleton import chain_graph
from .training import (
    TrainConfig,
    TrainingDiverged,
    evaluate,
    fit,
    load_checkpoint,
    save_checkpoint,
    write_metrics_csv,
)

_CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig)) + ("modality", "center")


class _Parser(argparse.ArgumentParser):
    """argparse with single-line machine-parsable errors."""

    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _sign(text: str) -> int:
    if text in ("+1", "1"):
        return 1
    if text == "-1":
        return -1
    raise argparse.ArgumentTypeError(f"expected +1 or -1, got {text!r}")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--delta", type=float, default=None, help="Gaussian correlation width")
    p.add_argument("--modality", choices=("joint", "bone"), default=None)
    p.add_argument("--hsic-sign", type=_sign, default=None, metavar="+1|-1")
    p.add_argument("--hsic-weight", type=float, default=None)
    p.add_argument("--no-hsic", action="store_true", help="drop the HSIC term")
    p.add_argument("--no-distill", action="store_true", help="drop the distillation term")
    p.add_argument("--no-aux", action="store_true", help="train without the auxiliary model")
    p.add_argument("--no-center", action="store_true", help="skip root-joint centering")
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--warmup-epochs", type=int, default=None)
    p.add_argument("--base-lr", type=float, default=None)
    p.add_argument("--lr-decay", type=float, default=None)
    p.add_argument("--decay-every", type=int, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    unknown = set(data) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}; valid: {sorted(_CONFIG_KEYS)}")
    return data


def _resolve_train_config(args) -> tuple[TrainConfig, str, bool]:
    """Merge CLI > config file > defaults into (TrainConfig, modality, center)."""
    file_cfg = _load_config_file(args.config)

    def pick(key, default, cli_value):
        if cli_value is not None:
            return cli_value
        return file_cfg.get(key, default)

    defaults = TrainConfig()
    kwargs = {}
    for spec_field in fields(TrainConfig):
        cli_value = getattr(args, spec_field.name, None)
        kwargs[spec_field.name] = pick(spec_field.name, getattr(defaults, spec_field.name), cli_value)
    if args.no_hsic:
        kwargs["use_hsic"] = False
    if args.no_distill:
        kwargs["use_distill"] = False
    if args.no_aux:
        kwargs["use_aux"] = False
    modality = pick("modality", "joint", args.modality)
    center = bool(pick("center", True, False if args.no_center else None))
    return TrainConfig(**kwargs), modality, center


def _write_manifest(out_dir: Path, command: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, **payload}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")


# Subcommands ----------------------------------------------------------------


def _cmd_generate(args) -> int:
    seed = 7 if args.seed is None else args.seed
    spec = SynthSpec(
        num_classes=args.classes, num_joints=args.joints, frames=args.frames,
        samples_per_class=args.train_per_class, channels=args.channels, noise=args.noise,
    )
    train, test = generate_synthetic_split(spec, args.test_per_class, seed)
    args.out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, args.out / "train.txt")
    save_dataset(test, args.out / "test.txt")
    _write_manifest(args.out, "generate", {
        "seed": seed, "spec": asdict(spec), "test_per_class": args.test_per_class,
    })
    print(f"wrote {args.out / 'train.txt'} ({len(train)} sequences) and "
          f"{args.out / 'test.txt'} ({len(test)} sequences)")
    return 0


def _prepare(dataset: Dataset, graph, modality: str, center: bool) -> Dataset:
    dataset = apply_modality(dataset, graph, modality)
    return center_dataset(dataset, graph) if center else dataset


def _cmd_train(args) -> int:
    config, modality, center = _resolve_train_config(args)
    train = load_dataset(args.dataset)
    test = load_dataset(args.test_dataset) if args.test_dataset else None
    graph = chain_graph(train.sequences[0].num_joints)
    train_p = _prepare(train, graph, modality, center)
    test_p = _prepare(test, graph, modality, center) if test is not None else None

    args.out.mkdir(parents=True, exist_ok=True)
    preprocess = {"modality": modality, "center": center}
    try:
        fw, metrics = fit(train_p, config, graph=graph, test=test_p)
    except TrainingDiverged as diverged:
        save_checkpoint(diverged.params, args.out / "checkpoint.ckpt", graph=graph,
                        config=config, epoch=diverged.epoch, preprocess=preprocess)
        write_metrics_csv(diverged.metrics, args.out / "metrics.csv")
        raise
    save_checkpoint(fw, args.out / "checkpoint.ckpt", graph=graph, config=config,
                    epoch=config.epochs, preprocess=preprocess)
    write_metrics_csv(metrics, args.out / "metrics.csv")
    if test_p is not None:
        report = evaluate(fw, test_p)
        stream_id = f"{modality}-d{config.delta:g}"
        save_predictions(
            StreamPrediction(stream_id=stream_id, scores=report.scores,
                             labels=test_p.labels(),
                             sample_ids=np.arange(len(test_p))),
            args.out / "predictions.csv",
        )
        print(f"test accuracy {report.accuracy:.4f}")
    _write_manifest(args.out, "train", {
        "seed": config.seed, "config": asdict(config), "modality": modality,
        "center": center, "dataset": str(args.dataset),
        "test_dataset": str(args.test_dataset) if args.test_dataset else None,
    })
    final = metrics[-1] if metrics else None
    if final is not None:
        print(f"final epoch {final.epoch}: total loss {final.total:.6f}, "
              f"train accuracy {final.train_acc:.4f}")
    return 0


def _load_for_checkpoint(args):
    fw, graph, meta = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    if dataset.num_classes != fw.num_classes:
        raise ValueError(
            f"dataset has {dataset.num_classes} classes but the checkpoint "
            f"was trained for {fw.num_classes}"
        )
    pre = meta.get("preprocess", {})
    prepared = _prepare(dataset, graph, pre.get("modality", "joint"), pre.get("center", False))
    return fw, prepared, meta


def _cmd_eval(args) -> int:
    fw, prepared, _ = _load_for_checkpoint(args)
    report = evaluate(fw, prepared)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "per_class.csv", "w", encoding="utf-8") as handle:
        handle.write("class,accuracy\n")
        for c, acc in enumerate(report.per_class_accuracy):
            handle.write(f"{c},{repr(float(acc))}\n")
    with open(args.out / "report.json", "w", encoding="utf-8") as handle:
        json.dump({"accuracy": report.accuracy,
                   "per_class_accuracy": [float(a) for a in report.per_class_accuracy]},
                  handle, sort_keys=True, indent=2)
        handle.write("\n")
    _write_manifest(args.out, "eval", {
        "checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
        "seed": args.seed,
    })
    print(f"accuracy={report.accuracy!r}")
    return 0


def _cmd_ensemble(args) -> int:
    predictions = [load_predictions(path) for path in args.predictions]
    fused, top1 = ensemble_average(predictions)
    labels = predictions[0].labels
    accuracy = float((top1 == labels).mean())
    args.out.mkdir(parents=True, exist_ok=True)
    fused_pred = StreamPrediction(
        stream_id="ensemble", scores=fused, labels=labels,
        sample_ids=predictions[0].sample_ids,
    )
    save_predictions(fused_pred, args.out / "fused.csv")
    _write_manifest(args.out, "ensemble", {
        "inputs": [str(p) for p in args.predictions],
        "streams": sorted(p.stream_id for p in predictions),
        "seed": args.seed,
    })
    print(f"fused_accuracy={accuracy!r}")
    return 0


def _cmd_hsic_test(args) -> int:
    with open(args.table, "r", encoding="utf-8") as handle:
        first = handle.readline()
    delimiter = "," if "," in first else None
    table = np.loadtxt(args.table, delimiter=delimiter, ndmin=2)
    if table.shape[1] < 2:
        raise ValueError("table needs at least one feature column plus a label column")
    features, labels = table[:, :-1], table[:, -1]
    seed = 0 if args.seed is None else args.seed
    value, p_value = hsic_permutation_test(
        features, labels, MaternParams(), num_permutations=args.permutations, seed=seed,
    )
    _write_manifest(args.out, "hsic-test", {
        "table": str(args.table), "permutations": args.permutations, "seed": seed,
    })
    with open(args.out / "hsic.json", "w", encoding="utf-8") as handle:
        json.dump({"hsic": value, "p_value": p_value}, handle, sort_keys=True, indent=2)
        handle.write("\n")
    print(f"hsic={value!r}")
    print(f"p_value={p_value!r}")
    return 0


def _cmd_export_embeddings(args) -> int:
    fw, prepared, _ = _load_for_checkpoint(args)
    x, labels = prepared.stack(), prepared.labels()
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "embeddings.csv"
    dim = None
    with open(path, "w", encoding="utf-8") as handle:
        for start in range(0, x.shape[0], 256):
            z_hat = feature_bundle(x[start:start + 256], fw).z_hat
            if dim is None:
                dim = z_hat.shape[1]
                header = ["sample_id", "label"] + [f"z_{i}" for i in range(dim)]
                handle.write(",".join(header) + "\n")
            for offset, row in enumerate(z_hat):
                i = start + offset
                cells = [str(i), str(int(labels[i]))] + [repr(float(v)) for v in row]
                handle.write(",".join(cells) + "\n")
    _write_manifest(args.out, "export-embeddings", {
        "checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
        "seed": args.seed,
    })
    print(f"wrote {path} ({x.shape[0]} rows, {dim + 2} columns)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skelact", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="write a synthetic train/test dataset pair")
    _add_common(p)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--joints", type=int, default=8)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--train-per-class", type=int, default=200)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.1)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a framework on a dataset file")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--test-dataset", type=Path, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ensemble", help="fuse stream prediction CSVs by score averaging")
    _add_common(p)
    p.add_argument("predictions", nargs="+", type=Path)
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("hsic-test", help="HSIC value and permutation p-value of a labelled table")
    _add_common(p)
    p.add_argument("--table", type=Path, required=True,
                   help="numeric table; rows = samples, last column = integer label")
    p.add_argument("--permutations", type=int, default=200)
    p.set_defaults(func=_cmd_hsic_test)

    p = sub.add_parser("export-embeddings", help="CSV of augmented features for external plotting")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.set_defaults(func=_cmd_export_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # deliberate catch-all: single-line CLI contract
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: generate, train, eval, export-curves, gradcheck."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from . import archs, harness
from .checkpoint import CheckpointFormatError
from .config import ConfigError, load_config
from .dataset import DatasetFormatError, generate_dataset, load_dataset, save_dataset, split
from .gradcheck import grad_check
from .nn import BatchNorm2d, Conv2d, Linear
from .tensor import Tensor, relu, reshape, softmax_cross_entropy, tanh


def _cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if cfg.manifest is None:
        raise ConfigError(f"config {args.config} has no [dataset] section")
    manifest = cfg.manifest
    if args.seed is not None:
        manifest = dataclasses.replace(manifest, master_seed=args.seed)
    dataset = generate_dataset(manifest)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} examples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    settings = cfg.train
    if args.seed is not None:
        settings.seed = args.seed
    dataset = load_dataset(args.data)
    train_half, _ = split(
        dataset, dataset_ratio(cfg), np.random.default_rng(dataset.master_seed)
    )
    result = harness.train(settings, train_half)
    archs.save_model(result.model, args.out, dataset.frame_len)
    print(
        f"trained {settings.arch}: final_loss={result.final_train_loss:.4f} "
        f"best_val_acc={result.best_val_accuracy:.4f} -> {args.out}"
    )
    return 0


def dataset_ratio(cfg) -> float:
    return cfg.manifest.split_ratio if cfg.manifest is not None else 0.5


def _cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else None
    dataset = load_dataset(args.data)
    ratio = dataset_ratio(cfg) if cfg else 0.5
    _, test_half = split(dataset, ratio, np.random.default_rng(dataset.master_seed))
    model = archs.load_model(args.model)
    report = harness.evaluate(model, test_half)
    payload = {"arch": model.arch, **report.to_dict()}
    if args.report:
        with open(args.report, "w") as f:
            json.dump(payload, f, indent=2)
    print(f"overall accuracy: {report.overall:.4f}")
    for snr, acc in report.accuracy_by_snr.items():
        print(f"  snr {snr:+.1f} dB: {acc:.4f}")
    return 0


def _cmd_export_curves(args) -> int:
    reports = {}
    for path in args.reports:
        with open(path) as f:
            payload = json.load(f)
        report = harness.EvalReport.from_dict(payload)
        reports[(payload["arch"], report.n_antennas)] = report
    harness.export_curves(reports, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(7)
    conv = Conv2d(2, 3, (1, 3), (1, 2), (0, 1), rng=rng, dtype=np.float64)
    bn = BatchNorm2d(3, dtype=np.float64)
    fc = Linear(3 * 8, 5, rng=rng, dtype=np.float64)
    x = Tensor(rng.standard_normal((4, 2, 1, 16)), requires_grad=True)
    labels = rng.integers(0, 5, 4)

    def fragment():
        h = relu(bn(conv(x, "train"), "train"))
        h = tanh(h)
        flat = h.data.shape[1] * h.data.shape[3]
        logits = fc(reshape(h, (h.data.shape[0], flat)), "train")
        return softmax_cross_entropy(logits, labels)

    leaves = [("input", x)]
    for name, p in list(conv.named_parameters("conv")) + list(
        bn.named_parameters("bn")
    ) + list(fc.named_parameters("fc")):
        leaves.append((name, p.tensor))
    report = grad_check(fragment, leaves, max_entries=20)
    print(report.summary())
    return 0 if report.ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mamc",
        description="Multi-antenna modulation classification toolkit",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a dataset from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", default=None, help="write a JSON report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-curves", help="merge JSON reports into a CSV")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_curves)

    p = sub.add_parser("gradcheck", help="finite-difference check of the layers")
    p.set_defaults(func=_cmd_gradcheck)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s",
    )
    try:
        return args.func(args)
    except (
        ConfigError,
        DatasetFormatError,
        CheckpointFormatError,
        ValueError,
        RuntimeError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

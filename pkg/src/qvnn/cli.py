"""Command-line entry point: ``qvnn train|eval|prune|report|gradcheck``.

Failures print a single line ``error: <kind>: <message>`` to stderr and exit 1;
bad flags print usage and exit 2.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .autograd import gradient_check
from .data import load_dataset
from .errors import ContractError, QVNNError
from .presets import PRESETS, preset
from .regularizers import CLI_KINDS, RegConfig, prune_gamma, sparsity_report
from .serialization import load_model, save_model
from .train import TrainConfig, evaluate, train

VALIDATION_SIZE = 5000


def _build_parser():
    p = argparse.ArgumentParser(prog="qvnn", description="Quaternion networks with sparsity regularization.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a preset network")
    t.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
    t.add_argument("--data-dir", required=True)
    t.add_argument("--preset", choices=PRESETS, default="mnist-qcnn")
    t.add_argument("--subset", type=int, default=None, help="train on the first N non-validation samples")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--reg", choices=tuple(CLI_KINDS), default="none")
    t.add_argument("--lambda", dest="lam", type=float, default=0.0)
    t.add_argument("--threshold", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dropout", type=float, default=0.2)
    t.add_argument("--eval-split", choices=("test", "val"), default="test",
                   help="data scored in the test_acc column (val = last 5000 training samples)")
    t.add_argument("--timing", choices=("wall", "off"), default="wall",
                   help="'off' writes 0 in wall_seconds so repeated runs give identical CSVs")
    t.add_argument("--out", default=None, help="model file to write")
    t.add_argument("--metrics-csv", default=None)

    e = sub.add_parser("eval", help="test accuracy of a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
    e.add_argument("--data-dir", required=True)
    e.add_argument("--split", choices=("test", "val"), default="test")

    pr = sub.add_parser("prune", help="remove channels whose BN scale is below the threshold")
    pr.add_argument("--model", required=True)
    pr.add_argument("--threshold", type=float, default=1e-3)
    pr.add_argument("--out", required=True)

    r = sub.add_parser("report", help="print the sparsity report of a saved model")
    r.add_argument("--model", required=True)
    r.add_argument("--threshold", type=float, default=1e-3)

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.add_argument("--preset", choices=PRESETS, default="mnist-qcnn")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--batch", type=int, default=4)
    return p


def _splits(dataset, data_dir, subset=None):
    full = load_dataset(dataset, data_dir, "train")
    train_set, val_set = full.split(VALIDATION_SIZE)
    if subset is not None:
        if subset < 1:
            raise ContractError("--subset must be positive")
        train_set = train_set.subset(np.arange(min(subset, len(train_set))))
    return train_set, val_set


def _cmd_train(args):
    train_set, val_set = _splits(args.dataset, args.data_dir, args.subset)
    score_set = val_set if args.eval_split == "val" else load_dataset(args.dataset, args.data_dir, "test")
    model = preset(args.preset, seed=args.seed, dropout=args.dropout)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        reg=RegConfig(CLI_KINDS[args.reg], args.lam, args.threshold),
        seed=args.seed, dropout=args.dropout,
    )
    model, metrics = train(model, train_set, config, score_set, args.metrics_csv, record_time=args.timing == "wall")
    last = metrics[-1]
    print(f"epochs={len(metrics)} train_loss={last['train_loss']:.6f} {args.eval_split}_acc={last['test_acc']:.4f} "
          f"quaternion_sparsity={last['quaternion_sparsity']:.4f} neuron_sparsity={last['neuron_sparsity']:.4f}")
    if args.out:
        save_model(model, args.out)
    return 0


def _cmd_eval(args):
    model = load_model(args.model)
    if args.split == "val":
        data = _splits(args.dataset, args.data_dir)[1]
    else:
        data = load_dataset(args.dataset, args.data_dir, "test")
    print(f"accuracy={evaluate(model, data):.4f} samples={len(data)}")
    return 0


def _cmd_prune(args):
    model = load_model(args.model)
    before = sparsity_report(model, args.threshold)
    pruned = prune_gamma(model, args.threshold)
    after = sparsity_report(pruned, args.threshold)
    print(f"before: {before}")
    print(f"after:  {after}")
    ratio = after.live_macs / before.total_macs if before.total_macs else 0.0
    print(f"macs: {before.total_macs} -> {after.total_macs} ({ratio:.1%} of original)")
    save_model(pruned, args.out)
    return 0


def _cmd_report(args):
    print(sparsity_report(load_model(args.model), args.threshold))
    return 0


def _cmd_gradcheck(args):
    model = preset(args.preset, seed=args.seed)
    model.set_dropout(False)
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(size=(4, args.batch) + tuple(model.input_shape))
    labels = rng.integers(0, model.num_classes, args.batch)
    rep = gradient_check(model, x, labels)
    print(f"max_rel_error={rep.max_rel_error:.3e} checked={rep.checked} excluded={rep.excluded} worst={rep.worst}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "prune": _cmd_prune,
    "report": _cmd_report,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _COMMANDS[args.command](args)
    except QVNNError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())

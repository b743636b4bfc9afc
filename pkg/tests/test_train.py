import csv

import numpy as np
import pytest

from qvnn import (
    AbsHead,
    Dataset,
    Model,
    QBatchNorm,
    QConv2d,
    QDense,
    QDropout,
    QMaxPool,
    RegConfig,
    SplitActivation,
    TrainConfig,
    evaluate,
    sparsity_report,
    train,
)
from qvnn.errors import ContractError, DataError
from qvnn.train import CSV_COLUMNS


def tiny(seed=0, bn=False):
    rng = np.random.default_rng(seed)
    layers = [QConv2d(1, 4, 3, rng=rng, bias=not bn)]
    if bn:
        layers.append(QBatchNorm(4))
    layers += [SplitActivation(), QMaxPool(2), QDropout(0.0), QDense(4 * 3 * 3, 3, rng=rng), AbsHead()]
    return Model(layers, (1, 8, 8), 3, name="tiny")


def toy_data(n=100, seed=0):
    """Three classes distinguished by which band of rows is bright."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, n)
    px = rng.integers(0, 60, size=(n, 1, 8, 8)).astype(np.uint8)
    for c in range(3):
        px[labels == c, :, 2 * c:2 * c + 3, :] += 180
    return Dataset(px, labels, 3)


def test_overfits_small_set():
    data = toy_data(100)
    model, metrics = train(tiny(), data, TrainConfig(epochs=15, lr=1e-2, dropout=0.0))
    assert evaluate(model, data) >= 0.95
    assert metrics[-1]["train_loss"] < metrics[0]["train_loss"]


def test_same_seed_is_bit_identical():
    data = toy_data(40)
    cfg = TrainConfig(epochs=2, reg=RegConfig("r_ql", 1e-3), seed=5, dropout=0.2)
    a, ma = train(tiny(1), data, cfg, record_time=False)
    b, mb = train(tiny(1), data, cfg, record_time=False)
    for (k, x), (_, y) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(x, y, err_msg=k)
    strip = lambda ms: [{k: v for k, v in m.items() if k != "test_acc"} for m in ms]  # noqa: E731
    assert strip(ma) == strip(mb)


def test_zero_lambda_matches_no_regularizer():
    data = toy_data(30)
    a, _ = train(tiny(2), data, TrainConfig(epochs=1, reg=RegConfig("r_q", 0.0)), record_time=False)
    b, _ = train(tiny(2), data, TrainConfig(epochs=1, reg=RegConfig("none", 0.0)), record_time=False)
    for (_, x), (_, y) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(x, y)


def test_huge_lambda_drives_sparsity_up():
    data = toy_data(60)
    cfg = TrainConfig(epochs=8, batch_size=4, lr=3e-3, reg=RegConfig("r_ql", 1.0, 1e-2))
    model, _ = train(tiny(3), data, cfg)
    assert sparsity_report(model, 1e-2).quaternion_sparsity >= 0.9


# R_Q averages over every quaternion weight, so it needs a proportionally larger lambda
@pytest.mark.parametrize("kind,grid", [("l1_elem", (0.0, 1e-2, 1.0)), ("r_q", (0.0, 10.0, 100.0)),
                                       ("r_ql", (0.0, 1e-2, 1.0))])
def test_sparsity_grows_with_lambda(kind, grid):
    data = toy_data(60)
    sp = []
    for lam in grid:
        cfg = TrainConfig(epochs=8, batch_size=4, lr=3e-3, reg=RegConfig(kind, lam, 1e-2), seed=1)
        model, _ = train(tiny(4), data, cfg)
        sp.append(sparsity_report(model, 1e-2).quaternion_sparsity)
    assert sp[0] <= sp[1] <= sp[2] and sp[2] > sp[0]


def test_bn_gamma_regularizer_kills_neurons():
    data = toy_data(60)
    cfg = TrainConfig(epochs=10, batch_size=4, lr=3e-2, reg=RegConfig("bn_gamma_l1", 5.0, 1e-2))
    model, _ = train(tiny(5, bn=True), data, cfg)
    assert sparsity_report(model, 1e-2).neuron_sparsity >= 0.5


def test_objective_reported_and_decreasing():
    data = toy_data(60)
    _, metrics = train(tiny(6), data, TrainConfig(epochs=5, lr=5e-3, reg=RegConfig("r_ql", 1e-2)))
    objs = [m["objective"] for m in metrics]
    assert objs[-1] < objs[0]
    assert all(m["objective"] >= m["train_loss"] for m in metrics)


def test_csv_written_and_flushed(tmp_path):
    data = toy_data(20)
    path = tmp_path / "m.csv"
    rows_seen = []

    def peek(_):
        rows_seen.append(sum(1 for line in path.read_text().splitlines() if line and line[0].isdigit()))

    train(tiny(), data, TrainConfig(epochs=3), test_set=data, metrics_csv=path, on_epoch=peek)
    assert rows_seen == [1, 2, 3]
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and "reg=none" in lines[0]
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert all(0 <= float(r["test_acc"]) <= 1 for r in rows)


def test_bad_labels_and_empty():
    px = np.zeros((2, 1, 8, 8), np.uint8)
    with pytest.raises(DataError):
        train(tiny(), Dataset(px, [0, 5], 6), TrainConfig(epochs=1))
    with pytest.raises(DataError):
        train(tiny(), Dataset(px[:0], [], 3), TrainConfig(epochs=1))


def test_config_validation():
    for kw in ({"epochs": 0}, {"batch_size": 0}, {"lr": -1.0}):
        with pytest.raises(ContractError):
            TrainConfig(**kw)
    with pytest.raises(ContractError):
        RegConfig("l7")


def test_evaluate_is_order_and_batch_invariant():
    data = toy_data(50)
    model = tiny(7)
    perm = np.random.default_rng(0).permutation(50)
    acc = evaluate(model, data, batch_size=7)
    assert acc == evaluate(model, data.subset(perm), batch_size=50)
    assert acc == evaluate(model, data, batch_size=1)

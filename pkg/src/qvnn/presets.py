"""Named network architectures."""
import numpy as np

from .errors import ContractError
from .layers import AbsHead, QBatchNorm, QConv2d, QDense, QDropout, QMaxPool, SplitActivation
from .model import Model

PRESETS = ("mnist-qcnn", "mnist-qcnn-bn", "cifar-qcnn-lite", "cifar-qcnn-paper")

# Grid values picked on the MNIST validation split (5 epochs, 5000-sample subset,
# seed 0): the largest sparsity within 2 points of the unregularized accuracy.
# These are measurements, not defaults. R_Q and BN-gamma sparsify nothing anywhere
# on the grid, so the rule falls back to its smallest value.
TUNED_LAMBDA = {
    "mnist-qcnn": {"l1_elem": 1e-3, "r_q": 1e-5, "r_ql": 1e-3},
    "mnist-qcnn-bn": {"bn_gamma_l1": 1e-5},
}


def _mnist(rng, bn, dropout):
    # a bias in front of batch norm is cancelled by the mean subtraction, so it is not trained
    layers = [QConv2d(1, 16, 3, rng=rng, bias=not bn)]
    if bn:
        layers.append(QBatchNorm(16))
    layers += [SplitActivation("relu"), QMaxPool(2), QConv2d(16, 32, 3, rng=rng, bias=not bn)]
    if bn:
        layers.append(QBatchNorm(32))
    # 28 -> 26 -> 13 -> 11 -> 5
    layers += [SplitActivation("relu"), QMaxPool(2), QDropout(dropout), QDense(32 * 5 * 5, 10, rng=rng), AbsHead()]
    return Model(layers, (1, 28, 28), 10)


def _cifar(rng, widths, dropout, bn=False):
    layers = []
    c_in, side = 1, 32
    for n, width in enumerate(widths, start=1):
        layers.append(QConv2d(c_in, width, 3, padding=1, rng=rng, bias=not bn))
        if bn:
            layers.append(QBatchNorm(width))
        layers.append(SplitActivation("relu"))
        if n <= 4:
            layers.append(QMaxPool(2))
            side //= 2
        if n % 2 == 0:
            layers.append(QDropout(dropout))
        c_in = width
    layers += [QDense(c_in * side * side, 10, rng=rng), AbsHead()]
    return Model(layers, (1, 32, 32), 10)


def preset(name, seed=0, dropout=0.2, bn=None) -> Model:
    """Build a preset network with weights drawn from ``seed``.

    ``bn=True`` adds batch norm after every convolution of the CIFAR presets.
    """
    rng = np.random.default_rng(seed)
    if name == "mnist-qcnn":
        model = _mnist(rng, bool(bn), dropout)
    elif name == "mnist-qcnn-bn":
        model = _mnist(rng, True, dropout)
    elif name == "cifar-qcnn-lite":
        model = _cifar(rng, (8, 16, 32, 64, 128), dropout, bool(bn))
    elif name == "cifar-qcnn-paper":
        model = _cifar(rng, (32, 64, 128, 256, 512), dropout, bool(bn))
    else:
        raise ContractError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    model.name = name
    return model

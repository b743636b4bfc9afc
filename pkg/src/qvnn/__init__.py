"""Quaternion-valued neural networks with targeted sparsity regularization."""
from .autograd import GradientSet, backward, finite_diff_check, gradient_check, loss_and_grads
from .data import Dataset, encode_gray, encode_rgb, load_cifar10, load_mnist
from .kernels import BACKEND
from .layers import (
    AbsHead,
    QBatchNorm,
    QConv2d,
    QDense,
    QDropout,
    QMaxPool,
    SplitActivation,
    abs_head,
    qbn_forward,
    qconv2d_forward,
    qdense_forward,
    qdropout_forward,
    quat_maxpool,
    softmax_xent,
    split_activation,
)
from .model import Model
from .optim import AdamState, adam_step
from .presets import PRESETS, preset
from .quaternion import QTensor, Quaternion, conjugate, hamilton_mul, qmatvec, qnorm, real_expand
from .regularizers import (
    RegConfig,
    SparsityReport,
    mask_gamma,
    prune_gamma,
    reg_bn_gamma,
    reg_l1_elem,
    reg_l2_elem,
    reg_rq,
    reg_rql,
    regularizer,
    sparsity_report,
)
from .serialization import load_model, save_model
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"

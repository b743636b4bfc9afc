"""Weight and BN-scale penalties, sparsity metrics and BN-scale channel pruning."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autograd import GradientSet
from .errors import ContractError
from .layers import QBatchNorm, QConv2d, QDense, QDropout, QMaxPool, SplitActivation

KINDS = ("none", "l2_elem", "l1_elem", "r_q", "r_ql", "bn_gamma_l1", "r_q+bn_gamma_l1")

# command-line spellings
CLI_KINDS = {
    "none": "none",
    "l2": "l2_elem",
    "l1": "l1_elem",
    "rq": "r_q",
    "rql": "r_ql",
    "bn-l1": "bn_gamma_l1",
    "rq+bn-l1": "r_q+bn_gamma_l1",
}

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class RegConfig:
    kind: str = "none"
    lam: float = 0.0
    threshold: float = 1e-3

    def __post_init__(self):
        kind = CLI_KINDS.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ContractError(f"unknown regularizer {self.kind!r}; known: {', '.join(CLI_KINDS)}")
        object.__setattr__(self, "kind", kind)
        if self.lam < 0:
            raise ContractError(f"lambda must be non-negative, got {self.lam}")
        if self.threshold <= 0:
            raise ContractError(f"threshold must be positive, got {self.threshold}")


# penalties on lists of plane arrays --------------------------------------

def reg_l1_elem(weights):
    """Sum of absolute values of every component; subgradient ``sign`` (0 at 0)."""
    penalty = float(sum(np.abs(w).sum() for w in weights))
    return penalty, [np.sign(w) for w in weights]


def reg_l2_elem(weights):
    """Half the sum of squared components; gradient is the weight itself."""
    penalty = 0.5 * float(sum((w * w).sum() for w in weights))
    return penalty, [np.array(w, dtype=np.float64, copy=True) for w in weights]


def reg_rq(weights, Q=None):
    """Mean quaternion norm ``(1/Q) sum_w |w|`` with group-lasso subgradient.

    ``Q`` defaults to the number of quaternion weights in ``weights``.
    """
    if Q is None:
        Q = sum(w[0].size for w in weights)
    if Q <= 0:
        raise ContractError("R_Q needs a positive quaternion weight count Q")
    penalty = 0.0
    grads = []
    for w in weights:
        norm = np.sqrt((w * w).sum(axis=0))
        penalty += float(norm.sum())
        live = norm > NORM_FLOOR
        g = np.where(live, w / (Q * np.where(live, norm, 1.0)), 0.0)
        grads.append(g)
    return penalty / Q, grads


def reg_rql(weights, Q=None):
    """R_Q plus elementwise l1, unweighted sum (the trainer applies one shared lambda)."""
    p1, g1 = reg_rq(weights, Q)
    p2, g2 = reg_l1_elem(weights)
    return p1 + p2, [a + b for a, b in zip(g1, g2)]


def reg_bn_gamma(gammas):
    """Mean absolute BN scale over all channels of the network."""
    n = sum(g.size for g in gammas)
    if n == 0:
        raise ContractError("BN-scale regularizer requested but the model has no batch-norm layers")
    penalty = float(sum(np.abs(g).sum() for g in gammas)) / n
    return penalty, [np.sign(g) / n for g in gammas]


def regularizer(model, kind):
    """Unweighted penalty ``r(theta)`` of ``model`` and its subgradient as a :class:`GradientSet`."""
    kind = CLI_KINDS.get(kind, kind)
    grads = GradientSet()
    if kind == "none":
        return 0.0, grads
    wkeys = [(f"{i}.W", l.W) for i, l in enumerate(model.layers) if isinstance(l, (QDense, QConv2d))]
    gkeys = [(f"{i}.gamma", l.gamma) for i, l in enumerate(model.layers) if isinstance(l, QBatchNorm)]
    weights = [w for _, w in wkeys]
    penalty = 0.0
    parts = []
    if kind == "l1_elem":
        parts.append((wkeys, reg_l1_elem(weights)))
    elif kind == "l2_elem":
        parts.append((wkeys, reg_l2_elem(weights)))
    elif kind in ("r_q", "r_q+bn_gamma_l1"):
        parts.append((wkeys, reg_rq(weights)))
    elif kind == "r_ql":
        parts.append((wkeys, reg_rql(weights)))
    if kind in ("bn_gamma_l1", "r_q+bn_gamma_l1"):
        parts.append((gkeys, reg_bn_gamma([g for _, g in gkeys])))
    if not parts:
        raise ContractError(f"unknown regularizer {kind!r}")
    for keys, (p, gs) in parts:
        penalty += p
        for (k, _), g in zip(keys, gs):
            grads[k] = grads[k] + g if k in grads else g
    return penalty, grads


# sparsity -------------------------------------------------------------------

@dataclass
class SparsityReport:
    component_sparsity: float
    quaternion_sparsity: float
    neuron_sparsity: float
    live_params: int
    live_macs: int
    total_params: int = 0
    total_macs: int = 0
    threshold: float = 1e-3

    def as_dict(self):
        return asdict(self)

    @classmethod
    def csv_header(cls):
        return ",".join(f.name for f in fields(cls))

    def csv_row(self):
        return ",".join(
            f"{v:.6f}" if isinstance(v, float) else str(v) for v in asdict(self).values()
        )

    def __str__(self):
        return (
            f"component_sparsity={self.component_sparsity:.4f} quaternion_sparsity={self.quaternion_sparsity:.4f} "
            f"neuron_sparsity={self.neuron_sparsity:.4f} live_params={self.live_params}/{self.total_params} "
            f"live_macs={self.live_macs}/{self.total_macs}"
        )


def _layer_shapes(model):
    """Input and output activation shapes (per sample) of every layer."""
    x = np.zeros((4, 1, *model.input_shape))
    shapes = []
    for layer in model.layers:
        out, _ = layer.forward(x, training=False)
        shapes.append((x.shape[2:], out.shape[2:]))
        x = out
    return shapes


def _out_channel_masks(model, tau):
    """For each weight layer, a bool mask of output channels whose BN scale is at least ``tau``."""
    masks = {}
    pending = None
    for idx, layer in enumerate(model.layers):
        if isinstance(layer, (QDense, QConv2d)):
            pending = idx
            masks[idx] = np.ones(layer.W.shape[1], dtype=bool)
        elif isinstance(layer, QBatchNorm) and pending is not None:
            masks[pending] = masks[pending] & (np.abs(layer.gamma) >= tau)
            pending = None
    return masks


def sparsity_report(model, tau=1e-3) -> SparsityReport:
    if tau <= 0:
        raise ContractError("sparsity threshold must be positive")
    comp_zero = comp_total = quat_zero = quat_total = 0
    for layer in model.weight_layers():
        z = np.abs(layer.W) < tau
        comp_zero += int(z.sum())
        comp_total += z.size
        quat_zero += int(z.all(axis=0).sum())
        quat_total += z[0].size
    gammas = [bn.gamma for bn in model.batchnorms()]
    n_gamma = sum(g.size for g in gammas)
    neuron = float(sum((np.abs(g) < tau).sum() for g in gammas)) / n_gamma if n_gamma else 0.0

    shapes = _layer_shapes(model)
    out_masks = _out_channel_masks(model, tau)
    live_params = total_params = live_macs = total_macs = 0
    in_mask = None  # live input channels of the next weight layer
    for idx, layer in enumerate(model.layers):
        if not isinstance(layer, (QDense, QConv2d)):
            continue
        in_shape, out_shape = shapes[idx]
        out_mask = out_masks[idx]
        if isinstance(layer, QConv2d):
            spatial_out = int(np.prod(out_shape[1:]))
            kk = layer.W.shape[3] * layer.W.shape[4]
            im = np.ones(layer.in_channels, dtype=bool) if in_mask is None else in_mask
            conn = out_mask[:, None] & im[None, :]
            nz = ~(np.abs(layer.W) < tau).all(axis=0)  # (O, C, kh, kw)
            live_params += int((nz & conn[:, :, None, None]).sum()) + layer.use_bias * int(out_mask.sum())
            live_macs += int(conn.sum()) * kk * spatial_out
            total_macs += layer.W[0].size * spatial_out
        else:
            if in_mask is None:
                im = np.ones(layer.in_features, dtype=bool)
            else:
                # expand channel mask over flattened spatial positions
                im = np.repeat(in_mask, layer.in_features // in_mask.size)
            conn = out_mask[:, None] & im[None, :]
            nz = ~(np.abs(layer.W) < tau).all(axis=0)
            live_params += int((nz & conn).sum()) + layer.use_bias * int(out_mask.sum())
            live_macs += int(conn.sum())
            total_macs += layer.W[0].size
        total_params += layer.W[0].size + layer.use_bias * layer.b[0].size
        in_mask = out_mask
    return SparsityReport(
        component_sparsity=comp_zero / comp_total if comp_total else 0.0,
        quaternion_sparsity=quat_zero / quat_total if quat_total else 0.0,
        neuron_sparsity=neuron,
        live_params=live_params,
        live_macs=live_macs,
        total_params=total_params,
        total_macs=total_macs,
        threshold=tau,
    )


# pruning --------------------------------------------------------------------

def mask_gamma(model, tau=1e-3):
    """Copy of ``model`` with every sub-threshold BN scale set to exactly zero."""
    out = model.copy()
    for bn in out.batchnorms():
        bn.gamma[np.abs(bn.gamma) < tau] = 0.0
    return out


def _constant_through(layers, beta):
    """Push a per-channel constant quaternion map through elementwise/pooling layers."""
    c = beta
    for layer in layers:
        if isinstance(layer, SplitActivation):
            c = layer.forward(c)[0]
        elif isinstance(layer, (QMaxPool, QDropout)):
            continue  # constant maps pass unchanged (pooling picks an equal element; dropout is identity at inference)
        else:
            raise ContractError(f"cannot fold a constant channel through {layer!r}")
    return c


def prune_gamma(model, tau=1e-3):
    """Physically remove channels whose BN scale is below ``tau``.

    The removed channel's constant output ``split_activation(beta)`` is folded
    into the bias of the next weight layer, so a channel with ``gamma == 0``
    is removed without changing the network function.
    """
    if tau <= 0:
        raise ContractError("pruning threshold must be positive")
    if not model.batchnorms():
        raise ContractError("prune_gamma needs a model with batch-norm layers")
    pruned = model.copy()
    layers = pruned.layers
    for bi, bn in enumerate(layers):
        if not isinstance(bn, QBatchNorm):
            continue
        drop = np.abs(bn.gamma) < tau
        if not drop.any():
            continue
        if drop.all():
            raise ContractError(f"pruning would remove every channel of batch-norm layer {bi}")
        keep = ~drop
        prev = next((i for i in range(bi - 1, -1, -1) if isinstance(layers[i], (QDense, QConv2d))), None)
        nxt = next((i for i in range(bi + 1, len(layers)) if isinstance(layers[i], (QDense, QConv2d))), None)
        if prev is None or nxt is None:
            raise ContractError(f"batch-norm layer {bi} must sit between two weight layers to be pruned")
        const = _constant_through(layers[bi + 1:nxt], bn.beta[:, drop])  # (4, R)
        p = layers[prev]
        p.W = np.ascontiguousarray(p.W[:, keep])
        p.b = np.ascontiguousarray(p.b[:, keep])
        bn.gamma = bn.gamma[keep].copy()
        bn.beta = np.ascontiguousarray(bn.beta[:, keep])
        bn.running_mean = np.ascontiguousarray(bn.running_mean[:, keep])
        bn.running_var = bn.running_var[keep].copy()
        n = layers[nxt]
        if isinstance(n, QConv2d):
            if n.padding:
                warnings.warn(
                    "folding into a zero-padded convolution is exact only away from the borders",
                    stacklevel=2,
                )
            Wd = n.W[:, :, drop].sum(axis=(3, 4))  # (4, O, R)
            n.b = n.b + _hamilton_sum(Wd, const)
            n.W = np.ascontiguousarray(n.W[:, :, keep])
        else:
            C = drop.size
            spatial = n.in_features // C
            Wr = n.W.reshape(4, n.out_features, C, spatial)
            Wd = Wr[:, :, drop].sum(axis=3)  # (4, O, R)
            n.b = n.b + _hamilton_sum(Wd, const)
            n.W = np.ascontiguousarray(Wr[:, :, keep].reshape(4, n.out_features, -1))
    return pruned


def _hamilton_sum(Wd, const):
    """``sum_r Wd[:, o, r] ⊗ const[:, r]`` for every output ``o``."""
    from .quaternion import hamilton_mul

    return hamilton_mul(Wd, const[:, None, :]).sum(axis=2)

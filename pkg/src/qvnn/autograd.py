"""Reverse-mode gradients over a recorded tape, and a finite-difference checker.

Gradients are the ordinary partial derivatives of the scalar loss with respect
to each real component of every parameter.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, StateError


@dataclass
class TapeNode:
    layer: object
    cache: object


@dataclass
class Tape:
    nodes: list
    consumed: bool = False


class GradientSet(dict):
    """Maps parameter keys (``"<layer index>.<name>"``) to gradient arrays."""

    def add_(self, other: "GradientSet", scale=1.0):
        for k, v in other.items():
            if k in self:
                self[k] = self[k] + scale * v
            else:
                self[k] = scale * np.asarray(v)
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.values())


def backward(model, loss_grad):
    """Backpropagate ``loss_grad`` (gradient w.r.t. the model's output) through the last tape."""
    tape = model.tape
    if tape is None:
        raise StateError("backward called before a training-mode forward pass")
    if tape.consumed:
        raise StateError("tape already consumed; run a new training-mode forward pass")
    tape.consumed = True
    grads = GradientSet()
    g = np.asarray(loss_grad, dtype=np.float64)
    index = {id(l): i for i, l in enumerate(model.layers)}
    for node in reversed(tape.nodes):
        g, layer_grads = node.layer.backward(g, node.cache)
        idx = index[id(node.layer)]
        for name, v in layer_grads.items():
            grads[f"{idx}.{name}"] = v
    return grads


def loss_and_grads(model, x, labels, rng=None):
    """Training-mode forward, mean cross-entropy and its parameter gradients."""
    from .layers import softmax_xent

    scores = model.forward(x, training=True, rng=rng)
    loss, dscores = softmax_xent(scores, labels, return_grad=True)
    return loss, backward(model, dscores)


# finite differences ----------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    excluded: int
    worst: str = ""
    per_param: dict = field(default_factory=dict)


def _signature(layers, caches, groups=1):
    """Discrete state of the piecewise-smooth parts: relu signs, pooling argmax, zero head norms.

    With ``groups > 1`` the batch axis holds ``groups`` stacked copies and each
    entry is split so its leading axis indexes the copy.
    """
    from .layers import AbsHead, QMaxPool, SplitActivation

    sig = []
    for layer, cache in zip(layers, caches):
        if isinstance(layer, SplitActivation):
            a = cache > 0.0
            sig.append(np.moveaxis(a.reshape(4, groups, -1), 1, 0))
        elif isinstance(layer, QMaxPool):
            sig.append(cache[0].reshape(groups, -1))
        elif isinstance(layer, AbsHead):
            sig.append((cache[1] == 0.0).reshape(groups, -1))
    return sig


def _agree(sig, ref, groups):
    """Per copy, whether every discrete choice matches the reference signature."""
    ok = np.ones(groups, dtype=bool)
    for a, b in zip(sig, ref):
        ok &= (a == b).reshape(a.shape[0], -1).all(axis=1)
    return ok


def _bn_grouped(x, gamma, beta, eps, groups):
    """Training-mode batch norm with separate statistics for each stacked copy."""
    B = x.shape[1] // groups
    C = gamma.shape[0]
    xg = x.reshape(4, groups, B, C, -1)
    count = B * xg.shape[-1]
    mu = xg.sum(axis=4).sum(axis=2) / count  # (4, G, C)
    xc = xg - mu[:, :, None, :, None]
    var = np.einsum("agbcs,agbcs->gc", xc, xc) / count
    xc *= (gamma / np.sqrt(var + eps))[None, :, None, :, None]
    xc += beta[:, None, None, :, None]
    return xc.reshape(x.shape), None


_CHANNEL_LOCAL = ("QBatchNorm", "SplitActivation", "QMaxPool", "QDropout")


def _channel_route(layers, idx):
    """Index of the next dense/conv layer after ``idx`` if every layer between acts channel by channel."""
    for j in range(idx + 1, len(layers)):
        kind = type(layers[j]).__name__
        if kind in ("QDense", "QConv2d"):
            return j
        if kind not in _CHANNEL_LOCAL:
            return None
    return None


def _through_channel(layers, caches, start, stop, x, o, groups):
    """Run channel ``o`` alone through channel-local layers; returns output and per-copy agreement."""
    from .layers import QBatchNorm, QMaxPool, SplitActivation

    ok = np.ones(groups, dtype=bool)
    for k in range(start, stop):
        layer = layers[k]
        if isinstance(layer, QBatchNorm):
            x, _ = _bn_grouped(x, layer.gamma[o:o + 1], layer.beta[:, o:o + 1], layer.eps, groups)
            continue
        out, cache = layer.forward(x, training=True)
        if isinstance(layer, SplitActivation):
            ref = caches[k][:, :, o:o + 1] > 0.0
            ok &= ((x > 0.0).reshape(4, groups, -1) == ref.reshape(4, 1, -1)).all(axis=(0, 2))
        elif isinstance(layer, QMaxPool):
            ref = caches[k][0][:, o:o + 1]
            ok &= (cache[0].reshape(groups, -1) == ref.reshape(1, -1)).all(axis=1)
        x = out
    return x, ok


def _affine_change(layer, o, d):
    """Output change of ``layer`` when input channel ``o`` changes by ``d`` (shape (4, N, 1, ...))."""
    from .layers import QConv2d
    from .quaternion import qmatmul

    if isinstance(layer, QConv2d):
        sub = QConv2d(1, layer.out_channels, layer.W.shape[3:], layer.stride, layer.padding,
                      W=layer.W[:, :, o:o + 1], bias=False)
        return sub.forward(d)[0]
    span = d[0, 0].size
    Wsub = np.ascontiguousarray(layer.W[:, :, o * span:(o + 1) * span])
    N = d.shape[1]
    return qmatmul(Wsub, np.ascontiguousarray(d.reshape(4, N, span).transpose(0, 2, 1))).transpose(0, 2, 1)


def _group_losses(scores, labels, groups):
    from .layers import _log_softmax

    logp = _log_softmax(scores).reshape(groups, len(labels), -1)
    return -logp[:, np.arange(len(labels)), labels].mean(axis=1)


def _linear_delta(layer, name, n, cache, out_shape):
    """Exact change of a Hamilton-product layer's output per unit change of one parameter component.

    The layer is affine in each parameter, so ``out(theta + t e_n) = out + t * delta``.
    Only output channel ``o`` changes; returns ``(o, delta restricted to that channel)``.
    """
    from .layers import QConv2d
    from .quaternion import hamilton_mul

    arr = layer.params()[name]
    idx = np.unravel_index(n, arr.shape)
    c, o = idx[0], idx[1]
    rest = (out_shape[0], out_shape[1]) + tuple(out_shape[3:])
    if name == "b":
        delta = np.zeros(rest)
        delta[c] = 1.0
        return o, delta
    basis = np.zeros((4, 1))
    basis[c] = 1.0
    if isinstance(layer, QConv2d):
        _, kh, kw = arr.shape[2:]
        row = (idx[2] * kh + idx[3]) * kw + idx[4]
        return o, hamilton_mul(basis, cache[0][:, row, :]).reshape(rest)
    return o, hamilton_mul(basis, cache[0][:, idx[2], :])


def gradient_check(model, x, labels, epsilon=1e-5, params=None, max_components=None, rng=None,
                   incremental=True, chunk_floats=4_000_000):
    """Central-difference check of :func:`backward` on every parameter component.

    Components whose perturbation flips a relu sign, a pooling choice or a
    zero head norm are non-differentiable there and are excluded.  BN running
    statistics are left untouched by the check.

    With ``incremental`` the perturbed output of a dense/convolution layer is
    formed from its cached output plus the exact affine change, and the
    downstream layers are run once for a whole chunk of perturbations stacked
    along the batch axis (batch norm keeps per-copy statistics).  Otherwise
    every evaluation re-runs the network from the perturbed layer.
    """
    from .layers import QBatchNorm, QConv2d, QDense

    if any(d.active for d in model.dropouts()):
        raise ContractError("gradient check needs a deterministic model: disable dropout (model.set_dropout(False))")
    x = x.planes if hasattr(x, "planes") else np.asarray(x, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(labels))
    bns = model.batchnorms()
    saved = [(bn.running_mean.copy(), bn.running_var.copy(), bn.track_running_stats) for bn in bns]
    for bn in bns:
        bn.track_running_stats = False
    try:
        loss, analytic = loss_and_grads(model, x, labels)
        # inputs to every layer from the unperturbed pass
        acts, caches = [], []
        out = x
        for layer in model.layers:
            acts.append(out)
            out, cache = layer.forward(out, training=True)
            caches.append(cache)
        acts.append(out)
        ref_from = [_signature(model.layers[k:], caches[k:]) for k in range(len(model.layers) + 1)]

        def loss_from(start, inp, groups=1):
            out = inp
            cs = []
            for layer in model.layers[start:]:
                if groups > 1 and isinstance(layer, QBatchNorm):
                    out, cache = _bn_grouped(out, layer.gamma, layer.beta, layer.eps, groups)
                else:
                    out, cache = layer.forward(out, training=True)
                cs.append(cache)
            losses = _group_losses(out, labels, groups)
            return losses, _agree(_signature(model.layers[start:], cs, groups), ref_from[start], groups)

        def routed(idx, j, o, deltas):
            # deltas (G, 4, B, ...) all on output channel o of layer idx
            G = deltas.shape[0]
            sl = acts[idx + 1][:, :, o:o + 1]
            d = np.concatenate([deltas, -deltas]) * epsilon
            x = (sl[None] + d[:, :, :, None]).transpose(1, 0, 2, 3, *range(4, d.ndim + 1))
            x = x.reshape((4, -1) + sl.shape[2:])
            y, ok = _through_channel(model.layers, caches, idx + 1, j, x, o, 2 * G)
            ref = acts[j][:, :, o:o + 1]
            change = y - np.tile(ref, (1, 2 * G) + (1,) * (ref.ndim - 2))
            nxt = acts[j + 1]
            out = np.tile(nxt, (1, 2 * G) + (1,) * (nxt.ndim - 2)) + _affine_change(model.layers[j], o, change)
            losses, ok2 = loss_from(j + 1, out, 2 * G)
            return losses, ok & ok2

        report = GradCheckReport(0.0, 0, 0)
        pick = rng if rng is not None else np.random.default_rng(0)
        for idx, layer in enumerate(model.layers):
            affine = incremental and isinstance(layer, (QDense, QConv2d))
            base = acts[idx + 1]
            per_copy = max(1, base.size)
            route = _channel_route(model.layers, idx) if affine else None
            if route is not None:
                per_copy //= base.shape[2]
            chunk = max(1, chunk_floats // (2 * per_copy)) if affine else 1
            for name, arr in layer.params().items():
                key = f"{idx}.{name}"
                if params is not None and key not in params:
                    continue
                flat = arr.reshape(-1)
                agrad = analytic[key].reshape(-1)
                comps = np.arange(flat.size)
                if max_components is not None and flat.size > max_components:
                    comps = np.sort(pick.choice(flat.size, max_components, replace=False))
                worst = 0.0
                for lo in range(0, comps.size, chunk):
                    part = comps[lo:lo + chunk]
                    if affine:
                        G = part.size
                        chans, deltas = zip(*(_linear_delta(layer, name, n, caches[idx], base.shape) for n in part))
                        if route is not None:
                            chans = np.asarray(chans)
                            lp, lm, ok = np.empty(G), np.empty(G), np.empty(G, dtype=bool)
                            for o in np.unique(chans):
                                sel = np.flatnonzero(chans == o)
                                losses, oks = routed(idx, route, o, np.stack([deltas[i] for i in sel]))
                                lp[sel], lm[sel] = losses[:sel.size], losses[sel.size:]
                                ok[sel] = oks[:sel.size] & oks[sel.size:]
                        else:
                            stack = np.empty((2 * G,) + base.shape)
                            stack[:] = base
                            for g, (o, d) in enumerate(zip(chans, deltas)):
                                stack[g, :, :, o] += epsilon * d
                                stack[G + g, :, :, o] -= epsilon * d
                            # (2G, 4, B, ...) -> (4, 2G*B, ...)
                            stacked = np.moveaxis(stack, 0, 1).reshape((4, -1) + base.shape[2:])
                            losses, ok = loss_from(idx + 1, stacked, 2 * G)
                            lp, lm = losses[:G], losses[G:]
                            ok = ok[:G] & ok[G:]
                    else:
                        n = part[0]
                        orig = flat[n]
                        flat[n] = orig + epsilon
                        lp, okp = loss_from(idx, acts[idx])
                        flat[n] = orig - epsilon
                        lm, okm = loss_from(idx, acts[idx])
                        flat[n] = orig
                        ok = okp & okm
                    report.excluded += int((~ok).sum())
                    if not ok.any():
                        continue
                    num = (lp[ok] - lm[ok]) / (2.0 * epsilon)
                    a = agrad[part[ok]]
                    rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
                    report.checked += int(ok.sum())
                    worst = max(worst, float(rel.max()))
                report.per_param[key] = worst
                if worst > report.max_rel_error:
                    report.max_rel_error = worst
                    report.worst = key
        return report
    finally:
        for bn, (m, v, t) in zip(bns, saved):
            bn.running_mean, bn.running_var, bn.track_running_stats = m, v, t


def finite_diff_check(model, x, labels, epsilon=1e-5, **kwargs) -> float:
    """Maximum relative error between :func:`backward` and central differences."""
    return gradient_check(model, x, labels, epsilon, **kwargs).max_rel_error

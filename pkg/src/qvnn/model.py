"""Sequential quaternion model."""
from __future__ import annotations

import numpy as np

from .autograd import Tape, TapeNode
from .layers import QBatchNorm, QConv2d, QDense, QDropout


class Model:
    """An ordered stack of layers ending in a real-valued score head.

    ``input_shape`` is the per-sample quaternion shape, e.g. ``(1, 28, 28)``.
    """

    def __init__(self, layers, input_shape, num_classes=10, name="custom"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.num_classes = int(num_classes)
        self.name = name
        self.tape: Tape | None = None

    def forward(self, x, training=False, rng=None):
        """Scores ``(B, classes)``; a training-mode pass also records a fresh tape."""
        out = x.planes if hasattr(x, "planes") else np.asarray(x, dtype=np.float64)
        nodes = [] if training else None
        for layer in self.layers:
            out, cache = layer.forward(out, training=training, rng=rng)
            if nodes is not None:
                nodes.append(TapeNode(layer, cache))
        if nodes is not None:
            self.tape = Tape(nodes)
        return out

    __call__ = forward

    def predict(self, x):
        return self.forward(x, training=False).argmax(axis=-1)

    def named_parameters(self):
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                yield f"{idx}.{name}", arr

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def weight_layers(self):
        """Layers whose Hamilton-product weights are regularized (dense and conv)."""
        return [l for l in self.layers if isinstance(l, (QDense, QConv2d))]

    def batchnorms(self):
        return [l for l in self.layers if isinstance(l, QBatchNorm)]

    def dropouts(self):
        return [l for l in self.layers if isinstance(l, QDropout)]

    def set_dropout(self, enabled: bool):
        for d in self.dropouts():
            d.enabled = enabled

    def quaternion_weight_count(self) -> int:
        return int(sum(l.W[0].size for l in self.weight_layers()))

    def quaternion_param_count(self) -> int:
        """Quaternion weights and biases; BN scales and shifts excluded."""
        return int(sum(l.W[0].size + l.use_bias * l.b[0].size for l in self.weight_layers()))

    def copy(self) -> "Model":
        return Model([l.copy() for l in self.layers], self.input_shape, self.num_classes, self.name)

    def __repr__(self):
        body = "\n".join(f"  ({i}) {l!r}" for i, l in enumerate(self.layers))
        return f"Model({self.name!r}, input={self.input_shape})\n{body}"

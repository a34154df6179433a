"""PatchGAN discriminators (one for each light domain)."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .layers import Conv2d, Module

KERNEL = 4
PADDING = 1
STRIDES = (2, 2, 2, 2, 2, 1, 1)
# multiples of the base width; the last layer always emits one channel
WIDTH_MULTIPLIERS = (1, 2, 4, 8, 8, 8)
MIN_INPUT = 96  # smallest square input whose score map survives all seven layers


def layer_shapes(height: int, width: int):
    """Spatial size after each of the seven layers (may contain non-positive sizes)."""
    shapes = []
    h, w = height, width
    for s in STRIDES:
        h = T.conv_output_size(h, KERNEL, s, PADDING)
        w = T.conv_output_size(w, KERNEL, s, PADDING)
        shapes.append((h, w))
    return shapes


class PatchDiscriminator(Module):
    """Seven 4x4 convolutions, LReLU(0.2) after the first six, no normalisation.

    ``base_width`` 64 gives the 64-128-256-512-512-512-1 channel plan; smaller
    values shrink every layer proportionally (used for desk-scale runs).
    """

    def __init__(self, base_width=64, in_channels=3, seed=0, init_std=0.02):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.base_width = base_width
        chans = [in_channels] + [base_width * m for m in WIDTH_MULTIPLIERS] + [1]
        self.convs = []
        for i, stride in enumerate(STRIDES):
            conv = Conv2d(chans[i], chans[i + 1], KERNEL, stride=stride, padding=PADDING,
                          rng=rng, init="normal", std=init_std)
            self.convs.append(conv)
            self._children[f"conv{i + 1}"] = conv

    def __call__(self, x):
        x = x if isinstance(x, T.Tensor) else T.tensor(x)
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        for i, (h, w) in enumerate(layer_shapes(*x.shape[-2:])):
            if h < 1 or w < 1:
                raise ContractError(
                    f"discriminator layer {i + 1} collapses a {x.shape[-2]}x{x.shape[-1]} input "
                    f"to {h}x{w}; inputs need at least {MIN_INPUT}x{MIN_INPUT}"
                )
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = T.lrelu(x, 0.2)
        return x


def disc_forward(image, params: PatchDiscriminator):
    return params(image)

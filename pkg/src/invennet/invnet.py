"""The invertible generator: squeeze layer, n-split, affine coupling layers.

Sub-image convention after squeezing a C x H x W image:

    alpha0 = x[:, 0::2, 0::2]   alpha1 = x[:, 0::2, 1::2]
    alpha2 = x[:, 1::2, 0::2]   alpha3 = x[:, 1::2, 1::2]

The conditioning ("a") part of every coupling layer holds the first ``n``
sub-images, the transformed ("b") part the remaining ``4 - n``.  Every scale
and shift map has 3 channels and is applied identically to each sub-image of
the part it transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .layers import Conv2d, Module

DEFAULT_LAYERS = 8
DEFAULT_WIDTH = 32
DEFAULT_STABILITY_CLAMP = 2.0


def _batched(x):
    x = x if isinstance(x, T.Tensor) else T.tensor(x)
    if x.ndim == 3:
        return T.reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise ContractError(f"expected C x H x W or N x C x H x W, got shape {x.shape}")
    return x


def squeeze(image):
    """Split an image (C x H x W or batched) into its four 2x2-phase sub-images."""
    x = _batched(image)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"squeeze needs even H and W, got {h}x{w} (pad_to_even first)")
    # (n, c, h/2, row-phase, w/2, col-phase) -> (n, row-phase, col-phase, c, h/2, w/2)
    x = T.reshape(x, (n, c, h // 2, 2, w // 2, 2))
    x = T.transpose(x, (0, 3, 5, 1, 2, 4))
    x = T.reshape(x, (n, 4 * c, h // 2, w // 2))
    return list(T.split(x, [c] * 4, axis=1))


def unsqueeze(subs):
    """Exact inverse of ``squeeze``; returns N x C x H x W."""
    if len(subs) != 4:
        raise ContractError(f"unsqueeze needs 4 sub-images, got {len(subs)}")
    x = T.concat([_batched(s) for s in subs], axis=1)
    n, c4, h, w = x.shape
    c = c4 // 4
    x = T.reshape(x, (n, 2, 2, c, h, w))
    x = T.transpose(x, (0, 3, 4, 1, 5, 2))
    return T.reshape(x, (n, c, 2 * h, 2 * w))


@dataclass(frozen=True)
class SplitScheme:
    """How many of the four sub-images form the conditioning part."""

    n: int = 2

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ContractError(f"split n must be 1, 2 or 3, got {self.n}")

    @property
    def a_channels(self):
        return 3 * self.n

    @property
    def b_channels(self):
        return 3 * (4 - self.n)

    def join(self, subs):
        return T.concat(subs[: self.n], axis=1), T.concat(subs[self.n:], axis=1)

    def separate(self, x_a, x_b):
        return T.split(x_a, [3] * self.n, axis=1) + T.split(x_b, [3] * (4 - self.n), axis=1)


class SubNet(Module):
    """conv-ReLU-conv-ReLU-conv producing a 3-channel map, scaled by a learned gamma.

    ``gamma`` starts at zero so the coupling layer starts as the identity.  For
    scale subnets a ``stability_clamp`` c soft-limits the raw map to (-c, c)
    with ``c * tanh(raw / c)`` before the gamma multiply.
    """

    def __init__(self, cin, width=DEFAULT_WIDTH, rng=None, stability_clamp=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin = cin
        self.stability_clamp = stability_clamp
        self.conv1 = Conv2d(cin, width, 3, padding=1, rng=rng)
        self.conv2 = Conv2d(width, width, 3, padding=1, rng=rng)
        self.conv3 = Conv2d(width, 3, 3, padding=1, rng=rng)
        self.gamma = T.parameter(np.zeros(()))
        self._children.update(conv1=self.conv1, conv2=self.conv2, conv3=self.conv3)
        self._params["gamma"] = self.gamma

    def raw(self, x):
        if x.shape[1] != self.cin:
            raise ContractError(f"subnet expects {self.cin} channels, got {x.shape[1]}")
        h = T.relu(self.conv1(x))
        h = T.relu(self.conv2(h))
        return self.conv3(h)

    def __call__(self, x):
        r = self.raw(x)
        c = self.stability_clamp
        if c:
            r = T.tanh(r * (1.0 / c)) * c
        return r * self.gamma


def _apply_affine(x, s, t):
    n, ch, h, w = x.shape
    m = ch // 3
    xs = T.reshape(x, (n, m, 3, h, w))
    out = xs * T.reshape(s, (n, 1, 3, h, w)) + T.reshape(t, (n, 1, 3, h, w))
    return T.reshape(out, (n, ch, h, w))


def _invert_affine(y, s, t):
    n, ch, h, w = y.shape
    m = ch // 3
    ys = T.reshape(y, (n, m, 3, h, w))
    out = (ys - T.reshape(t, (n, 1, 3, h, w))) / T.reshape(s, (n, 1, 3, h, w))
    return T.reshape(out, (n, ch, h, w))


@dataclass
class LayerCoefficients:
    """Scale/shift maps of one coupling layer (primed ones for the inverse pass)."""

    s_a: T.Tensor
    t_a: T.Tensor
    s_b: T.Tensor
    t_b: T.Tensor


@dataclass
class CoefficientTrace:
    direction: str  # "forward" or "backward"
    layers: list  # LayerCoefficients, indexed by layer k = 0..K-1

    def __len__(self):
        return len(self.layers)


class CouplingLayer(Module):
    def __init__(self, split: SplitScheme, width=DEFAULT_WIDTH, rng=None,
                 stability_clamp=DEFAULT_STABILITY_CLAMP):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.split = split
        self.h_a = SubNet(split.a_channels, width, rng, stability_clamp)
        self.g_a = SubNet(split.a_channels, width, rng)
        self.h_b = SubNet(split.b_channels, width, rng, stability_clamp)
        self.g_b = SubNet(split.b_channels, width, rng)
        self._children.update(h_a=self.h_a, g_a=self.g_a, h_b=self.h_b, g_b=self.g_b)

    def coefficients_a(self, x_a):
        return T.exp(self.h_a(x_a)), self.g_a(x_a)

    def coefficients_b(self, x_b):
        return T.exp(self.h_b(x_b)), self.g_b(x_b)

    def forward(self, x_a, x_b):
        s_a, t_a = self.coefficients_a(x_a)
        x_b = _apply_affine(x_b, s_a, t_a)
        s_b, t_b = self.coefficients_b(x_b)
        x_a = _apply_affine(x_a, s_b, t_b)
        return x_a, x_b, LayerCoefficients(s_a, t_a, s_b, t_b)

    def inverse(self, y_a, y_b):
        s_b, t_b = self.coefficients_b(y_b)
        y_a = _invert_affine(y_a, s_b, t_b)
        s_a, t_a = self.coefficients_a(y_a)
        y_b = _invert_affine(y_b, s_a, t_a)
        return y_a, y_b, LayerCoefficients(s_a, t_a, s_b, t_b)


def coupling_forward(x_a, x_b, layer: CouplingLayer):
    return layer.forward(x_a, x_b)


def coupling_backward(y_a, y_b, layer: CouplingLayer):
    return layer.inverse(y_a, y_b)


class InvEnNet(Module):
    """K affine coupling layers sharing weights between enhancement and degradation."""

    def __init__(self, layers=DEFAULT_LAYERS, split=2, width=DEFAULT_WIDTH,
                 stability_clamp=DEFAULT_STABILITY_CLAMP, seed=0):
        super().__init__()
        if layers < 1:
            raise ContractError(f"need at least one coupling layer, got K={layers}")
        self.split = split if isinstance(split, SplitScheme) else SplitScheme(int(split))
        self.width = width
        self.stability_clamp = stability_clamp
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.layers = [CouplingLayer(self.split, width, rng, stability_clamp) for _ in range(layers)]
        for k, layer in enumerate(self.layers):
            self._children[f"layers.{k}"] = layer

    @property
    def K(self):
        return len(self.layers)

    def config(self):
        return {
            "K": self.K, "split": self.split.n, "width": self.width,
            "stability_clamp": self.stability_clamp or 0.0,
        }

    def _check(self, subs):
        if len(subs) != 4:
            raise ContractError(f"expected 4 sub-images, got {len(subs)}")
        subs = [_batched(s) for s in subs]
        for s in subs:
            if s.shape[1] != 3 or s.shape != subs[0].shape:
                raise ContractError(f"sub-images must share an N x 3 x h x w shape, got {s.shape}")
        return subs

    def forward(self, subs):
        """Enhance four sub-images; returns (enhanced sub-images, forward trace)."""
        x_a, x_b = self.split.join(self._check(subs))
        trace = []
        for layer in self.layers:
            x_a, x_b, coeffs = layer.forward(x_a, x_b)
            trace.append(coeffs)
        return self.split.separate(x_a, x_b), CoefficientTrace("forward", trace)

    def inverse(self, subs):
        """Degrade four sub-images; trace is indexed by layer k (not by visit order)."""
        y_a, y_b = self.split.join(self._check(subs))
        trace = [None] * self.K
        for k in reversed(range(self.K)):
            y_a, y_b, coeffs = self.layers[k].inverse(y_a, y_b)
            trace[k] = coeffs
        return self.split.separate(y_a, y_b), CoefficientTrace("backward", trace)


def net_forward(model: InvEnNet, subs):
    return model.forward(subs)


def net_backward(model: InvEnNet, subs):
    return model.inverse(subs)


def set_constant_coefficients(model: InvEnNet, log_scale_a, shift_a, log_scale_b=None, shift_b=None):
    """Force every layer's maps to per-channel constants (testing/demonstration helper).

    Each argument is a (K, 3) array; subnets get zero weights, gamma = 1 and the
    constant as last-layer bias.  With a stability clamp c the effective
    log-scale becomes c * tanh(value / c).
    """
    log_scale_b = log_scale_a if log_scale_b is None else log_scale_b
    shift_b = shift_a if shift_b is None else shift_b
    for k, layer in enumerate(model.layers):
        for net, value in ((layer.h_a, log_scale_a), (layer.g_a, shift_a),
                           (layer.h_b, log_scale_b), (layer.g_b, shift_b)):
            for p in net.parameters():
                p.data = np.zeros_like(p.data)
            net.conv3.bias.data = np.asarray(value[k], dtype=net.conv3.bias.dtype).reshape(3).copy()
            net.gamma.data = np.ones((), dtype=net.gamma.dtype)
    return model

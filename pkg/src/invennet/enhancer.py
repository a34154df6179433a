"""Inference: progressive full-resolution enhancement, its degradation mirror,
and the naive direct-unsqueeze mode that exhibits 2x2 checkerboard artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .imageio import pad_to_even
from .invnet import InvEnNet, squeeze, unsqueeze

MODES = ("progressive", "direct")
DIRECTIONS = ("enhance", "degrade")


@dataclass(frozen=True)
class EnhanceOptions:
    mode: str = "progressive"
    direction: str = "enhance"
    clamp: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.direction not in DIRECTIONS:
            raise ContractError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")


def _as_batch(image):
    arr = np.asarray(getattr(image, "data", image))
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim != 4:
        raise ContractError(f"expected 3 x H x W or N x 3 x H x W, got shape {arr.shape}")
    return arr, False


def _check_even(arr):
    h, w = arr.shape[-2:]
    if h % 2 or w % 2:
        raise ContractError(f"image dimensions must be even, got {h}x{w} (pad_to_even first)")


def _upsample(coeff):
    return np.repeat(np.repeat(coeff, 2, axis=-2), 2, axis=-1)


def _finish(out, single, clamp):
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out[0] if single else out


def enhance(image, model: InvEnNet, clamp=True):
    """I_{k+1} = up(s_a^k) * I_k + up(t_a^k) using the trace of the squeezed forward pass."""
    arr, single = _as_batch(image)
    _check_even(arr)
    with T.no_grad():
        _, trace = model.forward(squeeze(arr))
    out = arr
    for coeffs in trace.layers:
        out = _upsample(coeffs.s_a.data) * out + _upsample(coeffs.t_a.data)
    return _finish(out.astype(arr.dtype), single, clamp)


def degrade(image, model: InvEnNet, clamp=True):
    """J_{k-1} = (J_k - up(t'_a^k)) / up(s'_a^k) for k = K..1, primed maps from the inverse pass."""
    arr, single = _as_batch(image)
    _check_even(arr)
    with T.no_grad():
        _, trace = model.inverse(squeeze(arr))
    out = arr
    for coeffs in reversed(trace.layers):
        out = (out - _upsample(coeffs.t_a.data)) / _upsample(coeffs.s_a.data)
    return _finish(out.astype(arr.dtype), single, clamp)


def enhance_direct(image, model: InvEnNet, clamp=True, direction="enhance"):
    """Unsqueeze the network outputs directly (prone to checkerboard artifacts)."""
    arr, single = _as_batch(image)
    _check_even(arr)
    with T.no_grad():
        run = model.forward if direction == "enhance" else model.inverse
        subs, _ = run(squeeze(arr))
        out = unsqueeze(subs).data
    return _finish(out, single, clamp)


def run(image, model: InvEnNet, options: EnhanceOptions = EnhanceOptions()):
    if options.mode == "direct":
        return enhance_direct(image, model, options.clamp, options.direction)
    fn = enhance if options.direction == "enhance" else degrade
    return fn(image, model, options.clamp)


def process_any_size(image, model: InvEnNet, options: EnhanceOptions = EnhanceOptions()):
    """Reflect-pad odd sizes to even, run, and crop back to the original size."""
    arr = np.asarray(image, dtype=np.float32)
    padded, record = pad_to_even(arr)
    return record.crop(run(padded, model, options))


def adjacent_difference(image):
    """Mean absolute difference between horizontally and vertically adjacent pixels.

    A 2x2-periodic pattern raises this statistic relative to a smooth image.
    """
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    dx = np.abs(np.diff(arr, axis=-1)).mean()
    dy = np.abs(np.diff(arr, axis=-2)).mean()
    return float((dx + dy) / 2)

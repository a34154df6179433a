"""Training objectives: least-squares adversarial terms, transformation
consistency, detail preservation, reversibility, and their weighted sum.

All norms are element-count normalised (means), so magnitudes do not depend
on resolution or batch size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import container
from . import tensor as T
from .errors import ContractError, DivergenceError, FormatError
from .guided_filter import GuidedFilterConfig, guided_filter
from .layers import Conv2d, Module


@dataclass(frozen=True)
class LossWeights:
    eta: float = 0.5  # transformation consistency
    lam: float = 0.6  # detail preservation
    mu: float = 200.0  # reversibility
    adv: float = 1.0  # adversarial (unweighted in the objective; knob for ablations/tests)

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ContractError(f"loss weight {f.name} must be >= 0")


# ---------------------------------------------------------------- adversarial


def lsgan_generator(fake_scores):
    return T.mean(T.square(fake_scores - 1.0))


def lsgan_discriminator(real_scores, fake_scores):
    return T.mean(T.square(real_scores - 1.0)) + T.mean(T.square(fake_scores))


def adv_losses(real_scores, fake_scores):
    """(generator term, discriminator term) of the least-squares GAN objective."""
    real_scores = _t(real_scores)
    fake_scores = _t(fake_scores)
    return lsgan_generator(fake_scores), lsgan_discriminator(real_scores, fake_scores)


def _t(x):
    return x if isinstance(x, T.Tensor) else T.tensor(x)


# ---------------------------------------------------------------- consistency


def tc_loss(trace):
    """Sum over layers of mean|s_a - s_b| + mean|t_a - t_b|."""
    layers = trace.layers if hasattr(trace, "layers") else trace
    total = None
    for c in layers:
        term = T.mean(T.abs_(c.s_a - c.s_b)) + T.mean(T.abs_(c.t_a - c.t_b))
        total = term if total is None else total + term
    if total is None:
        raise ContractError("tc_loss needs a non-empty trace")
    return total


# ---------------------------------------------------------------- features


class FeatureExtractor(Module):
    """Frozen conv/ReLU/max-pool pyramid with one feature tap per stage.

    The default is a seeded random 3-stage network (3 -> 16 -> 32 -> 64
    channels).  ``from_file`` loads weights from a named-tensor container:
    records ``phi.<stage>.<conv>.weight`` / ``.bias`` (3x3 kernels, padding 1)
    and optionally ``phi.mean`` / ``phi.std`` (per-channel input normalisation).
    """

    def __init__(self, stages=None, mean=None, std=None):
        super().__init__()
        self.stages = stages if stages is not None else []
        self.norm_mean = None if mean is None else np.asarray(mean, np.float32).reshape(1, -1, 1, 1)
        self.norm_std = None if std is None else np.asarray(std, np.float32).reshape(1, -1, 1, 1)
        for i, (convs, _) in enumerate(self.stages):
            for j, conv in enumerate(convs):
                self._children[f"phi.{i}.{j}"] = conv
        self.requires_grad_(False)

    @classmethod
    def seeded(cls, channels=(16, 32, 64), seed=1234, in_channels=3):
        rng = np.random.default_rng(seed)
        stages = []
        cin = in_channels
        for cout in channels:
            conv = Conv2d(cin, cout, 3, padding=1, rng=rng, init="normal",
                          std=math.sqrt(2.0 / (cin * 9)))
            stages.append(([conv], True))
            cin = cout
        return cls(stages)

    @classmethod
    def identity(cls):
        """Single tap returning the input unchanged."""
        return cls([([], False)])

    @classmethod
    def from_file(cls, path):
        tensors, _ = container.load(path)
        layout = {}
        for name, arr in tensors.items():
            parts = name.split(".")
            if len(parts) == 4 and parts[0] == "phi" and parts[3] in ("weight", "bias"):
                layout.setdefault(int(parts[1]), {}).setdefault(int(parts[2]), {})[parts[3]] = arr
            elif name not in ("phi.mean", "phi.std"):
                raise FormatError(f"{path}: unexpected feature-extractor record {name!r}")
        if not layout:
            raise FormatError(f"{path}: no phi.<stage>.<conv> records")
        stages = []
        for i in sorted(layout):
            convs = []
            for j in sorted(layout[i]):
                rec = layout[i][j]
                if "weight" not in rec or "bias" not in rec:
                    raise FormatError(f"{path}: phi.{i}.{j} needs weight and bias")
                w = rec["weight"]
                conv = Conv2d(w.shape[1], w.shape[0], w.shape[2], padding=w.shape[2] // 2)
                conv.weight.data = np.array(w, np.float32)
                conv.bias.data = np.array(rec["bias"], np.float32).reshape(-1)
                convs.append(conv)
            stages.append((convs, True))
        return cls(stages, tensors.get("phi.mean"), tensors.get("phi.std"))

    def __call__(self, x):
        if self.norm_mean is not None:
            x = x - self.norm_mean.astype(x.dtype)
        if self.norm_std is not None:
            x = x / self.norm_std.astype(x.dtype)
        taps = []
        for convs, pool in self.stages:
            for conv in convs:
                x = T.relu(conv(x))
            if pool and x.shape[-2] >= 2 and x.shape[-1] >= 2:
                x = T.max_pool_2x(x)
            taps.append(x)
        return taps


def load_feature_extractor(path=None, seed=1234):
    if path:
        return FeatureExtractor.from_file(Path(path))
    return FeatureExtractor.seeded(seed=seed)


# ---------------------------------------------------------------- detail preservation


def dp_loss(original_subs, output_subs, phi, gf_cfg=GuidedFilterConfig()):
    """Feature distance between each output and its guided-filtered counterpart.

    For every pair the guided image takes structure from the original and
    intensities from the output.  Per tap the distance is the root mean
    square feature difference; taps are summed and pairs averaged.
    """
    m = len(original_subs)
    if m == 0 or m != len(output_subs):
        raise ContractError("dp_loss needs equally many (original, output) sub-images")
    orig = T.concat([_t(s) for s in original_subs], axis=0)
    out = T.concat([_t(s) for s in output_subs], axis=0)
    guided = guided_filter(orig, out, gf_cfg)
    taps = phi(T.concat([guided, out], axis=0))
    half = guided.shape[0]
    total = None
    for f in taps:
        fg, fo = T.split(f, [half, half], axis=0)
        per_pair = T.mean(T.reshape(T.square(fg - fo), (m, -1)), axis=1)
        term = T.mean(T.sqrt(per_pair))
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------- reversibility


def reversibility_loss(inputs, outputs, inverse_fn):
    """Mean |input - inverse(clamp(output, 0, 1))| over all sub-images.

    ``inverse_fn`` maps a list of clamped outputs back to the input domain.
    """
    clamped = [T.clamp(_t(o), 0.0, 1.0) for o in outputs]
    restored = inverse_fn(clamped)
    if len(restored) != len(inputs):
        raise ContractError("inverse_fn must return one tensor per input")
    diffs = [T.reshape(T.abs_(_t(a) - b), (-1,)) for a, b in zip(inputs, restored)]
    return T.mean(T.concat(diffs, axis=0))


# ---------------------------------------------------------------- total


@dataclass
class LossParts:
    """Per-direction components; ``None`` marks a component that was not computed."""

    adv_f: object = 0.0
    adv_b: object = 0.0
    tc_f: object = 0.0
    tc_b: object = 0.0
    dp_f: object = 0.0
    dp_b: object = 0.0
    r_f: object = 0.0
    r_b: object = 0.0


_WEIGHT_OF = {"adv": "adv", "tc": "eta", "dp": "lam", "r": "mu"}


def _value(x):
    return float(x.data) if isinstance(x, T.Tensor) else float(x)


def total_loss(parts: LossParts, weights: LossWeights = LossWeights()):
    """adv + eta*tc + lam*dp + mu*r, each summed over both directions."""
    total = T.tensor(0.0)
    for f in fields(parts):
        value = getattr(parts, f.name)
        if value is None:
            continue
        if not math.isfinite(_value(value)):
            raise DivergenceError(f.name)
        w = getattr(weights, _WEIGHT_OF[f.name.rsplit("_", 1)[0]])
        if w == 0:
            continue
        total = total + value * w
    return total

"""Autodiff versus central finite differences in 64-bit precision.

Each case builds a scalar function of a few small arrays.  The analytic
gradient comes from the engine; the numeric one perturbs every element by
+-h and re-evaluates the function with gradients disabled.

Cases built from abs, ReLU, max-pool or clamp are only piecewise smooth.  A
central difference whose +-h step straddles a kink measures the average
of two slopes, so such cases are redrawn until the one-sided differences
agree at every element.  The screen never looks at the autodiff result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .guided_filter import GuidedFilterConfig, guided_filter
from .invnet import InvEnNet, LayerCoefficients
from .layers import Conv2d
from .losses import (
    FeatureExtractor,
    dp_loss,
    lsgan_discriminator,
    lsgan_generator,
    reversibility_loss,
    tc_loss,
)

STEP = 1e-3
TOLERANCE = 1e-3


def numeric_gradient(fn, arrays, step=STEP, with_kink=False):
    """Central differences of a scalar ``fn(list of float64 arrays)`` w.r.t. every element.

    With ``with_kink`` also returns max |forward - backward| / 2 over all
    elements, the central-difference error a straddled kink would cause.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    centre = fn(arrays) if with_kink else 0.0
    kink = 0.0
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn(arrays)
            flat[i] = orig - step
            down = fn(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
            if with_kink:
                kink = max(kink, abs(up - 2 * centre + down) / (2 * step))
        grads.append(g)
    return (grads, kink) if with_kink else grads


def analytic_gradient(build, arrays):
    """Gradients of ``build(list of Tensors) -> scalar Tensor`` from the engine."""
    params = [T.parameter(np.asarray(a, np.float64), dtype=np.float64) for a in arrays]
    return T.gradients(build(params), params)


def relative_error(analytic, numeric):
    """max |a - n| / max(max |a|, max |n|), floored to avoid 0/0 on zero gradients."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-8)
    return float(np.abs(a - n).max() / scale)


def _magnitude(grads):
    return max(max(float(np.abs(g).max()) for g in grads), 1e-8)


@dataclass
class GradCase:
    name: str
    build: Callable  # list[Tensor] -> scalar Tensor
    arrays: list
    redraw: Callable | None = None  # () -> fresh arrays, for piecewise-smooth cases
    max_draws: int = 20

    def _value(self, arrays):
        with T.no_grad():
            return float(self.build([T.tensor(a, dtype=np.float64) for a in arrays]).data)

    def smooth_point(self, step=STEP):
        """Arrays at which no +-step probe crosses a kink, plus their numeric gradient."""
        arrays = self.arrays
        for _ in range(self.max_draws):
            numeric, kink = numeric_gradient(self._value, arrays, step, with_kink=True)
            if self.redraw is None or kink <= TOLERANCE * _magnitude(numeric):
                return arrays, numeric
            arrays = self.redraw()
        return arrays, numeric

    def evaluate(self, step=STEP):
        if self.redraw is None:
            numeric = numeric_gradient(self._value, self.arrays, step)
            arrays = self.arrays
        else:
            arrays, numeric = self.smooth_point(step)
        return relative_error(analytic_gradient(self.build, arrays), numeric)


def _weighted_sum(out, weights):
    return T.sum_(out * T.tensor(weights, dtype=np.float64))


def _conv_case(rng):
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    proj = rng.normal(size=(2, 4, 3, 3))  # output of stride 2, padding 1
    return GradCase("conv2d", lambda p: _weighted_sum(T.conv2d(p[0], p[1], p[2], stride=2, padding=1), proj),
                    [x, w, b])


def _guided_case(rng):
    cfg = GuidedFilterConfig(radius=2, epsilon=1e-2)
    guide = rng.uniform(size=(1, 3, 8, 8))
    src = rng.uniform(size=(1, 3, 8, 8))
    proj = rng.normal(size=(1, 3, 8, 8))
    return GradCase("guided_filter", lambda p: _weighted_sum(guided_filter(p[0], p[1], cfg), proj),
                    [guide, src])


def _adv_cases(rng):
    real = rng.normal(size=(4, 1, 3, 3))
    fake = rng.normal(size=(4, 1, 3, 3))
    return [
        GradCase("adversarial_generator", lambda p: lsgan_generator(p[0]), [fake]),
        GradCase("adversarial_discriminator", lambda p: lsgan_discriminator(p[0], p[1]), [real, fake]),
    ]


def _tc_case(rng, layers=2):
    shape = (layers, 4, 1, 3, 4, 4)  # (layer, map, N, C, h, w)

    def draw():
        return [rng.normal(size=shape)]

    def build(p):
        trace = []
        for k in range(layers):
            s_a, t_a, s_b, t_b = (p[0][k, i] for i in range(4))
            trace.append(LayerCoefficients(s_a, t_a, s_b, t_b))
        return tc_loss(trace)

    return GradCase("transformation_consistency", build, draw(), redraw=draw)


def _small_extractor(seed):
    rng = np.random.default_rng(seed)
    stages = []
    cin = 3
    for cout in (4, 6):
        conv = Conv2d(cin, cout, 3, padding=1, rng=rng, init="normal", std=np.sqrt(2.0 / (cin * 9)))
        stages.append(([conv], True))
        cin = cout
    phi = FeatureExtractor(stages)
    phi.to_dtype(np.float64)
    return phi


def _dp_case(rng):
    phi = _small_extractor(int(rng.integers(1 << 30)))
    cfg = GuidedFilterConfig(radius=1, epsilon=1e-2)

    def draw():
        return [rng.uniform(size=(4, 1, 3, 8, 8)), rng.uniform(size=(4, 1, 3, 8, 8))]

    def build(p):
        return dp_loss([p[0][i] for i in range(4)], [p[1][i] for i in range(4)], phi, cfg)

    return GradCase("detail_preservation", build, draw(), redraw=draw)


def _reversibility_case(rng):
    model = InvEnNet(layers=2, split=2, width=4, stability_clamp=2.0, seed=int(rng.integers(1 << 30)))
    for p in model.parameters():
        if p.ndim == 0:  # gammas: large enough that some outputs leave [0, 1]
            p.data = np.asarray(rng.uniform(0.5, 1.5), dtype=p.dtype)
    model.to_dtype(np.float64)
    model.requires_grad_(False)

    def draw():
        return [rng.uniform(size=(4, 1, 3, 4, 4))]

    def build(p):
        subs = [p[0][i] for i in range(4)]
        outputs, _ = model.forward(subs)
        return reversibility_loss(subs, outputs, lambda xs: model.inverse(xs)[0])

    return GradCase("reversibility", build, draw(), redraw=draw)


def default_cases(seed=0):
    rng = np.random.default_rng(seed)
    return [_conv_case(rng), _guided_case(rng), *_adv_cases(rng), _tc_case(rng), _dp_case(rng),
            _reversibility_case(rng)]


def run_suite(seed=0, step=STEP):
    """{case name: relative error} for the full suite."""
    return {case.name: case.evaluate(step) for case in default_cases(seed)}

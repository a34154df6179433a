"""Parameter containers shared by the generator, discriminators and feature extractor."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import tensor as T


class Module:
    """Minimal parameter registry: subclasses fill ``self._params`` / ``self._children``."""

    def __init__(self):
        self._params = OrderedDict()
        self._children = OrderedDict()

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def requires_grad_(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def load_arrays(self, arrays, prefix="", strict=True):
        """Copy arrays (name -> ndarray) into the parameters in place."""
        for name, p in self.named_parameters(prefix).items():
            if name not in arrays:
                if strict:
                    raise KeyError(f"missing parameter {name}")
                continue
            value = np.asarray(arrays[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = np.array(value, dtype=p.dtype)

    def to_dtype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, rng=None, init="uniform", std=0.02):
        super().__init__()
        self.stride = stride
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = cin * kernel * kernel
        if init == "normal":
            w = rng.normal(0.0, std, size=(cout, cin, kernel, kernel))
            b = np.zeros(cout)
        else:
            # PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(cout, cin, kernel, kernel))
            b = rng.uniform(-bound, bound, size=cout)
        self.weight = T.parameter(w)
        self.bias = T.parameter(b)
        self._params["weight"] = self.weight
        self._params["bias"] = self.bias

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

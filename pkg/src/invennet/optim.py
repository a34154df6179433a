"""Adam with bias correction, keyed by parameter name."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .errors import ContractError, DivergenceError


class AdamState:
    """First/second moments per named parameter plus the shared step counter."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = OrderedDict(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.step_count = 0
        self.m = OrderedDict((k, np.zeros_like(p.data)) for k, p in self.params.items())
        self.v = OrderedDict((k, np.zeros_like(p.data)) for k, p in self.params.items())

    def step(self, grads):
        """Apply one update; ``grads`` maps name -> array (or is aligned with ``params``)."""
        if not isinstance(grads, dict):
            grads = dict(zip(self.params, grads))
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"gradient of {name}")
        adam_step(self.params, grads, self, self.lr, self.betas, self.eps)

    def state_arrays(self, prefix):
        out = OrderedDict()
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays, prefix, step_count):
        for k, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                arr = arrays[f"{prefix}.{slot}.{k}"]
                if arr.shape != p.shape:
                    raise ContractError(f"{prefix}.{slot}.{k}: shape {arr.shape} != {p.shape}")
                store[k] = np.array(arr, dtype=p.dtype)
        self.step_count = int(step_count)


def adam_step(params, grads, state: AdamState, lr, betas=(0.9, 0.999), eps=1e-8):
    """m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  p <- p - lr mhat / (sqrt(vhat) + eps)."""
    b1, b2 = betas
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        dtype = p.data.dtype
        m = state.m[name] = (b1 * state.m[name] + (1 - b1) * g).astype(dtype)
        v = state.v[name] = (b2 * state.v[name] + (1 - b2) * (g * g)).astype(dtype)
        m_hat = m / dtype.type(c1)
        v_hat = v / dtype.type(c2)
        p.data = (p.data - dtype.type(lr) * m_hat / (np.sqrt(v_hat) + dtype.type(eps))).astype(dtype)
    return params, state

"""Differentiable per-channel guided filter."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ContractError


@dataclass(frozen=True)
class GuidedFilterConfig:
    radius: int = 4
    epsilon: float = 1e-2

    def __post_init__(self):
        if self.radius < 1:
            raise ContractError(f"guided filter radius must be >= 1, got {self.radius}")
        if not self.epsilon > 0:
            raise ContractError(f"guided filter epsilon must be > 0, got {self.epsilon}")

    def scaled(self, factor: float):
        """Same filter for a resolution ``factor`` times larger (radius scales, eps kept)."""
        return GuidedFilterConfig(max(1, round(self.radius * factor)), self.epsilon)


def guided_filter(guide, src, cfg: GuidedFilterConfig = GuidedFilterConfig()):
    """Filter ``src`` so it becomes locally linear in ``guide`` (channel c guides channel c).

    Works on ... x H x W tensors.  Box windows have radius ``cfg.radius`` with
    reflect-padded borders.
    """
    guide = guide if isinstance(guide, T.Tensor) else T.tensor(guide)
    src = src if isinstance(src, T.Tensor) else T.tensor(src)
    if guide.shape != src.shape:
        raise ContractError(f"guided_filter: guide {guide.shape} and input {src.shape} differ")
    r = cfg.radius
    mean_i = T.box_mean(guide, r)
    mean_p = T.box_mean(src, r)
    cov_ip = T.box_mean(guide * src, r) - mean_i * mean_p
    var_i = T.box_mean(guide * guide, r) - mean_i * mean_i
    a = cov_ip / (var_i + cfg.epsilon)
    b = mean_p - a * mean_i
    return T.box_mean(a, r) * guide + T.box_mean(b, r)

"""Training configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ContractError, FormatError, ImageIOError
from .guided_filter import GuidedFilterConfig
from .losses import LossWeights


@dataclass
class TrainConfig:
    # optimisation
    learning_rate: float = 1e-4
    batch_size: int = 4
    iterations: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # generator
    layers: int = 8
    split: int = 2
    width: int = 32
    stability_clamp: float = 2.0
    # loss weights
    eta: float = 0.5
    lam: float = 0.6
    mu: float = 200.0
    adv_weight: float = 1.0
    # ablations
    no_tc: bool = False
    no_dp: bool = False
    no_r: bool = False
    forward_only: bool = False
    # data: images are resized to height x width, then randomly cropped
    height: int = 64
    width_px: int = 96
    crop_height: int = 0
    crop_width: int = 0
    hflip: bool = True
    # discriminators
    disc_width: int = 64
    disc_size: int = 96
    # guided filter and feature extractor
    gf_radius: int = 4
    gf_epsilon: float = 1e-2
    phi_weights: str = ""
    phi_seed: int = 1234
    # bookkeeping
    log_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("learning_rate", "eta", "lam", "mu", "adv_weight", "adam_eps", "gf_epsilon",
                     "stability_clamp"):
            if getattr(self, name) < 0:
                raise ContractError(f"config {name} must be >= 0")
        if self.iterations < 1:
            raise ContractError("config iterations must be >= 1")
        for name in ("batch_size", "layers", "width", "height", "width_px", "disc_width",
                     "disc_size", "gf_radius"):
            if getattr(self, name) < 1:
                raise ContractError(f"config {name} must be >= 1")
        if self.split not in (1, 2, 3):
            raise ContractError("config split must be 1, 2 or 3")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("adam betas must lie in [0, 1)")
        ch, cw = self.crop_size
        if ch % 2 or cw % 2 or ch > self.height or cw > self.width_px:
            raise ContractError(f"crop {ch}x{cw} must be even and fit in {self.height}x{self.width_px}")
        return self

    @property
    def crop_size(self):
        return (self.crop_height or self.height, self.crop_width or self.width_px)

    @property
    def weights(self):
        return LossWeights(eta=self.eta, lam=self.lam, mu=self.mu, adv=self.adv_weight)

    @property
    def guided_filter(self):
        return GuidedFilterConfig(self.gf_radius, self.gf_epsilon)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {f.name: _format(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, entries, source="<config>"):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in entries.items():
            if key not in kinds:
                raise ContractError(f"{source}: unknown config key {key!r}")
            values[key] = _parse(raw, kinds[key], key, source)
        return cls(**values)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw, kind, key, source):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ContractError(f"{source}: bad value {raw!r} for {key}") from None


def parse_config_text(text, source="<config>"):
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in entries:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return TrainConfig.from_dict(entries, source)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot read config ({exc.strerror or exc})") from None
    except UnicodeDecodeError:
        raise FormatError(f"{path}: config is not UTF-8") from None
    return parse_config_text(text, str(path))


def dump_config(cfg: TrainConfig):
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())

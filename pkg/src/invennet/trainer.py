"""Unpaired adversarial training of the invertible enhancer.

One step: enhance a low-light batch (forward pass) and degrade a normal-light
batch (inverse pass), update the generator on the weighted objective, then
update each discriminator once on detached fakes.
"""

from __future__ import annotations

import logging
import math
import re
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import container
from . import tensor as T
from .config import TrainConfig
from .discriminator import PatchDiscriminator
from .errors import DivergenceError, FormatError
from .imageio import DatasetIndex, load_tensor, resize_array
from .invnet import InvEnNet, squeeze
from .losses import (
    LossParts,
    dp_loss,
    load_feature_extractor,
    lsgan_discriminator,
    lsgan_generator,
    reversibility_loss,
    tc_loss,
    total_loss,
)
from .optim import AdamState

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "invennet-checkpoint"


# ---------------------------------------------------------------- models


@dataclass
class Models:
    gen: InvEnNet
    d_normal: PatchDiscriminator
    d_low: PatchDiscriminator
    phi: object
    opt_gen: AdamState
    opt_dn: AdamState
    opt_dl: AdamState
    iteration: int = 0


def build_models(config: TrainConfig) -> Models:
    gen = InvEnNet(config.layers, config.split, config.width, config.stability_clamp or None,
                   seed=config.seed)
    d_normal = PatchDiscriminator(config.disc_width, seed=config.seed + 1)
    d_low = PatchDiscriminator(config.disc_width, seed=config.seed + 2)
    phi = load_feature_extractor(config.phi_weights or None, seed=config.phi_seed)
    betas = (config.beta1, config.beta2)

    def opt(module):
        return AdamState(module.named_parameters(), config.learning_rate, betas, config.adam_eps)

    return Models(gen, d_normal, d_low, phi, opt(gen), opt(d_normal), opt(d_low))


# ---------------------------------------------------------------- reports


@dataclass
class LossReport:
    """Loss values of one step; ``None`` marks components that were not computed."""

    iteration: int
    adv_g_f: float
    adv_g_b: float | None
    adv_d_f: float
    adv_d_b: float | None
    tc_f: float
    tc_b: float | None
    dp_f: float
    dp_b: float | None
    r_f: float
    r_b: float | None
    total: float

    def _pair(self, name):
        vals = [getattr(self, f"{name}_f"), getattr(self, f"{name}_b")]
        return float(sum(v for v in vals if v is not None))

    @property
    def adv_g(self):
        return self._pair("adv_g")

    @property
    def adv_d(self):
        return self._pair("adv_d")

    @property
    def tc(self):
        return self._pair("tc")

    @property
    def dp(self):
        return self._pair("dp")

    @property
    def r(self):
        return self._pair("r")

    def log_line(self):
        vals = (self.adv_g, self.adv_d, self.tc, self.dp, self.r, self.total)
        names = ("adv_g", "adv_d", "tc", "dp", "r", "total")
        body = " ".join(f"{n}={_fmt(v)}" for n, v in zip(names, vals))
        return f"iter={self.iteration} {body}"


def _fmt(v):
    return format(float(v), ".9g")


_LOG_KEYS = ("iter", "adv_g", "adv_d", "tc", "dp", "r", "total")
_LOG_RE = re.compile(r"^" + r" ".join(rf"{k}=(\S+)" for k in _LOG_KEYS) + r"$")


def parse_log_line(line):
    """Inverse of ``LossReport.log_line``: returns a dict of the seven fields."""
    m = _LOG_RE.match(line.strip())
    if not m:
        raise FormatError(f"not a loss log line: {line!r}")
    out = {"iter": int(m.group(1))}
    for key, raw in zip(_LOG_KEYS[1:], m.groups()[1:]):
        out[key] = float(raw)
    return out


# ---------------------------------------------------------------- step


def disc_scores(disc, subs, size):
    x = T.concat(list(subs), axis=0)
    return disc(T.resize_bilinear(x, size, size))


def _item(x):
    return None if x is None else float(x.data) if isinstance(x, T.Tensor) else float(x)


def _generator_parts(low, normal, models: Models, config: TrainConfig):
    gen = models.gen
    gf = config.guided_filter
    alpha = squeeze(low)
    alpha_hat, trace_f = gen.forward(alpha)
    parts = LossParts()
    parts.adv_f = lsgan_generator(disc_scores(models.d_normal, alpha_hat, config.disc_size))
    parts.tc_f = 0.0 if config.no_tc else tc_loss(trace_f)
    parts.dp_f = 0.0 if config.no_dp else dp_loss(alpha, alpha_hat, models.phi, gf)
    parts.r_f = 0.0 if config.no_r else reversibility_loss(
        alpha, alpha_hat, lambda xs: gen.inverse(xs)[0])
    beta = beta_hat = None
    if config.forward_only:
        parts.adv_b = parts.tc_b = parts.dp_b = parts.r_b = None
    else:
        beta = squeeze(normal)
        beta_hat, trace_b = gen.inverse(beta)
        parts.adv_b = lsgan_generator(disc_scores(models.d_low, beta_hat, config.disc_size))
        parts.tc_b = 0.0 if config.no_tc else tc_loss(trace_b)
        parts.dp_b = 0.0 if config.no_dp else dp_loss(beta, beta_hat, models.phi, gf)
        parts.r_b = 0.0 if config.no_r else reversibility_loss(
            beta, beta_hat, lambda xs: gen.forward(xs)[0])
    return parts, alpha, alpha_hat, beta, beta_hat


def _disc_update(disc, opt, real_subs, fake_subs, size):
    disc.requires_grad_(True)
    real = [T.tensor(s.data) for s in real_subs]
    fake = [T.tensor(s.data) for s in fake_subs]
    scores = disc_scores(disc, real + fake, size)
    n = scores.shape[0] // 2
    real_scores, fake_scores = T.split(scores, [n, n], axis=0)
    loss = lsgan_discriminator(real_scores, fake_scores)
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceError("discriminator loss")
    grads = T.gradients(loss, list(opt.params.values()))
    opt.step(grads)
    disc.requires_grad_(False)
    return value


def train_step(batch_low, batch_normal, models: Models, config: TrainConfig,
               update_discriminators=True) -> LossReport:
    """One generator update followed by one update of each discriminator."""
    iteration = models.iteration + 1
    low = T.tensor(batch_low)
    normal = T.tensor(batch_normal)
    models.gen.requires_grad_(True)
    models.d_normal.requires_grad_(False)
    models.d_low.requires_grad_(False)
    try:
        parts, alpha, alpha_hat, beta, beta_hat = _generator_parts(low, normal, models, config)
        total = total_loss(parts, config.weights)
        total_value = float(total.data)
        if not math.isfinite(total_value):
            raise DivergenceError("total")
        grads = T.gradients(total, list(models.opt_gen.params.values()))
        models.opt_gen.step(grads)
        adv_d_f = adv_d_b = None
        if update_discriminators:
            if beta is None:
                beta = squeeze(normal)
            adv_d_f = _disc_update(models.d_normal, models.opt_dn, beta, alpha_hat, config.disc_size)
            if not config.forward_only:
                adv_d_b = _disc_update(models.d_low, models.opt_dl, alpha, beta_hat, config.disc_size)
        else:
            adv_d_f = 0.0
            adv_d_b = None if config.forward_only else 0.0
    except DivergenceError as exc:
        raise DivergenceError(exc.component, iteration) from None
    models.iteration = iteration
    return LossReport(
        iteration,
        _item(parts.adv_f), _item(parts.adv_b), adv_d_f, adv_d_b,
        _item(parts.tc_f), _item(parts.tc_b), _item(parts.dp_f), _item(parts.dp_b),
        _item(parts.r_f), _item(parts.r_b), total_value,
    )


# ---------------------------------------------------------------- data


class ImagePool:
    """Images of one domain, resized to the training resolution and held in memory."""

    def __init__(self, paths, height, width):
        if not paths:
            raise FormatError("empty image pool")
        self.paths = list(paths)
        self.images = np.stack([resize_array(load_tensor(p), height, width) for p in self.paths])

    def __len__(self):
        return len(self.images)

    def sample(self, rng, batch_size, crop, hflip):
        idx = rng.integers(0, len(self.images), size=batch_size)
        ch, cw = crop
        h, w = self.images.shape[-2:]
        out = np.empty((batch_size, 3, ch, cw), dtype=np.float32)
        for b, i in enumerate(idx):
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            patch = self.images[i, :, top:top + ch, left:left + cw]
            if hflip and rng.random() < 0.5:
                patch = patch[:, :, ::-1]
            out[b] = patch
        return out


def sample_batches(pools, config: TrainConfig, iteration):
    """Batches for one iteration; depends only on (seed, iteration) so resumes replay exactly."""
    rng = np.random.default_rng([config.seed, iteration])
    low_pool, normal_pool = pools
    low = low_pool.sample(rng, config.batch_size, config.crop_size, config.hflip)
    normal = normal_pool.sample(rng, config.batch_size, config.crop_size, config.hflip)
    return low, normal


# ---------------------------------------------------------------- checkpoints


def checkpoint_payload(models: Models, config: TrainConfig):
    tensors = OrderedDict()
    for prefix, module in (("gen", models.gen), ("dn", models.d_normal), ("dl", models.d_low)):
        for name, p in module.named_parameters().items():
            tensors[f"{prefix}.{name}"] = p.data
    for prefix, opt in (("adam.gen", models.opt_gen), ("adam.dn", models.opt_dn),
                        ("adam.dl", models.opt_dl)):
        tensors.update(opt.state_arrays(prefix))
    meta = {f"config.{k}": v for k, v in config.to_dict().items()}
    meta.update({
        "kind": CHECKPOINT_KIND,
        "iteration": str(models.iteration),
        "adam.gen.step": str(models.opt_gen.step_count),
        "adam.dn.step": str(models.opt_dn.step_count),
        "adam.dl.step": str(models.opt_dl.step_count),
    })
    return tensors, meta


def save_checkpoint(path, models: Models, config: TrainConfig):
    tensors, meta = checkpoint_payload(models, config)
    container.save(path, tensors, meta)


def load_checkpoint(path, overrides=None):
    """Rebuild (models, config) from a checkpoint; ``overrides`` patch config values."""
    tensors, meta = container.load(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise FormatError(f"{path}: not a training checkpoint")
    entries = {k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")}
    config = TrainConfig.from_dict(entries, str(path))
    if overrides:
        config = config.replace(**overrides)
    models = build_models(config)
    try:
        models.gen.load_arrays(tensors, "gen.")
        models.d_normal.load_arrays(tensors, "dn.")
        models.d_low.load_arrays(tensors, "dl.")
        models.opt_gen.load_state_arrays(tensors, "adam.gen", meta["adam.gen.step"])
        models.opt_dn.load_state_arrays(tensors, "adam.dn", meta["adam.dn.step"])
        models.opt_dl.load_state_arrays(tensors, "adam.dl", meta["adam.dl.step"])
        models.iteration = int(meta["iteration"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: checkpoint does not match its config ({exc})") from None
    return models, config


def load_generator(path):
    """The generator alone (for inference); accepts full checkpoints."""
    models, _ = load_checkpoint(path)
    return models.gen


# ---------------------------------------------------------------- loop


def train_loop(config: TrainConfig, dataset: DatasetIndex, out_path=None, resume=None,
               log_stream=None, checkpoint_every=None, log_every=None):
    """Run until ``config.iterations`` steps have been taken; returns (models, reports)."""
    dataset.validate()
    if resume is not None:
        models, config = load_checkpoint(resume, overrides={"iterations": config.iterations})
    else:
        models = build_models(config)
    log_every = config.log_every if log_every is None else log_every
    checkpoint_every = config.checkpoint_every if checkpoint_every is None else checkpoint_every
    crop_h, crop_w = config.height, config.width_px
    pools = (ImagePool(dataset.low_paths, crop_h, crop_w),
             ImagePool(dataset.normal_paths, crop_h, crop_w))
    reports = []
    while models.iteration < config.iterations:
        low, normal = sample_batches(pools, config, models.iteration + 1)
        report = train_step(low, normal, models, config)
        reports.append(report)
        it = report.iteration
        if log_every and (it % log_every == 0 or it == 1 or it == config.iterations):
            line = report.log_line()
            log.info(line)
            if log_stream is not None:
                log_stream.write(line + "\n")
                log_stream.flush()
        if out_path is not None and checkpoint_every and it % checkpoint_every == 0:
            save_checkpoint(out_path, models, config)
    if out_path is not None:
        save_checkpoint(out_path, models, config)
    return models, reports


__all__ = [
    "LossReport", "Models", "build_models", "train_step", "train_loop", "parse_log_line",
    "save_checkpoint", "load_checkpoint", "load_generator", "sample_batches", "ImagePool",
]

"""Procedural unpaired dataset: normal-light scenes and a disjoint darkened set."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ImageIOError
from .imageio import luminance, save_tensor

TOY_HEIGHT = 64
TOY_WIDTH = 96


@dataclass(frozen=True)
class Darkening:
    """low = gain * normal ** gamma, per image."""

    gain: float
    gamma: float

    def apply(self, image):
        return (self.gain * np.power(np.clip(image, 0.0, 1.0), self.gamma)).astype(np.float32)


def sample_darkening(rng, gain_range=(0.1, 0.4), gamma_range=(2.0, 4.0)):
    return Darkening(float(rng.uniform(*gain_range)), float(rng.uniform(*gamma_range)))


def _smooth(field, passes=2):
    for _ in range(passes):
        field = (np.roll(field, 1, -1) + field + np.roll(field, -1, -1)) / 3.0
        field = (np.roll(field, 1, -2) + field + np.roll(field, -1, -2)) / 3.0
    return field


def render_scene(rng, height=TOY_HEIGHT, width=TOY_WIDTH):
    """A well-exposed synthetic scene: sky/ground gradient, shapes, stripes and grain."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)
    top = rng.uniform(0.45, 0.95, size=3)
    bottom = rng.uniform(0.25, 0.75, size=3)
    img = top[:, None, None] * (1 - yy) + bottom[:, None, None] * yy
    tilt = rng.uniform(-0.15, 0.15)
    img = img + tilt * (xx - 0.5)
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.1, 1.0, size=3)
        cy, cx = rng.uniform(0, 1, size=2)
        ry, rx = rng.uniform(0.08, 0.35, size=2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        img = np.where(mask[None], color[:, None, None], img)
    if rng.random() < 0.6:
        freq = rng.uniform(6, 18)
        angle = rng.uniform(0, np.pi)
        phase = np.cos(angle) * xx * width / height + np.sin(angle) * yy
        img = img + 0.08 * np.sin(2 * np.pi * freq * phase)[None]
    img = _smooth(img, passes=1)
    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass
class ToySet:
    normal: list
    low: list
    test_low: list
    test_normal: list
    darkening: list


def make_toyset(count=64, seed=0, test_count=8, height=TOY_HEIGHT, width=TOY_WIDTH):
    """Scenes for the normal pool and the low pool are rendered independently (unpaired).

    ``test_low`` are darkened renders of further scenes; ``test_normal`` holds their
    originals so tests can measure how close enhancement gets.
    """
    if count < 1 or test_count < 0:
        raise ContractError("toy set needs count >= 1 and test_count >= 0")
    rng = np.random.default_rng(seed)
    normal = [render_scene(rng, height, width) for _ in range(count)]
    low, darkening = [], []
    for _ in range(count):
        d = sample_darkening(rng)
        low.append(d.apply(render_scene(rng, height, width)))
        darkening.append(d)
    test_normal = [render_scene(rng, height, width) for _ in range(test_count)]
    test_low = []
    for scene in test_normal:
        d = sample_darkening(rng)
        test_low.append(d.apply(scene))
        darkening.append(d)
    return ToySet(normal, low, test_low, test_normal, darkening)


def write_toyset(out_dir, count=64, seed=0, test_count=8):
    """Write normal/, low/, test_low/ and test_normal/ PNG folders; returns the ToySet."""
    out_dir = Path(out_dir)
    toy = make_toyset(count, seed, test_count)
    groups = {"normal": toy.normal, "low": toy.low, "test_low": toy.test_low,
              "test_normal": toy.test_normal}
    for name, images in groups.items():
        folder = out_dir / name
        try:
            folder.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ImageIOError(f"{folder}: cannot create ({exc.strerror or exc})") from None
        for i, img in enumerate(images):
            save_tensor(folder / f"{name}_{i:04d}.png", img)
    return toy


def mean_luminance(images):
    """Mean Rec.601 luma over a list of 3xHxW arrays."""
    return float(np.mean([luminance(img).mean() for img in images]))

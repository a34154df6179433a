"""No-reference quality scoring (NIQE-style) and simple luminance statistics.

Features: MSCN coefficients of the luma channel, fitted with asymmetric
generalised Gaussians, 18 values per scale on two scales (36 in total).
A model is the mean and covariance of patch features over a pristine corpus;
an image's score is a Mahalanobis-like distance between its own patch
statistics and the model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.linalg import solve_triangular
from scipy.special import gamma as gamma_fn

from . import container
from .errors import ContractError, FormatError, NumericError
from .imageio import luminance

WINDOW_SIZE = 7
WINDOW_SIGMA = 7.0 / 6.0
PATCH_SIZE = 96
SHARPNESS_FRACTION = 0.75
SCORE_REGULARIZER = 1e-6
MIN_AGGD_SAMPLES = 100
FEATURES_PER_SCALE = 18
PAIR_SHIFTS = ((0, 1), (1, 0), (1, 1), (1, -1))  # horizontal, vertical, two diagonals
MODEL_KIND = "niqe-model"

_SHAPE_GRID = np.arange(0.2, 10.0 + 5e-4, 0.001)
_RATIO_GRID = gamma_fn(2.0 / _SHAPE_GRID) ** 2 / (gamma_fn(1.0 / _SHAPE_GRID) * gamma_fn(3.0 / _SHAPE_GRID))


# ---------------------------------------------------------------- luminance stats


def gray(image):
    """Luma of a 3 x H x W image; 2-d input is returned as float64 unchanged."""
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[0] == 3:
        return luminance(arr)
    raise ContractError(f"expected H x W or 3 x H x W, got shape {arr.shape}")


def mean_luminance(image):
    return float(gray(image).mean())


def rms_contrast(image):
    return float(gray(image).std())


# ---------------------------------------------------------------- MSCN / AGGD


def gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def local_statistics(gray_image, window=None):
    """Gaussian-weighted local mean and standard deviation (mirrored borders)."""
    window = gaussian_window() if window is None else window
    x = np.asarray(gray_image, dtype=np.float64)
    mu = ndimage.correlate(x, window, mode="mirror")
    var = ndimage.correlate(x * x, window, mode="mirror") - mu * mu
    return mu, np.sqrt(np.abs(var))


def mscn(gray_image, stabilizer=1.0):
    """Mean-subtracted, contrast-normalised coefficients (I - mu) / (sigma + stabilizer)."""
    x = np.asarray(gray_image, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"mscn expects a 2-d grayscale array, got shape {x.shape}")
    mu, sigma = local_statistics(x)
    return (x - mu) / (sigma + stabilizer)


@dataclass(frozen=True)
class AggdFit:
    shape: float
    left_scale: float
    right_scale: float

    def __iter__(self):
        return iter((self.shape, self.left_scale, self.right_scale))

    @property
    def mean_param(self):
        a = self.shape
        return (self.right_scale - self.left_scale) * gamma_fn(2.0 / a) / gamma_fn(1.0 / a)


def aggd_fit(samples):
    """Moment-matching fit of an asymmetric generalised Gaussian via a shape lookup table."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < MIN_AGGD_SAMPLES:
        raise ContractError(f"aggd_fit needs >= {MIN_AGGD_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise NumericError("aggd_fit: non-finite samples")
    neg = x[x < 0]
    pos = x[x > 0]
    if neg.size == 0 or pos.size == 0:
        raise NumericError("aggd_fit: degenerate samples (need values on both sides of zero)")
    # sorted sums make mirrored samples give bit-identical left and right scales
    left_std = np.sqrt(np.mean(np.sort(neg * neg)))
    right_std = np.sqrt(np.mean(np.sort(pos * pos)))
    gamma_hat = left_std / right_std
    r_hat = np.mean(np.abs(x)) ** 2 / np.mean(x * x)
    r_norm = r_hat * (gamma_hat ** 3 + 1) * (gamma_hat + 1) / (gamma_hat ** 2 + 1) ** 2
    shape = float(_SHAPE_GRID[np.argmin((_RATIO_GRID - r_norm) ** 2)])
    factor = np.sqrt(gamma_fn(1.0 / shape) / gamma_fn(3.0 / shape))
    return AggdFit(shape, float(left_std * factor), float(right_std * factor))


def paired_products(coeffs, shift):
    """coeffs * coeffs shifted circularly by (rows, cols)."""
    return coeffs * np.roll(coeffs, shift, axis=(0, 1))


def scale_features(coeffs):
    """18 AGGD features of one block of MSCN coefficients."""
    fit = aggd_fit(coeffs)
    feats = [fit.shape, (fit.left_scale + fit.right_scale) / 2]
    for shift in PAIR_SHIFTS:
        f = aggd_fit(paired_products(coeffs, shift))
        feats += [f.shape, f.mean_param, f.left_scale ** 2, f.right_scale ** 2]
    return np.array(feats)


def downsample2(gray_image):
    """2x2 block mean (odd trailing rows/columns are dropped)."""
    x = np.asarray(gray_image, dtype=np.float64)
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2])


def patch_features(image, patch_size=PATCH_SIZE, stabilizer=1.0):
    """(features P x 36, sharpness P) for the non-overlapping patches of an image."""
    g1 = gray(image)
    rows, cols = g1.shape[0] // patch_size, g1.shape[1] // patch_size
    if rows == 0 or cols == 0:
        raise ContractError(f"image {g1.shape[0]}x{g1.shape[1]} smaller than one {patch_size}px patch")
    g2 = downsample2(g1)
    per_scale = []
    sharp = None
    for level, (g, p) in enumerate(((g1, patch_size), (g2, patch_size // 2))):
        mu, sigma = local_statistics(g)
        coeffs = (g - mu) / (sigma + stabilizer)
        feats, sh = [], []
        for r in range(rows):
            for c in range(cols):
                block = (slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p))
                feats.append(scale_features(coeffs[block]))
                sh.append(sigma[block].mean())
        per_scale.append(np.array(feats))
        if level == 0:
            sharp = np.array(sh)
    return np.concatenate(per_scale, axis=1), sharp


# ---------------------------------------------------------------- model


@dataclass
class NiqeModel:
    mu: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        d = self.mu.size
        if self.sigma.shape != (d, d):
            raise FormatError(f"NIQE covariance shape {self.sigma.shape} does not match mean ({d})")

    @property
    def patch_size(self):
        return int(self.meta.get("patch_size", PATCH_SIZE))

    @property
    def stabilizer(self):
        return float(self.meta.get("stabilizer", 1.0))

    def save(self, path):
        meta = {"kind": MODEL_KIND, **{k: str(v) for k, v in self.meta.items()}}
        container.save(path, {"niqe.mu": self.mu, "niqe.sigma": self.sigma}, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = container.load(path)
        if meta.get("kind") != MODEL_KIND or "niqe.mu" not in tensors or "niqe.sigma" not in tensors:
            raise FormatError(f"{path}: not a NIQE model")
        meta = {k: v for k, v in meta.items() if k != "kind"}
        return cls(tensors["niqe.mu"], tensors["niqe.sigma"], meta)


def corpus_hash(images):
    h = hashlib.sha256()
    for img in images:
        arr = np.ascontiguousarray(np.asarray(img, dtype=np.float32))
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:16]


def fit_model(corpus, patch_size=PATCH_SIZE, sharpness_fraction=SHARPNESS_FRACTION,
              stabilizer=1.0, min_images=10, mirror=True):
    """Mean and covariance of the sharpest patches of each corpus image.

    With ``mirror`` every image also contributes its horizontal mirror.  A flip
    swaps the two diagonal pair-product features, so a mirrored corpus makes
    the model symmetric in them and scores invariant to horizontal flips.
    """
    corpus = list(corpus)
    if len(corpus) < min_images:
        raise ContractError(f"NIQE fit needs >= {min_images} images, got {len(corpus)}")
    if patch_size < 2 or patch_size % 2:
        raise ContractError(f"patch size must be an even number >= 2, got {patch_size}")
    images = corpus + [np.asarray(img)[..., ::-1] for img in corpus] if mirror else corpus
    selected = []
    for img in images:
        feats, sharp = patch_features(img, patch_size, stabilizer)
        keep = sharp > sharpness_fraction * sharp.max() if sharp.max() > 0 else np.ones_like(sharp, bool)
        if not keep.any():
            keep = sharp >= sharp.max()
        selected.append(feats[keep])
    feats = np.concatenate(selected, axis=0)
    if feats.shape[0] < 2:
        raise NumericError("NIQE fit selected fewer than two patches")
    meta = {"patch_size": patch_size, "sharpness_fraction": sharpness_fraction,
            "stabilizer": stabilizer, "mirror": mirror, "patches": feats.shape[0],
            "corpus_hash": corpus_hash(corpus)}
    return NiqeModel(feats.mean(axis=0), np.cov(feats, rowvar=False), meta)


def image_statistics(image, model: NiqeModel):
    feats, _ = patch_features(image, model.patch_size, model.stabilizer)
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) if feats.shape[0] > 1 else np.zeros((mu.size, mu.size))
    return mu, cov


def solve_spd(matrix, rhs):
    """Solve matrix @ x = rhs for a symmetric positive-definite matrix (Cholesky)."""
    try:
        lower = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NumericError("NIQE covariance is not positive definite after regularisation") from None
    y = solve_triangular(lower, rhs, lower=True)
    return solve_triangular(lower.T, y, lower=False)


def niqe_distance(mu_img, cov_img, model: NiqeModel, regularizer=SCORE_REGULARIZER):
    d = np.asarray(mu_img, np.float64) - model.mu
    pooled = (model.sigma + np.asarray(cov_img, np.float64)) / 2 + regularizer * np.eye(d.size)
    if not np.all(np.isfinite(pooled)) or not np.all(np.isfinite(d)):
        raise NumericError("NIQE statistics are not finite")
    q = float(d @ solve_spd(pooled, d))
    return float(np.sqrt(max(q, 0.0)))


def niqe_score(image, model: NiqeModel):
    """Lower is better; 0 means the image statistics match the model exactly."""
    mu, cov = image_statistics(image, model)
    return niqe_distance(mu, cov, model)

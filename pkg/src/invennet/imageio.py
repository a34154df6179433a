"""Image files, byte/float conversion, even-size padding and dataset scanning.

PNG goes through Pillow; binary PPM (P6, maxval 255) is parsed here so that
tests can rely on a byte-exact, dependency-free format.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ContractError, FormatError, ImageIOError
from .tensor import bilinear_matrix

IMAGE_SUFFIXES = (".png", ".ppm")


@dataclass
class ImageBuffer:
    """8-bit RGB pixels, row-major, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ContractError(f"ImageBuffer needs HxWx3 pixels, got {px.shape}")
        self.pixels = np.ascontiguousarray(px, dtype=np.uint8)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, ImageBuffer) and np.array_equal(self.pixels, other.pixels)


# ------------------------------------------------------------------ PPM


def _read_ppm(data: bytes, path) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageIOError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: PPM magic {tokens[0]!r} unsupported (only P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: PPM maxval {maxval} unsupported (8-bit only)")
    need = width * height * 3
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise ImageIOError(f"{path}: truncated PPM raster ({len(raster)} of {need} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def _write_ppm(path, pixels: np.ndarray):
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


# ------------------------------------------------------------------ public I/O


def read_image(path) -> ImageBuffer:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror or exc}") from None
    if data[:2] in (b"P6", b"P3", b"P5", b"P2", b"P1", b"P4"):
        return ImageBuffer(_read_ppm(data, path))
    try:
        with Image.open(path) as img:
            fmt = img.format or "unknown"
            if fmt != "PNG":
                raise FormatError(f"{path}: format {fmt} unsupported (PNG or PPM P6 only)")
            mode = img.mode
            if mode in ("I;16", "I;16B", "I", "F", "1"):
                raise FormatError(f"{path}: PNG mode {mode} unsupported (8-bit only)")
            img.load()
            rgb = img.convert("RGB")
            return ImageBuffer(np.asarray(rgb, dtype=np.uint8))
    except UnidentifiedImageError:
        raise FormatError(f"{path}: unrecognised image format") from None
    except (OSError, SyntaxError) as exc:
        if isinstance(exc, (FormatError, ImageIOError)):
            raise
        raise ImageIOError(f"{path}: unreadable or truncated image ({exc})") from None


def write_image(path, buf: ImageBuffer):
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".ppm":
            _write_ppm(path, buf.pixels)
        elif suffix == ".png":
            Image.fromarray(buf.pixels, mode="RGB").save(path, format="PNG")
        else:
            raise FormatError(f"{path}: cannot write {suffix or 'extension-less'} files (use .png or .ppm)")
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror or exc}") from None


def to_tensor(buf: ImageBuffer) -> np.ndarray:
    """3 x H x W float32 array with value = byte / 255."""
    return (buf.pixels.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def from_tensor(arr) -> ImageBuffer:
    """Inverse of ``to_tensor``: scale by 255, round half away from zero, clamp."""
    arr = np.asarray(getattr(arr, "data", arr), dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"from_tensor expects 3xHxW, got {arr.shape}")
    scaled = arr * 255.0
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return ImageBuffer(np.clip(rounded, 0, 255).astype(np.uint8).transpose(1, 2, 0))


def load_tensor(path) -> np.ndarray:
    return to_tensor(read_image(path))


def save_tensor(path, arr):
    write_image(path, from_tensor(arr))


# ------------------------------------------------------------------ geometry


@dataclass(frozen=True)
class CropRecord:
    """Original size of an image padded by ``pad_to_even``; empty when nothing was added."""

    height: int
    width: int
    pad_bottom: int = 0
    pad_right: int = 0

    @property
    def empty(self):
        return self.pad_bottom == 0 and self.pad_right == 0

    def crop(self, arr):
        return arr[..., : self.height, : self.width]


def pad_to_even(arr):
    """Reflect-pad a C x H x W array by at most one row/column at the bottom/right."""
    arr = np.asarray(arr)
    h, w = arr.shape[-2:]
    if h < 1 or w < 1:
        raise ContractError(f"pad_to_even needs H, W >= 1, got {h}x{w}")
    pb, pr = h % 2, w % 2
    record = CropRecord(h, w, pb, pr)
    if record.empty:
        return arr, record
    pad = [(0, 0)] * (arr.ndim - 2) + [(0, pb), (0, pr)]
    return np.pad(arr, pad, mode="reflect"), record


def resize_array(arr, height: int, width: int):
    """Bilinear resize of a ... x H x W array (half-pixel centres)."""
    arr = np.asarray(arr)
    h, w = arr.shape[-2:]
    if (h, w) == (height, width):
        return arr.astype(np.float32, copy=True)
    rows = bilinear_matrix(h, height)
    cols = bilinear_matrix(w, width)
    out = np.matmul(np.matmul(rows, arr.astype(np.float64)), cols.T)
    return out.astype(np.float32)


def luminance(arr):
    """Rec.601 luma of a 3 x H x W (or N x 3 x H x W) array."""
    arr = np.asarray(getattr(arr, "data", arr), dtype=np.float64)
    r, g, b = arr[..., 0, :, :], arr[..., 1, :, :], arr[..., 2, :, :]
    return 0.299 * r + 0.587 * g + 0.114 * b


# ------------------------------------------------------------------ datasets


def scan_directory(directory) -> list[str]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(f"{directory}: not a directory")
    paths = [
        os.fspath(p) for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    ]
    return sorted(paths)


@dataclass
class DatasetIndex:
    low_paths: list = field(default_factory=list)
    normal_paths: list = field(default_factory=list)
    rng_seed: int = 0

    @classmethod
    def scan(cls, low_dir, normal_dir, rng_seed=0):
        return cls(scan_directory(low_dir), scan_directory(normal_dir), rng_seed)

    def validate(self):
        if not self.low_paths:
            raise ContractError("dataset has no low-light images")
        if not self.normal_paths:
            raise ContractError("dataset has no normal-light images")
        shared = {os.path.realpath(p) for p in self.low_paths} & {
            os.path.realpath(p) for p in self.normal_paths
        }
        if shared:
            raise ContractError(f"{len(shared)} path(s) appear in both pools, e.g. {sorted(shared)[0]}")
        return self

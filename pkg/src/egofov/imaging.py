"""Grayscale image type, portable-anymap I/O and raster geometry.

Conventions used by every module in this package: x is the column,
y is the row, origin at the top-left pixel. Luminance conversion uses
the BT.601 weights 0.299/0.587/0.114 with half-up rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ImageFormatError, ImageReadError

_LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class Point2(NamedTuple):
    """Sub-pixel image location (x = column, y = row)."""

    x: float
    y: float


@dataclass
class Window:
    """Crop window: center point plus integer width/height in pixels."""

    center: Point2
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("window dimensions must be >= 1")


@dataclass(eq=False)
class GrayImage:
    """Row-major 8-bit luminance raster.

    ``pixels`` is a (height, width) uint8 array. ``panoramic`` marks
    images whose horizontal axis wraps (equirectangular references);
    crop honours the flag by sampling columns modulo width.
    """

    pixels: np.ndarray
    panoramic: bool = field(default=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("pixels must be a 2-D array with positive dimensions")
        if arr.dtype != np.uint8:
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        self.pixels = arr

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def center(self) -> Point2:
        return Point2((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def same_pixels(self, other: "GrayImage") -> bool:
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


def _luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luminance of an (..., 3) array, rounded half-up to uint8."""
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    y = _LUMA_WEIGHTS[0] * r + _LUMA_WEIGHTS[1] * g + _LUMA_WEIGHTS[2] * b
    return np.clip(_round_half_up(y), 0, 255).astype(np.uint8)


def _read_pnm_tokens(blob: bytes, count: int, offset: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated ASCII integers, skipping # comments."""
    tokens: list[int] = []
    i = offset
    n = len(blob)
    while len(tokens) < count:
        while i < n and blob[i : i + 1].isspace():
            i += 1
        if i < n and blob[i : i + 1] == b"#":
            while i < n and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not blob[i : i + 1].isspace() and blob[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated anymap header or data")
        try:
            tokens.append(int(blob[start:i]))
        except ValueError as exc:
            raise ImageFormatError(f"bad anymap token {blob[start:i]!r}") from exc
    return tokens, i


def _parse_pnm(blob: bytes) -> np.ndarray:
    magic = blob[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageFormatError(f"unsupported anymap magic {magic!r}")
    (width, height, maxval), pos = _read_pnm_tokens(blob, 3, 2)
    if width < 1 or height < 1:
        raise ImageFormatError("anymap dimensions must be positive")
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"unsupported anymap maxval {maxval}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels

    if magic in (b"P2", b"P3"):
        values, _ = _read_pnm_tokens(blob, count, pos)
        data = np.array(values, dtype=np.int64)
    else:
        # Binary payloads start after exactly one whitespace byte.
        payload = blob[pos + 1 : pos + 1 + count]
        if len(payload) < count:
            raise ImageFormatError("anymap payload shorter than header promises")
        data = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)

    if data.min() < 0 or data.max() > maxval:
        raise ImageFormatError("anymap sample outside [0, maxval]")
    if channels == 3:
        rgb = data.reshape(height, width, 3)
        return _luma(rgb)
    return data.reshape(height, width).astype(np.uint8)


def load_image(path: str | Path, panoramic: bool = False) -> GrayImage:
    """Load a raster file as luminance.

    Portable anymaps (P2/P3/P5/P6) are parsed natively and round-trip
    bit-exactly through :func:`save_image`. Other formats go through
    Pillow when it can decode them; color inputs are reduced with the
    BT.601 weights either way.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ImageReadError(f"cannot read image file {path}: {exc}") from exc
    if blob[:2] in (b"P2", b"P3", b"P5", b"P6"):
        return GrayImage(_parse_pnm(blob), panoramic=panoramic)
    try:
        from PIL import Image as PILImage
    except ImportError as exc:  # pragma: no cover - Pillow is a declared dep
        raise ImageFormatError(f"{path}: not an anymap and Pillow unavailable") from exc
    try:
        with PILImage.open(path) as img:
            rgb = np.asarray(img.convert("RGB"))
    except Exception as exc:
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
    return GrayImage(_luma(rgb), panoramic=panoramic)


def save_image(image: GrayImage, path: str | Path) -> None:
    """Write a binary P5 anymap (bit-exact round trip with load_image)."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.pixels.tobytes())


def save_color_ppm(rgb: np.ndarray, path: str | Path) -> None:
    """Write an (h, w, 3) uint8 array as a binary P6 anymap."""
    arr = np.ascontiguousarray(rgb, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) array")
    header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def crop(image: GrayImage, window: Window) -> GrayImage:
    """Extract a width x height crop centered on ``window.center``.

    Out-of-bounds samples replicate the nearest edge pixel; when the
    source is panoramic the horizontal coordinate wraps modulo width
    instead.
    """
    x0 = math.floor(window.center.x - (window.width - 1) / 2.0)
    y0 = math.floor(window.center.y - (window.height - 1) / 2.0)
    cols = np.arange(x0, x0 + window.width)
    rows = np.arange(y0, y0 + window.height)
    if image.panoramic:
        cols = np.mod(cols, image.width)
    else:
        cols = np.clip(cols, 0, image.width - 1)
    rows = np.clip(rows, 0, image.height - 1)
    return GrayImage(image.pixels[np.ix_(rows, cols)].copy())


def _bilinear_sample(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample float coordinates with bilinear weights, clamping to edges."""
    h, w = pixels.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    p = pixels.astype(np.float64)
    top = p[y0, x0] * (1.0 - fx) + p[y0, x1] * fx
    bot = p[y1, x0] * (1.0 - fx) + p[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _resize_float(pixels: np.ndarray, new_width: int, new_height: int) -> np.ndarray:
    """Bilinear resize (half-pixel centers) returning float64 values."""
    h, w = pixels.shape
    xs = (np.arange(new_width) + 0.5) * (w / new_width) - 0.5
    ys = (np.arange(new_height) + 0.5) * (h / new_height) - 0.5
    grid_x, grid_y = np.meshgrid(xs, ys)
    return _bilinear_sample(pixels, grid_x, grid_y)


def resize_bilinear(image: GrayImage, new_width: int, new_height: int) -> GrayImage:
    """Resize with bilinear interpolation and edge clamping."""
    if new_width < 1 or new_height < 1:
        raise ValueError("target dimensions must be >= 1")
    if new_width == image.width and new_height == image.height:
        return GrayImage(image.pixels.copy(), panoramic=image.panoramic)
    out = _resize_float(image.pixels, new_width, new_height)
    return GrayImage(np.clip(_round_half_up(out), 0, 255).astype(np.uint8))

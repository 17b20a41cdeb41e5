"""Binary PPM image handling, the fixed heat colormap, and overlay rendering.

PPM (P6, maxval 255) is the only raster format: it parses in a few lines, has
no dependencies, and makes golden-file tests byte-exact. The colormap is a
fixed piecewise-linear blue-green-red ramp for the same reason.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParamError, ShapeError
from .tensor import Tensor, as_tensor

_WHITESPACE = b" \t\r\n\v\f"


@dataclass
class RgbImage:
    """8-bit RGB pixels, row-major, 3 bytes per pixel."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ShapeError(f"image size {self.width}x{self.height} must be positive")
        if len(self.pixels) != 3 * self.width * self.height:
            raise ShapeError(
                f"pixel buffer holds {len(self.pixels)} bytes, "
                f"expected {3 * self.width * self.height}"
            )


def read_ppm(path) -> RgbImage:
    """Parse a binary PPM (magic P6, maxval 255); header comments are allowed."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise FormatError("not a binary PPM (expected magic 'P6' at byte offset 0)")
    pos = 2
    width, pos = _read_header_int(data, pos)
    height, pos = _read_header_int(data, pos)
    maxval, pos = _read_header_int(data, pos)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} at byte offset {pos} (only 255)")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError(f"expected single whitespace after maxval at byte offset {pos}")
    pos += 1
    if width < 1 or height < 1:
        raise FormatError(f"bad image size {width}x{height} in header")
    need = 3 * width * height
    if len(data) - pos < need:
        raise FormatError(
            f"pixel data truncated at byte offset {len(data)}: "
            f"need {need} bytes from offset {pos}, found {len(data) - pos}"
        )
    return RgbImage(width=width, height=height, pixels=data[pos : pos + need])


def write_ppm(img: RgbImage, path) -> None:
    """Write the canonical P6 form (single-space header, maxval 255)."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels)


def to_input_tensor(img: RgbImage, model_input_shape) -> Tensor:
    """Convert to a [C,H,W] float64 tensor in [0,1]; dims must match exactly.

    One-channel models take the luma 0.299 R + 0.587 G + 0.114 B.
    """
    c, h, w = (int(d) for d in model_input_shape)
    if (img.height, img.width) != (h, w):
        raise ShapeError(
            f"image is {img.width}x{img.height}, model expects {w}x{h} "
            "(inputs are not resized)"
        )
    arr = np.frombuffer(img.pixels, dtype=np.uint8).reshape(h, w, 3) / 255.0
    if c == 3:
        return np.ascontiguousarray(arr.transpose(2, 0, 1))
    if c == 1:
        luma = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
        return luma[None, :, :]
    raise ShapeError(f"model wants {c} channels; only 1 or 3 are supported")


def colormap(v: float) -> tuple[int, int, int]:
    """Heat color for an intensity in [0,1] (clamped): blue -> green -> red.

    R = clamp(1.5 - |4v - 3|), G = clamp(1.5 - |4v - 2|), B = clamp(1.5 - |4v - 1|),
    each clamped to [0,1] and quantized with round-half-away-from-zero.
    """
    v = min(max(float(v), 0.0), 1.0)
    return (
        _channel_byte(1.5 - abs(4.0 * v - 3.0)),
        _channel_byte(1.5 - abs(4.0 * v - 2.0)),
        _channel_byte(1.5 - abs(4.0 * v - 1.0)),
    )


def overlay(base: RgbImage, heat: Tensor, blend: float = 0.5) -> RgbImage:
    """Blend the colormapped heat map over the base image.

    out = round((1 - blend) * base + blend * colormap(heat)) per channel, so
    blend=0 returns the base exactly and blend=1 the pure heat rendering.
    """
    if not 0.0 <= blend <= 1.0:
        raise ParamError(f"blend must be in [0, 1], got {blend}")
    hm = as_tensor(heat)
    if hm.ndim != 2 or hm.shape != (base.height, base.width):
        raise ShapeError(
            f"heat map shape {hm.shape} does not match image {base.height}x{base.width}"
        )
    cm = _colormap_bytes(hm)
    pixels = np.frombuffer(base.pixels, dtype=np.uint8).reshape(base.height, base.width, 3)
    mixed = np.floor((1.0 - blend) * pixels + blend * cm + 0.5).astype(np.uint8)
    return RgbImage(width=base.width, height=base.height, pixels=mixed.tobytes())


def heat_image(heat: Tensor) -> RgbImage:
    """Render a [0,1] heat map as a pure colormapped image."""
    hm = as_tensor(heat)
    if hm.ndim != 2:
        raise ShapeError(f"heat map must be 2-D, got shape {hm.shape}")
    cm = _colormap_bytes(hm).astype(np.uint8)
    return RgbImage(width=hm.shape[1], height=hm.shape[0], pixels=cm.tobytes())


def write_map_csv(values: Tensor, path, header: str | None = None) -> None:
    """Dump a 2-D map as CSV, one row per line, "%.9f" per value.

    An optional header string is written first as a '#'-prefixed comment line.
    """
    arr = np.atleast_2d(as_tensor(values))
    lines = []
    if header is not None:
        lines.append("# " + header)
    for row in arr:
        lines.append(",".join(f"{v:.9f}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _channel_byte(channel: float) -> int:
    clamped = min(max(channel, 0.0), 1.0)
    return int(math.floor(255.0 * clamped + 0.5))


def _colormap_bytes(values: np.ndarray) -> np.ndarray:
    """Vectorized colormap: float array of already-quantized byte values [H,W,3]."""
    v = np.clip(values, 0.0, 1.0)
    channels = [np.clip(1.5 - np.abs(4.0 * v - c), 0.0, 1.0) for c in (3.0, 2.0, 1.0)]
    return np.floor(255.0 * np.stack(channels, axis=-1) + 0.5)


def _read_header_int(data: bytes, pos: int) -> tuple[int, int]:
    pos = _skip_whitespace_and_comments(data, pos)
    start = pos
    while pos < len(data) and data[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise FormatError(f"expected an integer in PPM header at byte offset {start}")
    return int(data[start:pos]), pos


def _skip_whitespace_and_comments(data: bytes, pos: int) -> int:
    while pos < len(data):
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    return pos

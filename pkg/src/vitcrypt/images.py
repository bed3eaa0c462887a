"""Images as float32 tensors in [0, 1], plus a binary PPM (P6) codec.

The pixel layout is channels x height x width. Loading quantizes to
multiples of 1/255; saving inverts that exactly, so PPM round-trips are
bit-exact for quantized images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PpmError(ValueError):
    """Raised on malformed or unsupported PPM data."""


@dataclass(frozen=True)
class Image:
    """Dense image; pixels is float32 with shape (C, H, W), values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] not in (1, 3):
            raise ValueError(f"expected (C, H, W) pixels with C in (1, 3), got shape {self.pixels.shape}")
        if self.pixels.dtype != np.float32:
            raise ValueError(f"pixels must be float32, got {self.pixels.dtype}")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def quantize(values: np.ndarray) -> np.ndarray:
    """Snap values onto the 1/255 grid (round half away from zero, like uint8 I/O)."""
    scaled = np.floor(values.astype(np.float64) * 255.0 + 0.5)
    return (np.clip(scaled, 0.0, 255.0) / 255.0).astype(np.float32)


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # PPM headers allow '#' comments running to end of line.
    while pos < len(data):
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PpmError("truncated header")
    return data[start:pos], pos


def read_ppm(data: bytes) -> Image:
    """Decode binary PPM (P6, maxval 255) into an Image."""
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise PpmError(f"unsupported format magic {magic!r}; only binary PPM (P6) is supported")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise PpmError(f"non-numeric header field {tok!r}") from exc
    width, height, maxval = fields
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval}; only 255 is supported")
    if width < 1 or height < 1:
        raise PpmError(f"bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + 3 * width * height]
    if len(raster) < 3 * width * height:
        raise PpmError(f"truncated raster: expected {3 * width * height} bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    pixels = (arr.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)
    return Image(np.ascontiguousarray(pixels))


def write_ppm(img: Image) -> bytes:
    """Encode a 3-channel Image as binary PPM (P6, maxval 255)."""
    if img.channels != 3:
        raise PpmError(f"PPM requires 3 channels, got {img.channels}")
    scaled = np.floor(img.pixels.astype(np.float64) * 255.0 + 0.5)
    arr = np.clip(scaled, 0, 255).astype(np.uint8).transpose(1, 2, 0)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + arr.tobytes()


def load_ppm(path) -> Image:
    with open(path, "rb") as fh:
        return read_ppm(fh.read())


def save_ppm(img: Image, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_ppm(img))


def resize_nearest(img: Image, new_width: int, new_height: int) -> Image:
    """Nearest-neighbor resize; preserves the set of pixel values."""
    if new_width < 1 or new_height < 1:
        raise ValueError("target dimensions must be >= 1")
    rows = (np.arange(new_height) * img.height) // new_height
    cols = (np.arange(new_width) * img.width) // new_width
    return Image(np.ascontiguousarray(img.pixels[:, rows][:, :, cols]))


def normalize(img: Image) -> np.ndarray:
    """Map [0, 1] pixels to [-1, 1] via (v - 1/2) / (1/2).

    This is the one normalization the model applies. It is odd around 0.5:
    normalize(1 - v) == -normalize(v), which is what turns bit flipping
    into a sign flip the patch embedding can absorb.
    """
    half = np.float32(0.5)
    return (img.pixels - half) / half

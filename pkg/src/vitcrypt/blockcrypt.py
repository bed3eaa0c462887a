"""Block-wise image encryption: segment, permute blocks, shuffle pixels, flip, integrate.

Within-block flattening uses k = c*M*M + row*M + col (channel slowest),
deliberately identical to the patch flattening in vit.flatten_patches.
That shared convention is what lets the model-side transform compensate
the image-side one exactly.

Stage functions accept explicit permutation / flip vectors (test hooks)
in place of a key; exactly one of the two must be given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .images import Image, quantize
from .keyrand import KeySet, gen_flipvector, gen_permutation, invert_permutation


@dataclass(frozen=True)
class BlockImage:
    """Image re-laid-out as (W_b, H_b, p_b) flattened blocks, values in [0, 1]."""

    data: np.ndarray  # float32, shape (W_b, H_b, p_b)
    block_size: int
    channels: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"block data must be 3-d, got shape {self.data.shape}")
        if self.data.shape[2] != self.block_size * self.block_size * self.channels:
            raise ValueError(
                f"pixels-per-block mismatch: shape {self.data.shape}, "
                f"block_size {self.block_size}, channels {self.channels}"
            )

    @property
    def blocks_wide(self) -> int:
        return self.data.shape[0]

    @property
    def blocks_high(self) -> int:
        return self.data.shape[1]

    @property
    def pixels_per_block(self) -> int:
        return self.data.shape[2]


def segment(img: Image, block_size: int) -> BlockImage:
    """Cut the image into an M x M block grid; block (w, h) covers pixel offset (w*M, h*M)."""
    m = block_size
    if img.width % m != 0 or img.height % m != 0:
        raise ValueError(f"block size {m} must divide image dimensions {img.width}x{img.height}")
    c, h, w = img.pixels.shape
    hb, wb = h // m, w // m
    # (C,H,W) -> (C, H_b, M, W_b, M) -> (W_b, H_b, C, M, M) -> (W_b, H_b, p_b)
    blocks = img.pixels.reshape(c, hb, m, wb, m).transpose(3, 1, 0, 2, 4)
    return BlockImage(np.ascontiguousarray(blocks.reshape(wb, hb, c * m * m)), m, c)


def integrate(bimg: BlockImage, block_size: int) -> Image:
    """Exact inverse of segment."""
    if block_size != bimg.block_size:
        raise ValueError(f"block size {block_size} does not match block image ({bimg.block_size})")
    m, c = bimg.block_size, bimg.channels
    wb, hb = bimg.blocks_wide, bimg.blocks_high
    blocks = bimg.data.reshape(wb, hb, c, m, m).transpose(2, 1, 3, 0, 4)
    return Image(np.ascontiguousarray(blocks.reshape(c, hb * m, wb * m)))


def _block_permutation(bimg: BlockImage, key: int | None, perm) -> np.ndarray:
    n = bimg.blocks_wide * bimg.blocks_high
    if (key is None) == (perm is None):
        raise ValueError("pass exactly one of key or an explicit vector")
    if perm is None:
        perm = gen_permutation(key, n)
    if len(perm) != n:
        raise ValueError(f"permutation length {len(perm)} != block count {n}")
    return np.asarray(perm)


def permute_blocks(bimg: BlockImage, key: int | None = None, *, perm=None) -> BlockImage:
    """Rearrange whole blocks: output block i takes input block perm[i] (gather).

    Blocks are ordered w-fastest: linear index i = w + h * W_b.
    """
    perm = _block_permutation(bimg, key, perm)
    wb = bimg.blocks_wide
    flat = bimg.data.transpose(1, 0, 2).reshape(-1, bimg.pixels_per_block)  # i = w + h*wb
    out = flat[perm].reshape(bimg.blocks_high, wb, -1).transpose(1, 0, 2)
    return BlockImage(np.ascontiguousarray(out), bimg.block_size, bimg.channels)


def unpermute_blocks(bimg: BlockImage, key: int | None = None, *, perm=None) -> BlockImage:
    """Inverse of permute_blocks (scatter with the same vector)."""
    perm = _block_permutation(bimg, key, perm)
    return permute_blocks(bimg, perm=invert_permutation(list(perm)))


def _pixel_permutation(bimg: BlockImage, key: int | None, perm) -> np.ndarray:
    if (key is None) == (perm is None):
        raise ValueError("pass exactly one of key or an explicit vector")
    if perm is None:
        perm = gen_permutation(key, bimg.pixels_per_block)
    if len(perm) != bimg.pixels_per_block:
        raise ValueError(f"permutation length {len(perm)} != pixels per block {bimg.pixels_per_block}")
    return np.asarray(perm)


def shuffle_pixels(bimg: BlockImage, key: int | None = None, *, perm=None) -> BlockImage:
    """One shared permutation of the within-block pixel axis: out[.., k] = in[.., perm[k]]."""
    perm = _pixel_permutation(bimg, key, perm)
    return BlockImage(np.ascontiguousarray(bimg.data[:, :, perm]), bimg.block_size, bimg.channels)


def unshuffle_pixels(bimg: BlockImage, key: int | None = None, *, perm=None) -> BlockImage:
    """Inverse of shuffle_pixels."""
    perm = _pixel_permutation(bimg, key, perm)
    return shuffle_pixels(bimg, perm=invert_permutation(list(perm)))


def flip_bits(bimg: BlockImage, key: int | None = None, *, flips=None) -> BlockImage:
    """Negative-positive transform: v -> 1 - v at key-selected pixel positions.

    The same balanced flip vector applies to every block. Self-inverse.
    """
    if (key is None) == (flips is None):
        raise ValueError("pass exactly one of key or an explicit vector")
    if flips is None:
        flips = gen_flipvector(key, bimg.pixels_per_block)
    if len(flips) != bimg.pixels_per_block:
        raise ValueError(f"flip vector length {len(flips)} != pixels per block {bimg.pixels_per_block}")
    mask = np.asarray(flips, dtype=bool)
    out = bimg.data.copy()
    out[:, :, mask] = np.float32(1.0) - out[:, :, mask]
    return BlockImage(out, bimg.block_size, bimg.channels)


def encrypt_image(img: Image, keys: KeySet, block_size: int) -> Image:
    """Full pipeline: segment, permute blocks (K1), shuffle pixels (K2), flip (K3), integrate.

    Output is re-quantized to the 1/255 grid, matching what a PPM
    write/read of the result would produce; decrypt_image then inverts
    it bit-exactly on quantized inputs.
    """
    blocks = segment(img, block_size)
    blocks = permute_blocks(blocks, keys.k1)
    blocks = shuffle_pixels(blocks, keys.k2)
    blocks = flip_bits(blocks, keys.k3)
    out = integrate(blocks, block_size)
    return Image(quantize(out.pixels))


def decrypt_image(img: Image, keys: KeySet, block_size: int) -> Image:
    """Inverse pipeline: unflip, unshuffle, unpermute; decrypt(encrypt(x)) == x bit-exact."""
    blocks = segment(img, block_size)
    blocks = flip_bits(blocks, keys.k3)
    blocks = unshuffle_pixels(blocks, keys.k2)
    blocks = unpermute_blocks(blocks, keys.k1)
    out = integrate(blocks, block_size)
    return Image(quantize(out.pixels))

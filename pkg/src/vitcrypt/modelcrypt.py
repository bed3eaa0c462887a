"""Keyed model transformation: permute and sign-flip the embedding matrices.

The orientation of each permutation is fixed by the requirement that the
transformed model on an encrypted image reproduces the plain model on
the plain image:

  * position rows are gathered with the block permutation, so the token
    at encrypted position i carries the position code of its source block;
  * patch-embedding rows are gathered with the pixel shuffle, so
    (shuffled pixels) . E' == (original pixels) . E;
  * rows at flipped positions are negated, absorbing the sign flip that
    bit flipping becomes after (v - 1/2) / (1/2) normalization.

Everything outside the two embedding matrices is left bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .keyrand import KeySet, gen_flipvector, gen_permutation
from .vit import VitConfig, VitModel, with_embeddings


@dataclass(frozen=True)
class ModelTransform:
    perm_blocks: list[int]  # length N
    perm_pixels: list[int]  # length P*P*C
    flips: list[int]  # length P*P*C, exactly half ones


def derive_transform(keys: KeySet, config: VitConfig) -> ModelTransform:
    """Same vectors the image pipeline derives from the same keys (block size = patch size)."""
    return ModelTransform(
        perm_blocks=gen_permutation(keys.k1, config.num_patches),
        perm_pixels=gen_permutation(keys.k2, config.patch_dim),
        flips=gen_flipvector(keys.k3, config.patch_dim),
    )


def transform_position_embedding(pos_embed: np.ndarray, transform: ModelTransform) -> np.ndarray:
    """Permute the patch rows of the position embedding; the class-token row stays put."""
    n = len(transform.perm_blocks)
    if pos_embed.shape[0] != n + 1:
        raise ValueError(f"position embedding has {pos_embed.shape[0]} rows, expected {n + 1}")
    out = pos_embed.copy()
    out[1:] = pos_embed[1:][np.asarray(transform.perm_blocks)]
    return out


def transform_patch_embedding(patch_embed: np.ndarray, transform: ModelTransform) -> np.ndarray:
    """Gather rows with the pixel shuffle, then negate rows at flipped positions."""
    p = len(transform.perm_pixels)
    if patch_embed.shape[0] != p:
        raise ValueError(f"patch embedding has {patch_embed.shape[0]} rows, expected {p}")
    out = patch_embed[np.asarray(transform.perm_pixels)].copy()
    out[np.asarray(transform.flips, dtype=bool)] *= np.float32(-1.0)
    return out


def apply_transform(model: VitModel, transform: ModelTransform) -> VitModel:
    """New model with transformed embeddings; all other parameters shared bit-identically."""
    return with_embeddings(
        model,
        patch_embed=transform_patch_embedding(model.patch_embed, transform),
        pos_embed=transform_position_embedding(model.pos_embed, transform),
    )


def transform_model(model: VitModel, keys: KeySet) -> VitModel:
    """Key-derived transformation; pairs with blockcrypt.encrypt_image at the same keys."""
    return apply_transform(model, derive_transform(keys, model.config))

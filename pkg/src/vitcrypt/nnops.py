"""Float32 numerical primitives for the transformer forward pass.

Thin wrappers over numpy with explicit shape checks. All reductions run
single-pass in row-major order, so repeated calls are bit-identical.
"""

from __future__ import annotations

import numpy as np

LAYERNORM_EPS = np.float32(1e-6)

_GELU_COEFF = np.float32(0.044715)
_SQRT_2_OVER_PI = np.float32(np.sqrt(2.0 / np.pi))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a shape check that names both operands."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.matmul(a.astype(np.float32, copy=False), b.astype(np.float32, copy=False))


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row maximum."""
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted, dtype=np.float32)
    return e / e.sum(axis=-1, keepdims=True)


def layernorm(a: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LAYERNORM_EPS) -> np.ndarray:
    """Normalize each last-axis vector to zero mean, unit population variance."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layernorm parameter shape mismatch: input {a.shape}, gain {gain.shape}, bias {bias.shape}")
    mean = a.mean(axis=-1, keepdims=True, dtype=np.float32)
    centered = a - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True, dtype=np.float32)
    return centered / np.sqrt(var + np.float32(eps)) * gain + bias


def gelu(a: np.ndarray) -> np.ndarray:
    """Elementwise GELU, tanh approximation."""
    a = a.astype(np.float32, copy=False)
    inner = _SQRT_2_OVER_PI * (a + _GELU_COEFF * a * a * a)
    return np.float32(0.5) * a * (np.float32(1.0) + np.tanh(inner))

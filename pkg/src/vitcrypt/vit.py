"""Desk-scale vision transformer: patch + position embedding, pre-norm encoder, MLP head.

The model is a plain dataclass of float32 numpy arrays with a bit-exact
binary container (magic "VTW1"). Patch flattening uses the same
channel-slowest index order as blockcrypt.segment; that alignment is
what the keyed model transformation relies on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import keyrand
from .images import Image, normalize
from .nnops import layernorm, matmul, softmax_rows, gelu


@dataclass(frozen=True)
class VitConfig:
    width: int = 32
    height: int = 32
    channels: int = 3
    patch_size: int = 8
    dim: int = 64
    layers: int = 4
    heads: int = 4
    mlp_dim: int = 128
    classes: int = 10

    def __post_init__(self):
        if self.width % self.patch_size or self.height % self.patch_size:
            raise ValueError(
                f"patch size {self.patch_size} must divide image dimensions {self.width}x{self.height}"
            )
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")

    @property
    def num_patches(self) -> int:
        return (self.width // self.patch_size) * (self.height // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass(frozen=True)
class EncoderLayer:
    wq: np.ndarray  # (D, D)
    wk: np.ndarray  # (D, D)
    wv: np.ndarray  # (D, D)
    wo: np.ndarray  # (D, D)
    ln1_gain: np.ndarray  # (D,)
    ln1_bias: np.ndarray  # (D,)
    w1: np.ndarray  # (D, mlp_dim)
    b1: np.ndarray  # (mlp_dim,)
    w2: np.ndarray  # (mlp_dim, D)
    b2: np.ndarray  # (D,)
    ln2_gain: np.ndarray  # (D,)
    ln2_bias: np.ndarray  # (D,)

    def tensors(self) -> list[np.ndarray]:
        return [self.wq, self.wk, self.wv, self.wo, self.ln1_gain, self.ln1_bias,
                self.w1, self.b1, self.w2, self.b2, self.ln2_gain, self.ln2_bias]


@dataclass(frozen=True)
class VitModel:
    config: VitConfig
    patch_embed: np.ndarray  # (P*P*C, D)
    pos_embed: np.ndarray  # (N+1, D); row 0 belongs to the classification token
    cls_token: np.ndarray  # (D,)
    encoder: tuple[EncoderLayer, ...] = field(default_factory=tuple)
    ln_f_gain: np.ndarray = None
    ln_f_bias: np.ndarray = None
    head_w: np.ndarray = None  # (D, classes)
    head_b: np.ndarray = None  # (classes,)

    def tensors(self) -> list[np.ndarray]:
        """All parameter tensors in the serialization order of the VTW1 container."""
        out = [self.patch_embed, self.pos_embed, self.cls_token]
        for layer in self.encoder:
            out.extend(layer.tensors())
        out.extend([self.ln_f_gain, self.ln_f_bias, self.head_w, self.head_b])
        return out


def flatten_patches(x: np.ndarray, patch_size: int) -> np.ndarray:
    """(C, H, W) -> (N, P*P*C); within-patch index k = c*P*P + row*P + col.

    Patches are ordered left-to-right then top-to-bottom, matching the
    w-fastest block order used by the image encryption.
    """
    p = patch_size
    c, h, w = x.shape
    if h % p or w % p:
        raise ValueError(f"patch size {p} must divide input dimensions {w}x{h}")
    hb, wb = h // p, w // p
    patches = x.reshape(c, hb, p, wb, p).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(patches.reshape(hb * wb, c * p * p))


def unflatten_patches(x_p: np.ndarray, config: VitConfig) -> np.ndarray:
    """Inverse of flatten_patches."""
    p, c = config.patch_size, config.channels
    hb, wb = config.height // p, config.width // p
    patches = x_p.reshape(hb, wb, c, p, p).transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(patches.reshape(c, config.height, config.width))


def embed(x_p: np.ndarray, model: VitModel) -> np.ndarray:
    """Token sequence z0: class token row 0, then patch projections, plus position codes."""
    n = model.config.num_patches
    if x_p.shape != (n, model.config.patch_dim):
        raise ValueError(f"expected patches of shape {(n, model.config.patch_dim)}, got {x_p.shape}")
    z0 = np.empty((n + 1, model.config.dim), dtype=np.float32)
    z0[0] = model.cls_token + model.pos_embed[0]
    z0[1:] = matmul(x_p, model.patch_embed) + model.pos_embed[1:]
    return z0


def attention(z: np.ndarray, layer: EncoderLayer, heads: int) -> np.ndarray:
    """Multi-head self-attention over the token axis (no biases on the projections)."""
    t, d = z.shape
    hd = d // heads
    scale = np.float32(1.0 / np.sqrt(hd))
    q = matmul(z, layer.wq).reshape(t, heads, hd)
    k = matmul(z, layer.wk).reshape(t, heads, hd)
    v = matmul(z, layer.wv).reshape(t, heads, hd)
    out = np.empty((t, heads, hd), dtype=np.float32)
    for h in range(heads):
        scores = matmul(q[:, h], k[:, h].T) * scale
        out[:, h] = matmul(softmax_rows(scores), v[:, h])
    return matmul(out.reshape(t, d), layer.wo)


def encoder_forward(z0: np.ndarray, model: VitModel) -> np.ndarray:
    """Pre-norm encoder: z += MHSA(LN(z)); z += MLP(LN(z)); final layernorm."""
    z = z0
    for layer in model.encoder:
        z = z + attention(layernorm(z, layer.ln1_gain, layer.ln1_bias), layer, model.config.heads)
        h = layernorm(z, layer.ln2_gain, layer.ln2_bias)
        z = z + matmul(gelu(matmul(h, layer.w1) + layer.b1), layer.w2) + layer.b2
    return layernorm(z, model.ln_f_gain, model.ln_f_bias)


def forward(model: VitModel, img: Image) -> np.ndarray:
    """Logits for one image: head applied to the class-token row of the encoder output."""
    cfg = model.config
    if (img.channels, img.height, img.width) != (cfg.channels, cfg.height, cfg.width):
        raise ValueError(
            f"image {img.channels}x{img.height}x{img.width} does not match "
            f"model config {cfg.channels}x{cfg.height}x{cfg.width}"
        )
    x_p = flatten_patches(normalize(img), cfg.patch_size)
    z = encoder_forward(embed(x_p, model), model)
    return matmul(z[0:1], model.head_w)[0] + model.head_b


class _Stream:
    """Deterministic uniform float32 source over one SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = seed & keyrand.MASK64
        self.index = 0

    def uniform(self, shape, scale: float) -> np.ndarray:
        n = int(np.prod(shape))
        with np.errstate(over="ignore"):
            i = np.arange(self.index + 1, self.index + n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + i * np.uint64(keyrand._GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(keyrand._MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(keyrand._MIX2)
            z = z ^ (z >> np.uint64(31))
        self.index += n
        u = z.astype(np.float64) / float(1 << 64)  # [0, 1)
        return ((2.0 * u - 1.0) * scale).astype(np.float32).reshape(shape)


def random_init(config: VitConfig, seed: int) -> VitModel:
    """Fresh model with uniform(-s, s) weights, s = 1/sqrt(fan_in); fully seed-determined."""
    rng = _Stream(seed)
    d, p, mlp = config.dim, config.patch_dim, config.mlp_dim
    s_d = 1.0 / np.sqrt(d)
    ones = np.ones(d, dtype=np.float32)
    zeros = np.zeros(d, dtype=np.float32)
    layers = tuple(
        EncoderLayer(
            wq=rng.uniform((d, d), s_d), wk=rng.uniform((d, d), s_d),
            wv=rng.uniform((d, d), s_d), wo=rng.uniform((d, d), s_d),
            ln1_gain=ones.copy(), ln1_bias=zeros.copy(),
            w1=rng.uniform((d, mlp), s_d), b1=np.zeros(mlp, dtype=np.float32),
            w2=rng.uniform((mlp, d), 1.0 / np.sqrt(mlp)), b2=zeros.copy(),
            ln2_gain=ones.copy(), ln2_bias=zeros.copy(),
        )
        for _ in range(config.layers)
    )
    return VitModel(
        config=config,
        patch_embed=rng.uniform((p, d), 1.0 / np.sqrt(p)),
        pos_embed=rng.uniform((config.num_patches + 1, d), s_d),
        cls_token=rng.uniform((d,), s_d),
        encoder=layers,
        ln_f_gain=ones.copy(),
        ln_f_bias=zeros.copy(),
        head_w=rng.uniform((d, config.classes), s_d),
        head_b=np.zeros(config.classes, dtype=np.float32),
    )


_MAGIC = b"VTW1"
_VERSION = 1


def save_model(model: VitModel) -> bytes:
    """Serialize to the VTW1 container: magic, version u32, 9 config u32s, raw f32 tensors.

    Tensor order is exactly VitModel.tensors(); all integers and floats
    little-endian, no padding. Round-trips bit-exactly.
    """
    cfg = model.config
    header = _MAGIC + struct.pack(
        "<10I", _VERSION, cfg.width, cfg.height, cfg.channels, cfg.patch_size,
        cfg.dim, cfg.layers, cfg.heads, cfg.mlp_dim, cfg.classes,
    )
    body = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes() for t in model.tensors())
    return header + body


def tensor_shapes(config: VitConfig) -> list[tuple[int, ...]]:
    """Shapes of all parameter tensors in serialization order."""
    d, p, mlp, n = config.dim, config.patch_dim, config.mlp_dim, config.num_patches
    shapes: list[tuple[int, ...]] = [(p, d), (n + 1, d), (d,)]
    per_layer = [(d, d)] * 4 + [(d,), (d,), (d, mlp), (mlp,), (mlp, d), (d,), (d,), (d,)]
    for _ in range(config.layers):
        shapes.extend(per_layer)
    shapes.extend([(d,), (d,), (d, config.classes), (config.classes,)])
    return shapes


def from_tensors(config: VitConfig, tensors: list[np.ndarray]) -> VitModel:
    """Assemble a model from tensors listed in serialization order."""
    it = iter(tensors)
    patch_embed, pos_embed, cls_token = next(it), next(it), next(it)
    layers = tuple(EncoderLayer(*(next(it) for _ in range(12))) for _ in range(config.layers))
    ln_f_gain, ln_f_bias, head_w, head_b = next(it), next(it), next(it), next(it)
    return VitModel(config, patch_embed, pos_embed, cls_token, layers, ln_f_gain, ln_f_bias, head_w, head_b)


def load_model(data: bytes) -> VitModel:
    """Parse a VTW1 container, validating magic, version, and exact payload size."""
    if data[:4] != _MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}; expected {_MAGIC!r}")
    if len(data) < 44:
        raise ValueError("truncated header")
    fields = struct.unpack("<10I", data[4:44])
    if fields[0] != _VERSION:
        raise ValueError(f"unsupported container version {fields[0]}")
    cfg = VitConfig(*fields[1:])
    shapes = tensor_shapes(cfg)
    total = sum(int(np.prod(s)) for s in shapes)
    payload = data[44:]
    if len(payload) != 4 * total:
        raise ValueError(f"payload size {len(payload)} bytes does not match config (expected {4 * total})")
    flat = np.frombuffer(payload, dtype="<f4")
    tensors = []
    pos = 0
    for shape in shapes:
        n = int(np.prod(shape))
        tensors.append(flat[pos : pos + n].reshape(shape).astype(np.float32))
        pos += n
    return from_tensors(cfg, tensors)


def models_equal(a: VitModel, b: VitModel) -> bool:
    return a.config == b.config and all(
        np.array_equal(ta, tb) for ta, tb in zip(a.tensors(), b.tensors())
    )


def with_embeddings(model: VitModel, patch_embed: np.ndarray, pos_embed: np.ndarray) -> VitModel:
    """Copy of the model with new embedding matrices; everything else shared."""
    return replace(model, patch_embed=patch_embed, pos_embed=pos_embed)

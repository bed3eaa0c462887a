"""Evaluation harness: synthetic dataset, toy trainer, equivalence / attack / key-space runs.

The trainer keeps a float64 copy of the parameters and backpropagates
through a float64 mirror of the exact forward pass; the returned model
is the float32 rounding of the result. Gradients are hand-derived for
this fixed architecture and checked against central finite differences.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import keyrand, vit
from .blockcrypt import encrypt_image
from .images import Image, quantize, load_ppm, save_ppm
from .keyrand import KeySet, splitmix64_next
from .vit import VitConfig, VitModel


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class LabeledDataset:
    images: list[Image]
    labels: list[int]

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.images)


def class_pattern(label: int, config: VitConfig) -> np.ndarray:
    """Fixed base pattern for one class: a sinusoidal grating whose
    orientation and frequency are indexed by the class."""
    # fixed frequency: classes differ only in orientation and phase, so no
    # class carries a distinctive per-block energy signature
    theta = math.pi * label / 10.0
    freq = 3.0
    ww, hh = np.meshgrid(np.arange(config.width), np.arange(config.height))
    proj = (math.cos(theta) * ww + math.sin(theta) * hh) / config.width
    chans = []
    for c in range(config.channels):
        phase = 2.0 * math.pi * c / 3.0
        chans.append(0.5 + 0.45 * np.sin(2.0 * math.pi * freq * proj + phase))
    return np.stack(chans).astype(np.float32)


def make_synthetic_dataset(seed: int, n_per_class: int, config: VitConfig) -> LabeledDataset:
    """Per-class grating plus uniform noise of amplitude 0.1, quantized to 1/255."""
    rng = np.random.Generator(np.random.PCG64(seed))
    images, labels = [], []
    for label in range(config.classes):
        base = class_pattern(label, config)
        for _ in range(n_per_class):
            noise = rng.uniform(-0.05, 0.05, size=base.shape)
            pix = quantize(np.clip(base + noise, 0.0, 1.0))
            images.append(Image(pix))
            labels.append(label)
    return LabeledDataset(images, labels)


def save_dataset(dataset: LabeledDataset, root) -> None:
    """Write as <class_index>/<name>.ppm."""
    counters: dict[int, int] = {}
    for img, label in zip(dataset.images, dataset.labels):
        i = counters.get(label, 0)
        counters[label] = i + 1
        cdir = os.path.join(root, str(label))
        os.makedirs(cdir, exist_ok=True)
        save_ppm(img, os.path.join(cdir, f"{i:04d}.ppm"))


def load_dataset(root) -> LabeledDataset:
    """Read a <class_index>/<name>.ppm directory tree; labels from directory names."""
    images, labels = [], []
    entries = [d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))]
    for name in sorted(entries, key=int):
        cdir = os.path.join(root, name)
        for fname in sorted(os.listdir(cdir)):
            if fname.endswith(".ppm"):
                images.append(load_ppm(os.path.join(cdir, fname)))
                labels.append(int(name))
    if not images:
        raise ValueError(f"no <class>/<name>.ppm files found under {root}")
    return LabeledDataset(images, labels)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class TransformReport:
    kind: str  # equivalence | plain_attack | random_key_attack | keyspace
    metrics: dict[str, float] = field(default_factory=dict)
    per_trial: list[float] | None = None

    def to_json(self) -> str:
        obj = {"kind": self.kind, "metrics": self.metrics}
        if self.per_trial is not None:
            obj["per_trial"] = self.per_trial
        return json.dumps(obj, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["trial", "value"])
        for i, v in enumerate(self.per_trial or []):
            writer.writerow([i, v])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Key space


@dataclass(frozen=True)
class KeySpaceResult:
    block_size: int
    channels: int
    blocks_wide: int
    blocks_high: int
    o_permutation: int
    o_shuffle: int
    o_flip: int
    o_total: int
    log2_op: float
    log2_os: float
    log2_of: float
    log2_total: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "block_size": self.block_size,
                "channels": self.channels,
                "blocks_wide": self.blocks_wide,
                "blocks_high": self.blocks_high,
                "log2_op": self.log2_op,
                "log2_os": self.log2_os,
                "log2_of": self.log2_of,
                "log2_total": self.log2_total,
            },
            indent=2,
        )


def log2_bigint(n: int) -> float:
    """log2 of an arbitrarily large positive integer, accurate to float precision."""
    if n < 1:
        raise ValueError("positive integer required")
    shift = max(0, n.bit_length() - 64)
    return math.log2(n >> shift) + shift


def keyspace(block_size: int, channels: int, width: int, height: int) -> KeySpaceResult:
    """Exact combinatorial key space of the three stages and their product.

    Block permutation contributes (W_b * H_b)! keys, pixel shuffling
    (M*M*C)!, and balanced bit flipping chooses (M*M*C choose M*M*C/2).
    """
    m = block_size
    if width % m or height % m:
        raise ValueError(f"block size {m} must divide image dimensions {width}x{height}")
    pixels = m * m * channels
    if pixels % 2:
        raise ValueError("pixels per block must be even for balanced flipping")
    wb, hb = width // m, height // m
    o_p = math.factorial(wb * hb)
    o_s = math.factorial(pixels)
    o_f = math.factorial(pixels) // (math.factorial(pixels // 2) ** 2)
    return KeySpaceResult(
        block_size=m, channels=channels, blocks_wide=wb, blocks_high=hb,
        o_permutation=o_p, o_shuffle=o_s, o_flip=o_f, o_total=o_p * o_s * o_f,
        log2_op=log2_bigint(o_p), log2_os=log2_bigint(o_s), log2_of=log2_bigint(o_f),
        log2_total=log2_bigint(o_p * o_s * o_f),
    )


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_accuracy(model: VitModel, dataset: LabeledDataset, encrypt_with: KeySet | None = None) -> float:
    """Fraction of correct argmax predictions; optionally encrypt every image first."""
    return float(np.mean(np.asarray(predictions(model, dataset, encrypt_with)) == np.asarray(dataset.labels)))


def predictions(model: VitModel, dataset: LabeledDataset, encrypt_with: KeySet | None = None) -> list[int]:
    block = model.config.patch_size
    preds = []
    for img in dataset.images:
        if encrypt_with is not None:
            img = encrypt_image(img, encrypt_with, block)
        preds.append(int(np.argmax(vit.forward(model, img))))
    return preds


def _random_image(rng: np.random.Generator, config: VitConfig) -> Image:
    arr = rng.integers(0, 256, size=(config.channels, config.height, config.width), dtype=np.uint8)
    return Image((arr.astype(np.float32) / np.float32(255.0)))


def _draw_keysets(seed: int, n: int, reject: KeySet | None = None) -> list[KeySet]:
    state = seed & keyrand.MASK64
    keys = []
    while len(keys) < n:
        k1, state = splitmix64_next(state)
        k2, state = splitmix64_next(state)
        k3, state = splitmix64_next(state)
        ks = KeySet(k1, k2, k3)
        if reject is not None and ks == reject:
            continue
        keys.append(ks)
    return keys


def verify_equivalence(
    model: VitModel,
    keys: KeySet | None,
    n_images: int,
    seed: int,
    encrypt_keys: KeySet | None = None,
) -> TransformReport:
    """Compare (baseline, plain) against (transformed, encrypted) on random quantized images.

    With keys=None a fresh random key set is drawn per image, so the run
    covers n_images independent (key, image) pairs. encrypt_keys lets the
    image-side key differ from the model-side key (mismatch scenarios);
    the report then records the disagreement, it never raises.
    """
    from .modelcrypt import transform_model

    rng = np.random.Generator(np.random.PCG64(seed))
    key_list = [keys] * n_images if keys is not None else _draw_keysets(seed, n_images)
    block = model.config.patch_size
    max_diff = 0.0
    agree = 0
    for ks in key_list:
        img = _random_image(rng, model.config)
        plain_logits = vit.forward(model, img)
        enc_logits = vit.forward(
            transform_model(model, ks), encrypt_image(img, encrypt_keys or ks, block)
        )
        max_diff = max(max_diff, float(np.max(np.abs(plain_logits - enc_logits))))
        agree += int(np.argmax(plain_logits) == np.argmax(enc_logits))
    return TransformReport(
        kind="equivalence",
        metrics={
            "n_images": float(n_images),
            "max_abs_logit_diff": max_diff,
            "argmax_agreement": agree / n_images,
        },
    )


def _box_stats(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    q1, med, q3 = (float(np.percentile(arr, p)) for p in (25, 50, 75))
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    in_range = arr[(arr >= lo) & (arr <= hi)]
    return {
        "min": float(arr.min()),
        "q1": q1,
        "median": med,
        "q3": q3,
        "max": float(arr.max()),
        "whisker_low": float(in_range.min()),
        "whisker_high": float(in_range.max()),
    }


def random_key_attack(
    model_t: VitModel,
    dataset: LabeledDataset,
    n_keys: int,
    seed: int,
    correct_keys: KeySet | None = None,
    inject: list[KeySet] | None = None,
) -> TransformReport:
    """Accuracy of the transformed model under many wrong keys (box-plot statistics).

    Wrong key sets are drawn deterministically from the seed; the correct
    key set, if given, is rejected from the draw. inject replaces the
    drawn keys entirely (degenerate-control test hook).
    """
    if n_keys < 1:
        raise ValueError("n_keys must be >= 1")
    key_list = inject if inject is not None else _draw_keysets(seed, n_keys, reject=correct_keys)
    accuracies = [evaluate_accuracy(model_t, dataset, encrypt_with=ks) for ks in key_list]
    metrics = {"n_keys": float(len(accuracies)), "chance": 1.0 / model_t.config.classes}
    metrics.update(_box_stats(accuracies))
    return TransformReport(kind="random_key_attack", metrics=metrics, per_trial=accuracies)


# ---------------------------------------------------------------------------
# Toy trainer (float64 mirror of the forward pass, hand-derived gradients)


def _ln64(x, gain, bias, eps=1e-6):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    return xhat * gain + bias, xhat, inv


def _ln64_back(dy, xhat, inv, gain):
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return (dxhat - m1 - xhat * m2) * inv, dgain, dbias


_GELU_A = math.sqrt(2.0 / math.pi)
_GELU_B = 0.044715


def _gelu64(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_A * (x + _GELU_B * x**3)))


def _gelu64_grad(x):
    t = np.tanh(_GELU_A * (x + _GELU_B * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_A * (1.0 + 3.0 * _GELU_B * x * x)


def _softmax64(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward_cache(params: list[np.ndarray], config: VitConfig, x_p: np.ndarray):
    """Float64 forward pass over the serialized parameter list, caching intermediates."""
    E, pos, cls = params[0], params[1], params[2]
    n, d, heads = config.num_patches, config.dim, config.heads
    hd = d // heads
    scale = 1.0 / math.sqrt(hd)
    z = np.empty((n + 1, d), dtype=np.float64)
    z[0] = cls + pos[0]
    z[1:] = x_p @ E + pos[1:]
    cache = {"x_p": x_p, "layers": []}
    for l in range(config.layers):
        wq, wk, wv, wo, ln1g, ln1b, w1, b1, w2, b2, ln2g, ln2b = params[3 + 12 * l : 15 + 12 * l]
        z_in = z
        h1, xhat1, inv1 = _ln64(z_in, ln1g, ln1b)
        q = (h1 @ wq).reshape(-1, heads, hd)
        k = (h1 @ wk).reshape(-1, heads, hd)
        v = (h1 @ wv).reshape(-1, heads, hd)
        probs = np.empty((heads, n + 1, n + 1))
        heads_out = np.empty((n + 1, heads, hd))
        for h in range(heads):
            probs[h] = _softmax64(q[:, h] @ k[:, h].T * scale)
            heads_out[:, h] = probs[h] @ v[:, h]
        concat = heads_out.reshape(-1, d)
        z_mid = z_in + concat @ wo
        h2, xhat2, inv2 = _ln64(z_mid, ln2g, ln2b)
        u1 = h2 @ w1 + b1
        g = _gelu64(u1)
        z = z_mid + g @ w2 + b2
        cache["layers"].append(
            dict(z_in=z_in, h1=h1, xhat1=xhat1, inv1=inv1, q=q, k=k, v=v, probs=probs,
                 concat=concat, z_mid=z_mid, h2=h2, xhat2=xhat2, inv2=inv2, u1=u1, g=g)
        )
    zf, xhatf, invf = _ln64(z, params[-4], params[-3])
    cache.update(xhatf=xhatf, invf=invf, zf=zf)
    logits = zf[0] @ params[-2] + params[-1]
    return logits, cache


def backward(params: list[np.ndarray], config: VitConfig, cache, dlogits: np.ndarray) -> list[np.ndarray]:
    """Gradients w.r.t. every parameter, same order as the parameter list."""
    grads = [np.zeros_like(p) for p in params]
    heads, d = config.heads, config.dim
    hd = d // heads
    scale = 1.0 / math.sqrt(hd)
    grads[-2] += np.outer(cache["zf"][0], dlogits)
    grads[-1] += dlogits
    dzf = np.zeros_like(cache["zf"])
    dzf[0] = params[-2] @ dlogits
    dz, dgain, dbias = _ln64_back(dzf, cache["xhatf"], cache["invf"], params[-4])
    grads[-4] += dgain
    grads[-3] += dbias
    for l in range(config.layers - 1, -1, -1):
        wq, wk, wv, wo, ln1g, ln1b, w1, b1, w2, b2, ln2g, ln2b = params[3 + 12 * l : 15 + 12 * l]
        c = cache["layers"][l]
        # MLP sublayer
        dmlp = dz
        grads[3 + 12 * l + 9] += dmlp.sum(axis=0)  # b2
        grads[3 + 12 * l + 8] += c["g"].T @ dmlp  # w2
        du1 = (dmlp @ w2.T) * _gelu64_grad(c["u1"])
        grads[3 + 12 * l + 7] += du1.sum(axis=0)  # b1
        grads[3 + 12 * l + 6] += c["h2"].T @ du1  # w1
        dh2 = du1 @ w1.T
        dz_mid, dgain2, dbias2 = _ln64_back(dh2, c["xhat2"], c["inv2"], ln2g)
        grads[3 + 12 * l + 10] += dgain2
        grads[3 + 12 * l + 11] += dbias2
        dz_mid = dz_mid + dz  # residual
        # attention sublayer
        grads[3 + 12 * l + 3] += c["concat"].T @ dz_mid  # wo
        dconcat = (dz_mid @ wo.T).reshape(-1, heads, hd)
        dq = np.empty_like(c["q"])
        dk = np.empty_like(c["k"])
        dv = np.empty_like(c["v"])
        for h in range(heads):
            a = c["probs"][h]
            dout_h = dconcat[:, h]
            da = dout_h @ c["v"][:, h].T
            dv[:, h] = a.T @ dout_h
            ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
            ds *= scale
            dq[:, h] = ds @ c["k"][:, h]
            dk[:, h] = ds.T @ c["q"][:, h]
        dh1 = dq.reshape(-1, d) @ wq.T + dk.reshape(-1, d) @ wk.T + dv.reshape(-1, d) @ wv.T
        grads[3 + 12 * l + 0] += c["h1"].T @ dq.reshape(-1, d)
        grads[3 + 12 * l + 1] += c["h1"].T @ dk.reshape(-1, d)
        grads[3 + 12 * l + 2] += c["h1"].T @ dv.reshape(-1, d)
        dz_in, dgain1, dbias1 = _ln64_back(dh1, c["xhat1"], c["inv1"], ln1g)
        grads[3 + 12 * l + 4] += dgain1
        grads[3 + 12 * l + 5] += dbias1
        dz = dz_in + dz_mid  # residual
    grads[2] += dz[0]  # cls token
    grads[1] += dz  # position embedding (row 0 via the class token path)
    grads[0] += cache["x_p"].T @ dz[1:]  # patch embedding
    return grads


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy loss and its gradient w.r.t. the logits."""
    p = _softmax64(logits[None, :])[0]
    return float(-math.log(max(p[label], 1e-300))), p - np.eye(len(p))[label]


def train_toy(
    model: VitModel,
    dataset: LabeledDataset,
    epochs: int,
    lr: float,
    momentum: float = 0.9,
    batch_size: int = 16,
    seed: int = 0,
    history: list | None = None,
) -> VitModel:
    """SGD with momentum on softmax cross-entropy; deterministic given the seed.

    Raises on divergence (non-finite loss), naming the epoch.
    """
    config = model.config
    params = [t.astype(np.float64) for t in model.tensors()]
    velocity = [np.zeros_like(p) for p in params]
    patches = [
        vit.flatten_patches(((img.pixels - np.float32(0.5)) / np.float32(0.5)), config.patch_size).astype(np.float64)
        for img in dataset.images
    ]
    n = len(dataset)
    state = seed & keyrand.MASK64
    for epoch in range(epochs):
        epoch_seed, state = splitmix64_next(state)
        order = keyrand.gen_permutation(epoch_seed, n) if n > 1 else [0]
        total_loss = 0.0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            grads = [np.zeros_like(p) for p in params]
            for idx in batch:
                logits, cache = forward_cache(params, config, patches[idx])
                if not np.all(np.isfinite(logits)):
                    raise ArithmeticError(f"training diverged (non-finite loss) at epoch {epoch}")
                loss, dlogits = cross_entropy(logits, dataset.labels[idx])
                total_loss += loss
                for gacc, g in zip(grads, backward(params, config, cache, dlogits)):
                    gacc += g
            inv_b = 1.0 / len(batch)
            for p, vel, g in zip(params, velocity, grads):
                vel *= momentum
                vel -= lr * inv_b * g
                p += vel
        mean_loss = total_loss / n
        if not math.isfinite(mean_loss):
            raise ArithmeticError(f"training diverged (non-finite loss) at epoch {epoch}")
        if history is not None:
            history.append(mean_loss)
    return vit.from_tensors(config, [p.astype(np.float32) for p in params])

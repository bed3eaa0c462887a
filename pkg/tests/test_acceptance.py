"""End-to-end acceptance runs; each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from vitcrypt import vit
from vitcrypt.blockcrypt import decrypt_image, encrypt_image
from vitcrypt.harness import (
    backward,
    cross_entropy,
    evaluate_accuracy,
    forward_cache,
    keyspace,
    make_synthetic_dataset,
    predictions,
    random_key_attack,
    train_toy,
    verify_equivalence,
)
from vitcrypt.images import Image, normalize, read_ppm, write_ppm
from vitcrypt.keyrand import KeySet, gen_flipvector, gen_permutation, is_permutation
from vitcrypt.modelcrypt import transform_model
from vitcrypt.vit import VitConfig, random_init

DESK = VitConfig()
TINY = VitConfig(width=8, height=8, channels=1, patch_size=4, dim=4, layers=1, heads=2, mlp_dim=8, classes=3)


def report(name, passed, detail=""):
    print(f"ACCEPTANCE {'PASS' if passed else 'FAIL'}: {name}" + (f" ({detail})" if detail else ""))
    assert passed, f"{name}: {detail}"


@pytest.fixture(scope="module")
def trained():
    train_set = make_synthetic_dataset(1, 20, DESK)
    test_set = make_synthetic_dataset(2, 10, DESK)
    model = train_toy(random_init(DESK, 1), train_set, epochs=20, lr=0.01, seed=1)
    keys = KeySet.from_master_seed(777)
    return model, transform_model(model, keys), keys, test_set


def test_criterion_1_equivalence():
    start = time.monotonic()
    model = random_init(DESK, 42)
    result = verify_equivalence(model, None, 100, seed=1)
    elapsed = time.monotonic() - start
    max_diff = result.metrics["max_abs_logit_diff"]
    agreement = result.metrics["argmax_agreement"]
    report(
        "criterion 1: equivalence over 100 random (key, image) pairs",
        max_diff <= 1e-4 and agreement == 1.0 and elapsed <= 60.0,
        f"max_diff={max_diff:.3g}, agreement={agreement}, {elapsed:.1f}s",
    )


def test_criterion_2_keyspace():
    paper = keyspace(16, 3, 224, 224)
    tiny = keyspace(2, 1, 4, 4)
    report(
        "criterion 2: key space",
        abs(paper.log2_total - 8237) <= 1.0 and tiny.o_total == 3456,
        f"log2={paper.log2_total:.2f}, tiny O={tiny.o_total}",
    )


def test_criterion_3_plain_image_robustness(trained):
    model, model_t, keys, test_set = trained
    baseline_acc = evaluate_accuracy(model, test_set)
    identical = predictions(model, test_set) == predictions(model_t, test_set, encrypt_with=keys)
    plain_acc = evaluate_accuracy(model_t, test_set)
    report(
        "criterion 3: trained baseline accuracy >= 0.90",
        baseline_acc >= 0.90,
        f"accuracy={baseline_acc}",
    )
    report(
        "criterion 3a: transformed-on-encrypted predictions identical to baseline-on-plain",
        identical,
    )
    report(
        "criterion 3b: transformed model collapses on plain images",
        plain_acc <= 0.25,
        f"accuracy={plain_acc}",
    )


def test_criterion_4_random_key_attack(trained):
    model, model_t, keys, test_set = trained
    correct_acc = evaluate_accuracy(model_t, test_set, encrypt_with=keys)
    result = random_key_attack(model_t, test_set, 100, seed=3, correct_keys=keys)
    all_below = all(acc < correct_acc for acc in result.per_trial)
    stats_present = all(
        k in result.metrics for k in ("q1", "median", "q3", "whisker_low", "whisker_high")
    )
    report(
        "criterion 4: every wrong key below correct key; median <= 0.25",
        all_below and result.metrics["median"] <= 0.25 and stats_present,
        f"correct={correct_acc}, wrong max={result.metrics['max']}, median={result.metrics['median']}",
    )


def _random_images(n, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(n):
        raw = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
        yield Image((raw.astype(np.float32) / np.float32(255.0)))


def test_criterion_5_property_suites():
    # encryption round-trip, bit-exact, 1000 random images
    keys = KeySet.from_master_seed(5)
    ok_roundtrip = all(
        np.array_equal(decrypt_image(encrypt_image(img, keys, 8), keys, 8).pixels, img.pixels)
        for img in _random_images(1000, 6)
    )
    report("criterion 5: encryption round-trip bit-exact on 1000 images", ok_roundtrip)

    # permutation bijections and flip balance
    ok_perm = all(is_permutation(gen_permutation(seed, 192)) for seed in range(50))
    ok_flip = all(sum(gen_flipvector(seed, 192)) == 96 for seed in range(50))
    report("criterion 5: permutations are bijections, flip vectors balanced", ok_perm and ok_flip)

    # sign identity on the 1/255 grid
    grid = (np.arange(256, dtype=np.float32) / np.float32(255.0)).reshape(1, 16, 16)
    sign_err = float(np.max(np.abs(normalize(Image(np.float32(1.0) - grid)) + normalize(Image(grid)))))
    report("criterion 5: normalize(1-v) == -normalize(v) within 1e-7", sign_err <= 1e-7, f"err={sign_err:.2g}")

    # encoder patch-order equivariance
    model = random_init(DESK, 7)
    z0 = np.random.Generator(np.random.PCG64(8)).standard_normal((17, 64)).astype(np.float32)
    perm = np.asarray(gen_permutation(9, 16))
    z0p = z0.copy()
    z0p[1:] = z0[1:][perm]
    out, outp = vit.encoder_forward(z0, model), vit.encoder_forward(z0p, model)
    equiv_err = float(max(np.max(np.abs(outp[0] - out[0])), np.max(np.abs(outp[1:] - out[1:][perm]))))
    report("criterion 5: encoder patch-order equivariance within 1e-5", equiv_err <= 1e-5, f"err={equiv_err:.2g}")

    # trainer gradients vs central finite differences on the tiny config
    tiny_model = random_init(TINY, 3)
    params = [t.astype(np.float64) for t in tiny_model.tensors()]
    rng = np.random.Generator(np.random.PCG64(5))
    x_p = rng.uniform(-1, 1, size=(TINY.num_patches, TINY.patch_dim))
    logits, cache = forward_cache(params, TINY, x_p)
    _, dlogits = cross_entropy(logits, 1)
    grads = backward(params, TINY, cache, dlogits)
    worst = 0.0
    h = 1e-5
    for p, g in zip(params, grads):
        for i in rng.choice(p.size, size=min(3, p.size), replace=False):
            ix = np.unravel_index(i, p.shape)
            orig = p[ix]
            p[ix] = orig + h
            lp = cross_entropy(forward_cache(params, TINY, x_p)[0], 1)[0]
            p[ix] = orig - h
            lm = cross_entropy(forward_cache(params, TINY, x_p)[0], 1)[0]
            p[ix] = orig
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - g[ix]) / max(1e-6, abs(fd), abs(g[ix])))
    report("criterion 5: trainer gradients within 1e-3 of finite differences", worst <= 1e-3, f"rel={worst:.2g}")

    # container round-trips
    ok_weights = vit.models_equal(vit.load_model(vit.save_model(model)), model)
    img = next(_random_images(1, 10))
    ok_ppm = np.array_equal(read_ppm(write_ppm(img)).pixels, img.pixels)
    report("criterion 5: weight-file and PPM round-trips bit-exact", ok_weights and ok_ppm)

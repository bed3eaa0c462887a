"""Command-line front-end.

Every subcommand is deterministic given its flags. Machine-readable
output (JSON) goes to stdout or --out files; human diagnostics go to
stderr. Report paths can additionally render matplotlib figures.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness, vit
from .blockcrypt import decrypt_image, encrypt_image
from .images import load_ppm, save_ppm
from .keyrand import KeySet
from .modelcrypt import transform_model


def _load_keys(path) -> KeySet:
    with open(path, "r", encoding="ascii") as fh:
        return KeySet.from_json(fh.read())


def _cmd_keygen(args) -> int:
    if args.k1 is not None or args.k2 is not None or args.k3 is not None:
        if None in (args.k1, args.k2, args.k3):
            raise ValueError("either give --seed or all of --k1 --k2 --k3")
        keys = KeySet(args.k1, args.k2, args.k3)
    elif args.seed is not None:
        keys = KeySet.from_master_seed(args.seed)
    else:
        raise ValueError("either give --seed or all of --k1 --k2 --k3")
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write(keys.to_json() + "\n")
    print(json.dumps({"out": args.out}))
    return 0


def _cmd_encrypt(args, decrypt: bool = False) -> int:
    keys = _load_keys(args.keys)
    img = load_ppm(getattr(args, "in"))
    op = decrypt_image if decrypt else encrypt_image
    save_ppm(op(img, keys, args.block), args.out)
    print(json.dumps({"out": args.out, "block": args.block}))
    return 0


def _cmd_transform_model(args) -> int:
    with open(getattr(args, "in"), "rb") as fh:
        model = vit.load_model(fh.read())
    with open(args.out, "wb") as fh:
        fh.write(vit.save_model(transform_model(model, _load_keys(args.keys))))
    print(json.dumps({"out": args.out}))
    return 0


def _cmd_infer(args) -> int:
    with open(args.model, "rb") as fh:
        model = vit.load_model(fh.read())
    logits = vit.forward(model, load_ppm(args.image))
    print(json.dumps({"logits": [float(v) for v in logits], "argmax": int(np.argmax(logits))}))
    return 0


def _cmd_verify_equivalence(args) -> int:
    with open(args.model, "rb") as fh:
        model = vit.load_model(fh.read())
    keys = _load_keys(args.keys) if args.keys else None
    report = harness.verify_equivalence(model, keys, args.n, args.seed)
    print(report.to_json())
    if args.fig:
        from .plots import render_equivalence_hist

        render_equivalence_hist(report, args.fig)
    return 0 if report.metrics["max_abs_logit_diff"] <= args.tol else 1


def _cmd_attack(args) -> int:
    with open(args.model, "rb") as fh:
        model_t = vit.load_model(fh.read())
    keys = _load_keys(args.keys)
    dataset = harness.load_dataset(args.dataset)
    report = harness.random_key_attack(model_t, dataset, args.n_keys, args.seed, correct_keys=keys)
    correct_acc = harness.evaluate_accuracy(model_t, dataset, encrypt_with=keys)
    report.metrics["correct_key_accuracy"] = correct_acc
    print(report.to_json())
    if args.csv:
        with open(args.csv, "w", encoding="ascii", newline="") as fh:
            fh.write(report.to_csv())
    if args.fig:
        from .plots import render_attack_boxplot

        render_attack_boxplot(report, args.fig, correct_accuracy=correct_acc)
    return 0


def _cmd_keyspace(args) -> int:
    result = harness.keyspace(args.block, args.channels, args.width, args.height)
    print(result.to_json())
    return 0


def _cmd_train_toy(args) -> int:
    config = vit.VitConfig()
    dataset = harness.make_synthetic_dataset(args.seed, args.n_per_class, config)
    history: list = []
    model = harness.train_toy(
        vit.random_init(config, args.seed), dataset, args.epochs, args.lr, seed=args.seed, history=history
    )
    with open(args.out, "wb") as fh:
        fh.write(vit.save_model(model))
    accuracy = harness.evaluate_accuracy(model, dataset)
    print(json.dumps({"out": args.out, "train_accuracy": accuracy, "final_loss": history[-1] if history else None}))
    return 0


def _cmd_make_dataset(args) -> int:
    config = vit.VitConfig()
    dataset = harness.make_synthetic_dataset(args.seed, args.n_per_class, config)
    harness.save_dataset(dataset, args.out)
    print(json.dumps({"out": args.out, "images": len(dataset)}))
    return 0


def _u64(text: str) -> int:
    v = int(text, 0)
    if not (0 <= v < 1 << 64):
        raise argparse.ArgumentTypeError("value out of unsigned 64-bit range")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitcrypt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write a key file from a master seed or explicit sub-seeds")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--k1", type=_u64)
    p.add_argument("--k2", type=_u64)
    p.add_argument("--k3", type=_u64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_keygen)

    for name, is_decrypt in (("encrypt", False), ("decrypt", True)):
        p = sub.add_parser(name, help=f"{name} a PPM image block-wise")
        p.add_argument("--in", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--keys", required=True)
        p.add_argument("--block", type=int, default=8)
        p.set_defaults(func=lambda a, d=is_decrypt: _cmd_encrypt(a, decrypt=d))

    p = sub.add_parser("transform-model", help="apply the keyed embedding transformation to a weight file")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keys", required=True)
    p.set_defaults(func=_cmd_transform_model)

    p = sub.add_parser("infer", help="print logits and argmax for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("verify-equivalence", help="check transformed-on-encrypted == baseline-on-plain")
    p.add_argument("--model", required=True)
    p.add_argument("--keys", default=None, help="fixed key file; omitted = fresh key per image")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=_u64, default=1)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--fig", default=None, help="also render a summary figure to this path")
    p.set_defaults(func=_cmd_verify_equivalence)

    p = sub.add_parser("attack", help="random-key attack on a transformed model")
    p.add_argument("--model", required=True, help="transformed weight file")
    p.add_argument("--dataset", required=True, help="directory tree <class_index>/<name>.ppm")
    p.add_argument("--keys", required=True, help="correct key file (rejected from the wrong-key draw)")
    p.add_argument("--n-keys", type=int, default=100)
    p.add_argument("--seed", type=_u64, default=1)
    p.add_argument("--csv", default=None, help="write per-key accuracies as CSV")
    p.add_argument("--fig", default=None, help="render the box plot to this path")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("keyspace", help="combinatorial key-space sizes in bits")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--channels", type=int, default=3)
    p.set_defaults(func=_cmd_keyspace)

    p = sub.add_parser("train-toy", help="train the desk-scale model on the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=_u64, default=1)
    p.add_argument("--n-per-class", type=int, default=20)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("make-dataset", help="write the synthetic dataset as a PPM directory tree")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_u64, default=2)
    p.add_argument("--n-per-class", type=int, default=10)
    p.set_defaults(func=_cmd_make_dataset)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

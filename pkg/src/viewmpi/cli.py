"""Command-line entry point: train, render, eval, export, bench, gen-scene."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import checkpoint as ckpt_mod
from . import export as export_mod
from .estimator import as_dataset
from .metrics import psnr, ssim
from .render import render_image_batched, trace_rays
from .scene import Camera, write_image
from .scenegen import generate_scene
from .train import TrainConfig, train, write_metrics_csv


def _add_train(sub):
    p = sub.add_parser("train", help="optimize a model on a scene")
    p.add_argument("--scene", required=True, help="scene directory or manifest path")
    p.add_argument("--config", help="JSON file mirroring the training config")
    p.add_argument("--out", default="ckpt.npz", help="checkpoint output path")
    p.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    for flag, typ in [("--planes", int), ("--sharing", int), ("--coeffs", int),
                      ("--epochs", int), ("--seed", int), ("--workers", int),
                      ("--triplets", int), ("--spatial-hidden", int),
                      ("--spatial-layers", int), ("--eval-every", int)]:
        p.add_argument(flag, type=typ)
    p.add_argument("--basis", choices=["learned", "sh", "hsh", "jh", "fs", "ts"])
    p.add_argument("--alpha-mode", choices=["implicit", "explicit"])
    p.add_argument("--base-color-mode", choices=["implicit", "explicit"])
    p.add_argument("--coeff-mode", choices=["implicit", "explicit"])
    p.add_argument("--stochastic-depth", action="store_true", default=None)


def _cmd_train(args) -> int:
    cfg_dict = {}
    if args.config:
        with open(args.config) as fh:
            cfg_dict.update(json.load(fh))
    overrides = {
        "planes": args.planes, "sharing": args.sharing, "coeffs": args.coeffs,
        "basis": args.basis, "epochs": args.epochs, "seed": args.seed,
        "workers": args.workers, "triplets": args.triplets,
        "spatial_hidden": args.spatial_hidden, "spatial_layers": args.spatial_layers,
        "eval_every": args.eval_every, "alpha_mode": args.alpha_mode,
        "base_color_mode": args.base_color_mode, "coeff_mode": args.coeff_mode,
        "stochastic_depth": args.stochastic_depth,
    }
    cfg_dict.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig.from_dict(cfg_dict)
    dataset = as_dataset(args.scene)
    model, rows = train(dataset, cfg)
    ckpt_mod.save_checkpoint(args.out, model, cfg.to_dict())
    metrics_path = args.metrics or args.out + ".metrics.csv"
    write_metrics_csv(rows, metrics_path)
    final = [r["heldout_psnr"] for r in rows if r["heldout_psnr"] != ""]
    print(f"checkpoint: {args.out}")
    print(f"metrics: {metrics_path}")
    if final:
        print(f"final heldout psnr: {final[-1]:.3f} dB")
    return 0


def _camera_from_pose_file(path: str) -> Camera:
    with open(path) as fh:
        d = json.load(fh)
    far = math.inf if d["far"] == "inf" else float(d["far"])
    return Camera(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
                  np.array(d["rotation"], dtype=float).reshape(3, 3),
                  np.array(d["center"], dtype=float), d["near"], far).validate()


def _cmd_render(args) -> int:
    model, _, _ = ckpt_mod.load_checkpoint(args.ckpt)
    if args.pose is None:
        cam = model.reference
    elif os.path.exists(args.pose):
        cam = _camera_from_pose_file(args.pose)
    else:
        if args.scene is None:
            raise ValueError("--pose by index requires --scene")
        dataset = as_dataset(args.scene)
        cam = dataset.cameras[int(args.pose)]
    img = render_image_batched(model, cam)
    write_image(args.out, img, bits=args.bits)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, _, _ = ckpt_mod.load_checkpoint(args.ckpt)
    dataset = as_dataset(args.scene)
    ids = dataset.test_indices if args.split == "test" else dataset.train_indices
    lines = ["image,psnr,ssim"]
    for i in ids:
        img = render_image_batched(model, dataset.cameras[i])
        lines.append(f"{i},{psnr(img, dataset.images[i]):.6f},"
                     f"{ssim(img, dataset.images[i]):.6f}")
    out = "\n".join(lines)
    print(out)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    return 0


def _cmd_export(args) -> int:
    model, _, _ = ckpt_mod.load_checkpoint(args.ckpt)
    export_mod.bake(model, args.out, span=args.span, basis_grid=args.grid,
                    bits=args.bits)
    print(f"baked to {args.out}")
    return 0


def _op_estimate(model) -> float:
    """Multiply-accumulate count per rendered pixel."""
    d = model.num_planes
    rows = d * ((model.alpha_mode == "implicit")
                + ("implicit" in (model.base_color_mode, model.coeff_mode)))
    macs = 0.0
    if model.spatial_net is not None:
        macs += rows * sum(l.w.size for l in model.spatial_net.layers)
    if model.basis_net is not None:
        macs += d * sum(l.w.size for l in model.basis_net.layers)
    macs += d * (3 * model.num_coeffs + 4 * 3 + 8)  # expansion, bilinear, over
    return macs


def _cmd_bench(args) -> int:
    model, _, _ = ckpt_mod.load_checkpoint(args.ckpt)
    cam = model.reference
    rng = np.random.default_rng(args.seed)
    pixels = np.stack([rng.uniform(0, cam.width, args.rays),
                       rng.uniform(0, cam.height, args.rays)], axis=-1)
    trace_rays(model, cam, pixels[:64])  # warm-up
    t0 = time.perf_counter()
    trace_rays(model, cam, pixels)
    dt = time.perf_counter() - t0
    print(json.dumps({"rays_per_sec": args.rays / dt,
                      "macs_per_pixel": _op_estimate(model)}))
    return 0


def _cmd_gen_scene(args) -> int:
    generate_scene(kind=args.kind, seed=args.seed, views=args.views,
                   width=args.width, height=args.height, out_dir=args.out,
                   bits=args.bits)
    print(f"wrote scene to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewmpi",
                                     description="view-dependent multiplane images")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)

    p = sub.add_parser("render", help="render one pose from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pose", help="pose index (with --scene) or camera JSON file")
    p.add_argument("--scene", help="scene for --pose by index")
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="PSNR/SSIM over a scene split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export", help="bake a checkpoint to image atlases")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.add_argument("--span", type=float, default=0.7)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="rays/sec and per-pixel op estimate")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rays", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-scene", help="generate a synthetic test scene")
    p.add_argument("--kind", choices=["lambertian", "specular"], default="lambertian")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=12)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=24)
    p.add_argument("--bits", type=int, choices=[8, 16], default=16)
    return parser


_COMMANDS = {
    "train": _cmd_train,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "export": _cmd_export,
    "bench": _cmd_bench,
    "gen-scene": _cmd_gen_scene,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # runtime failures exit 1, usage errors exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Per-scene optimization: triplet sampling, losses, and the training loop.

Each epoch runs one iteration per training image, in cyclic order.  An
iteration samples L-shaped pixel triplets (anchor, right neighbor, down
neighbor) so the loss can penalize finite-difference image gradients as well
as raw colors, renders those rays against the current model snapshot,
backpropagates through compositing / basis expansion / both networks, and
applies Adam with separate learning rates for grids and networks.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import metrics as metrics_mod
from .basis import make_config
from .mpi import MpiModel, initialize_model
from .nn import AdamState, adam_step, lr_schedule
from .render import render_image_batched, trace_backward, trace_rays
from .scene import SceneDataset, plane_depths

CHUNK = 4096  # samples per forward/backward chunk; fixed so that worker
# count never changes the reduction order (gradients are summed chunk by chunk)


@dataclass
class TrainConfig:
    epochs: int = 4000
    triplets: int = 2667  # anchors per iteration -> 3x samples
    grad_weight: float = 0.05  # weight of the finite-difference gradient term
    tv_weight: float = 0.03  # weight of total variation on the base color
    lr_base_color: float = 0.01
    lr_networks: float = 0.001
    lr_decay: float = 0.1
    lr_decay_every: int = 1333
    planes: int = 192  # D
    sharing: int = 12  # M
    coeffs: int = 8  # N
    basis: str = "learned"
    basis_a: float | None = None  # harmonic domain bound override (jh only)
    basis_b: float | None = None
    alpha_mode: str = "implicit"
    base_color_mode: str = "explicit"
    coeff_mode: str = "implicit"
    alpha_bias_init: float = -5.0
    stochastic_depth: bool = False
    plane_spacing: str = "inverse_depth"
    spatial_hidden: int = 384
    spatial_layers: int = 6
    basis_hidden: int = 64
    basis_layers: int = 3
    grad_mask_threshold: float | None = None  # off by default
    eval_every: int = 25  # epochs between held-out PSNR probes
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.grad_weight < 0 or self.tv_weight < 0:
            raise ValueError("loss weights must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class TripletBatch:
    anchors: np.ndarray  # (T, 2) integer anchor coords
    pixels: np.ndarray  # (3T, 2): anchors, then (x+1, y), then (x, y+1)
    gt: np.ndarray | None = None  # (3T, 3)

    @property
    def count(self) -> int:
        return len(self.anchors)


def sample_triplets(rng: np.random.Generator, width: int, height: int, count: int,
                    image: np.ndarray | None = None) -> TripletBatch:
    """Sample ``count`` anchors in [0, W-2] x [0, H-2] plus their companions.

    Anchors are drawn without replacement while the pool allows it; an
    oversized request falls back to replacement with a warning.  Companions
    may coincide with other triplets' samples (no deduplication).
    """
    if width < 2 or height < 2:
        raise ValueError("triplet sampling needs at least a 2x2 image")
    if count < 1:
        raise ValueError("triplet count must be >= 1")
    pool = (width - 1) * (height - 1)
    if count > pool:
        warnings.warn(f"requested {count} triplets from a pool of {pool}; "
                      "sampling with replacement")
    flat = rng.choice(pool, size=count, replace=count > pool)
    anchors = np.stack([flat % (width - 1), flat // (width - 1)], axis=-1)
    pixels = np.concatenate([anchors,
                             anchors + np.array([1, 0]),
                             anchors + np.array([0, 1])])
    gt = image[pixels[:, 1], pixels[:, 0]] if image is not None else None
    return TripletBatch(anchors, pixels, gt)


def reconstruction_loss(pred: np.ndarray, gt: np.ndarray, batch: TripletBatch,
                        grad_weight: float, grad_mask_threshold: float | None = None):
    """Mean squared color error plus weighted L1 of triplet finite differences.

    Both terms are elementwise means (over samples x channels, and defined
    differences x channels respectively).  Returns (loss, dloss/dpred); the
    anchor of each triplet collects gradient from its own color term and from
    both difference terms it participates in.
    """
    t = batch.count
    if pred.shape != gt.shape or pred.shape[0] != 3 * t:
        raise ValueError("predictions are misaligned with the triplet batch")
    resid = pred - gt
    n_color = resid.size
    loss = float(np.sum(resid**2)) / n_color
    grad = 2.0 * resid / n_color

    if grad_weight > 0:
        anchors, xs, ys = pred[:t], pred[t:2 * t], pred[2 * t:]
        ganchors, gxs, gys = gt[:t], gt[t:2 * t], gt[2 * t:]
        dx = (xs - anchors) - (gxs - ganchors)
        dy = (ys - anchors) - (gys - ganchors)
        n_diff = dx.size + dy.size
        sx = np.sign(dx)
        sy = np.sign(dy)
        if grad_mask_threshold is not None:
            sx *= np.abs(gxs - ganchors) < grad_mask_threshold
            sy *= np.abs(gys - ganchors) < grad_mask_threshold
            dx = dx * (np.abs(gxs - ganchors) < grad_mask_threshold)
            dy = dy * (np.abs(gys - ganchors) < grad_mask_threshold)
        loss += grad_weight * float(np.sum(np.abs(dx)) + np.sum(np.abs(dy))) / n_diff
        w = grad_weight / n_diff
        grad[t:2 * t] += w * sx
        grad[2 * t:] += w * sy
        grad[:t] -= w * (sx + sy)
    return loss, grad


def tv_loss(base_color: np.ndarray, weight: float):
    """Anisotropic total variation of the (G, H, W, 3) base-color grids.

    Per group: the mean absolute value over all defined x- and y-neighbor
    differences (all channels pooled); group means are summed, then weighted.
    Subgradient at exact ties is 0.
    """
    if base_color is None or base_color.size == 0:
        raise ValueError("total variation needs at least one grid")
    grad = np.zeros_like(base_color)
    dx = base_color[:, :, 1:, :] - base_color[:, :, :-1, :]
    dy = base_color[:, 1:, :, :] - base_color[:, :-1, :, :]
    per_group = dx.shape[1] * dx.shape[2] * 3 + dy.shape[1] * dy.shape[2] * 3
    if per_group == 0:
        return 0.0, grad
    loss = weight * float(np.sum(np.abs(dx)) + np.sum(np.abs(dy))) / per_group
    w = weight / per_group
    sx = w * np.sign(dx)
    sy = w * np.sign(dy)
    grad[:, :, 1:, :] += sx
    grad[:, :, :-1, :] -= sx
    grad[:, 1:, :, :] += sy
    grad[:, :-1, :, :] -= sy
    return loss, grad


def _jittered_planes(rng, depths: np.ndarray, dhat_range):
    """Shift every plane by up to half an inverse-depth slab, uniformly."""
    d = len(depths)
    if d == 1:
        return depths, np.zeros(1)
    inv = 1.0 / depths
    frac = np.arange(d) + rng.uniform(-0.5, 0.5, size=d)
    inv_j = inv[0] + frac / (d - 1) * (inv[-1] - inv[0])
    lo, hi = dhat_range
    dhat = 2.0 * (frac - lo) / (hi - lo) - 1.0
    return 1.0 / inv_j, dhat


def _forward_chunks(model, cam, pixels, depths, dhat, pool):
    spans = [(s, min(s + CHUNK, len(pixels))) for s in range(0, len(pixels), CHUNK)]

    def run(span):
        return trace_rays(model, cam, pixels[span[0]:span[1]], depths, dhat,
                          with_cache=True)

    results = list(pool.map(run, spans)) if pool else [run(s) for s in spans]
    pred = np.concatenate([r[0] for r in results])
    return pred, [(span, r[1]) for span, r in zip(spans, results)]


def _backward_chunks(model, chunks, grad_pred, pool):
    def run(item):
        (s, e), cache = item
        return trace_backward(model, cache, grad_pred[s:e])

    grad_list = list(pool.map(run, chunks)) if pool else [run(c) for c in chunks]
    total = grad_list[0]
    for g in grad_list[1:]:  # fixed chunk order: independent of worker count
        for name in total:
            total[name] += g[name]
    return total


def heldout_psnr(model: MpiModel, dataset: SceneDataset) -> float:
    """Mean PSNR over the test split, rendered with the batched path."""
    vals = [metrics_mod.psnr(render_image_batched(model, dataset.cameras[i]),
                             dataset.images[i])
            for i in dataset.test_indices]
    return float(np.mean(vals)) if vals else float("nan")


def train(dataset: SceneDataset, cfg: TrainConfig):
    """Optimize a fresh model on the dataset; returns (model, metrics rows).

    Metrics rows are dicts with iteration, loss, lr (network group), and
    heldout_psnr (empty when not probed this iteration).
    """
    if not dataset.train_indices:
        raise ValueError("dataset has no training images")
    rng = np.random.default_rng(cfg.seed)
    ref = dataset.reference
    planes = plane_depths(ref.near, ref.far, cfg.planes, cfg.plane_spacing)
    model = initialize_model(
        ref, planes, cfg.sharing, make_config(cfg.basis, cfg.coeffs, cfg.basis_a, cfg.basis_b),
        rng,
        alpha_mode=cfg.alpha_mode, base_color_mode=cfg.base_color_mode,
        coeff_mode=cfg.coeff_mode,
        spatial_hidden=cfg.spatial_hidden, spatial_layers=cfg.spatial_layers,
        basis_hidden=cfg.basis_hidden, basis_layers=cfg.basis_layers,
        alpha_bias_init=cfg.alpha_bias_init,
    )
    model.stochastic_trained = cfg.stochastic_depth
    adam = AdamState(groups=model.param_groups())
    rows = []
    if cfg.epochs == 0:
        return model, rows

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    params = model.params()
    base_depths, base_dhat = model.planes.depths, model.dhat
    it = 0
    try:
        for epoch in range(cfg.epochs):
            lrs = {
                "nets": lr_schedule(cfg.lr_networks, epoch, cfg.lr_decay, cfg.lr_decay_every),
                "grids": lr_schedule(cfg.lr_base_color, epoch, cfg.lr_decay, cfg.lr_decay_every),
            }
            probe = (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
            for k, img_idx in enumerate(dataset.train_indices):
                cam = dataset.cameras[img_idx]
                image = dataset.images[img_idx]
                batch = sample_triplets(rng, cam.width, cam.height, cfg.triplets, image)
                if cfg.stochastic_depth:
                    depths, dhat = _jittered_planes(rng, base_depths, model.norms[2])
                else:
                    depths, dhat = base_depths, base_dhat
                pixels = batch.pixels + 0.5
                pred, chunks = _forward_chunks(model, cam, pixels, depths, dhat, pool)
                loss, grad_pred = reconstruction_loss(
                    pred, batch.gt, batch, cfg.grad_weight, cfg.grad_mask_threshold)
                if model.base_color is not None and cfg.tv_weight > 0:
                    tv, tv_grad = tv_loss(model.base_color, cfg.tv_weight)
                    loss += tv
                else:
                    tv_grad = None
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite loss at iteration {it} "
                        f"(lr nets={lrs['nets']:g}, grids={lrs['grids']:g})")
                grads = _backward_chunks(model, chunks, grad_pred, pool)
                if tv_grad is not None:
                    grads["k0"] += tv_grad
                adam_step(adam, params, grads, lrs)
                row = {"iteration": it, "loss": loss, "lr": lrs["nets"], "heldout_psnr": ""}
                if probe and k == len(dataset.train_indices) - 1:
                    row["heldout_psnr"] = heldout_psnr(model, dataset)
                rows.append(row)
                it += 1
    finally:
        if pool:
            pool.shutdown()
    return model, rows


def write_metrics_csv(rows: list, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iteration", "loss", "lr", "heldout_psnr"])
        writer.writeheader()
        writer.writerows(rows)


ABLATION_ROWS = [
    ("explicit", "explicit", "explicit"),
    ("explicit", "explicit", "implicit"),
    ("explicit", "implicit", "explicit"),
    ("explicit", "implicit", "implicit"),
    ("implicit", "explicit", "explicit"),
    ("implicit", "explicit", "implicit"),
    ("implicit", "implicit", "explicit"),
    ("implicit", "implicit", "implicit"),
]


def ablation_matrix(dataset: SceneDataset, base_cfg: TrainConfig) -> list:
    """Train all 8 implicit/explicit combinations for (alpha, base color, coeffs).

    Returns one row per combination with held-out PSNR/SSIM; the hybrid
    implicit-alpha / explicit-base-color / implicit-coefficients row is the
    method default and is marked as such.
    """
    rows = []
    for alpha_mode, k0_mode, coef_mode in ABLATION_ROWS:
        cfg = replace(base_cfg, alpha_mode=alpha_mode, base_color_mode=k0_mode,
                      coeff_mode=coef_mode)
        model, _ = train(dataset, cfg)
        psnrs, ssims = [], []
        for i in dataset.test_indices:
            img = render_image_batched(model, dataset.cameras[i])
            psnrs.append(metrics_mod.psnr(img, dataset.images[i]))
            ssims.append(metrics_mod.ssim(img, dataset.images[i]))
        rows.append({
            "alpha": "Ex" if alpha_mode == "explicit" else "Im",
            "base_color": "Ex" if k0_mode == "explicit" else "Im",
            "coeffs": "Ex" if coef_mode == "explicit" else "Im",
            "psnr": float(np.mean(psnrs)),
            "ssim": float(np.mean(ssims)),
            "default": (alpha_mode, k0_mode, coef_mode)
                       == ("implicit", "explicit", "implicit"),
        })
    return rows


def write_ablation_csv(rows: list, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["alpha", "base_color", "coeffs", "psnr", "ssim", "default"])
        writer.writeheader()
        writer.writerows(rows)

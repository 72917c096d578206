"""Synthetic desk-scale scenes with known geometry for tests and benchmarks.

The scene is a single infinite textured plane, fronto-parallel at a fixed
depth, viewed by a ring of forward-facing cameras.  The "specular" kind adds
a white highlight whose strength depends on the viewing direction through a
smooth angular lobe, so view-dependent color modeling is required to
reproduce it.  Images are quantized to the written bit depth before being
returned, making generate -> save -> load a bit-identical round trip.
"""

from __future__ import annotations

import numpy as np

from .scene import Camera, SceneDataset, save_scene

PLANE_Z = 2.0
NEAR = 1.7
FAR = 2.4
BASELINE = 0.3  # camera ring radius, world units


def _texture_value(ctrl: np.ndarray, u, v):
    """Continuous bilinear lookup of a control grid over [0, 1]^2, edge-clamped."""
    gh, gw = ctrl.shape[:2]
    x = np.clip(np.asarray(u) * (gw - 1), 0, gw - 1)
    y = np.clip(np.asarray(v) * (gh - 1), 0, gh - 1)
    x0 = np.clip(np.floor(x).astype(int), 0, gw - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, gh - 2)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    return ((1 - fx) * (1 - fy) * ctrl[y0, x0] + fx * (1 - fy) * ctrl[y0, x0 + 1]
            + (1 - fx) * fy * ctrl[y0 + 1, x0] + fx * fy * ctrl[y0 + 1, x0 + 1])


def _look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera-to-world rotation with +z toward the target (identity when axial)."""
    fwd = target - center
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross([0.0, 1.0, 0.0], fwd)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=-1)


def _camera_ring(views: int, width: int, height: int, rng: np.random.Generator):
    # converging ring: every camera looks at the plane center so all views
    # stay inside the central reference frustum's footprint
    fx = fy = 1.4 * width
    target = np.array([0.0, 0.0, PLANE_Z])
    centers = [np.zeros(3), np.zeros(3)]  # slot 1 is the central reference
    for i in range(2, views):
        ang = 2.0 * np.pi * (i - 2) / max(views - 2, 1)
        radius = BASELINE * (0.55 + 0.45 * (i % 2))
        centers.append(np.array([radius * np.cos(ang), radius * np.sin(ang),
                                 rng.uniform(-0.03, 0.03)]))
    centers[0] = np.array([BASELINE * 0.4, BASELINE * 0.25, 0.0])  # held-out view
    cams = []
    for c in centers:
        rot = np.eye(3) if np.allclose(c[:2], 0.0) else _look_at(c, target)
        cams.append(Camera(fx, fy, width / 2.0, height / 2.0, width, height,
                           rot, c, NEAR, FAR))
    return cams


def generate_scene(kind: str = "lambertian", seed: int = 0, views: int = 12,
                   width: int = 32, height: int = 24, out_dir: str | None = None,
                   bits: int = 16) -> SceneDataset:
    """Build (and optionally write) a synthetic scene with a nerf-style split."""
    if kind not in ("lambertian", "specular"):
        raise ValueError(f"unknown scene kind {kind!r}")
    rng = np.random.default_rng(seed)
    ctrl = rng.uniform(0.08, 0.72, size=(7, 9, 3))
    cams = _camera_ring(views, width, height, rng)

    # textured region: the reference frustum footprint at the plane, widened
    # so every camera's rays land inside it
    ext_x = (width / 2.0) / cams[0].fx * PLANE_Z * 1.8
    ext_y = (height / 2.0) / cams[0].fy * PLANE_Z * 1.8
    spot_center = np.array([0.25 * ext_x, -0.15 * ext_y])
    spot_sigma = 0.45 * max(ext_x, ext_y)
    lobe_mean = np.array([0.04, -0.03])
    lobe_sigma = 0.09
    amplitude = 0.35

    images = []
    xs, ys = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    for cam in cams:
        dirs = np.stack([(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy,
                         np.ones_like(xs)], axis=-1) @ cam.rotation.T
        t = (PLANE_Z - cam.center[2]) / dirs[..., 2]
        pts = cam.center + t[..., None] * dirs
        u = (pts[..., 0] + ext_x) / (2 * ext_x)
        v = (pts[..., 1] + ext_y) / (2 * ext_y)
        img = _texture_value(ctrl, u, v)
        if kind == "specular":
            view = pts - cam.center
            view = view / np.linalg.norm(view, axis=-1, keepdims=True)
            lobe = np.exp(-((view[..., 0] - lobe_mean[0]) ** 2
                            + (view[..., 1] - lobe_mean[1]) ** 2) / (2 * lobe_sigma**2))
            spot = np.exp(-((pts[..., 0] - spot_center[0]) ** 2
                            + (pts[..., 1] - spot_center[1]) ** 2) / (2 * spot_sigma**2))
            img = img + amplitude * (spot * lobe)[..., None]
        images.append(np.clip(img, 0.0, 1.0))

    # quantize to the written bit depth so saved scenes reload bit-identically
    scale = 255 if bits == 8 else 65535
    images = [np.round(img * scale) / scale for img in images]

    split = ["test" if i % 8 == 0 else "train" for i in range(views)]
    dataset = SceneDataset(cams, images, split, reference_index=1)
    if out_dir is not None:
        save_scene(dataset, out_dir, bits=bits)
    return dataset

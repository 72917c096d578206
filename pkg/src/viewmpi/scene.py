"""Posed-image scene ingestion, plane placement, and train/test splits.

Scenes are a JSON manifest plus PNG files.  Images decode to linear [0, 1]
floats with no gamma handling; 8- and 16-bit PNGs are supported.  The "nerf"
split policy holds out every 8th image (index mod 8 == 0) unless a per-image
flag says otherwise.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import cv2
import jsonschema
import numpy as np

# substitution for infinite depth wherever a finite value is required:
# an inverse depth of FAR_EPS, i.e. depth 1/FAR_EPS
FAR_EPS = 1e-6

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["images", "near", "far"],
    "properties": {
        "images": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["file", "fx", "fy", "cx", "cy", "width", "height",
                             "rotation", "center"],
                "properties": {
                    "file": {"type": "string"},
                    "fx": {"type": "number"},
                    "fy": {"type": "number"},
                    "cx": {"type": "number"},
                    "cy": {"type": "number"},
                    "width": {"type": "integer"},
                    "height": {"type": "integer"},
                    "rotation": {
                        "type": "array", "minItems": 9, "maxItems": 9,
                        "items": {"type": "number"},
                    },
                    "center": {
                        "type": "array", "minItems": 3, "maxItems": 3,
                        "items": {"type": "number"},
                    },
                    "split": {"enum": ["train", "test", None]},
                },
            },
        },
        "near": {"type": "number"},
        "far": {"anyOf": [{"type": "number"}, {"const": "inf"}]},
        "reference": {"anyOf": [{"type": "integer"}, {"const": None}]},
    },
}


class SceneError(ValueError):
    """Manifest or image data violates the scene contract."""


@dataclass
class Camera:
    """Pinhole camera: camera-to-world rotation, world-space center, +z forward."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # (3, 3) camera-to-world
    center: np.ndarray  # (3,) world units
    near: float
    far: float  # may be math.inf

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.center = np.asarray(self.center, dtype=float).reshape(3)

    def validate(self, rot_tol: float = 1e-6, name: str = "camera"):
        if self.fx <= 0 or self.fy <= 0:
            raise SceneError(f"{name}: focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise SceneError(f"{name}: principal point outside image")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > rot_tol:
            raise SceneError(f"{name}: rotation is not orthonormal (|R^T R - I| = {err:.3g})")
        if np.linalg.det(self.rotation) < 0:
            raise SceneError(f"{name}: rotation determinant is negative")
        if not (0 < self.near < self.far):
            raise SceneError(f"{name}: requires 0 < near < far")
        return self

    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass
class SceneDataset:
    cameras: list
    images: list  # (H, W, 3) float in [0, 1]
    split: list  # "train" | "test" per image
    reference_index: int

    @property
    def train_indices(self):
        return [i for i, s in enumerate(self.split) if s == "train"]

    @property
    def test_indices(self):
        return [i for i, s in enumerate(self.split) if s == "test"]

    @property
    def reference(self) -> Camera:
        return self.cameras[self.reference_index]


@dataclass
class PlaneStack:
    """Plane depths ordered back (index 0, farthest) to front (last, nearest)."""

    depths: np.ndarray
    spacing_mode: str = "inverse_depth"

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=float)
        if self.depths.ndim != 1 or len(self.depths) < 1:
            raise SceneError("plane stack needs at least one depth")
        if not np.all(np.diff(self.depths) < 0) and len(self.depths) > 1:
            raise SceneError("plane depths must strictly decrease back to front")

    def __len__(self):
        return len(self.depths)


def plane_depths(near: float, far: float, count: int, mode: str = "inverse_depth") -> PlaneStack:
    """Place ``count`` planes between far (first) and near (last).

    inverse_depth mode samples 1/d equidistantly on [1/far, 1/near]; depth
    mode samples d equidistantly on [near, far].  far may be math.inf, which
    pins the farthest plane's inverse depth at 0 (depth inf).
    """
    if count < 1:
        raise SceneError("plane count must be >= 1")
    if not (0 < near < far):
        raise SceneError("requires 0 < near < far")
    if mode == "inverse_depth":
        inv_far = 0.0 if math.isinf(far) else 1.0 / far
        inv = np.linspace(inv_far, 1.0 / near, count)
        with np.errstate(divide="ignore"):
            depths = 1.0 / inv
    elif mode == "depth":
        if math.isinf(far):
            raise SceneError("depth spacing requires a finite far bound")
        depths = np.linspace(far, near, count)
    else:
        raise SceneError(f"unknown spacing mode {mode!r}")
    return PlaneStack(depths, mode)


def finite_depth(depth: float) -> float:
    """Replace an infinite plane depth with 1/FAR_EPS for geometric use."""
    return 1.0 / FAR_EPS if math.isinf(depth) else depth


def _image_entry_to_camera(entry: dict, near: float, far: float) -> Camera:
    return Camera(
        fx=entry["fx"], fy=entry["fy"], cx=entry["cx"], cy=entry["cy"],
        width=entry["width"], height=entry["height"],
        rotation=np.array(entry["rotation"], dtype=float).reshape(3, 3),
        center=np.array(entry["center"], dtype=float),
        near=near, far=far,
    )


def read_image(path: str) -> np.ndarray:
    """Decode an 8- or 16-bit RGB PNG to float [0, 1] (no gamma transform)."""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise SceneError(f"cannot read image file {path!r}")
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise SceneError(f"{path!r}: expected a 3-channel image, got shape {raw.shape}")
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    if rgb.dtype == np.uint8:
        return rgb.astype(float) / 255.0
    if rgb.dtype == np.uint16:
        return rgb.astype(float) / 65535.0
    raise SceneError(f"{path!r}: unsupported bit depth {rgb.dtype}")


def write_image(path: str, img: np.ndarray, bits: int = 16):
    """Encode a [0, 1] float image as an 8- or 16-bit PNG."""
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    scale = 255 if bits == 8 else 65535
    dtype = np.uint8 if bits == 8 else np.uint16
    q = np.round(img * scale).astype(dtype)
    if not cv2.imwrite(path, cv2.cvtColor(q, cv2.COLOR_RGB2BGR)):
        raise SceneError(f"cannot write image file {path!r}")


def load_scene(manifest_path: str, split_policy: str | None = "nerf") -> SceneDataset:
    """Load a manifest + images; deterministic for identical manifest bytes."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SceneError(f"manifest {manifest_path!r} invalid: {exc.message}") from exc

    near = float(manifest["near"])
    far = math.inf if manifest["far"] == "inf" else float(manifest["far"])
    root = os.path.dirname(os.path.abspath(manifest_path))

    cameras, images, split = [], [], []
    for idx, entry in enumerate(manifest["images"]):
        cam = _image_entry_to_camera(entry, near, far)
        cam.validate(rot_tol=1e-6, name=entry["file"])
        img_path = os.path.join(root, entry["file"])
        if not os.path.exists(img_path):
            raise SceneError(f"missing image file {entry['file']!r}")
        img = read_image(img_path)
        if img.shape[:2] != (cam.height, cam.width):
            raise SceneError(
                f"{entry['file']!r}: image is {img.shape[1]}x{img.shape[0]} but camera "
                f"declares {cam.width}x{cam.height}"
            )
        flag = entry.get("split")
        if flag is None and split_policy == "nerf":
            flag = "test" if idx % 8 == 0 else "train"
        cameras.append(cam)
        images.append(img)
        split.append(flag or "train")

    if split_policy is not None:
        if not any(s == "train" for s in split):
            raise SceneError("split leaves no training images")
        if not any(s == "test" for s in split):
            raise SceneError("split leaves no test images")

    reference = manifest.get("reference")
    if reference is None:
        centroid = np.mean([c.center for c in cameras], axis=0)
        train_ids = [i for i, s in enumerate(split) if s == "train"] or list(range(len(cameras)))
        reference = min(train_ids, key=lambda i: (np.linalg.norm(cameras[i].center - centroid), i))
    elif not (0 <= reference < len(cameras)):
        raise SceneError(f"reference index {reference} out of range")

    return SceneDataset(cameras, images, split, int(reference))


def save_scene(dataset: SceneDataset, out_dir: str, bits: int = 16):
    """Write manifest.json + PNGs; inverse of load_scene for quantized data."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, (cam, img) in enumerate(zip(dataset.cameras, dataset.images)):
        fname = f"img_{i:03d}.png"
        write_image(os.path.join(out_dir, fname), img, bits=bits)
        entries.append({
            "file": fname,
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "rotation": [float(v) for v in cam.rotation.reshape(-1)],
            "center": [float(v) for v in cam.center],
            "split": dataset.split[i],
        })
    ref = dataset.cameras[dataset.reference_index]
    manifest = {
        "images": entries,
        "near": ref.near,
        "far": "inf" if math.isinf(ref.far) else ref.far,
        "reference": dataset.reference_index,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path

"""Ray/plane intersections, plane-induced homographies, viewing directions.

Conventions (fixed project-wide): +z is forward, pixel (x, y) maps to the ray
K^-1 (x, y, 1), planes are fronto-parallel in the reference camera frame, and
pixel centers sit at (x + 0.5, y + 0.5).
"""

from __future__ import annotations

import numpy as np

from .scene import Camera, finite_depth


class GeometryError(ValueError):
    """Degenerate configuration (parallel ray, zero focal length, ...)."""


def _check_camera(cam: Camera):
    if cam.fx == 0 or cam.fy == 0:
        raise GeometryError("degenerate camera: zero focal length")


def plane_homography(ref: Camera, tgt: Camera, depth: float) -> np.ndarray:
    """3x3 map from target homogeneous pixels to reference pixels.

    The plane is z = depth in the reference camera frame.  Unprojecting any
    target pixel onto that plane and reprojecting into the reference camera
    equals applying the returned matrix and dehomogenizing.
    """
    _check_camera(ref)
    _check_camera(tgt)
    depth = finite_depth(depth)
    if depth <= 0:
        raise GeometryError("plane depth must be positive")
    r_rel = ref.rotation.T @ tgt.rotation
    t_rel = ref.rotation.T @ (tgt.center - ref.center)
    normal = np.array([0.0, 0.0, 1.0])
    # the z = depth plane expressed in the target frame: m . X_t = e
    m = r_rel.T @ normal
    e = depth - normal @ t_rel
    if abs(e) < 1e-12:
        raise GeometryError("plane passes through the target camera center")
    h = ref.intrinsics() @ (r_rel + np.outer(t_rel, m) / e) @ np.linalg.inv(tgt.intrinsics())
    if abs(np.linalg.det(h)) <= 1e-12:
        raise GeometryError("homography is singular")
    return h


def apply_homography(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a 3x3 projective map to (..., 2) points and dehomogenize."""
    pts = np.asarray(pts, dtype=float)
    ones = np.ones(pts.shape[:-1] + (1,))
    ph = np.concatenate([pts, ones], axis=-1) @ h.T
    return ph[..., :2] / ph[..., 2:3]


def pixel_rays(cam: Camera, pixels: np.ndarray) -> np.ndarray:
    """World-space ray directions (not normalized) through (..., 2) pixel coords."""
    pixels = np.asarray(pixels, dtype=float)
    x = (pixels[..., 0] - cam.cx) / cam.fx
    y = (pixels[..., 1] - cam.cy) / cam.fy
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d_cam @ cam.rotation.T


def ray_plane_point(cam: Camera, pixel, ref: Camera, depth: float):
    """Intersect one camera ray with the z = depth reference plane.

    Returns (world point, reference-image coordinates).  The reference
    coordinates may fall outside the image bounds.
    """
    _check_camera(cam)
    _check_camera(ref)
    depth = finite_depth(depth)
    pts, ref_xy, valid = plane_intersections(cam, np.asarray(pixel, dtype=float)[None],
                                             ref, np.array([depth]))
    if not valid[0, 0]:
        raise GeometryError("ray is parallel to the reference plane")
    return pts[0, 0], ref_xy[0, 0]


def plane_intersections(cam: Camera, pixels: np.ndarray, ref: Camera, depths: np.ndarray):
    """Batched ray/plane intersections for (S, 2) pixels and (D,) plane depths.

    Returns world points (S, D, 3), reference pixel coords (S, D, 2), and a
    validity mask (S, D) that is False for near-parallel rays (|cos| <= 1e-9).
    """
    depths = np.array([finite_depth(d) for d in np.atleast_1d(depths)], dtype=float)
    dirs_w = pixel_rays(cam, pixels)  # (S, 3)
    dirs_ref = dirs_w @ ref.rotation  # rows: R_ref^T @ dir
    origin_ref = ref.rotation.T @ (cam.center - ref.center)
    dz = dirs_ref[:, 2]
    norm = np.linalg.norm(dirs_ref, axis=-1)
    valid = np.abs(dz) > 1e-9 * norm
    safe_dz = np.where(valid, dz, 1.0)
    s = (depths[None, :] - origin_ref[2]) / safe_dz[:, None]  # (S, D)
    pts_ref = origin_ref[None, None, :] + s[..., None] * dirs_ref[:, None, :]
    ref_x = ref.fx * pts_ref[..., 0] / depths[None, :] + ref.cx
    ref_y = ref.fy * pts_ref[..., 1] / depths[None, :] + ref.cy
    pts_world = pts_ref @ ref.rotation.T + ref.center
    return pts_world, np.stack([ref_x, ref_y], axis=-1), np.broadcast_to(valid[:, None], s.shape)


def viewing_direction(world_point, cam_center) -> np.ndarray:
    """Unit vector from the camera center toward a world point."""
    v = np.asarray(world_point, dtype=float) - np.asarray(cam_center, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise GeometryError("viewing direction undefined: point equals camera center")
    return v / n


def viewing_directions(world_points: np.ndarray, cam_center) -> np.ndarray:
    """Batched viewing_direction over (..., 3) points."""
    v = np.asarray(world_points, dtype=float) - np.asarray(cam_center, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n == 0, 1.0, n)

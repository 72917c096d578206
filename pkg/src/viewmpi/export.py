"""Bake a trained model into image atlases + manifest, and render them back.

Every model quantity becomes an image: per-plane alphas (packed three planes
per RGB file), per-group base colors, per-group-per-index coefficient images
(signed data affinely mapped to [0, 1] with per-image scale/offset recorded in
the manifest), and the angular basis evaluated on a square (v_x, v_y) grid
over a fixed viewing span.  ``render_baked`` is the CPU reference of the
shader math: full-image plane homographies, bilinear resampling, basis lookup,
and back-to-front compositing; it is what viewer implementations are checked
against.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import cv2
import numpy as np

from .geometry import apply_homography, plane_homography
from .mpi import MpiModel, bilinear_sample, composite
from .nn import encode_position, encode_view, mlp_forward
from .scene import Camera, finite_depth
from .checkpoint import _camera_dict, _camera_from

FORMAT = "viewmpi-baked"
VERSION = (1, 0)
_EVAL_CHUNK = 1 << 16


@dataclass
class BakedMpi:
    """Dequantized baked assets; the manifest fully determines reconstruction."""

    manifest: dict
    alpha: np.ndarray  # (D, H, W)
    base_color: np.ndarray  # (G, H, W, 3)
    coeffs: np.ndarray  # (G, N, H, W, 3)
    basis_grid: np.ndarray  # (R, R, N)

    @property
    def reference(self) -> Camera:
        return _camera_from(self.manifest["reference"])


def _quantize(img: np.ndarray, lo: float, hi: float, bits: int) -> np.ndarray:
    levels = 255 if bits == 8 else 65535
    q = np.round((img - lo) / (hi - lo) * levels)
    return np.clip(q, 0, levels).astype(np.uint8 if bits == 8 else np.uint16)


def _dequantize(q: np.ndarray, lo: float, hi: float) -> np.ndarray:
    levels = 255 if q.dtype == np.uint8 else 65535
    return lo + q.astype(float) / levels * (hi - lo)


def _range_of(img: np.ndarray):
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        hi = lo + 1.0  # constant image: any positive step dequantizes exactly
    return lo, hi


def _write_png(path: str, data: np.ndarray):
    if data.ndim == 3:
        data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(path, data):
        raise IOError(f"cannot write {path!r}")


def _read_png(path: str) -> np.ndarray:
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"missing baked asset {path!r}")
    if raw.ndim == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return raw


def _spatial_fields(model: MpiModel, xs: np.ndarray, ys: np.ndarray, dhat: float):
    feats = encode_position(xs, ys, np.full_like(xs, dhat), model.norms)
    flat = feats.reshape(-1, feats.shape[-1])
    outs = []
    for s in range(0, len(flat), _EVAL_CHUNK):
        out, _ = mlp_forward(model.spatial_net, flat[s:s + _EVAL_CHUNK])
        outs.append(out)
    return np.concatenate(outs).reshape(xs.shape + (-1,))


def bake(model: MpiModel, out_dir: str, resolution: tuple | None = None,
         span: float = 0.7, basis_grid: int = 64, bits: int = 8) -> BakedMpi:
    """Evaluate the model on pixel/viewing grids and write the baked directory.

    ``resolution`` is (width, height) of the atlases (defaults to the
    reference image size).  Coefficient/base-color/basis images carry per-image
    min/max quantization ranges in the manifest.  The basis lookup is always
    stored at 16 bits (it is one small image and its error would otherwise
    leak into every pixel).
    """
    if bits not in (8, 16):
        raise ValueError("bit depth must be 8 or 16")
    if span > 1.0 / np.sqrt(2.0):
        raise ValueError("viewing span must be <= 1/sqrt(2) so v_z stays real")
    os.makedirs(out_dir, exist_ok=True)
    ref = model.reference
    w, h = resolution or (ref.width, ref.height)
    d_count, g_count, n = model.num_planes, model.num_groups, model.num_coeffs
    layout = model.head_layout()

    # bake texel (ix, iy) represents reference-plane coordinate scaled from
    # the bake resolution to reference pixel units
    xs, ys = np.meshgrid((np.arange(w) + 0.5) * ref.width / w,
                         (np.arange(h) + 0.5) * ref.height / h)

    alpha = np.empty((d_count, h, w))
    for d in range(d_count):
        if model.alpha_mode == "implicit":
            alpha[d] = _spatial_fields(model, xs, ys, model.dhat[d])[..., layout["alpha"]]
        else:
            z = bilinear_sample(model.alpha_grids[d][..., None],
                                xs * model.alpha_grids.shape[2] / ref.width,
                                ys * model.alpha_grids.shape[1] / ref.height)[..., 0]
            alpha[d] = 1.0 / (1.0 + np.exp(-z))

    base_color = np.empty((g_count, h, w, 3))
    coeffs = np.empty((g_count, n, h, w, 3))
    rep_dhat = model.rep_dhat()
    for g in range(g_count):
        if "implicit" in (model.base_color_mode, model.coeff_mode):
            out = _spatial_fields(model, xs, ys, rep_dhat[g])
        if model.base_color_mode == "explicit":
            base_color[g] = bilinear_sample(model.base_color[g],
                                            xs * model.base_color.shape[2] / ref.width,
                                            ys * model.base_color.shape[1] / ref.height)
        else:
            base_color[g] = out[..., layout["k0"]]
        if n > 0:
            if model.coeff_mode == "explicit":
                for i in range(n):
                    coeffs[g, i] = bilinear_sample(
                        model.coeff_grids[g, i],
                        xs * model.coeff_grids.shape[3] / ref.width,
                        ys * model.coeff_grids.shape[2] / ref.height)
            else:
                coeffs[g] = out[..., layout["coeffs"]].reshape(h, w, n, 3).transpose(2, 0, 1, 3)

    vx = np.linspace(-span, span, basis_grid)
    gx, gy = np.meshgrid(vx, vx)
    if n > 0:
        if model.basis.family == "learned":
            enc = encode_view(gx, gy).reshape(-1, 12)
            vals, _ = mlp_forward(model.basis_net, enc)
            basis_vals = vals.reshape(basis_grid, basis_grid, n)
        else:
            from .basis import eval_fixed_basis_batch
            vz = np.sqrt(np.clip(1.0 - gx**2 - gy**2, 0.0, None))
            dirs = np.stack([gx, gy, vz], axis=-1)
            basis_vals = eval_fixed_basis_batch(model.basis, dirs)
    else:
        basis_vals = np.zeros((basis_grid, basis_grid, 0))

    # write atlases
    quant = {"k0": [], "coeffs": [], "basis": []}
    levels_dtype = np.uint8 if bits == 8 else np.uint16
    alpha_files = []
    for j in range(-(-d_count // 3)):
        pack = np.zeros((h, w, 3), dtype=levels_dtype)
        for c in range(3):
            d = 3 * j + c
            if d < d_count:
                pack[..., c] = _quantize(alpha[d], 0.0, 1.0, bits)
        fname = f"alpha_{j}.png"
        _write_png(os.path.join(out_dir, fname), pack)
        alpha_files.append(fname)
    k0_files = []
    for g in range(g_count):
        lo, hi = _range_of(base_color[g])
        quant["k0"].append([lo, hi])
        fname = f"k0_{g}.png"
        _write_png(os.path.join(out_dir, fname), _quantize(base_color[g], lo, hi, bits))
        k0_files.append(fname)
    coef_files = []
    for g in range(g_count):
        row = []
        qrow = []
        for i in range(n):
            lo, hi = _range_of(coeffs[g, i])
            qrow.append([lo, hi])
            fname = f"coef_g{g}_n{i}.png"
            _write_png(os.path.join(out_dir, fname), _quantize(coeffs[g, i], lo, hi, bits))
            row.append(fname)
        coef_files.append(row)
        quant["coeffs"].append(qrow)
    basis_tiles = np.zeros((basis_grid, basis_grid * max(n, 1)), dtype=np.uint16)
    for i in range(n):
        lo, hi = _range_of(basis_vals[..., i])
        quant["basis"].append([lo, hi])
        basis_tiles[:, i * basis_grid:(i + 1) * basis_grid] = _quantize(
            basis_vals[..., i], lo, hi, 16)
    _write_png(os.path.join(out_dir, "basis.png"), basis_tiles)

    manifest = {
        "format": FORMAT,
        "version": list(VERSION),
        "width": w, "height": h,
        "planes": [finite_depth(d) for d in model.planes.depths],
        "sharing": model.sharing,
        "num_coeffs": n,
        "span": span,
        "basis_grid": basis_grid,
        "bits": bits,
        "reference": _camera_dict(ref),
        "files": {"alpha": alpha_files, "k0": k0_files, "coeffs": coef_files,
                  "basis": "basis.png"},
        "quantization": quant,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)

    return BakedMpi(
        manifest=manifest,
        alpha=np.stack([_dequantize(_quantize(alpha[d], 0.0, 1.0, bits), 0.0, 1.0)
                        for d in range(d_count)]) if d_count else alpha,
        base_color=np.stack([_dequantize(_quantize(base_color[g], *quant["k0"][g], bits),
                                         *quant["k0"][g]) for g in range(g_count)]),
        coeffs=np.stack([
            np.stack([_dequantize(_quantize(coeffs[g, i], *quant["coeffs"][g][i], bits),
                                  *quant["coeffs"][g][i]) for i in range(n)])
            if n else np.zeros((0, h, w, 3)) for g in range(g_count)]),
        basis_grid=np.stack([
            _dequantize(_quantize(basis_vals[..., i], *quant["basis"][i], 16),
                        *quant["basis"][i]) for i in range(n)], axis=-1)
        if n else basis_vals,
    )


def load_baked(directory: str) -> BakedMpi:
    """Read a baked directory back into dequantized arrays; checks the version."""
    path = os.path.join(directory, "manifest.json")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path!r} is not a {FORMAT} manifest")
    major = manifest.get("version", [0])[0]
    if major != VERSION[0]:
        raise ValueError(f"unsupported baked version {manifest.get('version')} "
                         f"(supported major: {VERSION[0]})")
    w, h = manifest["width"], manifest["height"]
    d_count = len(manifest["planes"])
    n = manifest["num_coeffs"]
    g_count = len(manifest["files"]["k0"])
    r = manifest["basis_grid"]
    quant = manifest["quantization"]

    alpha = np.zeros((d_count, h, w))
    for j, fname in enumerate(manifest["files"]["alpha"]):
        pack = _read_png(os.path.join(directory, fname))
        for c in range(3):
            d = 3 * j + c
            if d < d_count:
                alpha[d] = _dequantize(pack[..., c], 0.0, 1.0)
    base_color = np.stack([
        _dequantize(_read_png(os.path.join(directory, fname)), *quant["k0"][g])
        for g, fname in enumerate(manifest["files"]["k0"])])
    coeffs = np.zeros((g_count, n, h, w, 3))
    for g, row in enumerate(manifest["files"]["coeffs"]):
        for i, fname in enumerate(row):
            coeffs[g, i] = _dequantize(_read_png(os.path.join(directory, fname)),
                                       *quant["coeffs"][g][i])
    tiles = _read_png(os.path.join(directory, manifest["files"]["basis"]))
    basis_grid = np.stack([_dequantize(tiles[:, i * r:(i + 1) * r], *quant["basis"][i])
                           for i in range(n)], axis=-1) if n else np.zeros((r, r, 0))
    return BakedMpi(manifest, alpha, base_color, coeffs, basis_grid)


def render_baked(baked: BakedMpi, cam: Camera):
    """CPU reference render of the baked assets for one camera.

    Per plane: warp target pixels to reference coordinates through the plane
    homography, bilinear-sample the dequantized atlases, look the basis up at
    (v_x, v_y) (clamped to the baked span, recorded in the coverage mask), and
    composite back to front.  Returns (image in [0, 1], coverage mask that is
    True where no clamping occurred).
    """
    manifest = baked.manifest
    ref = baked.reference
    w, h = manifest["width"], manifest["height"]
    depths = np.array(manifest["planes"], dtype=float)
    d_count = len(depths)
    n = manifest["num_coeffs"]
    span = manifest["span"]
    r = manifest["basis_grid"]
    sharing = manifest["sharing"]

    xs, ys = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
    pixels = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=-1)

    alphas = np.zeros((len(pixels), d_count))
    colors = np.zeros((len(pixels), d_count, 3))
    coverage = np.ones(len(pixels), dtype=bool)
    for d in range(d_count):
        refxy = apply_homography(plane_homography(ref, cam, depths[d]), pixels)
        x = refxy[:, 0]
        y = refxy[:, 1]
        inb = (x >= 0) & (x <= ref.width) & (y >= 0) & (y <= ref.height)
        # world point on the plane, reconstructed from its reference coords
        pts_ref = np.stack([(x - ref.cx) / ref.fx * depths[d],
                            (y - ref.cy) / ref.fy * depths[d],
                            np.full_like(x, depths[d])], axis=-1)
        pts = pts_ref @ ref.rotation.T + ref.center
        views = pts - cam.center
        views = views / np.linalg.norm(views, axis=-1, keepdims=True)
        tx = x * w / ref.width
        ty = y * h / ref.height
        a = bilinear_sample(baked.alpha[d][..., None], tx, ty)[..., 0]
        alphas[:, d] = a * inb
        g = d // sharing
        color = bilinear_sample(baked.base_color[g], tx, ty)
        if n > 0:
            vx = views[:, 0]
            vy = views[:, 1]
            clamped = (np.abs(vx) > span) | (np.abs(vy) > span)
            coverage &= ~(clamped & inb & (a > 0))
            # basis texel coords: span endpoints sit on the first/last texels
            bx = (np.clip(vx, -span, span) + span) / (2 * span) * (r - 1) + 0.5
            by = (np.clip(vy, -span, span) + span) / (2 * span) * (r - 1) + 0.5
            hvals = bilinear_sample(baked.basis_grid, bx, by)  # (P, n)
            kn = np.stack([bilinear_sample(baked.coeffs[g, i], tx, ty)
                           for i in range(n)], axis=1)  # (P, n, 3)
            color = color + np.einsum("pnc,pn->pc", kn, hvals)
        colors[:, d] = color
    out = composite(alphas, colors)
    img = np.clip(out.reshape(cam.height, cam.width, 3), 0.0, 1.0)
    return img, coverage.reshape(cam.height, cam.width)

"""The view-dependent multiplane-image model and its pixel-level math.

A model owns D fronto-parallel planes in the reference frustum.  Per pixel it
carries an alpha, an explicit (or network-predicted) base color, and N RGB
coefficients that multiply global angular basis functions.  Every M
consecutive planes share one set of base-color/coefficient images but keep
their own alphas; shared quantities are evaluated at the group's center plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisConfig, eval_fixed_basis
from .nn import Mlp, encode_position, encode_view, make_mlp, mlp_forward, normalize_channel
from .scene import Camera, PlaneStack

MODES = ("implicit", "explicit")


def bilinear_setup(h: int, w: int, x, y):
    """Clamp-to-edge bilinear taps for continuous image coords.

    Texel (ix, iy) is centered at (ix + 0.5, iy + 0.5).  Returns flat texel
    indices (4, ...) into an (h*w) grid and matching weights (4, ...).
    """
    u = np.asarray(x, dtype=float) - 0.5
    v = np.asarray(y, dtype=float) - 0.5
    x0 = np.floor(u)
    y0 = np.floor(v)
    fx = u - x0
    fy = v - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xs = (np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1))
    ys = (np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1))
    idx = np.stack([ys[0] * w + xs[0], ys[0] * w + xs[1],
                    ys[1] * w + xs[0], ys[1] * w + xs[1]])
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    return idx, wts


def bilinear_sample(grid: np.ndarray, x, y):
    """Sample an (H, W) or (H, W, C) grid at continuous coords, edge-clamped."""
    h, w = grid.shape[:2]
    idx, wts = bilinear_setup(h, w, x, y)
    flat = grid.reshape(h * w, -1)
    out = np.einsum("t...,t...c->...c", wts, flat[idx])
    return out[..., 0] if grid.ndim == 2 else out


def bilinear_scatter(shape, idx, wts, grad):
    """Adjoint of bilinear_sample: accumulate grads onto the 4 taps per sample."""
    h, w = shape[:2]
    channels = 1 if len(shape) == 2 else shape[2]
    g = np.asarray(grad, dtype=float).reshape(-1, channels)
    flat_idx = np.broadcast_to(idx.reshape(4, -1), (4, g.shape[0])).reshape(-1)
    flat_wts = wts.reshape(4, -1)
    out = np.empty((h * w, channels))
    for c in range(channels):
        contrib = (flat_wts * g[None, :, c]).reshape(-1)
        out[:, c] = np.bincount(flat_idx, weights=contrib, minlength=h * w)
    return out.reshape(shape)


def head_layout(alpha_mode: str, base_color_mode: str, coeff_mode: str, n: int) -> dict:
    """Spatial-net output channels: alpha (sigmoid), then any implicit color
    fields (tanh): base color first, then the 3n basis coefficients."""
    ch = 0
    layout = {"alpha": None, "k0": None, "coeffs": None}
    acts = []
    if alpha_mode == "implicit":
        layout["alpha"] = ch
        acts.append("sigmoid")
        ch += 1
    if base_color_mode == "implicit":
        layout["k0"] = slice(ch, ch + 3)
        acts += ["tanh"] * 3
        ch += 3
    if coeff_mode == "implicit" and n > 0:
        layout["coeffs"] = slice(ch, ch + 3 * n)
        acts += ["tanh"] * (3 * n)
        ch += 3 * n
    layout["width"] = ch
    layout["activations"] = acts
    return layout


@dataclass
class PixelQuery:
    """One model lookup: continuous reference-plane coords, plane index, view."""

    x: float
    y: float
    plane: int  # 1-based, back (1) to front (D)
    dhat: float | None = None  # jittered depth coordinate override
    view: np.ndarray | None = None


@dataclass
class MpiModel:
    reference: Camera
    planes: PlaneStack
    sharing: int  # M consecutive planes share base color + coefficients
    num_coeffs: int  # N
    basis: BasisConfig
    alpha_mode: str
    base_color_mode: str
    coeff_mode: str
    spatial_net: Mlp | None  # alpha / implicit color fields from (x, y, d)
    basis_net: Mlp | None  # learned angular basis from (v_x, v_y)
    base_color: np.ndarray | None  # (G, H, W, 3), unbounded during optimization
    alpha_grids: np.ndarray | None  # (D, H, W) pre-sigmoid values
    coeff_grids: np.ndarray | None  # (G, N, H, W, 3)
    dhat: np.ndarray  # (D,) normalized depth coordinate per plane
    norms: tuple  # ((x0, x1), (y0, y1), (d0, d1)) encoding ranges
    stochastic_trained: bool = False

    def __post_init__(self):
        d = len(self.planes)
        if d % self.sharing != 0:
            raise ValueError(f"plane count {d} not divisible by sharing factor {self.sharing}")
        for mode in (self.alpha_mode, self.base_color_mode, self.coeff_mode):
            if mode not in MODES:
                raise ValueError(f"unknown mode {mode!r}")
        if self.num_coeffs != self.basis.n:
            raise ValueError("coefficient count does not match basis truncation")
        if self.basis.family == "learned" and self.num_coeffs > 0:
            if self.basis_net is None or self.basis_net.out_dim != self.num_coeffs:
                raise ValueError("basis network output width must equal the coefficient count")
        layout = self.head_layout()
        if self.spatial_net is not None:
            want = layout["width"]
            if self.spatial_net.out_dim != want:
                raise ValueError(f"spatial network must output {want} channels")

    # --- structure helpers -------------------------------------------------

    @property
    def num_planes(self) -> int:
        return len(self.planes)

    @property
    def num_groups(self) -> int:
        return self.num_planes // self.sharing

    def group_of(self, plane_index0: int) -> int:
        return plane_index0 // self.sharing

    def group_rep_index0(self, group: int) -> int:
        # center plane of the group: g*M + ceil(M/2) in 1-based indexing
        return group * self.sharing + math.ceil(self.sharing / 2) - 1

    def rep_dhat(self) -> np.ndarray:
        """Depth coordinate of each group's representative plane, shape (G,)."""
        reps = [self.group_rep_index0(g) for g in range(self.num_groups)]
        return self.dhat[reps]

    def head_layout(self) -> dict:
        """Channel layout of the spatial network head: alpha, then k0, then coeffs."""
        return head_layout(self.alpha_mode, self.base_color_mode, self.coeff_mode,
                           self.num_coeffs)

    def grid_shape(self):
        return self.reference.height, self.reference.width

    def needs_spatial_net(self) -> bool:
        return "implicit" in (self.alpha_mode, self.base_color_mode, self.coeff_mode)

    # --- parameter registry -------------------------------------------------

    def params(self) -> dict:
        """Name -> array views of every optimizable parameter."""
        out = {}
        if self.spatial_net is not None:
            for i, layer in enumerate(self.spatial_net.layers):
                out[f"f.{i}.w"] = layer.w
                out[f"f.{i}.b"] = layer.b
        if self.basis_net is not None:
            for i, layer in enumerate(self.basis_net.layers):
                out[f"g.{i}.w"] = layer.w
                out[f"g.{i}.b"] = layer.b
        if self.base_color is not None:
            out["k0"] = self.base_color
        if self.alpha_grids is not None:
            out["alpha"] = self.alpha_grids
        if self.coeff_grids is not None:
            out["coef"] = self.coeff_grids
        return out

    def param_groups(self) -> dict:
        """Name -> learning-rate group ("nets" or "grids")."""
        groups = {}
        for name in self.params():
            groups[name] = "grids" if name in ("k0", "alpha", "coef") else "nets"
        return groups


def initialize_model(
    reference: Camera,
    planes: PlaneStack,
    sharing: int,
    basis: BasisConfig,
    rng: np.random.Generator,
    alpha_mode: str = "implicit",
    base_color_mode: str = "explicit",
    coeff_mode: str = "implicit",
    spatial_hidden: int = 384,
    spatial_layers: int = 6,
    basis_hidden: int = 64,
    basis_layers: int = 3,
    alpha_bias_init: float = -5.0,
    base_color_init: float = 0.5,
) -> MpiModel:
    """Fresh model with Glorot-uniform nets and constant grids.

    The alpha channel's pre-activation bias starts at ``alpha_bias_init``
    (default -5, i.e. alpha ~ 0.0067) so far planes receive gradient through
    a nearly transparent stack instead of being occluded from the start.
    """
    d = len(planes)
    if d % sharing != 0:
        raise ValueError(f"plane count {d} not divisible by sharing factor {sharing}")
    n = basis.n
    h, w = reference.height, reference.width
    g = d // sharing
    dhat = normalize_channel(np.arange(d, dtype=float), 0.0, float(d - 1))

    layout = head_layout(alpha_mode, base_color_mode, coeff_mode, n)
    spatial_net = None
    if "implicit" in (alpha_mode, base_color_mode, coeff_mode):
        spatial_net = make_mlp(rng, 56, spatial_hidden, spatial_layers, layout["width"],
                               head_activations=layout["activations"])
        if layout["alpha"] is not None:
            spatial_net.layers[-1].b[layout["alpha"]] = alpha_bias_init
    basis_net = None
    if basis.family == "learned" and n > 0:
        basis_net = make_mlp(rng, 12, basis_hidden, basis_layers, n)

    return MpiModel(
        reference=reference,
        planes=planes,
        sharing=sharing,
        num_coeffs=n,
        basis=basis,
        alpha_mode=alpha_mode,
        base_color_mode=base_color_mode,
        coeff_mode=coeff_mode,
        spatial_net=spatial_net,
        basis_net=basis_net,
        base_color=(np.full((g, h, w, 3), base_color_init, dtype=float)
                    if base_color_mode == "explicit" else None),
        alpha_grids=(np.full((d, h, w), alpha_bias_init, dtype=float)
                     if alpha_mode == "explicit" else None),
        coeff_grids=(np.zeros((g, n, h, w, 3), dtype=float)
                     if coeff_mode == "explicit" and n > 0 else None),
        dhat=dhat,
        norms=((0.0, float(w - 1)), (0.0, float(h - 1)), (0.0, float(d - 1))),
    )


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _spatial_eval(model: MpiModel, x, y, dhat):
    feats = encode_position(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                            np.asarray(dhat, dtype=float), model.norms)
    out, _ = mlp_forward(model.spatial_net, feats)
    return out


def query_alpha_coeffs(model: MpiModel, q: PixelQuery):
    """Alpha and the (N, 3) coefficient block for one pixel query.

    Alpha is evaluated at the query's own plane depth; coefficients at the
    depth of the plane group's representative, so all planes of a group see
    identical coefficient fields.
    """
    if not (1 <= q.plane <= model.num_planes):
        raise ValueError(f"plane index {q.plane} out of range 1..{model.num_planes}")
    d0 = q.plane - 1
    layout = model.head_layout()
    dhat_plane = model.dhat[d0] if q.dhat is None else q.dhat
    if model.alpha_mode == "implicit":
        alpha = float(_spatial_eval(model, q.x, q.y, dhat_plane)[layout["alpha"]])
    else:
        alpha = float(_sigmoid(bilinear_sample(model.alpha_grids[d0], q.x, q.y)))
    n = model.num_coeffs
    if n == 0:
        return alpha, np.zeros((0, 3))
    group = model.group_of(d0)
    if model.coeff_mode == "implicit":
        out = _spatial_eval(model, q.x, q.y, model.rep_dhat()[group])
        coeffs = out[layout["coeffs"]].reshape(n, 3)
    else:
        coeffs = np.stack([bilinear_sample(model.coeff_grids[group, i], q.x, q.y)
                           for i in range(n)])
    return alpha, coeffs


def query_base_color(model: MpiModel, q: PixelQuery) -> np.ndarray:
    """RGB base color for one pixel query (shared per plane group)."""
    d0 = q.plane - 1
    group = model.group_of(d0)
    if model.base_color_mode == "explicit":
        return bilinear_sample(model.base_color[group], q.x, q.y)
    layout = model.head_layout()
    out = _spatial_eval(model, q.x, q.y, model.rep_dhat()[group])
    return out[layout["k0"]]


def query_basis(model: MpiModel, view) -> np.ndarray:
    """The N global basis values for one unit viewing direction."""
    if model.num_coeffs == 0:
        return np.zeros(0)
    if model.basis.family == "learned":
        out, _ = mlp_forward(model.basis_net, encode_view(view[0], view[1]))
        return out
    return eval_fixed_basis(model.basis, view)


def pixel_color(k0, coeffs, basis_values) -> np.ndarray:
    """Basis expansion k0 + sum_n coeffs[n] * basis[n]; unclamped by design."""
    k0 = np.asarray(k0, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    basis_values = np.asarray(basis_values, dtype=float)
    if coeffs.shape[-2] != basis_values.shape[-1]:
        raise ValueError("coefficient and basis counts disagree")
    return k0 + np.einsum("...nc,...n->...c", coeffs, basis_values)


def composite(alphas, colors) -> np.ndarray:
    """Over-composite back-to-front planes in one front-to-back pass.

    ``alphas``: (..., D) in [0, 1]; ``colors``: (..., D, 3); index 0 is the
    farthest plane.  Output color = sum_d colors[d] * T_d with T_d the net
    transmittance of everything in front of plane d times its own alpha.
    """
    alphas = np.asarray(alphas, dtype=float)
    colors = np.asarray(colors, dtype=float)
    if alphas.shape[-1] == 0:
        raise ValueError("cannot composite an empty plane stack")
    if alphas.min() < 0.0 or alphas.max() > 1.0:
        raise ValueError("alphas must lie in [0, 1]")
    trans = np.ones(alphas.shape[:-1])
    out = np.zeros(alphas.shape[:-1] + (3,))
    for d in range(alphas.shape[-1] - 1, -1, -1):
        out += colors[..., d, :] * (alphas[..., d] * trans)[..., None]
        trans = trans * (1.0 - alphas[..., d])
    return out


def composite_with_cache(alphas: np.ndarray, colors: np.ndarray):
    """Composite via the over recurrence, caching what the backward needs."""
    dcount = alphas.shape[-1]
    prefix = np.zeros(alphas.shape[:-1] + (dcount, 3))  # composite of planes < d
    acc = np.zeros(alphas.shape[:-1] + (3,))
    for d in range(dcount):
        prefix[..., d, :] = acc
        a = alphas[..., d, None]
        acc = a * colors[..., d, :] + (1.0 - a) * acc
    suffix = np.ones(alphas.shape[:-1] + (dcount,))  # transmittance of planes > d
    for d in range(dcount - 2, -1, -1):
        suffix[..., d] = suffix[..., d + 1] * (1.0 - alphas[..., d + 1])
    return acc, (alphas, colors, prefix, suffix)


def composite_backward(cache, grad_out: np.ndarray):
    """Exact gradients of composite_with_cache wrt alphas and colors."""
    alphas, colors, prefix, suffix = cache
    g = grad_out[..., None, :] * suffix[..., None]
    grad_colors = g * alphas[..., None]
    grad_alphas = np.einsum("...dc->...d", g * (colors - prefix))
    return grad_alphas, grad_colors


def transmittance(alphas, d: int) -> float:
    """T_d = alpha_d * prod_{i > d} (1 - alpha_i), with 1-based plane index d."""
    alphas = np.asarray(alphas, dtype=float)
    if not (1 <= d <= alphas.shape[-1]):
        raise ValueError(f"plane index {d} out of range")
    return float(alphas[..., d - 1] * np.prod(1.0 - alphas[..., d:], axis=-1))

"""Coordinate networks: frequency encoding, MLPs with explicit backprop, Adam.

Everything here is plain numpy.  Forward passes cache what the matching
backward pass needs, so gradients are exact (up to the fixed subgradient
choices noted below) without any autodiff machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01  # negative-side slope of every hidden activation

ACTIVATIONS = ("leaky_relu", "sigmoid", "tanh", "linear")


def positional_encode(u, k: int) -> np.ndarray:
    """Lift a scalar channel to [sin(2^0 (pi/2) u), cos(2^0 (pi/2) u), ...].

    ``u`` is expected pre-normalized to [-1, 1] but out-of-range values are
    accepted (normalization is the caller's contract).  Output has shape
    ``u.shape + (2k,)`` interleaved sin/cos per octave.
    """
    if k < 1:
        raise ValueError("frequency count must be >= 1")
    u = np.asarray(u, dtype=float)
    freqs = 2.0 ** np.arange(k) * (np.pi / 2.0)
    ang = u[..., None] * freqs
    out = np.empty(u.shape + (2 * k,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def normalize_channel(u, lo: float, hi: float):
    """Affinely map [lo, hi] to [-1, 1]; degenerate ranges collapse to 0."""
    u = np.asarray(u, dtype=float)
    if hi == lo:
        return np.zeros_like(u)
    return 2.0 * (u - lo) / (hi - lo) - 1.0


# frequency counts per input channel of the spatial network: x, y -> 20 dims
# each, plane depth -> 16 dims, 56 total
K_XY = 10
K_DEPTH = 8
POSITION_DIM = 2 * K_XY * 2 + 2 * K_DEPTH
# viewing direction: 6 dims each for v_x and v_y
K_VIEW = 3
VIEW_DIM = 2 * K_VIEW * 2


def encode_position(x, y, d, norms) -> np.ndarray:
    """56-dim encoding of (x, y, plane-depth) given per-channel (lo, hi) ranges."""
    (x0, x1), (y0, y1), (d0, d1) = norms
    return np.concatenate(
        [
            positional_encode(normalize_channel(x, x0, x1), K_XY),
            positional_encode(normalize_channel(y, y0, y1), K_XY),
            positional_encode(normalize_channel(d, d0, d1), K_DEPTH),
        ],
        axis=-1,
    )


def encode_view(vx, vy) -> np.ndarray:
    """12-dim encoding of the (v_x, v_y) viewing-direction components."""
    return np.concatenate(
        [positional_encode(np.asarray(vx, dtype=float), K_VIEW),
         positional_encode(np.asarray(vy, dtype=float), K_VIEW)],
        axis=-1,
    )


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "leaky_relu":
        return np.where(z >= 0, z, LEAKY_SLOPE * z)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed through pre-activation z and activation a;
    # leaky_relu uses slope 1 at exactly 0 (fixed subgradient choice)
    if kind == "leaky_relu":
        return np.where(z >= 0, 1.0, LEAKY_SLOPE)
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "linear":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str = "leaky_relu"


@dataclass
class Mlp:
    """Fully-connected stack; the last layer may mix activations per channel."""

    layers: list[Layer]
    head_activations: list[str] | None = None  # per-output-channel override

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.w.shape[1] != nxt.w.shape[0]:
                raise ValueError("layer dimensions do not chain")
        if self.head_activations is not None:
            if len(self.head_activations) != self.layers[-1].w.shape[1]:
                raise ValueError("head activation list must match output width")

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def _head_channel_groups(self):
        acts = self.head_activations
        groups = {}
        for ch, kind in enumerate(acts):
            groups.setdefault(kind, []).append(ch)
        return {kind: np.array(chs) for kind, chs in groups.items()}


def mlp_forward(net: Mlp, x: np.ndarray):
    """Returns (output, cache); accepts (in,) vectors or (B, in) batches."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None] if single else x
    if h.shape[-1] != net.in_dim:
        raise ValueError(f"input width {h.shape[-1]} != expected {net.in_dim}")
    inputs, preacts = [], []
    for li, layer in enumerate(net.layers):
        inputs.append(h)
        z = h @ layer.w + layer.b
        preacts.append(z)
        last = li == len(net.layers) - 1
        if last and net.head_activations is not None:
            h = np.empty_like(z)
            for kind, chs in net._head_channel_groups().items():
                h[..., chs] = _act(z[..., chs], kind)
        else:
            h = _act(z, layer.activation)
    cache = (inputs, preacts, h)
    return (h[0], cache) if single else (h, cache)


def mlp_backward(net: Mlp, cache, grad_output: np.ndarray):
    """Exact gradients of mlp_forward: ([(dW, db) per layer], grad_input)."""
    inputs, preacts, out = cache
    g = np.asarray(grad_output, dtype=float)
    single = g.ndim == 1
    if single:
        g = g[None]
    if g.shape != out.shape:
        raise ValueError(f"grad shape {g.shape} does not match forward output {out.shape}")
    param_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        z = preacts[li]
        last = li == len(net.layers) - 1
        if last and net.head_activations is not None:
            a = out
            dz = np.empty_like(g)
            for kind, chs in net._head_channel_groups().items():
                dz[..., chs] = g[..., chs] * _act_grad(z[..., chs], a[..., chs], kind)
        else:
            a = _act(z, layer.activation)
            dz = g * _act_grad(z, a, layer.activation)
        param_grads[li] = (inputs[li].T @ dz, dz.sum(axis=0))
        g = dz @ layer.w.T
    return param_grads, (g[0] if single else g)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def make_mlp(
    rng: np.random.Generator,
    in_dim: int,
    hidden: int,
    hidden_layers: int,
    out_dim: int,
    head_activations: list[str] | None = None,
) -> Mlp:
    """Hidden LeakyReLU stack plus a head layer; biases start at zero."""
    dims = [in_dim] + [hidden] * hidden_layers + [out_dim]
    layers = []
    for i, (fi, fo) in enumerate(zip(dims, dims[1:])):
        act = "linear" if i == len(dims) - 2 else "leaky_relu"
        layers.append(Layer(glorot_uniform(rng, fi, fo), np.zeros(fo), act))
    return Mlp(layers, head_activations)


@dataclass
class AdamState:
    """Bias-corrected Adam moments keyed by parameter name."""

    groups: dict  # parameter name -> learning-rate group name
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, params: dict):
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)


def adam_step(state: AdamState, params: dict, grads: dict, group_lrs: dict) -> dict:
    """One Adam update in place; returns params for convenience."""
    state.ensure(params)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        if np.isnan(g).any():
            raise FloatingPointError(
                f"NaN gradient in parameter group {state.groups.get(name, '?')!r} ({name})"
            )
        p = params[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        lr = group_lrs[state.groups[name]]
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def lr_schedule(base_lr: float, epoch: int, decay: float = 0.1, every: int = 1333) -> float:
    """Step decay: base_lr * decay^(epoch // every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * decay ** (epoch // every)

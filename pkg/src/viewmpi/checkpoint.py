"""Checkpoint container: named parameter tensors + optimizer state, versioned.

A checkpoint is a single .npz holding a JSON header (structure, config,
reference camera, plane stack) alongside the raw parameter arrays and Adam
moments, enough to resume, render, evaluate, or bake without the scene.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .basis import BasisConfig
from .mpi import MpiModel
from .nn import AdamState, Layer, Mlp
from .scene import Camera, PlaneStack

FORMAT = "viewmpi-checkpoint"
VERSION = (1, 0)


def _camera_dict(cam: Camera) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "rotation": [float(v) for v in cam.rotation.reshape(-1)],
        "center": [float(v) for v in cam.center],
        "near": cam.near, "far": "inf" if math.isinf(cam.far) else cam.far,
    }


def _camera_from(d: dict) -> Camera:
    far = math.inf if d["far"] == "inf" else float(d["far"])
    return Camera(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
                  np.array(d["rotation"]).reshape(3, 3), np.array(d["center"]),
                  d["near"], far)


def _mlp_spec(net: Mlp | None) -> dict | None:
    if net is None:
        return None
    return {
        "activations": [layer.activation for layer in net.layers],
        "head": net.head_activations,
    }


def save_checkpoint(path: str, model: MpiModel, config: dict | None = None,
                    adam: AdamState | None = None):
    header = {
        "format": FORMAT,
        "version": list(VERSION),
        "config": config or {},
        "reference": _camera_dict(model.reference),
        "depths": ["inf" if math.isinf(d) else float(d) for d in model.planes.depths],
        "spacing_mode": model.planes.spacing_mode,
        "dhat": [float(v) for v in model.dhat],
        "sharing": model.sharing,
        "num_coeffs": model.num_coeffs,
        "basis": {"family": model.basis.family, "n": model.basis.n,
                  "a": model.basis.a, "b": model.basis.b},
        "modes": [model.alpha_mode, model.base_color_mode, model.coeff_mode],
        "norms": [list(r) for r in model.norms],
        "stochastic_trained": model.stochastic_trained,
        "spatial_net": _mlp_spec(model.spatial_net),
        "basis_net": _mlp_spec(model.basis_net),
    }
    arrays = dict(model.params())
    if adam is not None:
        header["adam"] = {"step": adam.step, "beta1": adam.beta1,
                          "beta2": adam.beta2, "eps": adam.eps}
        for name, m in adam.m.items():
            arrays[f"adam.m.{name}"] = m
            arrays[f"adam.v.{name}"] = adam.v[name]
    np.savez(path, __header__=np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def _rebuild_mlp(spec: dict | None, arrays: dict, prefix: str) -> Mlp | None:
    if spec is None:
        return None
    layers = []
    for i, act in enumerate(spec["activations"]):
        layers.append(Layer(arrays[f"{prefix}.{i}.w"], arrays[f"{prefix}.{i}.b"], act))
    return Mlp(layers, spec["head"])


def load_checkpoint(path: str):
    """Returns (model, config dict, AdamState or None)."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    header = json.loads(bytes(arrays.pop("__header__")).decode())
    if header.get("format") != FORMAT:
        raise ValueError(f"{path!r} is not a {FORMAT} file")
    major = header.get("version", [0])[0]
    if major != VERSION[0]:
        raise ValueError(f"unsupported checkpoint version {header.get('version')} "
                         f"(supported major: {VERSION[0]})")
    depths = [math.inf if d == "inf" else d for d in header["depths"]]
    basis = BasisConfig(**header["basis"])
    model = MpiModel(
        reference=_camera_from(header["reference"]),
        planes=PlaneStack(np.array(depths), header["spacing_mode"]),
        sharing=header["sharing"],
        num_coeffs=header["num_coeffs"],
        basis=basis,
        alpha_mode=header["modes"][0],
        base_color_mode=header["modes"][1],
        coeff_mode=header["modes"][2],
        spatial_net=_rebuild_mlp(header["spatial_net"], arrays, "f"),
        basis_net=_rebuild_mlp(header["basis_net"], arrays, "g"),
        base_color=arrays.get("k0"),
        alpha_grids=arrays.get("alpha"),
        coeff_grids=arrays.get("coef"),
        dhat=np.array(header["dhat"]),
        norms=tuple(tuple(r) for r in header["norms"]),
        stochastic_trained=header["stochastic_trained"],
    )
    adam = None
    if "adam" in header:
        adam = AdamState(groups=model.param_groups(), beta1=header["adam"]["beta1"],
                         beta2=header["adam"]["beta2"], eps=header["adam"]["eps"],
                         step=header["adam"]["step"])
        for name in model.params():
            if f"adam.m.{name}" in arrays:
                adam.m[name] = arrays[f"adam.m.{name}"]
                adam.v[name] = arrays[f"adam.v.{name}"]
    return model, header.get("config", {}), adam

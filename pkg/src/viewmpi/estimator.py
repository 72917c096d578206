"""Scikit-learn-style front door: fit a scene, predict novel views.

The estimator wraps the training loop and renderer behind the familiar
``fit`` / ``predict`` / ``score`` surface (with ``get_params`` cloning
support), so per-scene optimization composes with sklearn tooling such as
parameter sweeps.  ``X`` for fit is a scene (dataset object or manifest
path); ``X`` for predict is one camera or a sequence of cameras.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .metrics import psnr
from .render import render_image_batched
from .scene import Camera, SceneDataset, load_scene
from .train import TrainConfig, train


def as_dataset(x) -> SceneDataset:
    """Accept a SceneDataset, a manifest path, or a scene directory."""
    if isinstance(x, SceneDataset):
        return x
    if isinstance(x, str):
        path = x if x.endswith(".json") else f"{x.rstrip('/')}/manifest.json"
        return load_scene(path)
    raise TypeError(f"expected a SceneDataset or manifest path, got {type(x).__name__}")


def as_cameras(x) -> list:
    """Accept one Camera or a sequence of Cameras; validates each."""
    cams = [x] if isinstance(x, Camera) else list(x)
    for i, cam in enumerate(cams):
        if not isinstance(cam, Camera):
            raise TypeError(f"item {i} is not a Camera")
        cam.validate(name=f"camera {i}")
    return cams


class MpiViewSynthesizer(BaseEstimator):
    """Per-scene view synthesis: optimize a layered model, render new poses.

    Parameters mirror the training configuration; see TrainConfig.  After
    ``fit`` the trained model is available as ``model_`` and the training
    metrics log as ``metrics_``.
    """

    def __init__(self, planes=8, sharing=4, coeffs=0, basis="learned",
                 epochs=300, triplets=256, grad_weight=0.05, tv_weight=0.03,
                 lr_base_color=0.01, lr_networks=0.001,
                 alpha_mode="implicit", base_color_mode="explicit",
                 coeff_mode="implicit", spatial_hidden=48, spatial_layers=3,
                 basis_hidden=32, basis_layers=2, stochastic_depth=False,
                 eval_every=50, seed=0, workers=1):
        self.planes = planes
        self.sharing = sharing
        self.coeffs = coeffs
        self.basis = basis
        self.epochs = epochs
        self.triplets = triplets
        self.grad_weight = grad_weight
        self.tv_weight = tv_weight
        self.lr_base_color = lr_base_color
        self.lr_networks = lr_networks
        self.alpha_mode = alpha_mode
        self.base_color_mode = base_color_mode
        self.coeff_mode = coeff_mode
        self.spatial_hidden = spatial_hidden
        self.spatial_layers = spatial_layers
        self.basis_hidden = basis_hidden
        self.basis_layers = basis_layers
        self.stochastic_depth = stochastic_depth
        self.eval_every = eval_every
        self.seed = seed
        self.workers = workers

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, triplets=self.triplets,
            grad_weight=self.grad_weight, tv_weight=self.tv_weight,
            lr_base_color=self.lr_base_color, lr_networks=self.lr_networks,
            planes=self.planes, sharing=self.sharing, coeffs=self.coeffs,
            basis=self.basis, alpha_mode=self.alpha_mode,
            base_color_mode=self.base_color_mode, coeff_mode=self.coeff_mode,
            spatial_hidden=self.spatial_hidden, spatial_layers=self.spatial_layers,
            basis_hidden=self.basis_hidden, basis_layers=self.basis_layers,
            stochastic_depth=self.stochastic_depth, eval_every=self.eval_every,
            seed=self.seed, workers=self.workers,
        )

    def fit(self, X, y=None):
        dataset = as_dataset(X)
        self.model_, self.metrics_ = train(dataset, self._config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this estimator is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        """Render an (n, H, W, 3) image stack for the given camera(s)."""
        self._check_fitted()
        cams = as_cameras(X)
        return np.stack([render_image_batched(self.model_, cam) for cam in cams])

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of rendered views against ground-truth images."""
        self._check_fitted()
        preds = self.predict(X)
        y = [np.asarray(img, dtype=float) for img in y]
        if len(y) != len(preds):
            raise ValueError("number of images does not match number of cameras")
        return float(np.mean([psnr(p, t) for p, t in zip(preds, y)]))

"""View-dependent multiplane images: train, render, bake, view."""

from .basis import BasisConfig, eval_fixed_basis, jacobi, legendre, make_config
from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import MpiViewSynthesizer
from .export import BakedMpi, bake, load_baked, render_baked
from .metrics import psnr, ssim
from .mpi import MpiModel, PixelQuery, composite, initialize_model, pixel_color, \
    query_alpha_coeffs, transmittance
from .render import render_image, render_image_batched, render_ray, upsample_planes
from .scene import Camera, PlaneStack, SceneDataset, load_scene, plane_depths, save_scene
from .scenegen import generate_scene
from .train import TrainConfig, ablation_matrix, reconstruction_loss, sample_triplets, \
    train, tv_loss

__version__ = "0.1.0"

__all__ = [
    "BakedMpi", "BasisConfig", "Camera", "MpiModel", "MpiViewSynthesizer",
    "PixelQuery", "PlaneStack", "SceneDataset", "TrainConfig", "ablation_matrix",
    "bake", "composite", "eval_fixed_basis", "generate_scene", "initialize_model",
    "jacobi", "legendre", "load_baked", "load_checkpoint", "load_scene",
    "make_config", "pixel_color", "plane_depths", "psnr", "query_alpha_coeffs",
    "reconstruction_loss", "render_baked", "render_image", "render_image_batched",
    "render_ray", "sample_triplets", "save_checkpoint", "save_scene", "ssim",
    "train", "transmittance", "tv_loss", "upsample_planes",
]

"""Held-out image quality metrics: PSNR and single-scale SSIM.

SSIM follows the standard Gaussian-window formulation (11x11 window,
sigma 1.5, K1 = 0.01, K2 = 0.03, peak 1.0, no sample-covariance correction),
matching the convention of the scikit-image implementation so fixture values
can be cross-checked once against it.
"""

from __future__ import annotations

import numpy as np

_SIGMA = 1.5
_RADIUS = 5  # 11x11 window
_K1 = 0.01
_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; capped at 99."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 99.0
    return min(-10.0 * np.log10(mse), 99.0)


def _gauss_kernel():
    x = np.arange(-_RADIUS, _RADIUS + 1, dtype=float)
    k = np.exp(-(x**2) / (2.0 * _SIGMA**2))
    return k / k.sum()


def _filter1d(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    # boundary mode is irrelevant: the SSIM map is cropped by the window
    # radius, so retained pixels never see padded values
    pad = [(0, 0)] * img.ndim
    pad[axis] = (_RADIUS, _RADIUS)
    padded = np.pad(img, pad, mode="edge")
    out = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + img.shape[axis])
        out += kv * padded[tuple(sl)]
    return out


def _gauss_filter(img: np.ndarray) -> np.ndarray:
    k = _gauss_kernel()
    return _filter1d(_filter1d(img, k, 0), k, 1)


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    ux = _gauss_filter(a)
    uy = _gauss_filter(b)
    vx = _gauss_filter(a * a) - ux * ux
    vy = _gauss_filter(b * b) - uy * uy
    vxy = _gauss_filter(a * b) - ux * uy
    c1 = _K1**2
    c2 = _K2**2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
    return float(np.mean(s[_RADIUS:-_RADIUS, _RADIUS:-_RADIUS]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity of two [0, 1] images, per-channel averaged."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < 2 * _RADIUS + 1:
        raise ValueError("image smaller than the 11x11 window")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))

"""Image losses and the bicubic resampler that feeds them.

Everything here exposes an analytic gradient with respect to its first image
argument; those gradients are what the rasterizer backward consumes. The
resampler is separable Catmull-Rom (a = -0.5) with edge clamping, the
area-consistent source mapping src = (dst + 0.5) * ratio - 0.5, and kernel
support widened by the ratio on minification so downsampling stays
antialiased. Weights are renormalized per row, which keeps constants exact.

SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
per-channel statistics averaged over valid window positions (interior crop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d

PSNR_REPORT_CAP = 99.0  # dB; identical images report this instead of inf

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_HALF = 5  # 11-tap window


@dataclass(frozen=True)
class LossWeights:
    """Term weights of the training objective plus the MSE/D-SSIM mix."""

    distillation: float = 1.0
    texture: float = 1.0
    structure: float = 1.0
    ssim_mix: float = 0.5  # 0 -> pure MSE, 1 -> pure D-SSIM inside structure terms

    def __post_init__(self):
        if not 0.0 <= self.ssim_mix <= 1.0:
            raise ValueError(f"ssim_mix must be in [0, 1], got {self.ssim_mix}")


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    near = (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0
    far = a * at3 - 5.0 * a * at2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


@lru_cache(maxsize=256)
def resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense 1D resampling operator (n_out, n_in); rows sum to one."""
    if n_in < 1 or n_out < 1:
        raise ValueError("resample dims must be >= 1")
    ratio = n_in / n_out
    scale = max(ratio, 1.0)
    support = 2.0 * scale
    src = (np.arange(n_out) + 0.5) * ratio - 0.5
    first = np.ceil(src - support).astype(np.int64)
    taps = int(math.ceil(2.0 * support)) + 1
    idx = first[:, None] + np.arange(taps)[None, :]
    weights = _cubic_kernel((src[:, None] - idx) / scale)
    weights /= weights.sum(axis=1, keepdims=True)
    clamped = np.clip(idx, 0, n_in - 1)  # edge clamp folds border weights inward
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(mat, (rows, clamped.reshape(-1)), weights.reshape(-1))
    mat.setflags(write=False)
    return mat


def _apply_separable(image: np.ndarray, mat_y: np.ndarray, mat_x: np.ndarray) -> np.ndarray:
    out = np.tensordot(mat_y, image, axes=(1, 0))
    out = np.tensordot(mat_x, out, axes=(1, 1))
    return np.moveaxis(out, 0, 1)


def resample(image: np.ndarray, out_hw: tuple[int, int], clip: bool = True) -> np.ndarray:
    """Bicubic resample of an (H, W[, C]) image to (h_out, w_out)."""
    image = np.asarray(image, dtype=np.float64)
    h_out, w_out = int(out_hw[0]), int(out_hw[1])
    out = _apply_separable(image, resample_matrix(image.shape[0], h_out), resample_matrix(image.shape[1], w_out))
    return np.clip(out, 0.0, 1.0) if clip else out


def resample_adjoint(grad_out: np.ndarray, in_hw: tuple[int, int]) -> np.ndarray:
    """Transpose of `resample` (without the clip) onto an (h_in, w_in) domain."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    mat_y = resample_matrix(int(in_hw[0]), grad_out.shape[0])
    mat_x = resample_matrix(int(in_hw[1]), grad_out.shape[1])
    return _apply_separable(grad_out, mat_y.T, mat_x.T)


def resample_with_vjp(image: np.ndarray, out_hw: tuple[int, int]):
    """Clipped resample plus a pullback closure; the clip gates gradients."""
    image = np.asarray(image, dtype=np.float64)
    raw = resample(image, out_hw, clip=False)
    out = np.clip(raw, 0.0, 1.0)
    inside = (raw >= 0.0) & (raw <= 1.0)

    def vjp(grad_out: np.ndarray) -> np.ndarray:
        return resample_adjoint(grad_out * inside, image.shape[:2])

    return out, vjp


def downsample(image: np.ndarray, ratio: float) -> np.ndarray:
    """Downsample by `ratio` >= 1 to round(dims / ratio), clipped to [0, 1]."""
    if not ratio >= 1.0:
        raise ValueError(f"downsample ratio must be >= 1, got {ratio}")
    h, w = image.shape[:2]
    out_hw = (max(1, int(math.floor(h / ratio + 0.5))), max(1, int(math.floor(w / ratio + 0.5))))
    return resample(image, out_hw)


def mse(image: np.ndarray, target: np.ndarray) -> float:
    image = np.asarray(image, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if image.shape != target.shape:
        raise ValueError(f"shape mismatch {image.shape} vs {target.shape}")
    diff = image - target
    return float(np.mean(diff * diff))


def mse_grad(image: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(image, dtype=np.float64) - target) / np.asarray(image).size


def psnr(image: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    err = mse(image, target)
    if err == 0.0:
        return float("inf")
    return float(10.0 * math.log10(peak * peak / err))


def psnr_capped(image: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    return min(psnr(image, target, peak), PSNR_REPORT_CAP)


@lru_cache(maxsize=1)
def _ssim_window() -> np.ndarray:
    x = np.arange(-_SSIM_HALF, _SSIM_HALF + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * 1.5 * 1.5))
    return k / k.sum()


def _blur(x: np.ndarray) -> np.ndarray:
    k = _ssim_window()
    out = correlate1d(x, k, axis=0, mode="constant")
    out = correlate1d(out, k, axis=1, mode="constant")
    return out[_SSIM_HALF:-_SSIM_HALF, _SSIM_HALF:-_SSIM_HALF]


def _blur_adjoint(y: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    k = _ssim_window()
    pad = np.zeros(shape)
    pad[_SSIM_HALF:-_SSIM_HALF, _SSIM_HALF:-_SSIM_HALF] = y
    out = correlate1d(pad, k, axis=0, mode="constant")
    return correlate1d(out, k, axis=1, mode="constant")


def _as_channels(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image[:, :, None]
    if image.ndim == 3:
        return image
    raise ValueError(f"expected (H, W) or (H, W, C) image, got {image.shape}")


def ssim_with_grad(image: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM and its gradient with respect to `image`."""
    a_full = _as_channels(image)
    b_full = _as_channels(target)
    if a_full.shape != b_full.shape:
        raise ValueError(f"shape mismatch {a_full.shape} vs {b_full.shape}")
    h, w, n_ch = a_full.shape
    if h < 2 * _SSIM_HALF + 1 or w < 2 * _SSIM_HALF + 1:
        raise ValueError(f"image {h}x{w} smaller than the 11x11 SSIM window")

    total = 0.0
    grad = np.zeros_like(a_full)
    n_windows = (h - 2 * _SSIM_HALF) * (w - 2 * _SSIM_HALF) * n_ch
    for ch in range(n_ch):
        a = a_full[:, :, ch]
        b = b_full[:, :, ch]
        mu_a = _blur(a)
        mu_b = _blur(b)
        var_a = _blur(a * a) - mu_a * mu_a
        var_b = _blur(b * b) - mu_b * mu_b
        cov = _blur(a * b) - mu_a * mu_b
        lum_n = 2.0 * mu_a * mu_b + _SSIM_C1
        lum_d = mu_a * mu_a + mu_b * mu_b + _SSIM_C1
        con_n = 2.0 * cov + _SSIM_C2
        con_d = var_a + var_b + _SSIM_C2
        lum = lum_n / lum_d
        con = con_n / con_d
        total += float(np.sum(lum * con))

        d_lum = con * (2.0 * mu_b - lum * 2.0 * mu_a) / lum_d
        d_var = lum * (-con / con_d)
        d_cov = lum * (2.0 / con_d)
        # var_a and cov expand around the blurred moments of a
        g_mu = d_lum - 2.0 * mu_a * d_var - mu_b * d_cov
        grad[:, :, ch] = (
            _blur_adjoint(g_mu, (h, w))
            + 2.0 * a * _blur_adjoint(d_var, (h, w))
            + b * _blur_adjoint(d_cov, (h, w))
        )
    value = total / n_windows
    grad /= n_windows
    if image.ndim == 2:
        return value, grad[:, :, 0]
    return value, grad


def ssim(image: np.ndarray, target: np.ndarray) -> float:
    return ssim_with_grad(image, target)[0]


def dssim_with_grad(image: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    value, grad = ssim_with_grad(image, target)
    return (1.0 - value) / 2.0, -grad / 2.0


def dssim(image: np.ndarray, target: np.ndarray) -> float:
    return dssim_with_grad(image, target)[0]


def _mixed_with_grad(image: np.ndarray, target: np.ndarray, mix: float) -> tuple[float, np.ndarray]:
    loss_m = mse(image, target)
    loss_s, grad_s = dssim_with_grad(image, target)
    value = (1.0 - mix) * loss_m + mix * loss_s
    grad = (1.0 - mix) * mse_grad(image, target) + mix * grad_s
    return value, grad


def structure_loss_with_grad(
    image: np.ndarray, target: np.ndarray, mix: float
) -> tuple[float, np.ndarray]:
    """(1 - mix) * MSE + mix * D-SSIM between downsampled `image` and `target`.

    `image` is resampled to `target`'s exact dims first (identity when they
    already match); the gradient flows back through the resampler adjoint.
    """
    image = np.asarray(image, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if image.shape[:2] == target.shape[:2]:
        return _mixed_with_grad(image, target, mix)
    if image.shape[0] < target.shape[0] or image.shape[1] < target.shape[1]:
        raise ValueError(
            f"structure loss downsamples: image {image.shape[:2]} smaller than target {target.shape[:2]}"
        )
    down, vjp = resample_with_vjp(image, target.shape[:2])
    value, grad_down = _mixed_with_grad(down, target, mix)
    return value, vjp(grad_down)


def structure_loss(image: np.ndarray, target: np.ndarray, mix: float) -> float:
    return structure_loss_with_grad(image, target, mix)[0]


def texture_loss_with_grad(
    image: np.ndarray, reference: np.ndarray | None, is_orthogonal: bool
) -> tuple[float, np.ndarray | None]:
    """MSE against the prior's high-resolution reference, orthogonal views only."""
    if not is_orthogonal:
        return 0.0, None
    if reference is None:
        raise ValueError("texture loss on an orthogonal view needs a reference image")
    if image.shape != reference.shape:
        raise ValueError(f"shape mismatch {image.shape} vs {reference.shape}")
    return mse(image, reference), mse_grad(image, reference)


def texture_loss(image: np.ndarray, reference: np.ndarray | None, is_orthogonal: bool) -> float:
    return texture_loss_with_grad(image, reference, is_orthogonal)[0]

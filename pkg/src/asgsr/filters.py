"""Scale-aware anti-aliasing filters.

Two filters cooperate during splatting:

* a 3D smoothing filter that dilates each world-space covariance by
  (gamma / max_rate) * I and rescales amplitude by
  sqrt(|cov| / |cov + (gamma / max_rate) I|), where max_rate is the largest
  sampling rate focal * s / depth over the cameras that see the splat. With
  `scale_aware_3d` the per-view scale factors enter that rate, so training at
  larger target scales admits finer splats.
* a 2D screen-space low-pass that adds eps_k * I to the projected covariance
  with the matching energy coefficient sqrt(|cov2d| / |cov2d + eps_k I|).
  With `scale_aware_2d` the footprint shrinks with the rendering scale,
  eps_k = eps / s; otherwise it stays the fixed eps.

Setting `scale_aware_3d`/`scale_aware_2d` to False forces s := 1 through the
same expressions (the fixed-filter ablation, bit-identical at s = 1).
Setting `enable_3d`/`enable_2d` to False removes the filters altogether;
disabled 2D filtering falls back to the classic bare 0.3 px dilation without
an energy coefficient, which is the plain-splatting baseline whose aliasing
these filters exist to fix.

`approx_error_curve` is the 1D analyzer behind the `analyze-filter` CLI
report: it compares a pixel-window box integral of a unit signal Gaussian
against the Gaussian-filter point-sample approximation, for a fixed filter
variance versus one that tracks the window (variance eps * w^2; the renderer's
2D rule eps / s is the same direction expressed in scale rather than window
units, and the two coincide at w = 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .scene.cameras import Camera, DEPTH_EPS

FRUSTUM_MARGIN = 1.3  # expansion factor for visibility / culling rectangles
VANILLA_DILATION = 0.3  # classic screen-space dilation, px^2, when enable_2d is off


@dataclass(frozen=True)
class FilterConfig:
    gamma: float = 0.3
    epsilon: float = 0.1
    scale_aware_3d: bool = True
    scale_aware_2d: bool = True
    enable_3d: bool = True
    enable_2d: bool = True

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def vanilla(cls) -> "FilterConfig":
        """Plain splatting: no smoothing filters, bare 0.3 px dilation."""
        return cls(enable_3d=False, enable_2d=False)


@dataclass(frozen=True)
class Filtered2DGaussian:
    """One projected, low-passed splat: mean/cov in target pixels."""

    mean: np.ndarray  # (2,)
    cov: np.ndarray  # (2, 2)
    coeff: float  # combined 3D * 2D energy coefficient
    depth: float


def max_sampling_rates(
    positions: np.ndarray,
    cameras: list[Camera],
    *,
    scale_aware: bool = True,
    scale_override: float | None = None,
) -> np.ndarray:
    """Largest per-splat sampling rate focal * s / depth over visible cameras.

    A splat counts as visible in a camera when its center is in front of the
    near plane and projects inside the margin-expanded image rectangle. Splats
    visible nowhere fall back to the unmasked maximum so they still receive a
    finite smoothing radius.

    `scale_override` substitutes one scale factor for every camera's stored
    one (the trainer passes the current stage maximum). With
    `scale_aware=False` the scale is pinned to 1.0 through the same
    arithmetic.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError(f"positions must be (N, 3), got {positions.shape}")
    if not cameras:
        raise ValueError("max_sampling_rates needs at least one camera")
    n = len(positions)
    rates = np.empty((len(cameras), n), dtype=np.float64)
    visible = np.empty((len(cameras), n), dtype=bool)
    for k, cam in enumerate(cameras):
        if not scale_aware:
            s = 1.0
        elif scale_override is not None:
            s = float(scale_override)
        else:
            s = cam.scale_factor
        t = cam.world_to_camera(positions)
        z = t[:, 2]
        in_front = z > DEPTH_EPS
        zc = np.maximum(z, DEPTH_EPS)
        u = cam.focal * t[:, 0] / zc + cam.principal[0]
        v = cam.focal * t[:, 1] / zc + cam.principal[1]
        w, h = cam.base_resolution
        pad_x = (FRUSTUM_MARGIN - 1.0) * 0.5 * w
        pad_y = (FRUSTUM_MARGIN - 1.0) * 0.5 * h
        inside = (u >= -pad_x) & (u <= w + pad_x) & (v >= -pad_y) & (v <= h + pad_y)
        visible[k] = in_front & inside
        rates[k] = cam.focal * s / zc
    masked = np.where(visible, rates, -np.inf)
    best = masked.max(axis=0)
    fallback = rates.max(axis=0)
    return np.where(np.isfinite(best), best, fallback)


def smooth_3d(
    cov3d: np.ndarray, max_rates: np.ndarray, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Dilate world covariances by (gamma / max_rate) I; return (cov, coeff).

    coeff = sqrt(|cov| / |cov + (gamma / max_rate) I|) preserves the splat's
    integrated energy under the dilation. Batched over the leading axis.
    """
    cov3d = np.asarray(cov3d, dtype=np.float64)
    max_rates = np.asarray(max_rates, dtype=np.float64)
    if np.any(max_rates <= 0.0):
        raise ValueError("max sampling rates must be positive")
    add = gamma / max_rates
    dilated = cov3d.copy()
    idx = np.arange(3)
    dilated[..., idx, idx] += add[..., None]
    det_orig = np.linalg.det(cov3d)
    det_new = np.linalg.det(dilated)
    coeff = np.sqrt(np.maximum(det_orig, 0.0) / det_new)
    return dilated, coeff


def mip_2d(
    cov2d: np.ndarray, scale_factor: float, cfg: FilterConfig
) -> tuple[np.ndarray, np.ndarray, float]:
    """Apply the screen-space low-pass; returns (cov, coeff, eps_k).

    cov2d may be degenerate (eigenvalues >= 0); its determinant is clamped at
    zero from below, so a fully degenerate splat gets coeff 0 and a pure
    filter footprint eps_k * I.
    """
    cov2d = np.asarray(cov2d, dtype=np.float64)
    s = float(scale_factor) if cfg.scale_aware_2d else 1.0
    eps_k = cfg.epsilon / s
    filtered = cov2d.copy()
    idx = np.arange(2)
    filtered[..., idx, idx] += eps_k
    det_orig = np.maximum(np.linalg.det(cov2d), 0.0)
    det_new = np.linalg.det(filtered)
    coeff = np.sqrt(det_orig / det_new)
    return filtered, coeff, eps_k


def window_response_true(window: float, sigma_g: float) -> float:
    """Box-window integral of exp(-x^2 / (2 sigma_g^2)) by adaptive quadrature."""
    if not window > 0.0 or not sigma_g > 0.0:
        raise ValueError("window and sigma_g must be positive")
    val, _ = integrate.quad(
        lambda x: np.exp(-x * x / (2.0 * sigma_g * sigma_g)),
        -0.5 * window,
        0.5 * window,
        epsabs=1e-10,
        epsrel=1e-12,
    )
    return val


def window_response_filtered(window: float, sigma_g: float, filter_var: float) -> float:
    """Point-sample approximation w * sqrt(sigma_g^2 / (sigma_g^2 + filter_var))."""
    if not window > 0.0 or not sigma_g > 0.0 or filter_var < 0.0:
        raise ValueError("window/sigma_g must be positive and filter_var >= 0")
    s2 = sigma_g * sigma_g
    return window * np.sqrt(s2 / (s2 + filter_var))


def approx_error_curve(
    window_sizes: np.ndarray, sigma_g: float, cfg: FilterConfig
) -> np.ndarray:
    """Relative approximation error of fixed vs window-tracking filtering.

    Returns rows (w, err_fixed, err_scale_aware) where each error is
    |true - approx| / true, the fixed column uses filter variance
    cfg.epsilon and the scale-aware column cfg.epsilon * w^2.
    """
    windows = np.asarray(window_sizes, dtype=np.float64)
    if windows.ndim != 1 or len(windows) == 0:
        raise ValueError("window_sizes must be a non-empty 1D array")
    if np.any(windows <= 0.0):
        raise ValueError("window sizes must be positive")
    if not sigma_g > 0.0:
        raise ValueError(f"sigma_g must be positive, got {sigma_g}")
    rows = np.empty((len(windows), 3), dtype=np.float64)
    for i, w in enumerate(windows):
        true = window_response_true(w, sigma_g)
        fixed = window_response_filtered(w, sigma_g, cfg.epsilon)
        tracking = window_response_filtered(w, sigma_g, cfg.epsilon * w * w)
        rows[i] = (w, abs(true - fixed) / true, abs(true - tracking) / true)
    return rows


def write_error_curve_csv(rows: np.ndarray, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("w,err_fixed,err_scale_aware\n")
        for w, err_fixed, err_sa in rows:
            fh.write(f"{w:.17g},{err_fixed:.17g},{err_sa:.17g}\n")

"""Projection of 3D splats into filtered screen-space Gaussians.

Pipeline per splat: world covariance from (quaternion, log-scales), optional
3D smoothing filter, rigid transform into camera space, perspective projection
of the mean with effective focal f*s, local-affine covariance transfer through
the projection Jacobian, then the screen-space low-pass. Culling drops splats
behind the near plane or whose extent misses the margin-expanded frustum.

Everything is batched and the survivors come out depth-sorted (stable,
original index breaks ties), which is the compositing order downstream.
`PreparedSplats` keeps the intermediates the analytic backward needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..filters import FRUSTUM_MARGIN, VANILLA_DILATION, FilterConfig, Filtered2DGaussian, mip_2d, smooth_3d
from ..scene import quaternions
from ..scene.cameras import DEPTH_EPS, Camera
from ..scene.gaussians import Gaussians

# Binning extent: radius at which a splat's weight falls to AMP_FLOOR. The
# brute-force oracle evaluates untruncated kernels, so the extent must hide
# at most ~1e-9 of amplitude per splat, far under the 1e-5 oracle-agreement
# budget (a bare 3 sigma ellipse would leak ~1e-2 shoulders across tiles).
AMP_FLOOR = 1e-9


@dataclass
class PreparedSplats:
    """Culled, depth-sorted splats with retained projection intermediates."""

    # identification / composition inputs
    indices: np.ndarray  # (M,) indices into the source cloud
    means2d: np.ndarray  # (M, 2) projected centers, target pixels
    inv_cov: np.ndarray  # (M, 2, 2) inverse of the filtered 2D covariance
    amplitudes: np.ndarray  # (M,) opacity * coeff3d * coeff2d
    colors: np.ndarray  # (M, 3)
    depths: np.ndarray  # (M,)
    radii: np.ndarray  # (M,) binning extent in target pixels
    # intermediates for the backward pass
    t_cam: np.ndarray  # (M, 3) camera-space centers
    rho: np.ndarray  # (M, 2) clamped view-ratios used in the Jacobian
    rho_free: np.ndarray  # (M, 2) 1.0 where the ratio clamp was inactive
    jac: np.ndarray  # (M, 2, 3) projection Jacobian
    jw: np.ndarray  # (M, 2, 3) jac @ world-to-camera rotation
    rot: np.ndarray  # (M, 3, 3) splat rotation matrices
    unit_quats: np.ndarray  # (M, 4)
    raw_quats: np.ndarray  # (M, 4)
    scales: np.ndarray  # (M, 3) exp(log_scales)
    opacities: np.ndarray  # (M,)
    cov3d: np.ndarray  # (M, 3, 3) before 3D smoothing
    cov3d_filtered: np.ndarray  # (M, 3, 3)
    coeff3d: np.ndarray  # (M,)
    cov2d: np.ndarray  # (M, 2, 2) before the 2D low-pass
    cov2d_filtered: np.ndarray  # (M, 2, 2)
    coeff2d: np.ndarray  # (M,)
    det2d: np.ndarray  # (M,) det of the unfiltered 2D covariance, clamped >= 0
    max_rates: np.ndarray  # (M,)
    # render context
    focal_scaled: float
    scale_factor: float
    width: int
    height: int
    cam_rotation: np.ndarray  # (3, 3)
    config: FilterConfig


def _tan_limits(camera: Camera) -> tuple[float, float]:
    w, h = camera.base_resolution
    lim_x = FRUSTUM_MARGIN * 0.5 * w / camera.focal + abs(camera.principal[0] - 0.5 * w) / camera.focal
    lim_y = FRUSTUM_MARGIN * 0.5 * h / camera.focal + abs(camera.principal[1] - 0.5 * h) / camera.focal
    return lim_x, lim_y


def prepare_splats(
    gaussians: Gaussians,
    camera: Camera,
    scale_factor: float,
    cfg: FilterConfig,
    max_rates: np.ndarray,
) -> PreparedSplats:
    s = float(scale_factor)
    if not s >= 1.0:
        raise ValueError(f"scale factor must be >= 1, got {s}")
    width, height = camera.output_resolution(s)
    n = len(gaussians)
    max_rates = np.asarray(max_rates, dtype=np.float64)
    if max_rates.shape != (n,):
        raise ValueError(f"max_rates must have shape ({n},), got {max_rates.shape}")

    t_cam = camera.world_to_camera(gaussians.positions)
    in_front = t_cam[:, 2] > DEPTH_EPS

    raw_quats = gaussians.rotations
    unit_quats = gaussians.unit_rotations
    rot = quaternions.rotation_matrices(unit_quats)
    scales = gaussians.scales
    m3 = rot * scales[:, None, :]
    cov3d = m3 @ np.swapaxes(m3, 1, 2)
    if cfg.enable_3d:
        cov3d_f, coeff3d = smooth_3d(cov3d, max_rates, cfg.gamma)
    else:
        cov3d_f, coeff3d = cov3d, np.ones(n)

    fs = camera.focal * s
    z = np.maximum(t_cam[:, 2], DEPTH_EPS)
    means2d = np.stack(
        [
            fs * t_cam[:, 0] / z + camera.principal[0] * s,
            fs * t_cam[:, 1] / z + camera.principal[1] * s,
        ],
        axis=1,
    )

    lim_x, lim_y = _tan_limits(camera)
    ratio = t_cam[:, :2] / z[:, None]
    rho = np.clip(ratio, [-lim_x, -lim_y], [lim_x, lim_y])
    rho_free = (ratio == rho).astype(np.float64)

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = fs / z
    jac[:, 1, 1] = fs / z
    jac[:, 0, 2] = -fs * rho[:, 0] / z
    jac[:, 1, 2] = -fs * rho[:, 1] / z
    jw = jac @ camera.rotation
    cov2d = jw @ cov3d_f @ np.swapaxes(jw, 1, 2)

    if cfg.enable_2d:
        cov2d_f, coeff2d, _ = mip_2d(cov2d, s, cfg)
    else:
        cov2d_f = cov2d.copy()
        cov2d_f[:, 0, 0] += VANILLA_DILATION
        cov2d_f[:, 1, 1] += VANILLA_DILATION
        coeff2d = np.ones(n)

    det2d = np.maximum(cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2, 0.0)
    amplitudes = gaussians.opacities * coeff3d * coeff2d

    a = cov2d_f[:, 0, 0]
    b = cov2d_f[:, 0, 1]
    c = cov2d_f[:, 1, 1]
    det_f = a * c - b * b
    pos_def = det_f > 0.0
    det_safe = np.where(pos_def, det_f, 1.0)
    inv_cov = np.empty_like(cov2d_f)
    inv_cov[:, 0, 0] = c / det_safe
    inv_cov[:, 0, 1] = -b / det_safe
    inv_cov[:, 1, 0] = -b / det_safe
    inv_cov[:, 1, 1] = a / det_safe

    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        radii = np.where(
            amplitudes > AMP_FLOOR,
            np.sqrt(2.0 * np.log(np.maximum(amplitudes, AMP_FLOOR) / AMP_FLOOR))
            * np.sqrt(np.maximum(lam_max, 0.0)),
            0.0,
        )

    pad_x = (FRUSTUM_MARGIN - 1.0) * 0.5 * width
    pad_y = (FRUSTUM_MARGIN - 1.0) * 0.5 * height
    on_screen = (
        (means2d[:, 0] + radii >= -pad_x)
        & (means2d[:, 0] - radii <= width + pad_x)
        & (means2d[:, 1] + radii >= -pad_y)
        & (means2d[:, 1] - radii <= height + pad_y)
    )
    keep = in_front & pos_def & (amplitudes > AMP_FLOOR) & on_screen

    kept = np.nonzero(keep)[0]
    order = np.argsort(t_cam[kept, 2], kind="stable")
    kept = kept[order]

    return PreparedSplats(
        indices=kept,
        means2d=means2d[kept],
        inv_cov=inv_cov[kept],
        amplitudes=amplitudes[kept],
        colors=gaussians.colors[kept],
        depths=t_cam[kept, 2].copy(),
        radii=radii[kept],
        t_cam=t_cam[kept],
        rho=rho[kept],
        rho_free=rho_free[kept],
        jac=jac[kept],
        jw=jw[kept],
        rot=rot[kept],
        unit_quats=unit_quats[kept],
        raw_quats=raw_quats[kept],
        scales=scales[kept],
        opacities=gaussians.opacities[kept],
        cov3d=cov3d[kept],
        cov3d_filtered=cov3d_f[kept],
        coeff3d=coeff3d[kept],
        cov2d=cov2d[kept],
        cov2d_filtered=cov2d_f[kept],
        coeff2d=coeff2d[kept],
        det2d=det2d[kept],
        max_rates=max_rates[kept],
        focal_scaled=fs,
        scale_factor=s,
        width=width,
        height=height,
        cam_rotation=camera.rotation.copy(),
        config=cfg,
    )


def project(
    gaussian_index: int,
    gaussians: Gaussians,
    camera: Camera,
    scale_factor: float,
    cfg: FilterConfig,
    max_rate: float | None = None,
) -> Filtered2DGaussian | None:
    """Single-splat projection surface; None when the splat is culled."""
    single = gaussians.select([gaussian_index])
    if max_rate is None:
        from ..filters import max_sampling_rates

        rates = max_sampling_rates(
            single.positions, [camera], scale_aware=cfg.scale_aware_3d, scale_override=scale_factor
        )
    else:
        rates = np.array([max_rate], dtype=np.float64)
    prep = prepare_splats(single, camera, scale_factor, cfg, rates)
    if len(prep.indices) == 0:
        return None
    return Filtered2DGaussian(
        mean=prep.means2d[0].copy(),
        cov=prep.cov2d_filtered[0].copy(),
        coeff=float(prep.coeff3d[0] * prep.coeff2d[0]),
        depth=float(prep.depths[0]),
    )


def tile_bounds(prep: PreparedSplats, tile_size: int) -> tuple[int, int, np.ndarray]:
    """Tile grid shape plus per-splat inclusive tile ranges (M, 4): x0, x1, y0, y1."""
    tiles_x = math.ceil(prep.width / tile_size)
    tiles_y = math.ceil(prep.height / tile_size)
    mx, my = prep.means2d[:, 0], prep.means2d[:, 1]
    r = prep.radii
    bounds = np.empty((len(mx), 4), dtype=np.int64)
    bounds[:, 0] = np.floor((mx - r) / tile_size)
    bounds[:, 1] = np.floor((mx + r) / tile_size)
    bounds[:, 2] = np.floor((my - r) / tile_size)
    bounds[:, 3] = np.floor((my + r) / tile_size)
    return tiles_x, tiles_y, bounds

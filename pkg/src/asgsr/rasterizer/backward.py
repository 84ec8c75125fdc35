"""Analytic gradients of the tiled forward render.

Differentiates pixel colors with respect to every splat parameter: position,
rotation quaternion, log-scales, opacity logit, color. The chain runs through
front-to-back compositing (with the alpha clamp and the transmittance cutoff
treated as hard gates), both filter energy coefficients, the screen-space
covariance, the projection Jacobian (including its dependence on the
camera-space mean), the 3D smoothing filter, and the quaternion
normalization. Smoothing rates are constants here; the trainer refreshes them
outside the differentiated step.

Tile blocks recompute their forward intermediates instead of caching the
pixel-by-splat matrices; per-splat accumulation uses np.add.at in a fixed
tile order, so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import quaternions
from ..scene.gaussians import Gaussians
from .forward import RenderState


@dataclass
class ParamGrads:
    positions: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4)
    log_scales: np.ndarray  # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)

    @classmethod
    def zeros(cls, n: int) -> "ParamGrads":
        return cls(
            positions=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            log_scales=np.zeros((n, 3)),
            opacity_logits=np.zeros(n),
            colors=np.zeros((n, 3)),
        )


def _accumulate_tiles(state: RenderState, grad_image: np.ndarray):
    """Run compositing backward per tile; returns per-kept-splat pixel terms."""
    prep = state.prep
    req = state.request
    m = len(prep.indices)
    grad_color = np.zeros((m, 3))
    grad_amp = np.zeros(m)
    grad_mean = np.zeros((m, 2))
    grad_ic = np.zeros((m, 3))  # dL/d(inv cov) packed (xx, xy, yy), full-matrix convention

    tile = req.tile_size
    height, width = grad_image.shape[:2]
    for ty in range(state.tiles_y):
        ys = ty * tile
        ye = min(ys + tile, height)
        for tx in range(state.tiles_x):
            cand = state.tile_lists[ty * state.tiles_x + tx]
            if len(cand) == 0:
                continue
            xs = tx * tile
            xe = min(xs + tile, width)
            dldc = grad_image[ys:ye, xs:xe].reshape(-1, 3)
            if not np.any(dldc):
                continue
            cols = np.arange(xs, xe) + 0.5
            rows = np.arange(ys, ye) + 0.5
            px = np.tile(cols, ye - ys)
            py = np.repeat(rows, xe - xs)

            means = prep.means2d[cand]
            inv = prep.inv_cov[cand]
            amps = prep.amplitudes[cand]
            dx = px[:, None] - means[None, :, 0]
            dy = py[:, None] - means[None, :, 1]
            ia, ib, ic = inv[:, 0, 0], inv[:, 0, 1], inv[:, 1, 1]
            m2 = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
            g = np.exp(-0.5 * m2)
            ag = amps[None, :] * g
            w = np.minimum(ag, req.alpha_clamp)
            one_minus = 1.0 - w
            n_px = len(px)
            trans_incl = np.cumprod(one_minus, axis=1)
            trans = np.concatenate([np.ones((n_px, 1)), trans_incl[:, :-1]], axis=1)
            if req.transmittance_min > 0.0:
                active = trans >= req.transmittance_min
            else:
                active = np.ones_like(w, dtype=bool)
            contrib = w * trans * active
            trans_final = np.where(active, one_minus, 1.0).prod(axis=1)

            # dL/dw_i = T_i (c_i . dldc) - (suffix contributions) / (1 - w_i)
            dot = dldc @ prep.colors[cand].T  # (P, G)
            u = contrib * dot
            bg_dot = dldc @ req.background  # (P,)
            suffix = np.cumsum(u[:, ::-1], axis=1)[:, ::-1] - u + (trans_final * bg_dot)[:, None]
            dw = active * (trans * dot - suffix / one_minus)
            dwe = dw * (ag < req.alpha_clamp)  # clamp gate

            np.add.at(grad_color, cand, contrib.T @ dldc)
            np.add.at(grad_amp, cand, (g * dwe).sum(axis=0))
            dm2 = -0.5 * ag * dwe
            vx = ia * dx + ib * dy
            vy = ib * dx + ic * dy
            np.add.at(grad_mean[:, 0], cand, (-2.0 * dm2 * vx).sum(axis=0))
            np.add.at(grad_mean[:, 1], cand, (-2.0 * dm2 * vy).sum(axis=0))
            np.add.at(grad_ic[:, 0], cand, (dm2 * dx * dx).sum(axis=0))
            np.add.at(grad_ic[:, 1], cand, (dm2 * dx * dy).sum(axis=0))
            np.add.at(grad_ic[:, 2], cand, (dm2 * dy * dy).sum(axis=0))
    return grad_color, grad_amp, grad_mean, grad_ic


def _sym2(packed: np.ndarray) -> np.ndarray:
    out = np.empty(packed.shape[:-1] + (2, 2))
    out[..., 0, 0] = packed[..., 0]
    out[..., 0, 1] = packed[..., 1]
    out[..., 1, 0] = packed[..., 1]
    out[..., 1, 1] = packed[..., 2]
    return out


def render_backward(state: RenderState, grad_image: np.ndarray) -> ParamGrads:
    prep = state.prep
    req = state.request
    grads = ParamGrads.zeros(state.n_gaussians)
    m = len(prep.indices)
    if m == 0:
        return grads
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (prep.height, prep.width, 3):
        raise ValueError(
            f"grad_image shape {grad_image.shape} != render shape {(prep.height, prep.width, 3)}"
        )

    grad_color, grad_amp, grad_mean, grad_ic = _accumulate_tiles(state, grad_image)

    # amplitude = opacity * coeff3d * coeff2d
    alpha = prep.opacities
    k3 = prep.coeff3d
    k2 = prep.coeff2d
    grad_alpha = grad_amp * k3 * k2
    grad_logit = grad_alpha * alpha * (1.0 - alpha)
    grad_k2 = grad_amp * alpha * k3
    grad_k3 = grad_amp * alpha * k2

    # inverse covariance -> filtered 2D covariance
    inv = prep.inv_cov
    gl = _sym2(grad_ic)
    d_covf = -inv @ gl @ inv

    cfg = state.prep.config
    d_cov2 = d_covf.copy()
    if cfg.enable_2d:
        # coeff2d = sqrt(det cov2d / det filtered); degenerate dets gate to zero
        inv_cov2 = np.zeros_like(prep.cov2d)
        nondeg = prep.det2d > 0.0
        if np.any(nondeg):
            inv_cov2[nondeg] = np.linalg.inv(prep.cov2d[nondeg])
        term = grad_k2 * 0.5 * k2
        d_cov2 += term[:, None, None] * (inv_cov2 - inv)

    # cov2d = (J W) cov3f (J W)^T
    jw = prep.jw
    d_sig3f = np.swapaxes(jw, 1, 2) @ d_cov2 @ jw
    d_jw = 2.0 * d_cov2 @ jw @ prep.cov3d_filtered
    d_jac = d_jw @ prep.cam_rotation.T

    # projected mean -> camera-space center
    fs = prep.focal_scaled
    t = prep.t_cam
    z = t[:, 2]
    d_t = np.zeros((m, 3))
    d_t[:, 0] = grad_mean[:, 0] * fs / z
    d_t[:, 1] = grad_mean[:, 1] * fs / z
    d_t[:, 2] = -(grad_mean[:, 0] * t[:, 0] + grad_mean[:, 1] * t[:, 1]) * fs / (z * z)

    # Jacobian entries -> camera-space center (clamped ratios gate to zero)
    free = prep.rho_free
    rho = prep.rho
    d_t[:, 0] += d_jac[:, 0, 2] * (-fs * free[:, 0] / (z * z))
    d_t[:, 1] += d_jac[:, 1, 2] * (-fs * free[:, 1] / (z * z))
    d_t[:, 2] += (d_jac[:, 0, 0] + d_jac[:, 1, 1]) * (-fs / (z * z))
    d_t[:, 2] += d_jac[:, 0, 2] * fs * (free[:, 0] * t[:, 0] / z**3 + rho[:, 0] / (z * z))
    d_t[:, 2] += d_jac[:, 1, 2] * fs * (free[:, 1] * t[:, 1] / z**3 + rho[:, 1] / (z * z))

    d_pos = d_t @ prep.cam_rotation

    # 3D smoothing filter: cov3f = cov3 + (gamma / rate) I, coeff3d det ratio
    if cfg.enable_3d:
        inv_sig3f = np.linalg.inv(prep.cov3d_filtered)
        inv_sig3 = np.linalg.inv(prep.cov3d)
        term = grad_k3 * 0.5 * k3
        d_sig3 = d_sig3f + term[:, None, None] * (inv_sig3 - inv_sig3f)
    else:
        d_sig3 = d_sig3f

    # cov3 = (R S)(R S)^T
    m3 = prep.rot * prep.scales[:, None, :]
    d_m3 = 2.0 * d_sig3 @ m3
    d_scales = np.einsum("nab,nab->nb", d_m3, prep.rot)
    d_log_scales = d_scales * prep.scales
    d_rot = d_m3 * prep.scales[:, None, :]

    rot_jac = quaternions.rotation_jacobian(prep.unit_quats)  # (M, 3, 3, 4)
    d_unit_q = np.einsum("nabq,nab->nq", rot_jac, d_rot)
    d_q = np.einsum("nq,nqr->nr", d_unit_q, quaternions.normalize_jacobian(prep.raw_quats))

    idx = prep.indices
    np.add.at(grads.colors, idx, grad_color)
    np.add.at(grads.opacity_logits, idx, grad_logit)
    np.add.at(grads.positions, idx, d_pos)
    np.add.at(grads.log_scales, idx, d_log_scales)
    np.add.at(grads.rotations, idx, d_q)
    return grads


def finite_difference_grads(
    gaussians: Gaussians,
    request,
    grad_image: np.ndarray,
    step: float = 1e-4,
    fields: tuple[str, ...] = ("positions", "rotations", "log_scales", "opacity_logits", "colors"),
) -> ParamGrads:
    """Central-difference gradients of sum(grad_image * render); test oracle.

    Perturbs every scalar parameter by +-step with smoothing rates resolved
    once and held fixed, matching the analytic pass's treatment of rates as
    constants.
    """
    from .forward import render_forward, resolve_max_rates

    base_rates = resolve_max_rates(gaussians, request)
    frozen = RenderRequestWithRates(request, base_rates)

    def objective() -> float:
        out = render_forward(gaussians, frozen.request, retain_state=False)
        return float(np.sum(out.image * grad_image))

    grads = ParamGrads.zeros(len(gaussians))
    for name in fields:
        param = getattr(gaussians, name)
        grad = getattr(grads, name)
        flat_param = param.reshape(-1)
        flat_grad = grad.reshape(-1)
        for j in range(flat_param.size):
            orig = flat_param[j]
            flat_param[j] = orig + step
            f_plus = objective()
            flat_param[j] = orig - step
            f_minus = objective()
            flat_param[j] = orig
            flat_grad[j] = (f_plus - f_minus) / (2.0 * step)
    return grads


class RenderRequestWithRates:
    """Clone a request with rates pinned so FD probes share the forward's filter."""

    def __init__(self, request, rates: np.ndarray):
        from dataclasses import replace

        self.request = replace(request, max_rates=rates.copy())

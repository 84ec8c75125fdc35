"""Progressive multi-stage optimization of a Gaussian scene.

The run is a warm-up phase followed by the scheduled stages. The warm-up fits
the scene to its stored low-resolution references at scale 1; each stage then
raises the maximum render scale, drawing the per-iteration scale uniformly
from the pool of all stage maxima so far. Per iteration the total image-space
gradient is assembled from up to three terms:

  structure     mixed MSE/D-SSIM between the render (downsampled to the
                target's dims) and either the stored reference (lowest pool
                scale) or a render of the frozen previous-stage snapshot at
                the adjacent lower pool scale
  distillation  the prior's latent-discrepancy gradient against the stored
                reference (skipped under the null provider)
  texture       MSE against the prior's cached high-resolution reference,
                orthogonal views only (skipped under the null provider)

and pushed through the rasterizer backward into an Adam step. Per-splat
sampling rates refresh at stage start and on a fixed interval, pinned to the
stage maximum scale, so the 3D smoothing tracks the band limit being trained.

Reproducibility: one generator seeded from the config drives every draw in a
fixed order (camera, scale, then prior internals); texture references use
noise derived from (seed, stage, view) so caches rebuild identically after a
resume. Checkpoints capture parameters, moments, cursor, rates, snapshot and
generator state, making save/load/continue bit-identical to an uninterrupted
run. The one exception is the densification gradient accumulator, which is
not checkpointed; maintenance is disabled by default and resuming mid-window
with it enabled restarts the window.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import CheckpointError, TrainingError
from ..filters import FilterConfig, max_sampling_rates
from ..losses import (
    LossWeights,
    psnr_capped,
    resample,
    ssim,
    structure_loss_with_grad,
    texture_loss_with_grad,
)
from ..prior import NullProvider, PriorConfig, PriorProvider, lds_gradient, make_reference, reference_noise
from ..rasterizer import RenderRequest, render_backward, render_forward, render_oracle
from ..scene.cameras import Camera, select_orthogonal_views
from ..scene.gaussians import PARAM_FIELDS, Gaussians
from ..scene.sceneio import Scene
from .adam import AdamState, LearningRates
from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .densify import DensifyConfig, densify_prune
from .schedule import ProgressiveSchedule

# reference convention for ground truth: pixel-footprint dilation at the
# output resolution, no training-band smoothing
GROUND_TRUTH_FILTERS = FilterConfig(enable_3d=False, scale_aware_2d=False)


def ground_truth_render(
    gaussians: Gaussians,
    camera: Camera,
    scale: float,
    background=(0.0, 0.0, 0.0),
) -> np.ndarray:
    """Exhaustive reference render of a known scene at the given scale."""
    request = RenderRequest(
        camera=camera, scale_factor=scale, filters=GROUND_TRUTH_FILTERS, background=np.asarray(background)
    )
    return render_oracle(gaussians, request).image


@dataclass(frozen=True)
class TrainConfig:
    schedule: ProgressiveSchedule = field(default_factory=ProgressiveSchedule)
    weights: LossWeights = field(default_factory=LossWeights)
    filters: FilterConfig = field(default_factory=FilterConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    rates: LearningRates = field(default_factory=LearningRates)
    seed: int = 0
    warmup_iterations: int = 500
    structure_from_live: bool = False  # render the structure target from the
    # live parameters instead of the frozen snapshot
    holdout_camera: int | None = None  # None: last camera when there are >= 2
    rate_refresh_interval: int = 100
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    densify: DensifyConfig | None = None

    def __post_init__(self):
        if self.warmup_iterations < 0:
            raise ValueError(f"warmup_iterations must be >= 0, got {self.warmup_iterations}")
        if self.rate_refresh_interval < 1:
            raise ValueError(f"rate_refresh_interval must be >= 1, got {self.rate_refresh_interval}")


@dataclass
class StageSnapshot:
    """Frozen parameters (and their rates) at the end of a stage; structure
    targets for the next stage render from here."""

    gaussians: Gaussians
    max_rates: np.ndarray
    stage_index: int


@dataclass
class TrainResult:
    scene: Scene
    metrics: list[dict]
    loss_log: list[dict]
    completed: bool
    global_step: int
    duration_s: float


def train(
    scene: Scene,
    provider: PriorProvider | None,
    config: TrainConfig,
    *,
    resume_from: str | None = None,
    checkpoint_path: str | None = None,
    stop_after: int | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run (or resume) the full schedule. `stop_after` pauses once that many
    global steps have completed, writing a checkpoint if a path is set."""
    t_start = time.perf_counter()
    schedule = config.schedule
    weights = config.weights
    cams = scene.cameras
    refs = scene.reference_images
    if not cams:
        raise ValueError("scene has no cameras")

    if config.holdout_camera is not None:
        holdout = config.holdout_camera
        if not 0 <= holdout < len(cams):
            raise ValueError(f"holdout camera {holdout} out of range for {len(cams)} cameras")
    else:
        holdout = len(cams) - 1 if len(cams) >= 2 else None
    train_ids = [i for i in range(len(cams)) if i != holdout]
    train_cams = [cams[i] for i in train_ids]
    for i in train_ids:
        if refs[i] is None:
            raise ValueError(f"camera {i} has no reference image; training needs scale-1 references")
    select_orthogonal_views(train_cams)
    if holdout is not None:
        cams[holdout].is_orthogonal = False

    prior_active = provider is not None and not isinstance(provider, NullProvider)
    background = np.asarray(config.background, dtype=np.float64)
    total_steps = config.warmup_iterations + schedule.total_iterations
    phases = [(-1, config.warmup_iterations)]
    phases += [(idx, iters) for idx, (_, iters) in enumerate(schedule.stages)]

    snapshot: StageSnapshot | None = None
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        if ck.seed != config.seed or ck.total_steps != total_steps:
            raise CheckpointError(
                f"checkpoint {resume_from} belongs to a different run "
                f"(seed {ck.seed} vs {config.seed}, total steps {ck.total_steps} vs {total_steps})"
            )
        gaussians = ck.gaussians
        adam = ck.adam
        global_step = ck.global_step
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.rng_state
        metrics = ck.metrics
        max_rates = ck.max_rates
        if ck.snapshot is not None:
            assert ck.snapshot_max_rates is not None and ck.snapshot_stage is not None
            snapshot = StageSnapshot(ck.snapshot, ck.snapshot_max_rates, ck.snapshot_stage)
        cursor_stage, cursor_iter = ck.stage_index, ck.stage_iteration
    else:
        gaussians = scene.gaussians.copy()
        adam = AdamState(gaussians)
        rng = np.random.default_rng(config.seed)
        global_step = 0
        metrics = []
        max_rates = None
        cursor_stage, cursor_iter = -1, 0

    loss_log: list[dict] = []
    tex_cache: dict[tuple[int, int], np.ndarray] = {}
    snap_render_cache: dict[tuple[int, int, float], np.ndarray] = {}

    def make_request(camera: Camera, scale: float) -> RenderRequest:
        return RenderRequest(
            camera=camera,
            scale_factor=scale,
            filters=config.filters,
            background=background,
            max_rates=max_rates,
        )

    def refresh_rates(stage_max: float) -> np.ndarray:
        return max_sampling_rates(
            gaussians.positions,
            train_cams,
            scale_aware=config.filters.scale_aware_3d,
            scale_override=stage_max,
        )

    def texture_reference(stage_idx: int, cam_id: int) -> np.ndarray:
        key = (stage_idx, cam_id)
        if key not in tex_cache:
            assert provider is not None
            stage_max = schedule.stages[stage_idx][0]
            out_w, out_h = cams[cam_id].output_resolution(stage_max)
            dims = provider.latent_dims(refs[cam_id].shape[:2])
            noise = reference_noise(config.seed, stage_idx, cam_id, dims)
            tex_cache[key] = make_reference(provider, refs[cam_id], config.prior, (out_h, out_w), noise)
        return tex_cache[key]

    def structure_target(stage_idx: int, cam_id: int, lower_scale: float) -> np.ndarray:
        if config.structure_from_live:
            return render_forward(gaussians, make_request(cams[cam_id], lower_scale)).image
        if snapshot is None:
            raise TrainingError(
                f"stage {stage_idx} needs a previous-stage snapshot for scale {lower_scale} and none exists"
            )
        key = (snapshot.stage_index, cam_id, lower_scale)
        if key not in snap_render_cache:
            request = RenderRequest(
                camera=cams[cam_id],
                scale_factor=lower_scale,
                filters=config.filters,
                background=background,
                max_rates=snapshot.max_rates,
            )
            snap_render_cache[key] = render_forward(snapshot.gaussians, request).image
        return snap_render_cache[key]

    def record_metrics(stage_idx: int) -> None:
        cam_id = holdout if holdout is not None else train_ids[0]
        scales = (1.0,) if stage_idx < 0 else schedule.pool(stage_idx)
        for s in scales:
            image = render_forward(gaussians, make_request(cams[cam_id], s)).image
            row = {"stage": stage_idx, "scale": s, "camera": cam_id}
            if scene.gt_gaussians is not None:
                gt = ground_truth_render(scene.gt_gaussians, cams[cam_id], s, background)
                row.update(psnr=psnr_capped(image, gt), ssim=ssim(image, gt), against="ground_truth")
            elif s == 1.0 and refs[cam_id] is not None:
                ref = refs[cam_id]
                row.update(psnr=psnr_capped(image, ref), ssim=ssim(image, ref), against="reference")
            else:
                row.update(psnr=None, ssim=None, against="none")
            metrics.append(row)

    def checkpoint_state(stage_idx: int, stage_iter: int) -> CheckpointState:
        return CheckpointState(
            gaussians=gaussians,
            adam=adam,
            stage_index=stage_idx,
            stage_iteration=stage_iter,
            global_step=global_step,
            seed=config.seed,
            total_steps=total_steps,
            rng_state=rng.bit_generator.state,
            max_rates=max_rates,
            snapshot=snapshot.gaussians if snapshot is not None else None,
            snapshot_max_rates=snapshot.max_rates if snapshot is not None else None,
            snapshot_stage=snapshot.stage_index if snapshot is not None else None,
            metrics=metrics,
        )

    def build_result(completed: bool) -> TrainResult:
        trained = gaussians.copy()
        if max_rates is not None:
            trained.max_rates = max_rates.copy()
        out_scene = Scene(
            gaussians=trained,
            cameras=cams,
            reference_images=refs,
            gt_gaussians=scene.gt_gaussians,
        )
        return TrainResult(
            scene=out_scene,
            metrics=metrics,
            loss_log=loss_log,
            completed=completed,
            global_step=global_step,
            duration_s=time.perf_counter() - t_start,
        )

    def guard_finite(value: float, arrays: dict[str, np.ndarray], stage_idx: int, it: int, terms: dict):
        bad = not np.isfinite(value) or any(not np.all(np.isfinite(a)) for a in arrays.values())
        if bad:
            names = [n for n, a in arrays.items() if not np.all(np.isfinite(a))]
            raise TrainingError(
                f"non-finite optimization state at stage {stage_idx} iteration {it}: "
                f"loss {value}, bad arrays {names}, terms {terms}"
            )

    if cursor_stage >= schedule.n_stages:
        return build_result(completed=True)

    densify_acc = np.zeros(len(gaussians))
    densify_count = 0
    start_pos = next(pos for pos, (pid, _) in enumerate(phases) if pid == cursor_stage)

    for pos in range(start_pos, len(phases)):
        stage_idx, n_iters = phases[pos]
        stage_max = 1.0 if stage_idx < 0 else schedule.stages[stage_idx][0]
        pool = (1.0,) if stage_idx < 0 else schedule.pool(stage_idx)
        start_iter = cursor_iter if pos == start_pos else 0

        for it in range(start_iter, n_iters):
            if stop_after is not None and global_step >= stop_after:
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, checkpoint_state(stage_idx, it))
                return build_result(completed=False)
            if it % config.rate_refresh_interval == 0:
                max_rates = refresh_rates(stage_max)

            cam_id = train_ids[int(rng.integers(0, len(train_ids)))]
            camera = cams[cam_id]
            terms: dict[str, float] = {}
            if stage_idx < 0:
                scale = 1.0
                out = render_forward(gaussians, make_request(camera, scale), retain_state=True)
                l_str, g_str = structure_loss_with_grad(out.image, refs[cam_id], weights.ssim_mix)
                grad_image = weights.structure * g_str
                total = weights.structure * l_str
                terms["structure"] = l_str
            else:
                scale = pool[int(rng.integers(0, len(pool)))]
                out = render_forward(gaussians, make_request(camera, scale), retain_state=True)
                lower = schedule.lower_scale(stage_idx, scale)
                target = refs[cam_id] if lower is None else structure_target(stage_idx, cam_id, lower)
                l_str, g_str = structure_loss_with_grad(out.image, target, weights.ssim_mix)
                grad_image = weights.structure * g_str
                total = weights.structure * l_str
                terms["structure"] = l_str
                if prior_active:
                    assert provider is not None
                    lds_g = lds_gradient(provider, out.image, refs[cam_id], config.prior, rng)
                    grad_image = grad_image + weights.distillation * lds_g
                    terms["lds_grad_norm"] = float(np.linalg.norm(lds_g))
                    if camera.is_orthogonal:
                        ref_tex = texture_reference(stage_idx, cam_id)
                        if ref_tex.shape != out.image.shape:
                            ref_tex = resample(ref_tex, out.image.shape[:2])
                        l_tex, g_tex = texture_loss_with_grad(out.image, ref_tex, True)
                        grad_image = grad_image + weights.texture * g_tex
                        total = total + weights.texture * l_tex
                        terms["texture"] = l_tex

            guard_finite(total, {"grad_image": grad_image}, stage_idx, it, terms)
            grads = render_backward(out.state, grad_image)
            guard_finite(total, {f: getattr(grads, f) for f in PARAM_FIELDS}, stage_idx, it, terms)
            adam.apply(gaussians, grads, config.rates.for_step(global_step, total_steps))
            guard_finite(total, {f: getattr(gaussians, f) for f in PARAM_FIELDS}, stage_idx, it, terms)
            global_step += 1

            loss_log.append(
                {
                    "stage": stage_idx,
                    "iteration": it,
                    "global_step": global_step,
                    "camera": cam_id,
                    "scale": scale,
                    "total": total,
                    **terms,
                }
            )
            if progress is not None:
                progress(loss_log[-1])

            if config.densify is not None and stage_idx >= 0:
                densify_acc += np.linalg.norm(grads.positions, axis=1)
                densify_count += 1
                due = (it + 1) % config.densify.interval == 0
                if due and global_step >= config.densify.start_iteration:
                    mean_norms = densify_acc / max(densify_count, 1)
                    gaussians, report = densify_prune(gaussians, adam, mean_norms, config.densify, rng)
                    densify_acc = np.zeros(len(gaussians))
                    densify_count = 0
                    max_rates = refresh_rates(stage_max)
                    loss_log.append({"stage": stage_idx, "iteration": it, "densify": report})

        record_metrics(stage_idx)
        if stage_idx >= 0:
            snapshot = StageSnapshot(gaussians.copy(), refresh_rates(stage_max), stage_idx)
            snap_render_cache.clear()
        next_stage = phases[pos + 1][0] if pos + 1 < len(phases) else schedule.n_stages
        cursor_stage, cursor_iter = next_stage, 0
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, checkpoint_state(next_stage, 0))

    return build_result(completed=True)

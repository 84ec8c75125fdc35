"""Synthetic scenes with exact ground truth.

Every preset keeps a pristine copy of the generating Gaussians on the scene
(`gt_gaussians`), so any render of the true scene is available as an analytic
reference at any scale. Reference images are exhaustive renders of the truth
at scale 1 on every camera.

Presets:
  checker-wall  a checkered plane of flat disk splats viewed from a camera
                ring; the working scene can start from a degraded init
                (thinned splats, jittered positions) so there is something to
                train and, at high scale factors, something to alias
  random        a seeded cloud of anisotropic splats; opacities are kept
                moderate so stacked transparency stays above the tiled
                renderer's early-termination cutoff
  grid          a small planar grid of distinct colors for I/O diagnostics
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene.cameras import Camera, look_at, select_orthogonal_views
from .scene.gaussians import Gaussians
from .scene.sceneio import Scene
from .trainer.train import ground_truth_render

PRESETS = ("checker-wall", "random", "grid")


@dataclass(frozen=True)
class SynthSpec:
    preset: str = "checker-wall"
    seed: int = 0
    n_gaussians: int = 64  # random preset
    cells: int = 10  # checker-wall / grid cell count per side
    n_cameras: int = 8
    base_resolution: tuple[int, int] = (32, 32)  # (width, height)
    camera_radius: float = 3.0
    camera_elevation_deg: float = 30.0
    fov_deg: float = 45.0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # degraded-init knobs (checker-wall): scales divided by the shrink factor,
    # positions jittered by this fraction of the cell spacing
    init_scale_shrink: float = 1.0
    init_position_jitter: float = 0.0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}, expected one of {PRESETS}")
        if self.n_cameras < 1:
            raise ValueError("need at least one camera")
        if self.init_scale_shrink < 1.0:
            raise ValueError(f"init_scale_shrink must be >= 1, got {self.init_scale_shrink}")


def ring_cameras(spec: SynthSpec) -> list[Camera]:
    """Cameras on a ring around the origin, all looking at it (z-up world)."""
    width, height = spec.base_resolution
    focal = (width / 2.0) / math.tan(math.radians(spec.fov_deg) / 2.0)
    principal = np.array([width / 2.0, height / 2.0])
    elev = math.radians(spec.camera_elevation_deg)
    cameras = []
    for i in range(spec.n_cameras):
        azim = 2.0 * math.pi * i / spec.n_cameras
        eye = spec.camera_radius * np.array(
            [math.cos(azim) * math.cos(elev), math.sin(azim) * math.cos(elev), math.sin(elev)]
        )
        rotation, translation = look_at(eye, np.zeros(3))
        cameras.append(
            Camera(
                focal=focal,
                principal=principal,
                rotation=rotation,
                translation=translation,
                base_resolution=(width, height),
                scale_factor=1.0,
            )
        )
    return cameras


def _checker_gaussians(spec: SynthSpec, rng: np.random.Generator) -> Gaussians:
    k = spec.cells
    extent = 1.0
    spacing = 2.0 * extent / k
    centers = -extent + spacing * (np.arange(k) + 0.5)
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    n = k * k
    positions = np.stack([xx.reshape(-1), yy.reshape(-1), np.zeros(n)], axis=1)
    positions[:, :2] += rng.uniform(-0.05, 0.05, (n, 2)) * spacing

    parity = ((xx + yy) / spacing).round().astype(int) % 2
    base = np.where(parity.reshape(-1, 1) == 0, 0.15, 0.85)
    colors = np.clip(base + rng.uniform(-0.08, 0.08, (n, 3)), 0.02, 0.98)

    scales = np.tile([0.45 * spacing, 0.45 * spacing, 0.06 * spacing], (n, 1))
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return Gaussians(
        positions=positions,
        rotations=rotations,
        log_scales=np.log(scales),
        opacity_logits=np.full(n, 3.0),
        colors=colors,
    )


def _random_gaussians(spec: SynthSpec, rng: np.random.Generator) -> Gaussians:
    n = spec.n_gaussians
    quats = rng.standard_normal((n, 4))
    return Gaussians(
        positions=rng.uniform(-0.55, 0.55, (n, 3)),
        rotations=quats,
        log_scales=rng.uniform(-2.6, -1.7, (n, 3)),
        opacity_logits=rng.uniform(-3.0, 1.5, n),
        colors=rng.uniform(0.15, 0.95, (n, 3)),
    )


def _grid_gaussians(spec: SynthSpec, rng: np.random.Generator) -> Gaussians:
    k = spec.cells
    n = k * k
    centers = np.linspace(-0.8, 0.8, k)
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    positions = np.stack([xx.reshape(-1), yy.reshape(-1), np.zeros(n)], axis=1)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    hues = np.linspace(0.0, 1.0, n, endpoint=False)
    colors = np.stack(
        [0.5 + 0.45 * np.cos(2 * np.pi * (hues + off)) for off in (0.0, 1 / 3, 2 / 3)], axis=1
    )
    return Gaussians(
        positions=positions,
        rotations=rotations,
        log_scales=np.full((n, 3), np.log(0.08)),
        opacity_logits=np.full(n, 2.5),
        colors=np.clip(colors, 0.02, 0.98),
    )


def bench_scene(n_gaussians: int, resolution: tuple[int, int], seed: int = 0):
    """A random cloud plus one camera at the requested resolution, with no
    reference renders (benchmarks do not need them)."""
    spec = SynthSpec(
        preset="random",
        seed=seed,
        n_gaussians=n_gaussians,
        n_cameras=1,
        base_resolution=resolution,
        camera_radius=2.5,
        camera_elevation_deg=15.0,
        fov_deg=50.0,
    )
    rng = np.random.default_rng(spec.seed)
    return _random_gaussians(spec, rng), ring_cameras(spec)[0]


def make_scene(spec: SynthSpec) -> Scene:
    """Build a preset scene: true Gaussians, a camera ring, scale-1 reference
    renders, and a working copy (possibly degraded) to optimize."""
    rng = np.random.default_rng(spec.seed)
    if spec.preset == "checker-wall":
        truth = _checker_gaussians(spec, rng)
    elif spec.preset == "random":
        truth = _random_gaussians(spec, rng)
    else:
        truth = _grid_gaussians(spec, rng)

    cameras = ring_cameras(spec)
    references = [
        ground_truth_render(truth, camera, 1.0, spec.background) for camera in cameras
    ]

    working = truth.copy()
    if spec.init_scale_shrink > 1.0:
        working.log_scales[:, :2] -= math.log(spec.init_scale_shrink)
    if spec.init_position_jitter > 0.0:
        spacing = 2.0 / max(spec.cells, 1)
        working.positions += rng.normal(0.0, spec.init_position_jitter * spacing, working.positions.shape)

    select_orthogonal_views(cameras)
    return Scene(
        gaussians=working,
        cameras=cameras,
        reference_images=references,
        gt_gaussians=truth,
    )

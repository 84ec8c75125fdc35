"""Forward-render throughput measurement.

Times the tiled forward over a resolution sweep for two filter configurations:
"fixed" (scale-aware switches off, the constant low-pass) and "scale_aware"
(the default). Both render at s = 1 where the two configurations are
bit-identical by construction; the report carries that max-abs pixel diff per
resolution as a parity check, which should read exactly 0.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import replace

import numpy as np

from ..filters import FilterConfig
from ..scene.sceneio import Scene
from .forward import RenderRequest, render_forward

DEFAULT_RESOLUTIONS = ((320, 180), (640, 360), (1280, 720), (1920, 1080))


def benchmark(
    scene: Scene,
    resolutions=DEFAULT_RESOLUTIONS,
    repetitions: int = 5,
    warmup: int = 3,
    camera_index: int = 0,
) -> dict:
    """Render the chosen view at each resolution; returns a JSON-ready report."""
    if warmup < 3:
        raise ValueError("benchmark warmup must be at least 3 frames")
    if repetitions < 1:
        raise ValueError("benchmark needs at least one timed repetition")
    base_cam = scene.cameras[camera_index]
    configs = {
        "fixed": FilterConfig(scale_aware_3d=False, scale_aware_2d=False),
        "scale_aware": FilterConfig(),
    }
    rows = []
    parity = []
    for width, height in resolutions:
        # keep the field of view: scale the focal with the width
        focal = base_cam.focal * width / base_cam.base_resolution[0]
        cam = replace(
            base_cam,
            focal=focal,
            principal=np.array([width / 2.0, height / 2.0]),
            base_resolution=(width, height),
            scale_factor=1.0,
        )
        images = {}
        for name, cfg in configs.items():
            request = RenderRequest(camera=cam, scale_factor=1.0, filters=cfg)
            for _ in range(warmup):
                out = render_forward(scene.gaussians, request)
            times = []
            for _ in range(repetitions):
                start = time.perf_counter()
                out = render_forward(scene.gaussians, request)
                times.append((time.perf_counter() - start) * 1000.0)
            images[name] = out.image
            median_ms = statistics.median(times)
            rows.append(
                {
                    "width": width,
                    "height": height,
                    "config": name,
                    "median_ms": median_ms,
                    "fps": 1000.0 / median_ms if median_ms > 0 else float("inf"),
                    "frames": repetitions,
                }
            )
        diff = float(np.abs(images["fixed"] - images["scale_aware"]).max())
        parity.append({"width": width, "height": height, "max_abs_diff": diff})
    return {
        "gaussians": len(scene.gaussians),
        "camera_index": camera_index,
        "warmup": warmup,
        "rows": rows,
        "s1_parity": parity,
    }

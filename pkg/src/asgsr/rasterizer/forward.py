"""Tile-based forward rasterization and the brute-force reference renderer.

Compositing follows front-to-back alpha blending: each splat contributes
weight w = min(amplitude * exp(-0.5 * mahalanobis^2), alpha_clamp), pixels
accumulate w * T * color with transmittance T the product of (1 - w) over
closer splats, and accumulation stops once T drops below transmittance_min.
The remaining transmittance composites the background.

`render_oracle` is the reference implementation of those semantics: per-pixel,
globally sorted, untruncated kernels, no tiles, no early termination. It
exists to pin down the tiled path and is O(pixels * splats), so keep buffers
small.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..filters import FilterConfig, max_sampling_rates
from ..scene.cameras import Camera
from ..scene.gaussians import Gaussians
from .project import PreparedSplats, prepare_splats, tile_bounds

DEFAULT_TILE = 16
DEFAULT_TRANSMITTANCE_MIN = 1e-4
DEFAULT_ALPHA_CLAMP = 0.99


@dataclass
class RenderRequest:
    camera: Camera
    scale_factor: float | None = None  # defaults to the camera's stored factor
    filters: FilterConfig = field(default_factory=FilterConfig)
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tile_size: int = DEFAULT_TILE
    transmittance_min: float = DEFAULT_TRANSMITTANCE_MIN
    alpha_clamp: float = DEFAULT_ALPHA_CLAMP
    max_rates: np.ndarray | None = None  # explicit per-splat rate override

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if self.tile_size < 1:
            raise ValueError(f"tile_size must be >= 1, got {self.tile_size}")
        if not 0.0 < self.alpha_clamp < 1.0:
            raise ValueError(f"alpha_clamp must be in (0, 1), got {self.alpha_clamp}")
        if self.transmittance_min < 0.0:
            raise ValueError("transmittance_min must be >= 0")

    @property
    def scale(self) -> float:
        return self.camera.scale_factor if self.scale_factor is None else float(self.scale_factor)


@dataclass
class RenderState:
    """Forward intermediates retained for the backward pass."""

    prep: PreparedSplats
    request: RenderRequest
    tile_lists: list[np.ndarray]
    tiles_x: int
    tiles_y: int
    n_gaussians: int


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    contributors: np.ndarray  # (H, W) int32, splats accumulated per pixel
    duration_ms: float
    state: RenderState | None = None


def resolve_max_rates(gaussians: Gaussians, request: RenderRequest) -> np.ndarray:
    """Pick the smoothing rates for a render: explicit > cached > from-request.

    Trained scenes carry cached rates (their band limit from training); for
    anything else the rates come from the request camera at the request scale.
    """
    if request.max_rates is not None:
        return np.asarray(request.max_rates, dtype=np.float64)
    if gaussians.max_rates is not None:
        return gaussians.max_rates
    return max_sampling_rates(
        gaussians.positions,
        [request.camera],
        scale_aware=request.filters.scale_aware_3d,
        scale_override=request.scale,
    )


def _composite(
    px: np.ndarray,
    py: np.ndarray,
    prep: PreparedSplats,
    cand: np.ndarray,
    background: np.ndarray,
    alpha_clamp: float,
    transmittance_min: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Blend candidate splats (already depth-sorted) over a pixel block."""
    n_px = len(px)
    if len(cand) == 0:
        color = np.broadcast_to(background, (n_px, 3)).copy()
        return color, np.ones(n_px), np.zeros(n_px, dtype=np.int32)

    means = prep.means2d[cand]
    inv = prep.inv_cov[cand]
    dx = px[:, None] - means[None, :, 0]
    dy = py[:, None] - means[None, :, 1]
    m2 = inv[:, 0, 0] * dx * dx + 2.0 * inv[:, 0, 1] * dx * dy + inv[:, 1, 1] * dy * dy
    w = np.minimum(prep.amplitudes[cand] * np.exp(-0.5 * m2), alpha_clamp)
    one_minus = 1.0 - w
    trans_incl = np.cumprod(one_minus, axis=1)
    trans = np.concatenate([np.ones((n_px, 1)), trans_incl[:, :-1]], axis=1)
    if transmittance_min > 0.0:
        active = trans >= transmittance_min
    else:
        active = np.ones_like(w, dtype=bool)
    contrib = w * trans * active
    color = contrib @ prep.colors[cand]
    trans_final = np.where(active, one_minus, 1.0).prod(axis=1)
    color += trans_final[:, None] * background
    return color, trans_final, (contrib > 0.0).sum(axis=1).astype(np.int32)


def build_tile_lists(prep: PreparedSplats, tile_size: int) -> tuple[int, int, list[np.ndarray]]:
    tiles_x, tiles_y, bounds = tile_bounds(prep, tile_size)
    lists: list[list[int]] = [[] for _ in range(tiles_x * tiles_y)]
    x0 = np.clip(bounds[:, 0], 0, tiles_x - 1)
    x1 = np.clip(bounds[:, 1], 0, tiles_x - 1)
    y0 = np.clip(bounds[:, 2], 0, tiles_y - 1)
    y1 = np.clip(bounds[:, 3], 0, tiles_y - 1)
    hit = (bounds[:, 1] >= 0) & (bounds[:, 0] < tiles_x) & (bounds[:, 3] >= 0) & (bounds[:, 2] < tiles_y)
    for i in np.nonzero(hit)[0]:  # splats are depth-sorted, so lists stay sorted
        for ty in range(y0[i], y1[i] + 1):
            row = ty * tiles_x
            for tx in range(x0[i], x1[i] + 1):
                lists[row + tx].append(i)
    return tiles_x, tiles_y, [np.asarray(lst, dtype=np.int64) for lst in lists]


def render_forward(
    gaussians: Gaussians, request: RenderRequest, retain_state: bool = False
) -> RenderOutput:
    start = time.perf_counter()
    scale = request.scale
    rates = resolve_max_rates(gaussians, request)
    prep = prepare_splats(gaussians, request.camera, scale, request.filters, rates)
    width, height = prep.width, prep.height
    tile = request.tile_size
    tiles_x, tiles_y, tile_lists = build_tile_lists(prep, tile)

    image = np.empty((height, width, 3))
    image[:] = request.background
    alpha = np.zeros((height, width))
    contributors = np.zeros((height, width), dtype=np.int32)

    for ty in range(tiles_y):
        ys = ty * tile
        ye = min(ys + tile, height)
        for tx in range(tiles_x):
            cand = tile_lists[ty * tiles_x + tx]
            if len(cand) == 0:
                continue
            xs = tx * tile
            xe = min(xs + tile, width)
            cols = np.arange(xs, xe) + 0.5
            rows = np.arange(ys, ye) + 0.5
            px = np.tile(cols, ye - ys)
            py = np.repeat(rows, xe - xs)
            color, trans_final, n_contrib = _composite(
                px, py, prep, cand, request.background, request.alpha_clamp, request.transmittance_min
            )
            block = (ye - ys, xe - xs)
            image[ys:ye, xs:xe] = color.reshape(block + (3,))
            alpha[ys:ye, xs:xe] = 1.0 - trans_final.reshape(block)
            contributors[ys:ye, xs:xe] = n_contrib.reshape(block)

    state = None
    if retain_state:
        state = RenderState(
            prep=prep,
            request=request,
            tile_lists=tile_lists,
            tiles_x=tiles_x,
            tiles_y=tiles_y,
            n_gaussians=len(gaussians),
        )
    duration = (time.perf_counter() - start) * 1000.0
    return RenderOutput(image=image, alpha=alpha, contributors=contributors, duration_ms=duration, state=state)


def render_oracle(gaussians: Gaussians, request: RenderRequest) -> RenderOutput:
    """Reference renderer: global sort, every splat at every pixel, no cutoff."""
    start = time.perf_counter()
    scale = request.scale
    rates = resolve_max_rates(gaussians, request)
    prep = prepare_splats(gaussians, request.camera, scale, request.filters, rates)
    width, height = prep.width, prep.height

    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    px = np.tile(cols, height)
    py = np.repeat(rows, width)
    cand = np.arange(len(prep.indices))
    color, trans_final, n_contrib = _composite(
        px, py, prep, cand, request.background, request.alpha_clamp, transmittance_min=0.0
    )
    duration = (time.perf_counter() - start) * 1000.0
    return RenderOutput(
        image=color.reshape(height, width, 3),
        alpha=(1.0 - trans_final).reshape(height, width),
        contributors=n_contrib.reshape(height, width),
        duration_ms=duration,
        state=None,
    )

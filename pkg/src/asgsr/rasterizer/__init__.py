from .backward import ParamGrads, finite_difference_grads, render_backward
from .bench import benchmark
from .forward import (
    RenderOutput,
    RenderRequest,
    RenderState,
    render_forward,
    render_oracle,
    resolve_max_rates,
)
from .project import PreparedSplats, prepare_splats, project

__all__ = [
    "ParamGrads",
    "PreparedSplats",
    "RenderOutput",
    "RenderRequest",
    "RenderState",
    "benchmark",
    "finite_difference_grads",
    "prepare_splats",
    "project",
    "render_backward",
    "render_forward",
    "render_oracle",
    "resolve_max_rates",
]

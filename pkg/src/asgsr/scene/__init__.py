from .cameras import Camera, axis_angle_deg, look_at, select_orthogonal_views
from .gaussians import Gaussians, concatenate
from .ply import SH_C0, load_ply, save_ply
from .sceneio import Scene, load_scene, read_png, save_scene, write_png, write_ppm

__all__ = [
    "Camera",
    "Gaussians",
    "SH_C0",
    "Scene",
    "axis_angle_deg",
    "concatenate",
    "load_ply",
    "load_scene",
    "look_at",
    "read_png",
    "save_ply",
    "save_scene",
    "select_orthogonal_views",
    "write_png",
    "write_ppm",
]

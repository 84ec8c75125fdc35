"""Scene container plus JSON/PNG/PPM serialization.

A scene bundles the splat cloud, its cameras, per-camera low-resolution
reference images (scale 1), and optionally a pristine ground-truth cloud that
evaluation renders from (synthetic scenes keep one so training can be scored
against the unfitted truth at any scale).

On disk a scene is a directory: scene.json + scene.ply (+ gt.ply, ref_*.png).
Images are float64 (H, W, 3) RGB in [0, 1] in memory; PNG is 8-bit at the file
boundary. The ASCII PPM writer is a debugging aid, nothing reads it back.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ..errors import SceneFormatError
from .cameras import Camera
from .gaussians import Gaussians
from .ply import load_ply, save_ply

SCENE_FORMAT = "asgsr-scene-v1"


@dataclass
class Scene:
    gaussians: Gaussians
    cameras: list[Camera]
    reference_images: list[np.ndarray | None] = field(default_factory=list)
    gt_gaussians: Gaussians | None = None

    def __post_init__(self):
        if not self.reference_images:
            self.reference_images = [None] * len(self.cameras)
        if len(self.reference_images) != len(self.cameras):
            raise SceneFormatError(
                f"{len(self.reference_images)} reference images for {len(self.cameras)} cameras"
            )
        for idx, (cam, ref) in enumerate(zip(self.cameras, self.reference_images)):
            if ref is None:
                continue
            w, h = cam.output_resolution()
            if ref.shape != (h, w, 3):
                raise SceneFormatError(
                    f"reference image {idx} has shape {ref.shape}, camera expects {(h, w, 3)}"
                )


def write_png(image: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


def write_ppm(image: np.ndarray, path) -> None:
    """ASCII (P3) PPM, for eyeballing buffers without an image viewer."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P3\n{w} {h}\n255\n")
        for row in data.reshape(h, -1):
            fh.write(" ".join(str(v) for v in row) + "\n")


def _camera_to_json(cam: Camera) -> dict:
    return {
        "focal": cam.focal,
        "principal": cam.principal.tolist(),
        "rotation": cam.rotation.tolist(),
        "translation": cam.translation.tolist(),
        "base_resolution": list(cam.base_resolution),
        "scale_factor": cam.scale_factor,
        "is_orthogonal": cam.is_orthogonal,
    }


def _camera_from_json(obj: dict, idx: int) -> Camera:
    try:
        return Camera(
            focal=float(obj["focal"]),
            principal=np.asarray(obj["principal"], dtype=np.float64),
            rotation=np.asarray(obj["rotation"], dtype=np.float64),
            translation=np.asarray(obj["translation"], dtype=np.float64),
            base_resolution=tuple(obj["base_resolution"]),
            scale_factor=float(obj.get("scale_factor", 1.0)),
            is_orthogonal=bool(obj.get("is_orthogonal", False)),
        )
    except KeyError as exc:
        raise SceneFormatError(f"camera {idx} is missing key {exc}") from exc
    except ValueError as exc:
        raise SceneFormatError(f"camera {idx} is invalid: {exc}") from exc


def save_scene(scene: Scene, directory) -> str:
    """Write the scene into `directory`; returns the scene.json path."""
    os.makedirs(directory, exist_ok=True)
    save_ply(scene.gaussians, os.path.join(directory, "scene.ply"))
    manifest = {
        "format": SCENE_FORMAT,
        "ply": "scene.ply",
        "cameras": [_camera_to_json(c) for c in scene.cameras],
        "reference_images": [],
        "ground_truth_ply": None,
    }
    if scene.gt_gaussians is not None:
        save_ply(scene.gt_gaussians, os.path.join(directory, "gt.ply"))
        manifest["ground_truth_ply"] = "gt.ply"
    for idx, ref in enumerate(scene.reference_images):
        if ref is None:
            manifest["reference_images"].append(None)
        else:
            name = f"ref_{idx:03d}.png"
            write_png(ref, os.path.join(directory, name))
            manifest["reference_images"].append(name)
    path = os.path.join(directory, "scene.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_scene(json_path) -> Scene:
    directory = os.path.dirname(os.path.abspath(json_path))
    try:
        with open(json_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"scene manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != SCENE_FORMAT:
        raise SceneFormatError(f"unknown scene format {manifest.get('format')!r}")
    for key in ("ply", "cameras"):
        if key not in manifest:
            raise SceneFormatError(f"scene manifest is missing key {key!r}")

    gaussians = load_ply(os.path.join(directory, manifest["ply"]))
    cameras = [_camera_from_json(obj, i) for i, obj in enumerate(manifest["cameras"])]
    refs: list[np.ndarray | None] = []
    for name in manifest.get("reference_images", [None] * len(cameras)):
        refs.append(None if name is None else read_png(os.path.join(directory, name)))
    gt = None
    if manifest.get("ground_truth_ply"):
        gt = load_ply(os.path.join(directory, manifest["ground_truth_ply"]))
    return Scene(gaussians=gaussians, cameras=cameras, reference_images=refs, gt_gaussians=gt)

"""Training checkpoints with bit-exact resume.

Layout: magic "ASGS1", u32 version, u64 JSON header length, the JSON header,
then one contiguous blob of little-endian float64 arrays in the order the
header's "arrays" list declares. Everything needed to continue a run exactly
lives here: parameters, Adam moments, the stage cursor, the generator state,
the cached sampling rates, the frozen previous-stage snapshot, and the
metrics recorded so far. Values are stored at full float64 width; quantizing
through the interchange PLY would break resume equivalence.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointError
from ..scene.gaussians import PARAM_FIELDS, Gaussians
from .adam import AdamState

CHECKPOINT_MAGIC = b"ASGS1"
CHECKPOINT_VERSION = 1

_PREFIX = struct.Struct("<5sIQ")


@dataclass
class CheckpointState:
    gaussians: Gaussians
    adam: AdamState
    stage_index: int  # -1 = warm-up, n_stages = finished
    stage_iteration: int
    global_step: int
    seed: int
    total_steps: int
    rng_state: dict
    max_rates: np.ndarray | None = None
    snapshot: Gaussians | None = None
    snapshot_max_rates: np.ndarray | None = None
    snapshot_stage: int | None = None
    metrics: list[dict] = field(default_factory=list)


def _array_items(state: CheckpointState) -> list[tuple[str, np.ndarray]]:
    items = [(f"param/{f}", getattr(state.gaussians, f)) for f in PARAM_FIELDS]
    items += [(f"adam_m/{f}", state.adam.m[f]) for f in PARAM_FIELDS]
    items += [(f"adam_v/{f}", state.adam.v[f]) for f in PARAM_FIELDS]
    if state.max_rates is not None:
        items.append(("max_rates", state.max_rates))
    if state.snapshot is not None:
        items += [(f"snapshot/{f}", getattr(state.snapshot, f)) for f in PARAM_FIELDS]
        if state.snapshot_max_rates is not None:
            items.append(("snapshot_max_rates", state.snapshot_max_rates))
    return items


def save_checkpoint(path: str | os.PathLike, state: CheckpointState) -> None:
    items = _array_items(state)
    header = {
        "n_gaussians": len(state.gaussians),
        "adam_step": state.adam.step,
        "stage_index": state.stage_index,
        "stage_iteration": state.stage_iteration,
        "global_step": state.global_step,
        "seed": state.seed,
        "total_steps": state.total_steps,
        "rng_state": state.rng_state,
        "snapshot_stage": state.snapshot_stage,
        "metrics": state.metrics,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in items],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in items:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> CheckpointState:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"checkpoint {path} truncated: {len(data)} bytes is shorter than the prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
    header_end = _PREFIX.size + header_len
    if len(data) < header_end:
        raise CheckpointError(f"checkpoint {path} truncated inside the header")
    try:
        header = json.loads(data[_PREFIX.size : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path} has a corrupt header: {exc}") from exc

    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
        if offset + nbytes > len(data):
            raise CheckpointError(f"checkpoint {path} truncated in array {entry['name']!r}")
        arr = np.frombuffer(data[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"checkpoint {path} array {entry['name']!r} has non-finite values")
        arrays[entry["name"]] = arr
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"checkpoint {path} has {len(data) - offset} trailing bytes")

    def take(prefix: str) -> dict[str, np.ndarray]:
        missing = [f for f in PARAM_FIELDS if f"{prefix}/{f}" not in arrays]
        if missing:
            raise CheckpointError(f"checkpoint {path} missing arrays {missing} under {prefix!r}")
        return {f: arrays[f"{prefix}/{f}"] for f in PARAM_FIELDS}

    gaussians = Gaussians(**take("param"))
    adam = AdamState(gaussians)
    adam.step = int(header["adam_step"])
    adam.m = take("adam_m")
    adam.v = take("adam_v")
    snapshot = None
    if header.get("snapshot_stage") is not None:
        snapshot = Gaussians(**take("snapshot"))
    return CheckpointState(
        gaussians=gaussians,
        adam=adam,
        stage_index=int(header["stage_index"]),
        stage_iteration=int(header["stage_iteration"]),
        global_step=int(header["global_step"]),
        seed=int(header["seed"]),
        total_steps=int(header["total_steps"]),
        rng_state=header["rng_state"],
        max_rates=arrays.get("max_rates"),
        snapshot=snapshot,
        snapshot_max_rates=arrays.get("snapshot_max_rates"),
        snapshot_stage=header.get("snapshot_stage"),
        metrics=list(header.get("metrics", [])),
    )

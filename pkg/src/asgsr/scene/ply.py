"""Binary PLY interop for splat clouds.

Writes the community splat layout: binary_little_endian, one vertex element
with float32 properties x, y, z, f_dc_0..2, opacity, scale_0..2, rot_0..3
(56 bytes per vertex, see docs/formats.md). The reader accepts any
binary_little_endian PLY that carries at least those properties and skips
extras (normals, higher-order SH coefficients, ...).

Colors map through the degree-0 spherical-harmonics convention
color = 0.5 + SH_C0 * f_dc; opacities stay logits and scales stay logs, as in
the wider ecosystem. Quaternions are renormalized on load.
"""

from __future__ import annotations

import numpy as np

from ..errors import PlyDataError, PlyFormatError
from .gaussians import Gaussians

SH_C0 = 0.28209479177387814

_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_DTYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


def save_ply(gaussians: Gaussians, path) -> None:
    n = len(gaussians)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in _PROPERTIES]
    header.append("end_header")

    quats = gaussians.unit_rotations
    f_dc = (gaussians.colors - 0.5) / SH_C0
    record = np.empty((n, len(_PROPERTIES)), dtype="<f4")
    record[:, 0:3] = gaussians.positions
    record[:, 3:6] = f_dc
    record[:, 6] = gaussians.opacity_logits
    record[:, 7:10] = gaussians.log_scales
    record[:, 10:14] = quats

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(record.tobytes())


def _parse_header(fh) -> tuple[int, list[tuple[str, str]]]:
    line = fh.readline().decode("ascii", "replace").strip()
    if line != "ply":
        raise PlyFormatError(f"not a PLY file (first line {line!r})")
    fmt = fh.readline().decode("ascii", "replace").strip()
    if fmt != "format binary_little_endian 1.0":
        raise PlyFormatError(f"unsupported PLY format line {fmt!r}")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyFormatError("unexpected end of file inside PLY header")
        line = raw.decode("ascii", "replace").strip()
        if line == "end_header":
            break
        if line.startswith("comment") or not line:
            continue
        parts = line.split()
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise PlyFormatError("list properties are not supported on vertex elements")
            if parts[1] not in _DTYPES:
                raise PlyFormatError(f"unsupported property type {parts[1]!r}")
            props.append((parts[2], _DTYPES[parts[1]]))
    if count is None:
        raise PlyFormatError("PLY header has no vertex element")
    return count, props


def load_ply(path) -> Gaussians:
    with open(path, "rb") as fh:
        count, props = _parse_header(fh)
        names = [name for name, _ in props]
        for required in _PROPERTIES:
            if required not in names:
                raise PlyFormatError(f"missing required property {required!r}")
        dtype = np.dtype([(name, kind) for name, kind in props])
        blob = fh.read(count * dtype.itemsize)
    if len(blob) != count * dtype.itemsize:
        raise PlyFormatError(
            f"truncated vertex data: expected {count * dtype.itemsize} bytes, got {len(blob)}"
        )
    table = np.frombuffer(blob, dtype=dtype, count=count)

    def cols(*keys):
        return np.stack([table[k].astype(np.float64) for k in keys], axis=-1)

    positions = cols("x", "y", "z")
    colors = 0.5 + SH_C0 * cols("f_dc_0", "f_dc_1", "f_dc_2")
    opacity = table["opacity"].astype(np.float64)
    log_scales = cols("scale_0", "scale_1", "scale_2")
    rotations = cols("rot_0", "rot_1", "rot_2", "rot_3")

    for name, arr in (
        ("position", positions), ("color", colors), ("opacity", opacity),
        ("scale", log_scales), ("rotation", rotations),
    ):
        finite = np.isfinite(arr).all(axis=tuple(range(1, arr.ndim)))
        if not finite.all():
            raise PlyDataError(f"non-finite {name} at element {int(np.argmin(finite))}")
    norms = np.linalg.norm(rotations, axis=1)
    if np.any(norms == 0.0):
        raise PlyDataError(f"zero-norm rotation at element {int(np.argmin(norms > 0))}")

    return Gaussians(
        positions=positions,
        rotations=rotations / norms[:, None],
        log_scales=log_scales,
        opacity_logits=opacity,
        colors=colors,
    )

"""Framed binary protocol spoken between the trainer and a prior process.

Frame layout (little-endian throughout):

  offset  size  field
  0       4     magic "ASGP"
  4       1     opcode (response frames set bit 0x80)
  5       4     u32 timestep A
  9       4     u32 timestep B
  13      12    u32 x3 dims A (channels, height, width)
  25      12    u32 x3 dims B (channels, height, width)
  37      ...   payload A: prod(dims A) float32 values
  ...     ...   payload B: prod(dims B) float32 values

DIMS frames are metadata-only: their dims fields carry the query/answer and
no payload bytes follow. Every other frame carries exactly the payload bytes
its dims fields imply (a dims triple of all zeros means an empty payload).

Opcode semantics, request -> response (responses mirror timestep fields
unless noted):

  ENCODE  0: tA=timestep; A=image, B=noise at latent dims -> A=latent
  PREDICT 1: tA=timestep; A=latent, B=condition image     -> A=noise estimate
  DENOISE 2: tA=from, tB=to; A=latent, B=condition image  -> A=latent at tB
  DECODE  3: tA=out height, tB=out width; A=latent,
             B=condition image                            -> A=image (3,tA,tB)
  GRAD    4: tA=encode timestep; A=latent-space gradient,
             B=the encoded image                          -> A=image-space gradient
  DIMS    5: dims A=image dims                            -> dims A=latent dims,
                                                             tA=schedule length
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

import numpy as np

from ..errors import ProtocolError

MAGIC = b"ASGP"
RESPONSE_BIT = 0x80
HEADER_SIZE = 37
MAX_PAYLOAD_ELEMENTS = 1 << 28  # 1 GiB of float32 per payload

_HEADER = struct.Struct("<4sBII6I")


class Opcode(IntEnum):
    ENCODE = 0
    PREDICT = 1
    DENOISE = 2
    DECODE = 3
    GRAD = 4
    DIMS = 5


Dims = tuple[int, int, int]
ZERO_DIMS: Dims = (0, 0, 0)


@dataclass
class Frame:
    opcode: int
    timestep_a: int = 0
    timestep_b: int = 0
    dims_a: Dims = ZERO_DIMS
    dims_b: Dims = ZERO_DIMS
    payload_a: np.ndarray | None = field(default=None, repr=False)
    payload_b: np.ndarray | None = field(default=None, repr=False)

    @property
    def base_opcode(self) -> int:
        return self.opcode & ~RESPONSE_BIT

    @property
    def is_response(self) -> bool:
        return bool(self.opcode & RESPONSE_BIT)


def _checked_dims(dims: Dims, offset: int, label: str) -> Dims:
    dims = (int(dims[0]), int(dims[1]), int(dims[2]))
    if any(d < 0 for d in dims):
        raise ProtocolError(f"negative entry in dims {label} {dims} at offset {offset}")
    positive = sum(1 for d in dims if d > 0)
    if positive not in (0, 3):
        raise ProtocolError(f"dims {label} {dims} at offset {offset} must be all positive or all zero")
    n = dims[0] * dims[1] * dims[2]
    if n > MAX_PAYLOAD_ELEMENTS:
        raise ProtocolError(f"dims {label} {dims} at offset {offset} imply {n} elements, over the cap")
    return dims


def _payload_bytes(array: np.ndarray | None, dims: Dims, label: str) -> bytes:
    n = dims[0] * dims[1] * dims[2]
    if n == 0:
        if array is not None and array.size:
            raise ProtocolError(f"payload {label} present but dims {dims} are empty")
        return b""
    if array is None:
        raise ProtocolError(f"payload {label} missing for dims {dims}")
    array = np.asarray(array)
    if array.size != n:
        raise ProtocolError(f"payload {label} has {array.size} elements, dims {dims} imply {n}")
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def pack_frame(frame: Frame) -> bytes:
    base = frame.base_opcode
    if base not in Opcode.__members__.values():
        raise ProtocolError(f"unknown opcode {frame.opcode:#04x}")
    dims_a = _checked_dims(frame.dims_a, 13, "A")
    dims_b = _checked_dims(frame.dims_b, 25, "B")
    header = _HEADER.pack(MAGIC, frame.opcode, frame.timestep_a, frame.timestep_b, *dims_a, *dims_b)
    if base == Opcode.DIMS:
        if (frame.payload_a is not None and np.asarray(frame.payload_a).size) or (
            frame.payload_b is not None and np.asarray(frame.payload_b).size
        ):
            raise ProtocolError("DIMS frames are metadata-only and carry no payload")
        return header
    return header + _payload_bytes(frame.payload_a, dims_a, "A") + _payload_bytes(frame.payload_b, dims_b, "B")


ReadExact = Callable[[int, str], bytes]
# reader contract: return exactly n bytes or raise; offsets below assume it


def read_frame(read_exact: ReadExact) -> Frame:
    """Parse one frame from an incremental reader. The reader is called as
    read_exact(n_bytes, what) and must return exactly n bytes."""
    header = read_exact(HEADER_SIZE, "frame header")
    if len(header) != HEADER_SIZE:
        raise ProtocolError(f"frame header truncated at offset {len(header)}: got {len(header)} of {HEADER_SIZE} bytes")
    magic, opcode, t_a, t_b, ca, ha, wa, cb, hb, wb = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    base = opcode & ~RESPONSE_BIT
    if base not in Opcode.__members__.values():
        raise ProtocolError(f"unknown opcode {opcode:#04x} at offset 4")
    dims_a = _checked_dims((ca, ha, wa), 13, "A")
    dims_b = _checked_dims((cb, hb, wb), 25, "B")
    payload_a = payload_b = None
    if base != Opcode.DIMS:
        offset = HEADER_SIZE
        n_a = dims_a[0] * dims_a[1] * dims_a[2]
        if n_a:
            raw = read_exact(4 * n_a, f"payload A at offset {offset}")
            if len(raw) != 4 * n_a:
                raise ProtocolError(f"payload A truncated at offset {offset + len(raw)}: got {len(raw)} of {4 * n_a} bytes")
            payload_a = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims_a)
            offset += 4 * n_a
        n_b = dims_b[0] * dims_b[1] * dims_b[2]
        if n_b:
            raw = read_exact(4 * n_b, f"payload B at offset {offset}")
            if len(raw) != 4 * n_b:
                raise ProtocolError(f"payload B truncated at offset {offset + len(raw)}: got {len(raw)} of {4 * n_b} bytes")
            payload_b = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims_b)
    return Frame(opcode, t_a, t_b, dims_a, dims_b, payload_a, payload_b)


def parse_frame(data: bytes) -> Frame:
    """Parse a complete frame from bytes, rejecting truncation and trailers."""
    pos = 0

    def read_exact(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ProtocolError(f"frame truncated at offset {len(data)}: {what} needs {pos + n - len(data)} more bytes")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    frame = read_frame(read_exact)
    if pos != len(data):
        raise ProtocolError(f"{len(data) - pos} trailing bytes after frame end at offset {pos}")
    return frame

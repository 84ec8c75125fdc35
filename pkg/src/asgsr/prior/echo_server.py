"""Reference test server for the prior protocol.

Implements the wire format with trivial semantics so protocol conformance can
be tested without any model: ENCODE hands the noise back as the latent,
PREDICT and DENOISE return their input latent unchanged (so the
denoise(x, t, t) = x law holds), DECODE returns the conditioning image when
its dims match the requested output (zeros otherwise), GRAD returns a zero
image-space gradient, and DIMS answers with the configured latent geometry.

Run as:  python -m asgsr.prior.echo_server --latent-channels 4 --latent-factor 8
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ..errors import ProtocolError
from .protocol import RESPONSE_BIT, Frame, Opcode, pack_frame, read_frame


def _stdin_reader():
    stdin = sys.stdin.buffer
    started = False

    def read_exact(n: int, what: str) -> bytes:
        nonlocal started
        buf = bytearray()
        while len(buf) < n:
            chunk = stdin.read(n - len(buf))
            if not chunk:
                if not started and not buf:
                    raise EOFError  # clean end between frames
                raise ProtocolError(f"stream ended while reading {what}: got {len(buf)} of {n} bytes")
            started = True
            buf.extend(chunk)
        started = True
        return bytes(buf)

    def reset():
        nonlocal started
        started = False

    return read_exact, reset


def handle(
    frame: Frame,
    latent_channels: int,
    latent_factor: int,
    schedule_length: int,
    latent_hw: tuple[int, int] | None = None,
) -> Frame:
    if frame.is_response:
        raise ProtocolError(f"received a response frame (opcode {frame.opcode:#04x}) as a request")
    op = Opcode(frame.base_opcode)
    resp_op = frame.opcode | RESPONSE_BIT
    if op == Opcode.DIMS:
        _, h, w = frame.dims_a
        if h <= 0 or w <= 0:
            raise ProtocolError(f"DIMS query with degenerate image dims {frame.dims_a}")
        if latent_hw is not None:
            latent = (latent_channels, latent_hw[0], latent_hw[1])
        else:
            latent = (latent_channels, max(1, h // latent_factor), max(1, w // latent_factor))
        return Frame(resp_op, timestep_a=schedule_length, dims_a=latent)
    if op == Opcode.ENCODE:
        return Frame(resp_op, frame.timestep_a, frame.timestep_b, dims_a=frame.dims_b, payload_a=frame.payload_b)
    if op in (Opcode.PREDICT, Opcode.DENOISE):
        return Frame(resp_op, frame.timestep_a, frame.timestep_b, dims_a=frame.dims_a, payload_a=frame.payload_a)
    if op == Opcode.DECODE:
        out_dims = (3, frame.timestep_a, frame.timestep_b)
        if frame.dims_b == out_dims:
            payload = frame.payload_b
        else:
            payload = np.zeros(out_dims, dtype=np.float64)
        return Frame(resp_op, frame.timestep_a, frame.timestep_b, dims_a=out_dims, payload_a=payload)
    # GRAD: zero image-space gradient at the image dims
    return Frame(
        resp_op,
        frame.timestep_a,
        frame.timestep_b,
        dims_a=frame.dims_b,
        payload_a=np.zeros(frame.dims_b, dtype=np.float64),
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="echo test server for the prior protocol")
    parser.add_argument("--latent-channels", type=int, default=4)
    parser.add_argument("--latent-factor", type=int, default=8)
    parser.add_argument("--schedule-length", type=int, default=1000)
    parser.add_argument(
        "--latent-size",
        default=None,
        help="fixed HxW latent grid for every image (default: image dims // latent-factor)",
    )
    args = parser.parse_args(argv)
    if args.latent_channels < 1 or args.latent_factor < 1 or args.schedule_length < 1:
        parser.error("latent-channels, latent-factor and schedule-length must be >= 1")
    latent_hw = None
    if args.latent_size is not None:
        try:
            h, w = (int(tok) for tok in args.latent_size.lower().split("x"))
        except ValueError:
            parser.error(f"bad --latent-size {args.latent_size!r}, expected HxW")
        if h < 1 or w < 1:
            parser.error("--latent-size dims must be >= 1")
        latent_hw = (h, w)

    stdout = sys.stdout.buffer
    read_exact, reset = _stdin_reader()
    while True:
        reset()
        try:
            frame = read_frame(read_exact)
        except EOFError:
            return 0
        except ProtocolError as exc:
            print(f"echo server: {exc}", file=sys.stderr)
            return 1
        try:
            response = handle(
                frame, args.latent_channels, args.latent_factor, args.schedule_length, latent_hw
            )
        except ProtocolError as exc:
            print(f"echo server: {exc}", file=sys.stderr)
            return 1
        stdout.write(pack_frame(response))
        stdout.flush()


if __name__ == "__main__":
    sys.exit(main())

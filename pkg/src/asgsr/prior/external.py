"""Out-of-process prior provider.

Runs the configured command as a child process and speaks the framed binary
protocol over its stdin/stdout. Calls are strictly serialized request then
response; a deadline guards every read so a wedged child aborts training with
a diagnostic instead of hanging it. The child answers GRAD itself, so the
encoder Jacobian-vector product runs wherever the network lives.
"""

from __future__ import annotations

import collections
import os
import select
import shlex
import subprocess
import threading
import time
from typing import Sequence

import numpy as np

from ..errors import ProtocolError, ProviderError
from .protocol import HEADER_SIZE, RESPONSE_BIT, Frame, Opcode, pack_frame, read_frame
from .provider import Latent, PriorProvider, validate_image

_STDERR_TAIL_LINES = 40


def _to_chw(image: np.ndarray) -> np.ndarray:
    return np.moveaxis(image, 2, 0)


def _to_hwc(payload: np.ndarray) -> np.ndarray:
    return np.moveaxis(payload, 0, 2)


class ExternalProvider(PriorProvider):
    def __init__(self, command: str | Sequence[str], timeout: float = 120.0):
        self._argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self._argv:
            raise ProviderError("empty provider command")
        if not timeout > 0:
            raise ProviderError(f"timeout must be positive, got {timeout}")
        self._timeout = float(timeout)
        self._dims_cache: dict[tuple[int, int], tuple[int, int, int]] = {}
        self._schedule_len: int | None = None
        self._stderr_tail: collections.deque[str] = collections.deque(maxlen=_STDERR_TAIL_LINES)
        try:
            self._proc = subprocess.Popen(
                self._argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
        except OSError as exc:
            raise ProviderError(f"failed to launch provider {self._argv[0]!r}: {exc}") from exc
        self._drain = threading.Thread(target=self._drain_stderr, daemon=True)
        self._drain.start()

    def _drain_stderr(self):
        assert self._proc.stderr is not None
        for raw in self._proc.stderr:
            self._stderr_tail.append(raw.decode("utf-8", "replace").rstrip("\n"))

    def _diagnostic(self, grace: float = 0.0) -> str:
        code = self._proc.poll()
        if code is None and grace > 0.0:
            # an EOF usually means the child is mid-exit; give the OS a moment
            # to reap it so the message carries the exit code, not a guess
            try:
                code = self._proc.wait(timeout=grace)
            except subprocess.TimeoutExpired:
                code = None
        if code is not None:
            self._drain.join(timeout=1.0)
        status = f"exit code {code}" if code is not None else "still running"
        tail = "\n".join(self._stderr_tail)
        return f"provider {self._argv[0]!r} ({status})" + (f"; stderr tail:\n{tail}" if tail else "")

    def _read_exact(self, n: int, what: str) -> bytes:
        assert self._proc.stdout is not None
        fd = self._proc.stdout.fileno()
        deadline = time.monotonic() + self._timeout
        buf = bytearray()
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProviderError(f"timed out after {self._timeout:g} s waiting for {what}; {self._diagnostic()}")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                raise ProviderError(f"stream closed while reading {what}; {self._diagnostic(grace=2.0)}")
            buf.extend(chunk)
        return bytes(buf)

    def _call(self, request: Frame, what: str) -> Frame:
        if self._proc.poll() is not None:
            raise ProviderError(f"cannot send {what}: {self._diagnostic()}")
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(pack_frame(request))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProviderError(f"failed to send {what}: {exc}; {self._diagnostic()}") from exc
        try:
            response = read_frame(self._read_exact)
        except ProtocolError as exc:
            raise ProtocolError(f"invalid response to {what}: {exc}") from exc
        expected = request.opcode | RESPONSE_BIT
        if response.opcode != expected:
            raise ProtocolError(
                f"response opcode {response.opcode:#04x} at offset 4 does not match request ({expected:#04x} expected)"
            )
        return response

    def _checked_payload(self, frame: Frame, dims: tuple[int, int, int], what: str) -> np.ndarray:
        if frame.dims_a != tuple(dims):
            raise ProviderError(f"{what} returned dims {frame.dims_a}, expected {tuple(dims)}")
        if frame.payload_a is None:
            raise ProviderError(f"{what} returned no payload")
        if not np.all(np.isfinite(frame.payload_a)):
            raise ProviderError(f"{what} returned non-finite values")
        return frame.payload_a

    # interface

    def latent_dims(self, image_hw: tuple[int, int]) -> tuple[int, int, int]:
        key = (int(image_hw[0]), int(image_hw[1]))
        if key not in self._dims_cache:
            resp = self._call(Frame(Opcode.DIMS, dims_a=(3, key[0], key[1])), "DIMS")
            if any(d <= 0 for d in resp.dims_a):
                raise ProviderError(f"DIMS returned degenerate latent dims {resp.dims_a}")
            if resp.timestep_a <= 0:
                raise ProviderError(f"DIMS returned schedule length {resp.timestep_a}, expected >= 1")
            if self._schedule_len is not None and resp.timestep_a != self._schedule_len:
                raise ProviderError(
                    f"DIMS schedule length changed from {self._schedule_len} to {resp.timestep_a}"
                )
            self._schedule_len = resp.timestep_a
            self._dims_cache[key] = resp.dims_a
        return self._dims_cache[key]

    def schedule_length(self) -> int:
        if self._schedule_len is None:
            self.latent_dims((8, 8))  # any probe populates the schedule length
        assert self._schedule_len is not None
        return self._schedule_len

    def encode(self, image: np.ndarray, noise: np.ndarray, timestep: int) -> Latent:
        image = validate_image(image, "image")
        dims = self.latent_dims(image.shape[:2])
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != tuple(dims):
            raise ProviderError(f"noise shape {noise.shape} != latent dims {tuple(dims)}")
        req = Frame(
            Opcode.ENCODE,
            timestep_a=int(timestep),
            dims_a=(3, image.shape[0], image.shape[1]),
            dims_b=dims,
            payload_a=_to_chw(image),
            payload_b=noise,
        )
        resp = self._call(req, "ENCODE")
        return Latent(self._checked_payload(resp, dims, "ENCODE"), int(timestep))

    def predict_noise(self, latent: Latent, condition: np.ndarray, timestep: int) -> np.ndarray:
        condition = validate_image(condition, "condition image")
        req = Frame(
            Opcode.PREDICT,
            timestep_a=int(timestep),
            dims_a=latent.dims,
            dims_b=(3, condition.shape[0], condition.shape[1]),
            payload_a=latent.data,
            payload_b=_to_chw(condition),
        )
        resp = self._call(req, "PREDICT")
        return self._checked_payload(resp, latent.dims, "PREDICT")

    def denoise(self, latent: Latent, t_from: int, t_to: int, condition: np.ndarray) -> Latent:
        if latent.timestep != t_from:
            raise ProviderError(f"latent is at timestep {latent.timestep}, asked to jump from {t_from}")
        condition = validate_image(condition, "condition image")
        req = Frame(
            Opcode.DENOISE,
            timestep_a=int(t_from),
            timestep_b=int(t_to),
            dims_a=latent.dims,
            dims_b=(3, condition.shape[0], condition.shape[1]),
            payload_a=latent.data,
            payload_b=_to_chw(condition),
        )
        resp = self._call(req, "DENOISE")
        return Latent(self._checked_payload(resp, latent.dims, "DENOISE"), int(t_to))

    def decode(self, latent: Latent, out_hw: tuple[int, int], condition: np.ndarray) -> np.ndarray:
        condition = validate_image(condition, "condition image")
        h, w = int(out_hw[0]), int(out_hw[1])
        req = Frame(
            Opcode.DECODE,
            timestep_a=h,
            timestep_b=w,
            dims_a=latent.dims,
            dims_b=(3, condition.shape[0], condition.shape[1]),
            payload_a=latent.data,
            payload_b=_to_chw(condition),
        )
        resp = self._call(req, "DECODE")
        return _to_hwc(self._checked_payload(resp, (3, h, w), "DECODE"))

    def encode_vjp(self, image: np.ndarray, grad_latent: np.ndarray, timestep: int) -> np.ndarray:
        image = validate_image(image, "image")
        dims = self.latent_dims(image.shape[:2])
        grad_latent = np.asarray(grad_latent, dtype=np.float64)
        if grad_latent.shape != tuple(dims):
            raise ProviderError(f"gradient shape {grad_latent.shape} != latent dims {tuple(dims)}")
        req = Frame(
            Opcode.GRAD,
            timestep_a=int(timestep),
            dims_a=dims,
            dims_b=(3, image.shape[0], image.shape[1]),
            payload_a=grad_latent,
            payload_b=_to_chw(image),
        )
        resp = self._call(req, "GRAD")
        return _to_hwc(self._checked_payload(resp, (3, image.shape[0], image.shape[1]), "GRAD"))

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5.0)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()
        self._drain.join(timeout=1.0)

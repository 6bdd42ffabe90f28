"""Client for out-of-process denoisers speaking the line-delimited JSON
wire protocol.

One frame per line.  Handshake: {"op": "hello", "version": 1} answered by a
"capabilities" frame.  Velocity requests carry base64 float32 little-endian
payloads in canonical (x, y, z, channel) order, are multiplexed by id over a
single connection, and responses may arrive out of order.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess
import threading

import numpy as np

from .denoisers import Denoiser, DenoiserCapabilities, DenoiserRequest
from .errors import CapabilityError, ProtocolError, TransportError

PROTOCOL_VERSION = 1


def encode_payload(values: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(values, dtype="<f4").tobytes()).decode("ascii")


def decode_payload(data: str, shape) -> np.ndarray:
    raw = base64.b64decode(data)
    arr = np.frombuffer(raw, dtype="<f4")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise ProtocolError(f"payload has {arr.size} values, expected {expected}")
    return arr.reshape(shape).astype(np.float64)


class RemoteDenoiser(Denoiser):
    """Speaks the wire protocol over a byte-stream pair (child process stdio
    or a TCP socket)."""

    def __init__(self, reader, writer, timeout: float = 60.0, owner=None):
        super().__init__()
        self._reader = reader
        self._writer = writer
        self._timeout = timeout
        self._owner = owner  # Popen or socket to close with us
        self._write_lock = threading.Lock()
        self._lock = threading.Lock()
        self._pending: dict[int, dict] = {}
        self._next_id = 1
        self._dead: Exception | None = None
        caps = self._handshake()
        self.remote_channels = caps.get("channels")
        self.capabilities = DenoiserCapabilities(
            max_size=caps.get("max_size"),
            pointwise=bool(caps.get("pointwise", False)),
            deterministic=bool(caps.get("deterministic", False)),
        )
        self._thread = threading.Thread(target=self._read_loop, daemon=True)
        self._thread.start()

    @classmethod
    def from_command(cls, command: str, timeout: float = 60.0) -> "RemoteDenoiser":
        proc = subprocess.Popen(
            shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        return cls(proc.stdout, proc.stdin, timeout, owner=proc)

    @classmethod
    def from_tcp(cls, host: str, port: int, timeout: float = 60.0) -> "RemoteDenoiser":
        sock = socket.create_connection((host, port), timeout=timeout)
        return cls(sock.makefile("rb"), sock.makefile("wb"), timeout, owner=sock)

    def _send(self, frame: dict) -> None:
        line = json.dumps(frame, separators=(",", ":")) + "\n"
        with self._write_lock:
            try:
                self._writer.write(line.encode("utf-8"))
                self._writer.flush()
            except (BrokenPipeError, OSError) as e:
                raise TransportError(f"connection lost while sending: {e}") from e

    def _read_frame(self) -> dict:
        line = self._reader.readline()
        if not line:
            raise TransportError("connection closed by remote denoiser")
        try:
            frame = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ProtocolError(f"malformed frame: {e}") from e
        if not isinstance(frame, dict) or "op" not in frame:
            raise ProtocolError(f"frame without op: {frame!r}")
        return frame

    def _handshake(self) -> dict:
        self._send({"op": "hello", "version": PROTOCOL_VERSION})
        frame = self._read_frame()
        if frame["op"] == "error":
            raise ProtocolError(f"handshake rejected: {frame.get('message')}")
        if frame["op"] != "capabilities":
            raise ProtocolError(f"expected capabilities frame, got {frame['op']!r}")
        return frame

    def _read_loop(self) -> None:
        try:
            while True:
                frame = self._read_frame()
                rid = frame.get("id", 0)
                with self._lock:
                    slot = self._pending.get(rid)
                    if slot is not None:
                        slot["frame"] = frame
                        slot["event"].set()
                # frames for unknown ids are dropped; the requester timed out
        except (TransportError, ProtocolError) as e:
            with self._lock:
                self._dead = e
                for slot in self._pending.values():
                    slot["event"].set()

    def _velocity(self, req: DenoiserRequest) -> np.ndarray:
        if self.remote_channels is not None and req.channels != self.remote_channels:
            raise CapabilityError(
                f"remote denoiser serves {self.remote_channels} channels, "
                f"request has {req.channels}"
            )
        with self._lock:
            if self._dead is not None:
                raise TransportError(f"remote denoiser unavailable: {self._dead}")
            rid = self._next_id
            self._next_id += 1
            slot = {"event": threading.Event(), "frame": None}
            self._pending[rid] = slot
        try:
            self._send(
                {
                    "op": "velocity",
                    "id": rid,
                    "t": req.t,
                    "size": req.size,
                    "channels": req.channels,
                    "condition": req.condition,
                    "origin": list(req.origin),
                    "data": encode_payload(req.values),
                }
            )
            if not slot["event"].wait(self._timeout):
                raise TransportError(
                    f"timeout waiting for velocity response id={rid}, "
                    f"tile origin {req.origin}"
                )
        finally:
            with self._lock:
                self._pending.pop(rid, None)
        if slot["frame"] is None:
            raise TransportError(
                f"connection dropped before response id={rid}, tile origin "
                f"{req.origin}: {self._dead}"
            )
        frame = slot["frame"]
        if frame["op"] == "error":
            raise ProtocolError(
                f"remote error for id={rid}, tile origin {req.origin}: "
                f"{frame.get('message')}"
            )
        if frame["op"] != "velocity_ok":
            raise ProtocolError(f"unexpected response op {frame['op']!r} for id={rid}")
        return decode_payload(frame["data"], req.values.shape)

    def close(self) -> None:
        try:
            self._writer.close()
        except OSError:
            pass
        owner = self._owner
        if isinstance(owner, subprocess.Popen):
            try:
                owner.wait(timeout=5)
            except subprocess.TimeoutExpired:
                owner.kill()
        elif isinstance(owner, socket.socket):
            owner.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

import base64
import json
import struct
import subprocess
import sys

import numpy as np
import pytest


class ServiceProc:
    """Drives a refdenoiser child process over its standard streams."""

    def __init__(self, *args):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "refdenoiser", *args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )

    def send(self, frame):
        if isinstance(frame, dict):
            frame = json.dumps(frame)
        self.proc.stdin.write(frame.encode() + b"\n")
        self.proc.stdin.flush()

    def recv(self):
        line = self.proc.stdout.readline()
        assert line, "service closed the stream"
        return json.loads(line)

    def hello(self):
        self.send({"op": "hello", "version": 1})
        return self.recv()

    def velocity(self, rid, values, t, condition="", size=None, channels=None):
        values = np.asarray(values, dtype="<f4")
        if size is None:
            size = values.shape[0]
        if channels is None:
            channels = values.shape[-1]
        self.send(
            {
                "op": "velocity",
                "id": rid,
                "t": t,
                "size": size,
                "channels": channels,
                "condition": condition,
                "origin": [0, 0, 0],
                "data": base64.b64encode(values.tobytes()).decode(),
            }
        )

    def close(self):
        self.proc.stdin.close()
        self.proc.wait(timeout=5)


@pytest.fixture
def service():
    procs = []

    def start(*args):
        p = ServiceProc(*args)
        procs.append(p)
        return p

    yield start
    for p in procs:
        try:
            p.close()
        except Exception:
            p.proc.kill()


def decode(frame):
    return np.frombuffer(base64.b64decode(frame["data"]), dtype="<f4")


def read_dense_world(path):
    """Minimal reader for the engine's TWLD dense container."""
    with open(path, "rb") as f:
        raw = f.read()
    assert raw[:4] == b"TWLD"
    version, X, Y, Z, C, flag = struct.unpack_from("<H3IIB", raw, 4)
    assert version == 1 and flag == 0
    off = 4 + struct.calcsize("<H3IIB")
    return np.frombuffer(raw, dtype="<f4", count=X * Y * Z * C, offset=off).reshape(X, Y, Z, C)

"""Standalone reference denoiser service.

Speaks the newline-delimited JSON velocity protocol over standard streams
or a TCP socket and serves analytic velocity fields (point targets and
Gaussian mixtures).  It shares no code with the engine; parity between the
two is what the protocol is supposed to guarantee.

Frames (one per line, UTF-8):
  -> {"op": "hello", "version": 1}
  <- {"op": "capabilities", "version": 1, "max_size": ..., "channels": ...,
      "pointwise": true, "deterministic": true}
  -> {"op": "velocity", "id": N, "t": ..., "size": S, "channels": C,
      "condition": "...", "origin": [x, y, z], "data": base64 float32 LE}
  <- {"op": "velocity_ok", "id": N, "data": base64 float32 LE}
  <- {"op": "error", "id": N, "message": "..."}   on any per-request problem

A frame that cannot be parsed at all is answered with an error frame
carrying id 0; the service keeps running either way.
"""

from __future__ import annotations

import argparse
import base64
import json
import socket
import sys
from dataclasses import dataclass, field

import numpy as np

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class Target:
    """Either a single point target or a mixture of them."""

    components: tuple[tuple[float, float], ...]  # (weight, mu)

    def __post_init__(self):
        if not self.components:
            raise ValueError("target needs at least one component")
        total = sum(w for w, _ in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {total}, expected 1")

    @classmethod
    def point(cls, mu: float) -> "Target":
        return cls(((1.0, float(mu)),))

    def velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        if len(self.components) == 1:
            return (x - self.components[0][1]) / t
        # posterior over components for the whole block, log-domain
        logs = np.array(
            [
                np.log(w) - float(np.sum((x - (1.0 - t) * mu) ** 2)) / (2.0 * t * t)
                for w, mu in self.components
            ]
        )
        logs -= logs.max()
        weights = np.exp(logs)
        weights /= weights.sum()
        mean = sum(w * mu for w, (_, mu) in zip(weights, self.components))
        return (x - mean) / t


@dataclass
class ServiceConfig:
    targets: dict[str, Target] = field(default_factory=dict)
    default: Target | None = None
    max_size: int | None = None
    channels: int | None = None
    tcp_port: int | None = None

    def __post_init__(self):
        if not self.targets and self.default is None:
            raise ValueError("service needs at least one configured condition")

    def lookup(self, condition: str) -> Target:
        if condition in self.targets:
            return self.targets[condition]
        if self.default is not None:
            return self.default
        known = ", ".join(repr(k) for k in sorted(self.targets))
        raise KeyError(f"unknown condition {condition!r}; known: {known}")


def parse_mixture(text: str) -> Target:
    """"mu1|mu2|..." with equal weights, or "w1:mu1,w2:mu2" explicit."""
    if ":" in text:
        parts = []
        for item in text.split(","):
            w, _, mu = item.partition(":")
            parts.append((float(w), float(mu)))
        return Target(tuple(parts))
    mus = [float(m) for m in text.split("|")]
    return Target(tuple((1.0 / len(mus), m) for m in mus))


def load_targets(path: str) -> dict[str, Target]:
    """JSON file: condition -> number (point target) or [[w, mu], ...]."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    table = {}
    for condition, value in raw.items():
        if isinstance(value, (int, float)):
            table[condition] = Target.point(value)
        else:
            table[condition] = Target(tuple((float(w), float(m)) for w, m in value))
    return table


class Session:
    """One protocol connection: reads frames, writes responses in order."""

    def __init__(self, config: ServiceConfig, reader, writer):
        self.config = config
        self.reader = reader
        self.writer = writer

    def send(self, frame: dict) -> None:
        self.writer.write((json.dumps(frame, separators=(",", ":")) + "\n").encode("utf-8"))
        self.writer.flush()

    def error(self, rid: int, message: str) -> None:
        self.send({"op": "error", "id": rid, "message": message})

    def handle_hello(self, frame: dict) -> None:
        if frame.get("version") != PROTOCOL_VERSION:
            self.error(0, f"unsupported protocol version {frame.get('version')!r}")
            return
        caps = {
            "op": "capabilities",
            "version": PROTOCOL_VERSION,
            "max_size": self.config.max_size,
            "pointwise": True,
            "deterministic": True,
        }
        if self.config.channels is not None:
            caps["channels"] = self.config.channels
        self.send(caps)

    def handle_velocity(self, frame: dict) -> None:
        rid = frame.get("id")
        if not isinstance(rid, int):
            self.error(0, "velocity frame without integer id")
            return
        try:
            t = float(frame["t"])
            size = int(frame["size"])
            channels = int(frame["channels"])
            condition = frame["condition"]
            payload = base64.b64decode(frame["data"])
        except (KeyError, TypeError, ValueError) as e:
            self.error(rid, f"bad velocity frame: {e}")
            return
        if t <= 0.0:
            self.error(rid, f"velocity undefined at t={t}")
            return
        if self.config.max_size is not None and size > self.config.max_size:
            self.error(rid, f"tile size {size} exceeds max {self.config.max_size}")
            return
        if self.config.channels is not None and channels != self.config.channels:
            self.error(rid, f"serving {self.config.channels} channels, got {channels}")
            return
        x = np.frombuffer(payload, dtype="<f4")
        if x.size != size**3 * channels:
            self.error(rid, f"payload has {x.size} values, expected {size ** 3 * channels}")
            return
        try:
            target = self.config.lookup(condition)
        except KeyError as e:
            self.error(rid, str(e))
            return
        v = target.velocity(x.astype(np.float64), t)
        data = base64.b64encode(v.astype("<f4").tobytes()).decode("ascii")
        self.send({"op": "velocity_ok", "id": rid, "data": data})

    def serve(self) -> None:
        for line in self.reader:
            if not line.strip():
                continue
            try:
                frame = json.loads(line.decode("utf-8"))
                if not isinstance(frame, dict):
                    raise ValueError("frame is not an object")
                op = frame["op"]
            except (ValueError, KeyError, UnicodeDecodeError) as e:
                self.error(0, f"malformed frame: {e}")
                continue
            if op == "hello":
                self.handle_hello(frame)
            elif op == "velocity":
                self.handle_velocity(frame)
            else:
                self.error(frame.get("id", 0) if isinstance(frame.get("id"), int) else 0,
                           f"unknown op {op!r}")


def serve_stdio(config: ServiceConfig) -> None:
    Session(config, sys.stdin.buffer, sys.stdout.buffer).serve()


def serve_tcp(config: ServiceConfig) -> None:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind(("127.0.0.1", config.tcp_port))
        srv.listen(1)
        # report the bound port so callers may pass --tcp 0
        print(f"listening {srv.getsockname()[1]}", file=sys.stderr, flush=True)
        while True:
            conn, _ = srv.accept()
            with conn:
                Session(config, conn.makefile("rb"), conn.makefile("wb")).serve()


def build_config(args) -> ServiceConfig:
    targets = {}
    default = None
    if args.targets:
        targets = load_targets(args.targets)
        if "*" in targets:
            default = targets.pop("*")
    if args.mixture is not None:
        default = parse_mixture(args.mixture)
    if args.point is not None:
        default = Target.point(args.point)
    return ServiceConfig(
        targets=targets,
        default=default,
        max_size=args.max_size,
        channels=args.channels,
        tcp_port=args.tcp,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="refdenoiser", description="reference velocity-field service"
    )
    parser.add_argument("--targets", help="JSON file: condition -> mu or [[w, mu], ...]")
    parser.add_argument("--point", type=float, default=None, help="default point target mu")
    parser.add_argument("--mixture", default=None, help='default mixture "mu1|mu2" or "w:mu,..."')
    parser.add_argument("--max-size", type=int, default=None)
    parser.add_argument("--channels", type=int, default=None)
    parser.add_argument("--tcp", type=int, default=None, help="serve on this TCP port (0 = any)")
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
    except (ValueError, OSError) as e:
        print(f"refdenoiser: error: {e}", file=sys.stderr)
        return 1
    if config.tcp_port is not None:
        serve_tcp(config)
    else:
        serve_stdio(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())

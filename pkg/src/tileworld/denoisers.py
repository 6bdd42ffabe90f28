"""Velocity-field contract and built-in analytic implementations.

All built-ins adopt the linear interpolation path x_t = (1 - t) * x0 + t * eps,
so a point target mu has the closed-form field v = (x - mu) / t and Euler
integration reaches mu exactly at t = 0.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ConditionError, NonFiniteError, ShapeError

Coord = tuple[int, int, int]

UNCONDITIONAL = ""


@dataclass
class DenoiserRequest:
    values: np.ndarray  # (S, S, S, C)
    t: float
    condition: str = UNCONDITIONAL
    origin: Coord = (0, 0, 0)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[3]


@dataclass(frozen=True)
class DenoiserCapabilities:
    max_size: int | None = None  # None: any tile size
    pointwise: bool = False
    deterministic: bool = True


class Denoiser:
    """Base class: call counting plus contract checks around `_velocity`."""

    capabilities = DenoiserCapabilities()

    def __init__(self):
        self.call_count = 0

    def velocity(self, request: DenoiserRequest) -> np.ndarray:
        caps = self.capabilities
        if caps.max_size is not None and request.size > caps.max_size:
            raise CapabilityError(
                f"denoiser supports tiles up to {caps.max_size}, got {request.size}"
            )
        if request.t <= 0:
            raise ShapeError(f"velocity requested at t={request.t}; t must be > 0")
        self.call_count += 1
        out = np.asarray(self._velocity(request), dtype=np.float64)
        if out.shape != request.values.shape:
            raise ShapeError(
                f"denoiser returned shape {out.shape}, expected {request.values.shape}"
            )
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(
                f"non-finite velocity from tile at origin {request.origin}, t={request.t}"
            )
        return out

    def _velocity(self, request: DenoiserRequest) -> np.ndarray:
        raise NotImplementedError


def _lookup(table: dict, condition: str, default):
    if condition in table:
        return table[condition]
    if default is not None:
        return default
    known = sorted(table)
    raise ConditionError(f"unknown condition {condition!r}; known: {known}")


class PointTargetDenoiser(Denoiser):
    """v = (x - mu) / t with mu chosen per condition string."""

    capabilities = DenoiserCapabilities(max_size=None, pointwise=True, deterministic=True)

    def __init__(self, targets: dict[str, float] | None = None, default: float | None = None):
        super().__init__()
        self.targets = dict(targets or {})
        self.default = default

    def _velocity(self, req: DenoiserRequest) -> np.ndarray:
        mu = _lookup(self.targets, req.condition, self.default)
        return (req.values - mu) / req.t


class MixtureDenoiser(Denoiser):
    """Marginal velocity of a mixture of point targets under the linear path.

    Posterior over components k, given the whole tile vector x:
        w_k(x, t) proportional to pi_k * exp(-|x - (1 - t) * mu_k|^2 / (2 t^2))
    then v = (x - sum_k w_k * mu_k) / t.  Not pointwise: the posterior couples
    every voxel in the tile.
    """

    capabilities = DenoiserCapabilities(max_size=None, pointwise=False, deterministic=True)

    # below this log-density, every component underflows a direct float64
    # density evaluation and we fall back to nearest-component weights
    _UNDERFLOW_LOG = -745.0

    def __init__(self, components: list[tuple[float, float | np.ndarray]]):
        super().__init__()
        if not components:
            raise ShapeError("mixture needs at least one component")
        pis = np.array([p for p, _ in components], dtype=np.float64)
        if abs(pis.sum() - 1.0) > 1e-9:
            raise ShapeError(f"mixture weights sum to {pis.sum()}, expected 1")
        self.pis = pis
        self.mus = [np.asarray(m, dtype=np.float64) for _, m in components]
        self.last_fallback = False

    def posterior(self, values: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64)
        logw = np.empty(len(self.mus))
        for k, mu in enumerate(self.mus):
            d = x - (1.0 - t) * mu
            logw[k] = np.log(self.pis[k]) - float(np.sum(d * d)) / (2.0 * t * t)
        self.last_fallback = bool(np.max(logw) < self._UNDERFLOW_LOG)
        if self.last_fallback:
            w = np.zeros_like(logw)
            w[int(np.argmax(logw))] = 1.0
            return w
        w = np.exp(logw - np.max(logw))
        return w / w.sum()

    def _velocity(self, req: DenoiserRequest) -> np.ndarray:
        w = self.posterior(req.values, req.t)
        mu_bar = np.zeros_like(req.values, dtype=np.float64)
        for wk, mu in zip(w, self.mus):
            mu_bar += wk * mu
        return (req.values - mu_bar) / req.t


def constant_pattern(value: float):
    def pattern(size: int, channels: int) -> np.ndarray:
        return np.full((size, size, size, channels), value, dtype=np.float64)

    return pattern


def border_pattern(base: float = 0.0, lift: float = 1.0, width: int = 1):
    """Elevated target within `width` voxels of any tile face.

    Reproduces the wall-at-tile-borders failure mode a tile-level generator
    exhibits when fused without blending.
    """

    def pattern(size: int, channels: int) -> np.ndarray:
        d = np.arange(size)
        near = (d < width) | (d >= size - width)
        edge = near[:, None, None] | near[None, :, None] | near[None, None, :]
        out = np.full((size, size, size), base, dtype=np.float64)
        out[edge] = base + lift
        return np.repeat(out[..., None], channels, axis=-1)

    return pattern


class PatternDenoiser(Denoiser):
    """v = (x - mu_p(local)) / t with a per-condition spatial target pattern."""

    capabilities = DenoiserCapabilities(max_size=None, pointwise=False, deterministic=True)

    def __init__(self, patterns: dict[str, object], default=None):
        super().__init__()
        self.patterns = dict(patterns)
        self.default = default

    def _velocity(self, req: DenoiserRequest) -> np.ndarray:
        pattern = _lookup(self.patterns, req.condition, self.default)
        mu = pattern(req.size, req.channels)
        return (req.values - mu) / req.t


def request_digest(req: DenoiserRequest) -> str:
    h = hashlib.sha256()
    h.update(np.float64(req.t).tobytes())
    h.update(req.condition.encode())
    h.update(np.asarray(req.values, dtype="<f8").tobytes())
    return h.hexdigest()


class RecordingDenoiser(Denoiser):
    """Wraps another denoiser and records (request digest -> response)."""

    def __init__(self, inner: Denoiser):
        super().__init__()
        self.inner = inner
        self.capabilities = inner.capabilities
        self.table: dict[str, np.ndarray] = {}

    def _velocity(self, req: DenoiserRequest) -> np.ndarray:
        out = self.inner.velocity(req)
        self.table[request_digest(req)] = out.copy()
        return out


class ReplayDenoiser(Denoiser):
    """Replays a stored request-digest -> response table."""

    def __init__(self, table: dict[str, np.ndarray], capabilities=None):
        super().__init__()
        self.table = dict(table)
        if capabilities is not None:
            self.capabilities = capabilities

    def _velocity(self, req: DenoiserRequest) -> np.ndarray:
        key = request_digest(req)
        if key not in self.table:
            raise ConditionError(f"no recorded response for request digest {key[:12]}")
        return self.table[key]

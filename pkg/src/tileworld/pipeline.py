"""Two-stage generation: dense structure stage, occupancy thresholding,
sparse latent stage, and tiled decoding with blending disabled.

The structure decoder here is a deliberately toy per-voxel affine map with
nearest-neighbor upsampling; it preserves the shape contract (latent dims ->
latent dims * factor occupancy) without any learned weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .denoisers import Denoiser
from .errors import FormatError, ShapeError
from .grid import DenseWorld, SparseWorld
from .noise import TAG_SPARSE, counter_normal
from .prompts import PromptGrid
from .sampler import GuidanceConfig, RunConfig, Schedule, run_diffusion, run_sparse_diffusion
from .tiling import decode_layout

Coord = tuple[int, int, int]


def threshold_occupancy(occupancy: DenseWorld) -> np.ndarray:
    """(N, 3) coordinates where the occupancy value strictly exceeds zero."""
    if occupancy.channels != 1:
        raise ShapeError(f"occupancy grid must have 1 channel, got {occupancy.channels}")
    return np.argwhere(occupancy.data[..., 0] > 0.0).astype(np.int64)


def noise_occupied(coords: np.ndarray, dims: Coord, channels: int, seed: int) -> SparseWorld:
    """Standard normal C-vectors on the given coordinates, counter-keyed."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(coords) == 0:
        return SparseWorld.empty(dims, channels)
    c = np.arange(channels, dtype=np.uint64)[None, :]
    vals = counter_normal(
        seed,
        coords[:, 0:1].astype(np.uint64),
        coords[:, 1:2].astype(np.uint64),
        coords[:, 2:3].astype(np.uint64),
        c,
        tag=TAG_SPARSE,
    )
    return SparseWorld(dims, channels, coords, vals.astype(np.float32))


class Decoder:
    """Per-tile decoder contract: a pure function of the tile's values."""

    channels_out: int
    probabilistic = False

    def decode(self, values: np.ndarray, origin: Coord) -> np.ndarray:
        raise NotImplementedError


class IdentityDecoder(Decoder):
    def __init__(self, channels: int):
        self.channels_out = channels

    def decode(self, values, origin):
        return values


class LinearDecoder(Decoder):
    """Fixed per-voxel matrix map C -> C_out (pointwise)."""

    def __init__(self, matrix: np.ndarray, bias=0.0):
        self.matrix = np.asarray(matrix, dtype=np.float32)
        self.bias = np.float32(bias)
        self.channels_out = self.matrix.shape[1]

    def decode(self, values, origin):
        return values @ self.matrix + self.bias


class TileShadeDecoder(Decoder):
    """Adds an origin-dependent constant per tile; decoding fixture whose
    output visibly depends on the tile decomposition."""

    def __init__(self, channels: int, shade: float = 1.0):
        self.channels_out = channels
        self.shade = shade

    def decode(self, values, origin):
        k = origin[0] + origin[1] + origin[2]
        return values + np.float32(self.shade * k)


def decode_tiled(world: DenseWorld, decoder: Decoder, tile_size: int) -> DenseWorld:
    """Decode with stride = tile size (blending disabled).

    Tiles are written back in canonical order, so at clamped boundaries the
    later tile wins.
    """
    if decoder.probabilistic:
        raise ShapeError("tiled decode requires a non-probabilistic decoder")
    layout = decode_layout(world.dims, tile_size)
    out = np.zeros((*world.dims, decoder.channels_out), dtype=np.float32)
    S = tile_size
    for origin in layout.origins:
        sl = tuple(slice(o, o + S) for o in origin)
        decoded = np.asarray(decoder.decode(world.data[sl], origin), dtype=np.float32)
        if decoded.shape != (S, S, S, decoder.channels_out):
            raise ShapeError(
                f"decoder returned {decoded.shape}, expected {(S, S, S, decoder.channels_out)}"
            )
        out[sl] = decoded
    return DenseWorld(out)


def upsample_nearest(world: DenseWorld, factor: int) -> DenseWorld:
    data = world.data
    for axis in range(3):
        data = np.repeat(data, factor, axis=axis)
    return DenseWorld(data)


def toy_structure_decode(latent: DenseWorld, factor: int = 4, scale: float = 1.0, bias: float = 0.0) -> DenseWorld:
    """Latent -> occupancy: per-voxel affine on the channel mean, then
    nearest-neighbor upsampling by `factor`."""
    occ = scale * latent.data.mean(axis=-1, keepdims=True) + bias
    return upsample_nearest(DenseWorld(occ.astype(np.float32)), factor)


@dataclass
class StageConfig:
    latent_dims: Coord
    latent_channels: int
    tile_size: int
    stride: int | None = None
    upsample: int = 4
    sparse_channels: int = 4
    sparse_tile_size: int | None = None  # default: tile_size * upsample
    sparse_stride: int | None = None
    structure_scale: float = 1.0
    structure_bias: float = 0.0

    def occupancy_dims(self) -> Coord:
        return tuple(d * self.upsample for d in self.latent_dims)


@dataclass
class TwoStageResult:
    latent: DenseWorld
    occupancy: DenseWorld
    sparse: SparseWorld
    decoded: DenseWorld | None


def run_two_stage(
    stage: StageConfig,
    denoiser_structure: Denoiser,
    denoiser_sparse: Denoiser,
    seed: int = 0,
    schedule: Schedule | None = None,
    guidance: GuidanceConfig | None = None,
    prompts: PromptGrid | str = "",
    decoder: Decoder | None = None,
    threads: int = 1,
    progress: bool = True,
) -> TwoStageResult:
    """Dense structure diffusion -> occupancy threshold -> sparse diffusion
    -> tiled decode (stride = tile size)."""
    schedule = schedule or Schedule.uniform()
    guidance = guidance or GuidanceConfig()
    cfg1 = RunConfig(
        dims=stage.latent_dims,
        channels=stage.latent_channels,
        tile_size=stage.tile_size,
        stride=stage.stride,
        seed=seed,
        schedule=schedule,
        guidance=guidance,
        prompts=prompts,
        denoiser=denoiser_structure,
        threads=threads,
    )
    latent = run_diffusion(cfg1, progress=progress)
    occupancy = toy_structure_decode(
        latent, stage.upsample, stage.structure_scale, stage.structure_bias
    )
    coords = threshold_occupancy(occupancy)
    if len(coords) == 0:
        warnings.warn("occupancy threshold produced an empty scene", stacklevel=2)
        empty = SparseWorld.empty(occupancy.dims, stage.sparse_channels)
        return TwoStageResult(latent, occupancy, empty, None)
    sparse = noise_occupied(coords, occupancy.dims, stage.sparse_channels, seed)
    S2 = stage.sparse_tile_size or stage.tile_size * stage.upsample
    cfg2 = RunConfig(
        dims=occupancy.dims,
        channels=stage.sparse_channels,
        tile_size=S2,
        stride=stage.sparse_stride,
        seed=seed,
        schedule=schedule,
        guidance=guidance,
        prompts=prompts if isinstance(prompts, str) else prompts,
        denoiser=denoiser_sparse,
        threads=threads,
    )
    sparse = run_sparse_diffusion(cfg2, sparse, progress=progress)
    decoded = None
    if decoder is not None:
        from .grid import densify

        decoded = decode_tiled(densify(sparse), decoder, S2)
    return TwoStageResult(latent, occupancy, sparse, decoded)


def export_pointcloud(path, decoded: DenseWorld, threshold: float, tile_size: int | None = None) -> int:
    """Write voxels above `threshold` as a binary little-endian PLY.

    Position is the voxel center scaled so one tile spans a unit cube; the
    first three channels are written as float red/green/blue.  Returns the
    point count.
    """
    if decoded.channels < 3:
        raise ShapeError(f"point-cloud export needs >= 3 channels, got {decoded.channels}")
    scale = 1.0 / float(tile_size) if tile_size else 1.0
    keep = decoded.data.max(axis=-1) > threshold
    coords = np.argwhere(keep)
    pts = np.empty((len(coords), 6), dtype="<f4")
    pts[:, 0:3] = (coords + 0.5) * scale
    pts[:, 3:6] = decoded.data[keep][:, :3]
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float red\nproperty float green\nproperty float blue\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(pts.tobytes(order="C"))
    return len(pts)


def parse_pointcloud(path) -> np.ndarray:
    """Read back a PLY written by export_pointcloud; returns (N, 6) float32."""
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a point-cloud file")
    header = raw[:end].decode("ascii").splitlines()
    count = None
    fields = []
    for line in header:
        if line.startswith("element vertex "):
            count = int(line.split()[-1])
        elif line.startswith("property float "):
            fields.append(line.split()[-1])
    if count is None or fields != ["x", "y", "z", "red", "green", "blue"]:
        raise FormatError(f"{path}: unexpected header {header}")
    body = raw[end + len(b"end_header\n"):]
    pts = np.frombuffer(body, dtype="<f4")
    if pts.size != count * 6:
        raise FormatError(f"{path}: payload has {pts.size} floats, expected {count * 6}")
    return pts.reshape(count, 6).copy()

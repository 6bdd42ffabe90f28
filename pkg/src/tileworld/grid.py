"""Dense and sparse 3D lattices, tile extraction, and scatter-accumulate.

The canonical linearization is x-major, then y, then z, then channel, which
is exactly C-order ravel of an (X, Y, Z, C) array.  All accumulation,
serialization, and determinism guarantees are stated in that order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, FormatError, ShapeError

_MAGIC = b"TWLD"
_VERSION = 1

Coord = tuple[int, int, int]


@dataclass
class DenseWorld:
    """An X*Y*Z lattice of C-channel float32 voxels."""

    data: np.ndarray  # (X, Y, Z, C) float32

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ShapeError(f"world data must be (X, Y, Z, C), got shape {self.data.shape}")

    @property
    def dims(self) -> Coord:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @classmethod
    def zeros(cls, dims: Coord, channels: int) -> "DenseWorld":
        return cls(np.zeros((*dims, channels), dtype=np.float32))

    @classmethod
    def full(cls, dims: Coord, channels: int, value: float) -> "DenseWorld":
        return cls(np.full((*dims, channels), value, dtype=np.float32))

    def copy(self) -> "DenseWorld":
        return DenseWorld(self.data.copy())


@dataclass
class TileView:
    """A copied S^3 cube of world values; mutating it never touches the world."""

    origin: Coord
    size: int
    values: np.ndarray  # (S, S, S, C)


def _linear_index(coords: np.ndarray, dims: Coord) -> np.ndarray:
    X, Y, Z = dims
    return (coords[:, 0] * Y + coords[:, 1]) * Z + coords[:, 2]


@dataclass
class SparseWorld:
    """Occupied voxel coordinates with a C-vector each, sorted canonically."""

    dims: Coord
    channels: int
    coords: np.ndarray  # (N, 3) int64, unique, sorted by linear index
    values: np.ndarray  # (N, C) float32

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.int64).reshape(-1, 3)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1, self.channels)
        if len(self.coords) != len(self.values):
            raise ShapeError("coords and values disagree in length")
        if len(self.coords):
            if self.coords.min() < 0 or np.any(self.coords >= np.asarray(self.dims)):
                raise BoundsError("sparse coordinate outside world dims")
            lin = _linear_index(self.coords, self.dims)
            order = np.argsort(lin, kind="stable")
            lin = lin[order]
            if np.any(np.diff(lin) == 0):
                raise ShapeError("duplicate sparse coordinates")
            self.coords = self.coords[order]
            self.values = self.values[order]

    def __len__(self) -> int:
        return len(self.coords)

    @classmethod
    def empty(cls, dims: Coord, channels: int) -> "SparseWorld":
        return cls(dims, channels, np.zeros((0, 3), np.int64), np.zeros((0, channels), np.float32))


def map_global_to_local(g: Coord, origin: Coord) -> Coord:
    """Componentwise g - origin; inside {0..S-1}^3 iff the tile covers g."""
    return (g[0] - origin[0], g[1] - origin[1], g[2] - origin[2])


def local_in_tile(local: Coord, size: int) -> bool:
    return all(0 <= d < size for d in local)


def _check_tile_bounds(dims: Coord, origin: Coord, size: int) -> None:
    for axis, name in enumerate("xyz"):
        if origin[axis] < 0 or origin[axis] + size > dims[axis]:
            raise BoundsError(
                f"tile origin {origin} with size {size} exceeds world "
                f"dim {dims[axis]} on axis {name}"
            )


def _tile_slices(origin: Coord, size: int) -> tuple[slice, slice, slice]:
    return tuple(slice(o, o + size) for o in origin)


def extract_tile(world: DenseWorld, origin: Coord, size: int) -> TileView:
    """Copy out the S^3 cube at `origin`."""
    _check_tile_bounds(world.dims, origin, size)
    return TileView(tuple(origin), size, world.data[_tile_slices(origin, size)].copy())


def scatter_accumulate(
    acc_num: np.ndarray,  # (X, Y, Z, C) float64
    acc_den: np.ndarray,  # (X, Y, Z) float64
    tile_values: np.ndarray,  # (S, S, S, C)
    mask_weights: np.ndarray,  # (S, S, S)
    origin: Coord,
) -> None:
    """Add one tile's weighted values into the numerator/denominator lattices."""
    S = mask_weights.shape[0]
    if mask_weights.shape != (S, S, S):
        raise ShapeError(f"mask must be cubic, got {mask_weights.shape}")
    if tile_values.shape[:3] != (S, S, S):
        raise ShapeError(
            f"tile values {tile_values.shape[:3]} do not match mask side {S}"
        )
    _check_tile_bounds(acc_den.shape, origin, S)
    sl = _tile_slices(origin, S)
    acc_num[sl] += mask_weights[..., None] * tile_values
    acc_den[sl] += mask_weights


def sparse_extract_tile(
    sparse: SparseWorld, origin: Coord, size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Occupied voxels inside the tile: (local coords, values, entry indices).

    Order of entries is preserved (canonical).
    """
    _check_tile_bounds(sparse.dims, origin, size)
    o = np.asarray(origin, dtype=np.int64)
    local = sparse.coords - o
    inside = np.all((local >= 0) & (local < size), axis=1)
    idx = np.nonzero(inside)[0]
    return local[idx], sparse.values[idx], idx


def densify(sparse: SparseWorld, fill: float = 0.0) -> DenseWorld:
    data = np.full((*sparse.dims, sparse.channels), fill, dtype=np.float32)
    if len(sparse):
        data[sparse.coords[:, 0], sparse.coords[:, 1], sparse.coords[:, 2]] = sparse.values
    return DenseWorld(data)


def sparsify(world: DenseWorld, threshold: float) -> SparseWorld:
    """Keep voxels whose maximum channel value exceeds `threshold` (strict)."""
    keep = world.data.max(axis=-1) > threshold
    coords = np.argwhere(keep).astype(np.int64)
    values = world.data[keep]
    return SparseWorld(world.dims, world.channels, coords, values)


def save_world(path, world: DenseWorld | SparseWorld) -> None:
    """Write the TWLD container (little-endian, bitwise round-trip)."""
    with open(path, "wb") as f:
        if isinstance(world, DenseWorld):
            dims, channels, flag = world.dims, world.channels, 0
        else:
            dims, channels, flag = world.dims, world.channels, 1
        f.write(_MAGIC)
        f.write(struct.pack("<H3IIB", _VERSION, *dims, channels, flag))
        if flag == 0:
            f.write(world.data.astype("<f4", copy=False).tobytes(order="C"))
        else:
            f.write(struct.pack("<Q", len(world)))
            for coord, vec in zip(world.coords, world.values):
                f.write(struct.pack("<3I", *(int(v) for v in coord)))
                f.write(vec.astype("<f4", copy=False).tobytes())


def load_world(path) -> DenseWorld | SparseWorld:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, X, Y, Z, C, flag = struct.unpack_from("<H3IIB", raw, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    off = 4 + struct.calcsize("<H3IIB")
    if flag == 0:
        n = X * Y * Z * C
        data = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
        if data.size != n:
            raise FormatError(f"{path}: truncated dense payload")
        return DenseWorld(data.reshape(X, Y, Z, C).copy())
    if flag != 1:
        raise FormatError(f"{path}: unknown flag {flag}")
    (count,) = struct.unpack_from("<Q", raw, off)
    off += 8
    entry = np.dtype([("coord", "<u4", 3), ("vec", "<f4", C)])
    entries = np.frombuffer(raw, dtype=entry, count=count, offset=off)
    if entries.size != count:
        raise FormatError(f"{path}: truncated sparse payload")
    return SparseWorld(
        (X, Y, Z), C, entries["coord"].astype(np.int64).reshape(-1, 3),
        entries["vec"].reshape(-1, C).copy(),
    )

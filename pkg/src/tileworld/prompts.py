"""Area-specific 3D prompt grids and tile-to-condition assignment.

The prompt file is a 3-level nested array of double-quoted strings:
grid[x][y][z].  A flat scene therefore has singleton innermost lists, one
string per ground cell; a full 3D grid lists one string per z cell.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass

from .errors import BoundsError, FormatError

Coord = tuple[int, int, int]


@dataclass(frozen=True)
class PromptGrid:
    shape: Coord  # (Px, Py, Pz) cells
    cells: tuple[str, ...]  # x-major flattening, length Px*Py*Pz
    cell_size: int | None = None  # voxels per cell edge; None: use the tile size

    def cell(self, ix: int, iy: int, iz: int) -> str:
        px, py, pz = self.shape
        return self.cells[(ix * py + iy) * pz + iz]


def parse_prompt_grid(text: str, cell_size: int | None = None) -> PromptGrid:
    """Parse the nested-array prompt format; ragged input is rejected."""
    body = text.strip()
    # tolerate the "name = [...]" form the format is usually written in
    if "=" in body.split("[", 1)[0]:
        body = body.split("=", 1)[1]
    try:
        obj = ast.literal_eval(body)
    except (ValueError, SyntaxError) as e:
        raise FormatError(f"prompt grid: malformed syntax: {e}") from None
    if not isinstance(obj, list) or not obj:
        raise FormatError("prompt grid: top level must be a non-empty array")
    px = len(obj)
    py = pz = None
    cells: list[str] = []
    for ix, plane in enumerate(obj):
        if not isinstance(plane, list) or not plane:
            raise FormatError(f"prompt grid: element [{ix}] must be a non-empty array")
        if py is None:
            py = len(plane)
        elif len(plane) != py:
            raise FormatError(f"prompt grid: ragged y length at [{ix}]: {len(plane)} != {py}")
        for iy, row in enumerate(plane):
            if not isinstance(row, list) or not row:
                raise FormatError(f"prompt grid: element [{ix}][{iy}] must be a non-empty array")
            if pz is None:
                pz = len(row)
            elif len(row) != pz:
                raise FormatError(
                    f"prompt grid: ragged z length at [{ix}][{iy}]: {len(row)} != {pz}"
                )
            for iz, cell in enumerate(row):
                if not isinstance(cell, str) or not cell:
                    raise FormatError(
                        f"prompt grid: element [{ix}][{iy}][{iz}] must be a non-empty string"
                    )
                cells.append(cell)
    return PromptGrid((px, py, pz), tuple(cells), cell_size)


def load_prompt_grid(path, cell_size: int | None = None) -> PromptGrid:
    with open(path, encoding="utf-8") as f:
        return parse_prompt_grid(f.read(), cell_size)


def uniform_grid(condition: str) -> PromptGrid:
    # one cell large enough to cover any world
    return PromptGrid((1, 1, 1), (condition,), cell_size=2**62)


def condition_for_tile(grid: PromptGrid, origin: Coord, tile_size: int) -> str:
    """Condition of the cell containing the tile's center voxel."""
    cell = grid.cell_size or tile_size
    idx = []
    for axis in range(3):
        center = origin[axis] + tile_size // 2
        i = center // cell
        if i < 0 or i >= grid.shape[axis]:
            raise BoundsError(
                f"tile at {origin} centers outside the prompt grid on axis "
                f"{'xyz'[axis]} (cell {i} of {grid.shape[axis]})"
            )
        idx.append(i)
    return grid.cell(*idx)

"""Slow reference persistence for small frames.

Builds every elementary cube of the T-construction, reduces the Z2 boundary
matrix column by column and reads off the pairs. Columns are Python ints used
as bitsets. Nothing here is shared with :mod:`cubetop.cubical`.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from cubetop.cubical import PersistenceDiagram

MAX_SIDE = 32


class CubeComplex:
    """All elementary cubes of an ``height x width`` frame with filtration values.

    Cubes are keyed by doubled coordinates ``(r, c)`` in the grid
    ``[0, 2*height] x [0, 2*width]``: both even is a vertex, one odd an edge,
    both odd the pixel ``((r-1)/2, (c-1)/2)``.
    """

    def __init__(self, frame: np.ndarray):
        frame = np.asarray(frame, dtype=np.float64)
        height, width = frame.shape
        if height > MAX_SIDE or width > MAX_SIDE:
            raise ValueError(f"oracle limited to {MAX_SIDE}x{MAX_SIDE} frames")
        self.frame = frame
        self.cells: list[tuple[int, int]] = []
        self.dims: list[int] = []
        self.values: list[float] = []
        for r in range(2 * height + 1):
            for c in range(2 * width + 1):
                self.cells.append((r, c))
                self.dims.append((r % 2) + (c % 2))
                self.values.append(self._value(r, c))

    def _value(self, r: int, c: int) -> float:
        height, width = self.frame.shape
        rows = [r // 2] if r % 2 else [r // 2 - 1, r // 2]
        cols = [c // 2] if c % 2 else [c // 2 - 1, c // 2]
        vals = [
            self.frame[i, j]
            for i in rows
            for j in cols
            if 0 <= i < height and 0 <= j < width
        ]
        return min(vals)

    @staticmethod
    def faces(cell: tuple[int, int]) -> list[tuple[int, int]]:
        r, c = cell
        out = []
        if r % 2:
            out += [(r - 1, c), (r + 1, c)]
        if c % 2:
            out += [(r, c - 1), (r, c + 1)]
        return out


def reduce(frame_or_complex) -> PersistenceDiagram:
    """Persistence pairs of dims 0 and 1 by standard column reduction.

    Cells are ordered by ``(value, dimension, id)``. Only pairs with positive
    persistence are reported, plus the essential classes.
    """
    cx = frame_or_complex if isinstance(frame_or_complex, CubeComplex) else CubeComplex(frame_or_complex)
    n = len(cx.cells)
    order = sorted(range(n), key=lambda i: (cx.values[i], cx.dims[i], i))
    position = {cx.cells[i]: k for k, i in enumerate(order)}
    pivot_of_low: dict[int, int] = {}
    columns: list[int] = [0] * n
    paired = [False] * n
    births: list[float] = []
    deaths: list[float] = []
    dims: list[int] = []
    for k, i in enumerate(order):
        col = 0
        for face in cx.faces(cx.cells[i]):
            col ^= 1 << position[face]
        while col:
            low = col.bit_length() - 1
            other = pivot_of_low.get(low)
            if other is None:
                break
            col ^= columns[other]
        columns[k] = col
        if col:
            low = col.bit_length() - 1
            pivot_of_low[low] = k
            paired[low] = paired[k] = True
            b = cx.values[order[low]]
            d = cx.values[i]
            if d > b:
                births.append(b)
                deaths.append(d)
                dims.append(cx.dims[order[low]])
    for k, i in enumerate(order):
        if not paired[k] and cx.dims[i] < 2:
            births.append(cx.values[i])
            deaths.append(np.inf)
            dims.append(cx.dims[i])
    m = len(births)
    return PersistenceDiagram(
        np.array(dims, np.int8),
        np.array(births, np.float64),
        np.array(deaths, np.float64),
        np.full(m, -1, np.int64),
        np.full(m, -1, np.int64),
        np.full((m, 2), -1, np.int64),
        cx.frame.shape,
        {"source": "oracle"},
    )


def _count_components(mask: np.ndarray, steps: list[tuple[int, int]], skip_edge: bool) -> int:
    height, width = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for y0 in range(height):
        for x0 in range(width):
            if not mask[y0, x0] or seen[y0, x0]:
                continue
            seen[y0, x0] = True
            queue = deque([(y0, x0)])
            touches_edge = False
            while queue:
                y, x = queue.popleft()
                if y in (0, height - 1) or x in (0, width - 1):
                    touches_edge = True
                for dy, dx in steps:
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < height and 0 <= xx < width and mask[yy, xx] and not seen[yy, xx]:
                        seen[yy, xx] = True
                        queue.append((yy, xx))
            if not (skip_edge and touches_edge):
                count += 1
    return count


_KING = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
_ROOK = [(-1, 0), (1, 0), (0, -1), (0, 1)]


def betti_at(frame: np.ndarray, t: float) -> tuple[int, int]:
    """Betti numbers of ``{I <= t}`` by flood fill.

    b0 counts 8-connected dark components; b1 counts 4-connected bright
    components of ``{I > t}`` that do not touch the frame edge.
    """
    frame = np.asarray(frame)
    dark = frame <= t
    b0 = _count_components(dark, _KING, skip_edge=False)
    b1 = _count_components(~dark, _ROOK, skip_edge=True)
    return b0, b1

"""Box domains, tensor-product grids and constrained degree-of-freedom spaces.

Nodes are numbered lexicographically with x fastest:
``node = i + nx * (j + ny * k)`` where ``nx, ny, nz`` are node counts.
Vector unknowns are numbered node-major, ``3 * node + component``, before
boundary constraints are removed.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

CONSTRAINED = -1


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``origin + [0, lengths]``."""

    origin: tuple[float, float, float]
    lengths: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        if len(self.origin) != 3 or len(self.lengths) != 3:
            raise ValueError("origin and lengths must be 3-vectors")
        if any(not np.isfinite(v) or v <= 0.0 for v in self.lengths):
            raise ValueError(f"box side lengths must be positive, got {self.lengths}")

    @classmethod
    def cube(cls, side: float = np.pi) -> "BoxDomain":
        return cls((0.0, 0.0, 0.0), (side, side, side))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))


@dataclass(frozen=True)
class Grid:
    domain: BoxDomain
    cells: tuple[int, int, int]

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        if len(cells) != 3:
            raise ValueError("cells_per_axis must have 3 entries")
        if any(c < 2 for c in cells):
            raise ValueError(f"need at least 2 cells per axis, got {cells}")
        object.__setattr__(self, "cells", cells)

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.domain.lengths) / np.asarray(self.cells)

    @property
    def node_shape(self) -> tuple[int, int, int]:
        return tuple(c + 1 for c in self.cells)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        o = self.domain.origin[axis]
        return o + self.spacing[axis] * np.arange(self.cells[axis] + 1)

    def node_coords(self) -> np.ndarray:
        """(n_nodes, 3) coordinates in lexicographic order."""
        x, y, z = (self.axis_coords(a) for a in range(3))
        Z, Y, X = np.meshgrid(z, y, x, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def node_ijk(self) -> np.ndarray:
        nx, ny, nz = self.node_shape
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        return np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)

    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 8) node ids; local node ``a + 2b + 4c`` sits at offset (a, b, c)."""
        nx, ny, _ = self.node_shape
        cx, cy, cz = self.cells
        k, j, i = np.meshgrid(np.arange(cz), np.arange(cy), np.arange(cx), indexing="ij")
        base = (i + nx * (j + ny * k)).ravel()
        offsets = np.array(
            [a + nx * (b + ny * c) for c in (0, 1) for b in (0, 1) for a in (0, 1)]
        )
        return base[:, None] + offsets[None, :]

    def locate(self, point) -> tuple[tuple[int, int, int], np.ndarray]:
        """Owning cell and local coordinates in [0, 1]^3 of a point.

        Points on an inter-cell face belong to the lower-index cell; points on
        the upper domain boundary belong to the last cell.
        """
        p = np.asarray(point, dtype=float)
        rel = (p - np.asarray(self.domain.origin)) / self.spacing
        tol = 1e-12 * np.asarray(self.cells)
        if np.any(rel < -tol) or np.any(rel > np.asarray(self.cells) + tol):
            raise ValueError(f"point {p} lies outside the domain")
        idx = np.ceil(rel) - 1
        idx = np.clip(idx, 0, np.asarray(self.cells) - 1).astype(int)
        local = np.clip(rel - idx, 0.0, 1.0)
        return tuple(int(v) for v in idx), local

    def to_json(self) -> dict:
        return {
            "origin": list(self.domain.origin),
            "lengths": list(self.domain.lengths),
            "cells": list(self.cells),
        }

    @classmethod
    def from_json(cls, obj) -> "Grid":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return build_grid(BoxDomain(obj["origin"], obj["lengths"]), obj["cells"])


def build_grid(domain: BoxDomain, cells_per_axis) -> Grid:
    return Grid(domain, tuple(cells_per_axis))


class DofKind(enum.Enum):
    VECTOR_TANGENTIAL_ZERO = "vector"
    SCALAR_DIRICHLET = "scalar"


@dataclass(frozen=True, eq=False)
class DofSpace:
    """Free unknowns of a nodal field after imposing the boundary condition.

    ``free_index`` maps every node-component (or node, for scalars) to its
    contiguous free index or ``CONSTRAINED``; ``free`` is the inverse map.
    """

    kind: DofKind
    grid: Grid
    free_index: np.ndarray = field(repr=False)
    free: np.ndarray = field(repr=False)

    @property
    def n_free(self) -> int:
        return int(self.free.size)

    @property
    def components(self) -> int:
        return 3 if self.kind is DofKind.VECTOR_TANGENTIAL_ZERO else 1

    def expand(self, coeffs: np.ndarray) -> np.ndarray:
        """Free coefficients -> nodal array of shape (n_nodes, 3) or (n_nodes,)."""
        coeffs = np.asarray(coeffs)
        full = np.zeros(self.grid.n_nodes * self.components, dtype=coeffs.dtype)
        full[self.free] = coeffs
        if self.components == 3:
            return full.reshape(-1, 3)
        return full

    def restrict(self, nodal: np.ndarray) -> np.ndarray:
        """Nodal values -> free coefficients (constrained entries dropped)."""
        return np.asarray(nodal).reshape(-1)[self.free]


def _boundary_mask(grid: Grid) -> np.ndarray:
    """(n_nodes, 3) bool: node lies on the min/max face normal to each axis."""
    ijk = grid.node_ijk()
    return (ijk == 0) | (ijk == np.asarray(grid.cells))


def build_dof_space(grid: Grid, kind: DofKind) -> DofSpace:
    on_face = _boundary_mask(grid)
    if kind is DofKind.SCALAR_DIRICHLET:
        is_free = ~on_face.any(axis=1)
    elif kind is DofKind.VECTOR_TANGENTIAL_ZERO:
        # component c is tangential to every face whose normal axis differs from c
        is_free = np.empty((grid.n_nodes, 3), dtype=bool)
        for c in range(3):
            others = [a for a in range(3) if a != c]
            is_free[:, c] = ~on_face[:, others].any(axis=1)
        is_free = is_free.ravel()
    else:
        raise ValueError(f"unknown dof kind {kind!r}")
    free = np.flatnonzero(is_free)
    free_index = np.full(is_free.size, CONSTRAINED, dtype=np.int64)
    free_index[free] = np.arange(free.size)
    return DofSpace(kind, grid, free_index, free)

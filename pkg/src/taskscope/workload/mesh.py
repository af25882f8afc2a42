"""Octree of Cartesian sub-grids with face-neighbor links and ownership."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

# face directions: -x, +x, -y, +y, -z, +z; the opposite face is d ^ 1
DIRECTIONS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))

Key = tuple[int, int, int, int]  # (level, ix, iy, iz)


def opposite(direction: int) -> int:
    return direction ^ 1


def cell_values(grid_id: int, version: int, N: int) -> np.ndarray:
    """Stand-in cell state: a pure function of sub-grid and update count."""
    base = float(grid_id) * 1.0e6 + float(version) * 1.0e3
    return (base + np.arange(N ** 3, dtype=np.float64) * 0.5).reshape(N, N, N)


def face_of(cells: np.ndarray, direction: int) -> np.ndarray:
    """Boundary layer of ``cells`` on the given face, as a contiguous copy."""
    axis, side = divmod(direction, 2)
    index = [slice(None)] * 3
    index[axis] = -1 if side else 0
    return np.ascontiguousarray(cells[tuple(index)])


@dataclass
class SubGrid:
    grid_id: int
    level: int
    coords: tuple[int, int, int]
    N: int
    owner: int
    parent_id: int | None = None
    child_ids: list[int] = field(default_factory=list)
    # direction -> neighbor grid id, same level only
    neighbor_ids: dict[int, int] = field(default_factory=dict)
    cells: np.ndarray | None = None

    @property
    def refined(self) -> bool:
        return bool(self.child_ids)

    @property
    def is_root(self) -> bool:
        return self.parent_id is None and self.level == 0


@dataclass
class Mesh:
    grids: list[SubGrid]
    world_size: int

    def __len__(self) -> int:
        return len(self.grids)

    def owned(self, rank: int) -> list[SubGrid]:
        return [g for g in self.grids if g.owner == rank]

    def directed_links(self) -> list[tuple[int, int]]:
        return [(g.grid_id, n) for g in self.grids for n in g.neighbor_ids.values()]

    def undirected_pairs(self) -> list[tuple[int, int]]:
        return sorted({(min(a, b), max(a, b)) for a, b in self.directed_links()})

    def local_pairs(self) -> list[tuple[int, int]]:
        """Neighbor pairs whose two sub-grids share an owner."""
        return [(a, b) for a, b in self.undirected_pairs() if self.grids[a].owner == self.grids[b].owner]

    def has_refined_neighbor(self, g: SubGrid) -> bool:
        return any(self.grids[n].refined for n in g.neighbor_ids.values())

    def max_level(self) -> int:
        return max(g.level for g in self.grids)


def _children(key: Key) -> list[Key]:
    level, x, y, z = key
    # Morton order within the parent
    return [
        (level + 1, 2 * x + dx, 2 * y + dy, 2 * z + dz)
        for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)
    ]


def _parent(key: Key) -> Key:
    level, x, y, z = key
    return (level - 1, x // 2, y // 2, z // 2)


def _face_neighbors(key: Key):
    level, x, y, z = key
    extent = 1 << level
    for d, (dx, dy, dz) in enumerate(DIRECTIONS):
        nx, ny, nz = x + dx, y + dy, z + dz
        if 0 <= nx < extent and 0 <= ny < extent and 0 <= nz < extent:
            yield d, (level, nx, ny, nz)


def _balance(refined: set[Key]) -> None:
    """Refine until face-adjacent sub-grids differ by at most one level."""
    changed = True
    while changed:
        changed = False
        for key in sorted(refined):
            if key[0] == 0:
                continue
            # children of ``key`` sit at level+1, so every face neighbor of
            # ``key`` must exist, i.e. its parent must be refined
            for _, nb in _face_neighbors(key):
                parent = _parent(nb)
                if parent not in refined:
                    refined.add(parent)
                    changed = True


def partition(count: int, world_size: int) -> list[int]:
    """Owner of each position in a contiguous, near-equal split."""
    return [i * world_size // count for i in range(count)]


def _link(grids: list[SubGrid], index: dict[Key, int]) -> None:
    for g in grids:
        key = (g.level, *g.coords)
        for d, nb in _face_neighbors(key):
            j = index.get(nb)
            if j is not None:
                g.neighbor_ids[d] = j


def build_mesh(levels: int, world_size: int = 1, seed: int = 0,
               refine_probability: float = 0.5, N: int = 8) -> Mesh:
    """Seeded octree with ``levels`` levels, partitioned in depth-first order."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if world_size < 1:
        raise ValueError("world_size must be >= 1")
    rng = random.Random(seed)
    root: Key = (0, 0, 0, 0)
    refined: set[Key] = set()
    if levels >= 2:
        refined.add(root)
        frontier = _children(root)
        for _level in range(1, levels - 1):
            nxt = []
            for key in frontier:
                if rng.random() < refine_probability:
                    refined.add(key)
                    nxt.extend(_children(key))
            frontier = nxt
    _balance(refined)

    keys: list[Key] = []

    def visit(key: Key) -> None:
        keys.append(key)
        if key in refined:
            for child in _children(key):
                visit(child)

    visit(root)
    owners = partition(len(keys), world_size)
    index = {key: i for i, key in enumerate(keys)}
    grids = [
        SubGrid(grid_id=i, level=key[0], coords=key[1:], N=N, owner=owners[i],
                parent_id=index[_parent(key)] if key[0] else None)
        for i, key in enumerate(keys)
    ]
    for g in grids:
        if g.parent_id is not None:
            grids[g.parent_id].child_ids.append(g.grid_id)
    _link(grids, index)
    return Mesh(grids, world_size)


def line_mesh(count: int, world_size: int = 1, N: int = 8) -> Mesh:
    """``count`` sub-grids in a row along x, all at one level, split contiguously."""
    if count < 1:
        raise ValueError("count must be >= 1")
    owners = partition(count, world_size)
    grids = [SubGrid(grid_id=i, level=0, coords=(i, 0, 0), N=N, owner=owners[i]) for i in range(count)]
    for g in grids:
        if g.grid_id > 0:
            g.neighbor_ids[0] = g.grid_id - 1
        if g.grid_id < count - 1:
            g.neighbor_ids[1] = g.grid_id + 1
    return Mesh(grids, world_size)

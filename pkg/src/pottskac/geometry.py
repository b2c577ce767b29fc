"""Lattice regions, cube partitions, boundary layers and *-connectivity on Z^d."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


def sup_dist(x, y) -> int:
    """Sup-norm distance between two lattice sites."""
    return int(max(abs(int(a) - int(b)) for a, b in zip(x, y)))


@dataclass(frozen=True)
class Region:
    """Finite set of lattice sites, optionally an axis-aligned box.

    Sites are kept in lexicographic order, which for boxes is the raster order.
    """

    d: int
    sites: tuple
    origin: tuple | None = None
    sides: tuple | None = None
    _index: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not 1 <= self.d <= 3:
            raise ValueError(f"dimension must be 1..3, got {self.d}")
        if len(self.sites) == 0:
            raise ValueError("region must be nonempty")
        object.__setattr__(self, "_index", {s: n for n, s in enumerate(self.sites)})

    @classmethod
    def box(cls, origin, sides):
        origin = tuple(int(o) for o in origin)
        sides = tuple(int(s) for s in sides)
        if len(origin) != len(sides):
            raise ValueError("origin and sides differ in dimension")
        if any(s <= 0 for s in sides):
            raise ValueError("box sides must be positive")
        ranges = [range(o, o + s) for o, s in zip(origin, sides)]
        sites = tuple(itertools.product(*ranges))
        return cls(len(sides), sites, origin, sides)

    @classmethod
    def from_sites(cls, sites):
        sites = sorted({tuple(int(c) for c in s) for s in sites})
        if not sites:
            raise ValueError("region must be nonempty")
        d = len(sites[0])
        if any(len(s) != d for s in sites):
            raise ValueError("mixed dimensions in site set")
        return cls(d, tuple(sites))

    @property
    def is_box(self) -> bool:
        return self.sides is not None

    def __len__(self):
        return len(self.sites)

    def __contains__(self, x):
        return tuple(x) in self._index

    def __iter__(self):
        return iter(self.sites)

    def index(self, x) -> int:
        return self._index[tuple(x)]

    def as_array(self) -> np.ndarray:
        return np.array(self.sites, dtype=np.int64).reshape(len(self.sites), self.d)

    def bounding_box(self):
        a = self.as_array()
        lo = a.min(axis=0)
        hi = a.max(axis=0)
        return tuple(int(v) for v in lo), tuple(int(v) for v in hi - lo + 1)


@dataclass(frozen=True)
class CubePartition:
    """Tiling of Z^d by cubes of side `scale` anchored at the origin."""

    scale: int
    d: int

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("cube scale must be a positive integer")

    def cubes_of(self, region: Region) -> list:
        return sorted({cube_of(x, self) for x in region})

    def sites_of(self, corner) -> list:
        return list(itertools.product(*[range(c, c + self.scale) for c in corner]))

    def is_measurable(self, region: Region) -> bool:
        n_cubes = len(self.cubes_of(region))
        return n_cubes * self.scale**self.d == len(region)


def cube_of(x, part: CubePartition) -> tuple:
    """Corner of the cube of `part` containing site x (floor division)."""
    l = part.scale
    return tuple((int(c) // l) * l for c in x)


def _offsets(radius: int, d: int):
    return list(itertools.product(range(-radius, radius + 1), repeat=d))


def boundary_layer(B: Region, r: float, side: str = "inner") -> set:
    """Sites of B within sup-distance r of B^c (inner) or of B^c within r of B (outer)."""
    if r < 0:
        raise ValueError("layer width must be nonnegative")
    R = int(np.floor(r))
    offs = [o for o in _offsets(R, B.d) if any(o)]
    if side == "inner":
        out = set()
        for x in B:
            for o in offs:
                if tuple(a + b for a, b in zip(x, o)) not in B:
                    out.add(x)
                    break
        return out
    if side == "outer":
        out = set()
        for x in B:
            for o in offs:
                y = tuple(a + b for a, b in zip(x, o))
                if y not in B:
                    out.add(y)
        return out
    raise ValueError(f"side must be 'inner' or 'outer', got {side!r}")


class DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def star_components(cubes, part: CubePartition, connectivity: str = "star") -> list:
    """Maximal connected components of a set of cube corners.

    "star" joins cubes whose closures intersect (diagonals included),
    "nearest" joins face-sharing cubes only.
    """
    cubes = sorted({tuple(c) for c in cubes})
    if not cubes:
        return []
    l = part.scale
    d = len(cubes[0])
    if connectivity == "star":
        steps = [o for o in _offsets(1, d) if any(o)]
    elif connectivity == "nearest":
        steps = [tuple(s if k == j else 0 for k in range(d)) for j in range(d) for s in (-1, 1)]
    else:
        raise ValueError(f"unknown connectivity {connectivity!r}")
    pos = {c: n for n, c in enumerate(cubes)}
    ds = DisjointSet(len(cubes))
    for c, n in pos.items():
        for s in steps:
            m = pos.get(tuple(a + l * b for a, b in zip(c, s)))
            if m is not None:
                ds.union(n, m)
    groups = {}
    for c, n in pos.items():
        groups.setdefault(ds.find(n), []).append(c)
    comps = [sorted(g) for g in groups.values()]
    comps.sort(key=lambda g: g[0])
    return comps

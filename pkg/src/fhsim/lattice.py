"""Rectangular lattice geometries, bond sets and commuting-bond partitions.

Sites live on an open rows x cols grid with coordinates (x, y),
x in [0, cols) along the long axis and y in [0, rows) across it.
A "2x4 ladder" has rows=2, cols=4.  The site index is x*rows + y
(y is the fast axis), which keeps 2x2 plaquettes contiguous in the
global fermionic mode ordering.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field


Bond = tuple[int, int]

# Named bond classes available on every geometry (some may be empty).
BOND_CLASSES = (
    "rung",
    "leg-even",
    "leg-odd",
    "dimer",
    "intra-plaquette",
    "inter-plaquette",
    "nnn-diag-1",
    "nnn-diag-2",
    "commuting-set-1",
    "commuting-set-2",
    "commuting-set-3",
    "commuting-set-4",
)

MAX_SITES = 64


class GeometryError(ValueError):
    """Raised for invalid lattice dimensions or bond requests."""


@dataclass(frozen=True)
class LatticeGeometry:
    """Open-boundary rectangular lattice with precomputed bond partitions."""

    rows: int
    cols: int
    nn_bonds: tuple[Bond, ...] = field(default_factory=tuple)
    nnn_bonds: tuple[Bond, ...] = field(default_factory=tuple)
    bond_classes: dict[str, tuple[Bond, ...]] = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    def site(self, x: int, y: int) -> int:
        if not (0 <= x < self.cols and 0 <= y < self.rows):
            raise GeometryError(f"site ({x},{y}) outside {self.rows}x{self.cols}")
        return x * self.rows + y

    def coords(self, s: int) -> tuple[int, int]:
        return divmod(s, self.rows)

    def parity(self, s: int) -> int:
        """(-1)^(x+y) sublattice sign of a site."""
        x, y = self.coords(s)
        return 1 if (x + y) % 2 == 0 else -1

    def bonds(self, label: str) -> tuple[Bond, ...]:
        try:
            return self.bond_classes[label]
        except KeyError:
            raise GeometryError(f"unknown bond class {label!r}") from None


def _normalize(i: int, j: int) -> Bond:
    return (i, j) if i < j else (j, i)


def build_geometry(rows: int, cols: int) -> LatticeGeometry:
    """Construct a geometry with all NN/NNN bond sets and named partitions."""
    if rows < 1 or cols < 1:
        raise GeometryError("rows and cols must be >= 1")
    if rows * cols > MAX_SITES:
        raise GeometryError(f"{rows}x{cols} exceeds the {MAX_SITES}-site cap")

    def site(x, y):
        return x * rows + y

    rungs, legs_even, legs_odd = [], [], []
    for x in range(cols):
        for y in range(rows - 1):
            rungs.append(_normalize(site(x, y), site(x, y + 1)))
    for x in range(cols - 1):
        for y in range(rows):
            b = _normalize(site(x, y), site(x + 1, y))
            (legs_even if x % 2 == 0 else legs_odd).append(b)
    nn = tuple(rungs + legs_even + legs_odd)

    diag1, diag2 = [], []
    for x in range(cols - 1):
        for y in range(rows - 1):
            diag1.append(_normalize(site(x, y), site(x + 1, y + 1)))
            diag2.append(_normalize(site(x, y + 1), site(x + 1, y)))
    nnn = tuple(diag1 + diag2)

    # Plaquette tiling anchored at the left/bottom edge (even x, even y).
    # Dimers are the horizontal pairs inside plaquettes; for ladders they
    # coincide with the even legs.
    dimers, intra = [], []
    for x in range(0, cols - 1, 2):
        for y in range(rows):
            dimers.append(_normalize(site(x, y), site(x + 1, y)))
    intra = list(dimers)
    for x in range(cols):
        for y in range(0, rows - 1, 2):
            if rows > 1:
                intra.append(_normalize(site(x, y), site(x, y + 1)))
    intra_set = set(intra)
    inter = tuple(b for b in nn if b not in intra_set)

    classes: dict[str, tuple[Bond, ...]] = {
        "rung": tuple(rungs),
        "leg-even": tuple(legs_even),
        "leg-odd": tuple(legs_odd),
        "dimer": tuple(dimers),
        "intra-plaquette": tuple(intra),
        "inter-plaquette": inter,
        "nnn-diag-1": tuple(diag1),
        "nnn-diag-2": tuple(diag2),
    }

    groups = partition_commuting_raw(nn, rows, cols)
    for a in range(4):
        classes[f"commuting-set-{a + 1}"] = groups[a] if a < len(groups) else ()

    return LatticeGeometry(rows, cols, nn, nnn, classes)


def _disjoint_groups_greedy(bonds: list[Bond]) -> list[tuple[Bond, ...]]:
    groups: list[list[Bond]] = []
    for b in bonds:
        for g in groups:
            if all(b[0] not in e and b[1] not in e for e in g):
                g.append(b)
                break
        else:
            groups.append([b])
    return [tuple(g) for g in groups]


def partition_commuting_raw(bonds, rows: int, cols: int) -> list[tuple[Bond, ...]]:
    """Split bonds into site-disjoint groups.

    NN bonds get the structured split (vertical even/odd y, horizontal
    even/odd x), which gives <= 3 groups on ladders and 4 on square
    lattices; anything else falls back to a greedy coloring.
    """
    vert_even, vert_odd, hor_even, hor_odd, rest = [], [], [], [], []
    for (i, j) in bonds:
        xi, yi = divmod(i, rows)
        xj, yj = divmod(j, rows)
        if xi == xj and abs(yi - yj) == 1:
            (vert_even if min(yi, yj) % 2 == 0 else vert_odd).append((i, j))
        elif yi == yj and abs(xi - xj) == 1:
            (hor_even if min(xi, xj) % 2 == 0 else hor_odd).append((i, j))
        else:
            rest.append((i, j))
    if rest:
        return _disjoint_groups_greedy(list(bonds))
    out = [tuple(g) for g in (vert_even, vert_odd, hor_even, hor_odd) if g]
    return out


def partition_commuting(geometry: LatticeGeometry, bond_set) -> list[tuple[Bond, ...]]:
    """Disjoint groups covering bond_set; bonds must belong to the geometry."""
    known = set(geometry.nn_bonds) | set(geometry.nnn_bonds)
    bonds = [_normalize(*b) for b in bond_set]
    for b in bonds:
        if b not in known:
            raise GeometryError(f"bond {b} not in geometry")
    groups = partition_commuting_raw(bonds, geometry.rows, geometry.cols)
    ok = all(
        len({s for b in g for s in b}) == 2 * len(g) for g in groups
    )
    if not ok:
        groups = _disjoint_groups_greedy(bonds)
    return groups


def plaquette_columns(geometry: LatticeGeometry) -> list[tuple[int, int]]:
    """Column pairs of the 2xL plaquette tiling (left edge first)."""
    if geometry.rows != 2 or geometry.cols % 2:
        raise GeometryError("plaquette tiling needs a 2xL ladder with even L")
    return [(x, x + 1) for x in range(0, geometry.cols, 2)]

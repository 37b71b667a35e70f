"""Parasite to macrophage association.

Each parasite nucleus goes to at most one macrophage nucleus: the closest
candidate, where candidates are those sharing the parasite's cytoplasm
region, those within a radius of it, or both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .segment import Region

TIE_EPS = 1e-9


class AssociationMode(str, Enum):
    CYTOPLASM = "cytoplasm"
    RADIUS = "radius"
    BOTH = "both"


@dataclass(frozen=True)
class Nucleus:
    """A single nucleus: a whole region or one declustered part of it."""

    id: int
    x: float
    y: float
    region_id: int = 0


@dataclass
class AssociationResult:
    pairs: list[tuple[int, int]]  # (parasite id, macrophage id)
    unassociated: list[int]
    mode: AssociationMode
    infected_macrophages: frozenset[int] = field(init=False)

    def __post_init__(self):
        self.infected_macrophages = frozenset(m for _, m in self.pairs)
        seen = [p for p, _ in self.pairs]
        if len(seen) != len(set(seen)):
            raise ValueError("a parasite was paired more than once")

    @property
    def associated_parasites(self) -> int:
        return len(self.pairs)


class CytoplasmLookup:
    """Cytoplasm region id at a point (0 outside any region)."""

    def __init__(self, regions: list[Region], shape: tuple[int, int] | None = None):
        if shape is None:
            hi = [0, 0]
            for r in regions:
                if r.area:
                    m = r.pixels.max(axis=0)
                    hi = [max(hi[0], int(m[0]) + 1), max(hi[1], int(m[1]) + 1)]
            shape = (hi[1], hi[0])
        self.labels = np.zeros(shape, dtype=np.int64)
        for r in regions:
            self.labels[r.pixels[:, 1], r.pixels[:, 0]] = r.id

    def __call__(self, x: float, y: float) -> int:
        ix, iy = math.floor(x + 0.5), math.floor(y + 0.5)
        h, w = self.labels.shape
        if 0 <= ix < w and 0 <= iy < h:
            return int(self.labels[iy, ix])
        return 0


def associate(
    macrophages: list[Nucleus],
    parasites: list[Nucleus],
    cytoplasm_regions: list[Region] | CytoplasmLookup | None = None,
    mode: AssociationMode | str = AssociationMode.BOTH,
    radius: float | None = None,
) -> AssociationResult:
    """Pair parasites with their closest eligible macrophage.

    Ties within 1e-9 px go to the lower macrophage id.
    """
    mode = AssociationMode(mode)
    use_cyto = mode in (AssociationMode.CYTOPLASM, AssociationMode.BOTH)
    use_radius = mode in (AssociationMode.RADIUS, AssociationMode.BOTH)
    if use_radius and not (radius is not None and radius > 0):
        raise ValueError("radius must be > 0 when the mode uses it")
    lookup = None
    if use_cyto:
        if cytoplasm_regions is None:
            raise ValueError("cytoplasm regions required for this mode")
        lookup = cytoplasm_regions if isinstance(cytoplasm_regions, CytoplasmLookup) else CytoplasmLookup(cytoplasm_regions)

    macs = sorted(macrophages, key=lambda m: m.id)
    mac_xy = np.array([(m.x, m.y) for m in macs], dtype=float).reshape(-1, 2)
    mac_ids = np.array([m.id for m in macs], dtype=np.int64)
    mac_cyto = np.array([lookup(m.x, m.y) for m in macs], dtype=np.int64) if lookup else None

    pairs, unassociated = [], []
    for p in sorted(parasites, key=lambda q: q.id):
        d = np.hypot(mac_xy[:, 0] - p.x, mac_xy[:, 1] - p.y)
        ok = np.ones(len(macs), dtype=bool)
        if use_radius:
            ok &= d <= radius
        if lookup is not None:
            c = lookup(p.x, p.y)
            ok &= (mac_cyto == c) & (c != 0)
        idx = np.flatnonzero(ok)
        if not len(idx):
            unassociated.append(p.id)
            continue
        best = d[idx].min()
        near = idx[d[idx] <= best + TIE_EPS]
        pairs.append((p.id, int(mac_ids[near].min())))
    return AssociationResult(pairs, unassociated, mode)

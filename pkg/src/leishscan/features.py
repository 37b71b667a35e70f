"""Low-level region features: area, centre of mass, bounding box, shape."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .segment import Region

# Freeman directions, image coordinates (y grows downwards):
# 0=E 1=NE 2=N 3=NW 4=W 5=SW 6=S 7=SE
DIRECTIONS = ((1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1))
_CODE = {d: i for i, d in enumerate(DIRECTIONS)}
# clockwise on screen: E, SE, S, SW, W, NW, N, NE
_CLOCKWISE = (0, 7, 6, 5, 4, 3, 2, 1)

CIRCULARITY_CUTOFF = 0.5


class Shape(enum.IntEnum):
    OTHER = 0
    CIRCULAR_OR_ELLIPTICAL = 1


@dataclass(frozen=True)
class ChainCode:
    start: tuple[int, int]
    codes: tuple[int, ...]

    def walk(self) -> list[tuple[int, int]]:
        x, y = self.start
        path = [(x, y)]
        for c in self.codes:
            dx, dy = DIRECTIONS[c]
            x, y = x + dx, y + dy
            path.append((x, y))
        return path

    def perimeter(self) -> float:
        odd = sum(c & 1 for c in self.codes)
        return (len(self.codes) - odd) + odd * math.sqrt(2.0)


@dataclass(frozen=True)
class FeatureVector:
    area: int
    centroid: tuple[float, float]
    bbox: tuple[int, int, int, int]  # min_x, min_y, max_x, max_y
    shape: Shape


def centroid(region: Region) -> tuple[float, float]:
    c = np.asarray(region.pixels, dtype=float).mean(axis=0)
    return float(c[0]), float(c[1])


def min_bbox(region: Region) -> tuple[int, int, int, int]:
    p = np.asarray(region.pixels)
    lo, hi = p.min(axis=0), p.max(axis=0)
    return int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])


def freeman_chain(region: Region) -> ChainCode:
    """Clockwise Moore-neighbour boundary trace.

    Starts at the top-most, then left-most pixel and stops once the first
    move would be repeated from the start pixel.
    """
    pts = set(map(tuple, np.asarray(region.pixels).tolist()))
    start = min(pts, key=lambda p: (p[1], p[0]))
    if len(pts) == 1:
        return ChainCode(start, ())

    def next_move(cur, back_dir):
        # scan clockwise starting just after the backtrack direction
        k0 = _CLOCKWISE.index(back_dir)
        for i in range(1, 9):
            d = _CLOCKWISE[(k0 + i) % 8]
            dx, dy = DIRECTIONS[d]
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in pts:
                # backtrack from nxt is the previously scanned (background) neighbour
                prev = _CLOCKWISE[(k0 + i - 1) % 8]
                px, py = cur[0] + DIRECTIONS[prev][0], cur[1] + DIRECTIONS[prev][1]
                return d, nxt, _CODE[(px - nxt[0], py - nxt[1])]
        raise AssertionError("isolated pixel inside multi-pixel region")

    # nothing lies above or left of the start pixel, so west is background
    first_dir, cur, back = next_move(start, 4)
    codes = [first_dir]
    for _ in range(8 * len(pts) + 8):
        d, nxt, nback = next_move(cur, back)
        if cur == start and d == first_dir:
            break
        codes.append(d)
        cur, back = nxt, nback
    else:
        raise AssertionError("boundary trace did not close")
    return ChainCode(start, tuple(codes))


def circularity(chain: ChainCode, area: int) -> float:
    p = chain.perimeter()
    if p == 0:
        return 1.0
    return 4.0 * math.pi * area / (p * p)


def shape_descriptor(chain: ChainCode, area: int, cutoff: float = CIRCULARITY_CUTOFF) -> Shape:
    if area <= 2 or not chain.codes:
        return Shape.CIRCULAR_OR_ELLIPTICAL
    if circularity(chain, area) >= cutoff:
        return Shape.CIRCULAR_OR_ELLIPTICAL
    return Shape.OTHER


def extract_features(region: Region) -> FeatureVector:
    chain = freeman_chain(region)
    region.contour = chain
    return FeatureVector(
        area=region.area,
        centroid=centroid(region),
        bbox=min_bbox(region),
        shape=shape_descriptor(chain, region.area),
    )


CSV_FIELDS = ("id", "kind", "area", "cx", "cy", "min_x", "min_y", "max_x", "max_y", "shape", "touches_border")


def feature_rows(regions: list[Region], features: list[FeatureVector], channel: str | None = None) -> list[dict]:
    rows = []
    for r, f in zip(regions, features):
        row = {
            "id": r.id,
            "kind": r.kind.value,
            "area": f.area,
            "cx": f"{f.centroid[0]:.4f}",
            "cy": f"{f.centroid[1]:.4f}",
            "min_x": f.bbox[0], "min_y": f.bbox[1], "max_x": f.bbox[2], "max_y": f.bbox[3],
            "shape": int(f.shape),
            "touches_border": int(r.touches_border),
        }
        if channel is not None:
            row = {"channel": channel, **row}
        rows.append(row)
    return rows


def features_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    fields = list(rows[0]) if rows else list(CSV_FIELDS)
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()

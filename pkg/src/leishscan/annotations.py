"""Manual (ground truth) annotations and their file formats.

Point annotations are JSON.  One annotation set looks like::

    {"points": [{"x": 10, "y": 12, "kind": "macrophage"},
                {"x": 14, "y": 12, "kind": "parasite"}],
     "links": [[1, 0]]}

where each link is ``[parasite point index, macrophage point index]`` into
``points``.  An annotation *file* maps image keys to annotators::

    {"images": {"scene_000.json": {"BR-A": {...}, "BR-B": {...}}}}

Count-only fixtures use a CSV with columns
``image,annotator,macrophages,parasites,infected``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

METRICS = ("macrophages", "parasites", "infected")


class AnnotationError(Exception):
    pass


@dataclass
class AnnotationSet:
    macrophages: list[tuple[float, float]] = field(default_factory=list)
    parasites: list[tuple[float, float]] = field(default_factory=list)
    # (parasite index, macrophage index)
    links: list[tuple[int, int]] = field(default_factory=list)
    # declustered nucleus centres; overlay only
    subcentroids: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        for p, m in self.links:
            if not (0 <= p < len(self.parasites)) or not (0 <= m < len(self.macrophages)):
                raise AnnotationError(f"link ({p}, {m}) references a missing point")

    def totals(self) -> dict[str, int]:
        return {
            "macrophages": len(self.macrophages),
            "parasites": len(self.parasites),
            "infected": len({m for _, m in self.links}),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AnnotationSet":
        macs, pars = [], []
        index = {}
        for i, pt in enumerate(obj.get("points", [])):
            kind = pt.get("kind")
            xy = (float(pt["x"]), float(pt["y"]))
            if kind == "macrophage":
                index[i] = ("m", len(macs))
                macs.append(xy)
            elif kind == "parasite":
                index[i] = ("p", len(pars))
                pars.append(xy)
            else:
                raise AnnotationError(f"point {i} has unknown kind {kind!r}")
        links = []
        for link in obj.get("links", []):
            a, b = (int(v) for v in link)
            if index.get(a, ("",))[0] != "p" or index.get(b, ("",))[0] != "m":
                raise AnnotationError(f"link {link} must join a parasite to a macrophage")
            links.append((index[a][1], index[b][1]))
        return cls(macs, pars, links)

    def to_json_obj(self) -> dict:
        points = [{"x": x, "y": y, "kind": "macrophage"} for x, y in self.macrophages]
        points += [{"x": x, "y": y, "kind": "parasite"} for x, y in self.parasites]
        offset = len(self.macrophages)
        return {"points": points, "links": [[offset + p, m] for p, m in self.links]}


def load_annotation_file(path: str | Path) -> dict[str, dict[str, dict[str, int]]]:
    """Per-image, per-annotator metric totals from a JSON or CSV annotation file."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_totals_csv(path)
    text = path.read_text().strip()
    if not text:
        return {}
    obj = json.loads(text)
    out: dict[str, dict[str, dict[str, int]]] = {}
    for image, annotators in obj.get("images", {}).items():
        out[image] = {
            name: AnnotationSet.from_json_obj(ann).totals() for name, ann in annotators.items()
        }
    return out


def load_totals_csv(path: str | Path) -> dict[str, dict[str, dict[str, int]]]:
    out: dict[str, dict[str, dict[str, int]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["image"], {})[row["annotator"]] = {
                m: int(row[m]) for m in METRICS
            }
    return out

"""Synthetic three-channel fluorescence scenes with exact ground truth.

Nuclei are soft-edged discs (logistic radial profile) whose areas follow
N(u, sigma^2) of the active parameter set, truncated at +-2.5 sigma, so the
thresholded area barely depends on where Otsu lands.  Discs inside one
channel combine by maximum, which makes a cluster's mask the union of its
nuclei.  Clusters are grown nucleus by nucleus under an overlap budget: no
nucleus may lose more than ``overlap_budget`` of its area to its
neighbours.

Channel roles: blue plane = macrophage nuclei, green = parasite nuclei,
red = macrophage nuclei plus cytoplasm.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classify import DEFAULT_PARAMETERS
from .raster import ChannelSet, save_png


class PlacementError(RuntimeError):
    pass


@dataclass
class IntensityModel:
    background: float = 20.0
    nucleus_peak: float = 220.0
    cytoplasm_level: float = 150.0  # red channel
    cytoplasm_radius_factor: float = 1.6  # cytoplasm radius / nucleus radius
    edge_width: float = 0.5  # logistic edge scale, px
    noise_sigma: float = 5.0
    # dim cytoplasm in the nuclear channels, giving three histogram modes
    trimodal: bool = False
    trimodal_level: float = 100.0


@dataclass
class SceneSpec:
    width: int = 384
    height: int = 384
    zoom_label: str = "zoom5"
    macrophages: int = 50  # number of macrophage groups (single cells or clusters)
    # probabilities of group sizes 1, 2, ... ; [1.0] means isolated cells
    cluster_sizes: list[float] = field(default_factory=lambda: [1.0])
    parasites: int = 30
    infected_fraction: float = 0.5  # of macrophage nuclei
    overlap_budget: float = 0.15
    min_overlap: float = 0.03
    margin: int = 4
    intensity: IntensityModel = field(default_factory=IntensityModel)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.intensity, dict):
            self.intensity = IntensityModel(**self.intensity)
        if self.macrophages < 0 or self.parasites < 0:
            raise ValueError("object counts must be >= 0")
        if self.width < 8 or self.height < 8:
            raise ValueError("canvas too small")
        if abs(sum(self.cluster_sizes) - 1.0) > 1e-9:
            raise ValueError("cluster_sizes must be a probability vector")

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls(**json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class Nucleus:
    x: float
    y: float
    radius: float
    group: int

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


@dataclass
class GroundTruth:
    width: int
    height: int
    zoom_label: str
    macrophage_nuclei: list[Nucleus]
    groups: list[list[int]]  # nucleus indices per macrophage group (region)
    parasites: list[Nucleus]
    hosts: list[int | None]  # macrophage nucleus index per parasite
    cytoplasm_radius: list[float]

    @property
    def infected(self) -> int:
        return len({h for h in self.hosts if h is not None})

    @property
    def infection_ratio(self) -> float:
        n = len(self.macrophage_nuclei)
        return self.infected / n if n else 0.0

    def to_json(self) -> str:
        obj = {
            "canvas": [self.width, self.height],
            "zoom": self.zoom_label,
            "macrophage_nuclei": [
                {"x": n.x, "y": n.y, "radius": n.radius, "area": n.area, "group": n.group}
                for n in self.macrophage_nuclei
            ],
            "groups": [
                {"members": g, "size": len(g),
                 "expected_area": float(sum(self.macrophage_nuclei[i].area for i in g))}
                for g in self.groups
            ],
            "parasites": [
                {"x": p.x, "y": p.y, "radius": p.radius, "area": p.area, "host": h}
                for p, h in zip(self.parasites, self.hosts)
            ],
            "infected_macrophages": self.infected,
            "infection_ratio": self.infection_ratio,
        }
        return json.dumps(obj, indent=1, sort_keys=True) + "\n"

    def annotation_obj(self) -> dict:
        """Ground truth as a point annotation set (see :mod:`leishscan.annotations`)."""
        points = [{"x": n.x, "y": n.y, "kind": "macrophage"} for n in self.macrophage_nuclei]
        off = len(points)
        points += [{"x": p.x, "y": p.y, "kind": "parasite"} for p in self.parasites]
        links = [[off + i, h] for i, h in enumerate(self.hosts) if h is not None]
        return {"points": points, "links": links}


def lens_area(r1: float, r2: float, d: float) -> float:
    """Intersection area of two discs with centre distance ``d``."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        return math.pi * min(r1, r2) ** 2
    a1 = r1 * r1 * math.acos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1))
    a2 = r2 * r2 * math.acos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2))
    tri = 0.5 * math.sqrt(max(0.0, (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)))
    return a1 + a2 - tri


def _distance_for_overlap(r1: float, r2: float, area: float) -> float:
    lo, hi = abs(r1 - r2), r1 + r2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if lens_area(r1, r2, mid) > area:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_radius(rng: np.random.Generator, u: float, sigma: float) -> float:
    a = float(np.clip(rng.normal(u, sigma), u - 2.5 * sigma, u + 2.5 * sigma))
    return math.sqrt(a / math.pi)


def grow_cluster(rng: np.random.Generator, size: int, u: float, sigma: float,
                 budget: float = 0.15, min_overlap: float = 0.03, tries: int = 500) -> list[tuple[float, float, float]]:
    """Nuclei ``(x, y, r)`` of one connected cluster centred near the origin."""
    for _ in range(50):
        discs = [(0.0, 0.0, sample_radius(rng, u, sigma))]
        lost = [0.0]
        ok = True
        for _ in range(size - 1):
            r = sample_radius(rng, u, sigma)
            placed = False
            for _ in range(tries):
                m = int(rng.integers(len(discs)))
                mx, my, mr = discs[m]
                frac = rng.uniform(min_overlap, budget)
                d = _distance_for_overlap(mr, r, frac * math.pi * min(mr, r) ** 2)
                th = rng.uniform(0, 2 * math.pi)
                x, y = mx + d * math.cos(th), my + d * math.sin(th)
                over = [lens_area(r, dr, math.hypot(x - dx, y - dy)) for dx, dy, dr in discs]
                if sum(over) > budget * math.pi * r * r:
                    continue
                if any(lost[i] + over[i] > budget * math.pi * discs[i][2] ** 2 for i in range(len(discs))):
                    continue
                for i in range(len(discs)):
                    lost[i] += over[i]
                discs.append((x, y, r))
                lost.append(sum(over))
                placed = True
                break
            if not placed:
                ok = False
                break
        if ok:
            cx = float(np.mean([d[0] for d in discs]))
            cy = float(np.mean([d[1] for d in discs]))
            return [(x - cx, y - cy, r) for x, y, r in discs]
    raise PlacementError(f"could not grow a {size}-nucleus cluster within the overlap budget")


def _soft_discs(shape, discs, level: float, edge: float, out: np.ndarray) -> None:
    """Max-composite logistic-edged discs of amplitude ``level`` into ``out``."""
    h, w = shape
    pad = 6.0 * edge + 1.0
    for x, y, r in discs:
        x0, x1 = max(0, int(math.floor(x - r - pad))), min(w, int(math.ceil(x + r + pad)) + 1)
        y0, y1 = max(0, int(math.floor(y - r - pad))), min(h, int(math.ceil(y + r + pad)) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dist = np.hypot(xx - x, yy - y)
        val = level / (1.0 + np.exp(np.clip((dist - r) / edge, -50, 50)))
        np.maximum(out[y0:y1, x0:x1], val, out=out[y0:y1, x0:x1])


class _Placer:
    def __init__(self, rng, width, height, margin):
        self.rng, self.w, self.h, self.margin = rng, width, height, margin
        self.circles: list[tuple[float, float, float]] = []

    def place(self, radius: float, gap: float = 3.0, tries: int = 4000) -> tuple[float, float]:
        lo_x, hi_x = self.margin + radius, self.w - 1 - self.margin - radius
        lo_y, hi_y = self.margin + radius, self.h - 1 - self.margin - radius
        if lo_x > hi_x or lo_y > hi_y:
            raise PlacementError("object larger than canvas")
        for _ in range(tries):
            x, y = self.rng.uniform(lo_x, hi_x), self.rng.uniform(lo_y, hi_y)
            if all(math.hypot(x - cx, y - cy) >= radius + cr + gap for cx, cy, cr in self.circles):
                self.circles.append((x, y, radius))
                return x, y
        raise PlacementError("scene too dense: cannot place object without overlap")


def _group_sizes(rng, spec: SceneSpec) -> list[int]:
    p = np.asarray(spec.cluster_sizes, dtype=float)
    return [int(s) + 1 for s in rng.choice(len(p), size=spec.macrophages, p=p)]


def generate(spec: SceneSpec, group_sizes: list[int] | None = None) -> tuple[ChannelSet, GroundTruth]:
    """Render a scene; ``group_sizes`` overrides the sampled cluster sizes."""
    rng = np.random.default_rng(spec.seed)
    params = DEFAULT_PARAMETERS[spec.zoom_label]
    u, sigma = params.u, params.sigma
    im = spec.intensity
    cyto_factor = im.cytoplasm_radius_factor
    placer = _Placer(rng, spec.width, spec.height, spec.margin)
    sizes = list(group_sizes) if group_sizes is not None else _group_sizes(rng, spec)

    nuclei: list[Nucleus] = []
    groups: list[list[int]] = []
    # largest clusters first: they are the hardest to fit
    for g in sorted(range(len(sizes)), key=lambda i: -sizes[i]):
        discs = grow_cluster(rng, sizes[g], u, sigma, spec.overlap_budget, spec.min_overlap)
        reach = max(math.hypot(x, y) + cyto_factor * r for x, y, r in discs)
        cx, cy = placer.place(reach)
        groups.append(list(range(len(nuclei), len(nuclei) + len(discs))))
        nuclei += [Nucleus(cx + x, cy + y, r, len(groups) - 1) for x, y, r in discs]

    n_infected = min(int(round(spec.infected_fraction * len(nuclei))), spec.parasites, len(nuclei))
    hosts_order = rng.permutation(len(nuclei))[:n_infected]
    assoc_radius = params.cell_radius
    parasites: list[Nucleus] = []
    hosts: list[int | None] = []
    para_circles: list[tuple[float, float, float]] = []
    for h in sorted(int(i) for i in hosts_order):
        host = nuclei[h]
        r = sample_radius(rng, u, sigma)
        for _ in range(400):
            d = rng.uniform(0, 0.5 * assoc_radius)
            th = rng.uniform(0, 2 * math.pi)
            x, y = host.x + d * math.cos(th), host.y + d * math.sin(th)
            if all(math.hypot(x - px, y - py) >= r + pr + 3 for px, py, pr in para_circles):
                break
        else:
            raise PlacementError("cannot attach parasite without touching another parasite")
        para_circles.append((x, y, r))
        parasites.append(Nucleus(x, y, r, -1))
        hosts.append(h)
    for _ in range(spec.parasites - n_infected):
        r = sample_radius(rng, u, sigma)
        for _ in range(4000):
            x = rng.uniform(spec.margin + r, spec.width - 1 - spec.margin - r)
            y = rng.uniform(spec.margin + r, spec.height - 1 - spec.margin - r)
            if any(math.hypot(x - n.x, y - n.y) < cyto_factor * n.radius + 3 for n in nuclei):
                continue
            if all(math.hypot(x - px, y - py) >= r + pr + 3 for px, py, pr in para_circles):
                break
        else:
            raise PlacementError("scene too dense: cannot place a free parasite")
        para_circles.append((x, y, r))
        parasites.append(Nucleus(x, y, r, -1))
        hosts.append(None)

    shape = (spec.height, spec.width)
    edge = im.edge_width
    nuc_discs = [(n.x, n.y, n.radius) for n in nuclei]
    cyto_discs = [(n.x, n.y, cyto_factor * n.radius) for n in nuclei]
    amp = im.nucleus_peak - im.background

    blue = np.zeros(shape)
    _soft_discs(shape, nuc_discs, amp, edge, blue)
    green = np.zeros(shape)
    _soft_discs(shape, para_circles, amp, edge, green)
    red = np.zeros(shape)
    _soft_discs(shape, cyto_discs, im.cytoplasm_level - im.background, 2 * edge, red)
    _soft_discs(shape, nuc_discs, amp, edge, red)
    if im.trimodal:
        dim = np.zeros(shape)
        _soft_discs(shape, cyto_discs, im.trimodal_level - im.background, 2 * edge, dim)
        np.maximum(blue, dim, out=blue)
        np.maximum(green, dim, out=green)

    planes = []
    for p in (blue, green, red):
        p = p + im.background
        if im.noise_sigma > 0:
            p = p + rng.normal(0.0, im.noise_sigma, size=shape)
        planes.append(np.clip(np.floor(p + 0.5), 0, 255).astype(np.uint8))
    channels = ChannelSet(macrophage=planes[0], parasite=planes[1], cytoplasm=planes[2])
    truth = GroundTruth(spec.width, spec.height, spec.zoom_label, nuclei, groups, parasites, hosts,
                        [cyto_factor * n.radius for n in nuclei])
    return channels, truth


def write_scene(channels: ChannelSet, truth: GroundTruth, out_dir: str | Path, stem: str = "scene") -> Path:
    """Write PNG planes, a channel manifest and the ground truth; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {}
    for role in ("macrophage", "parasite", "cytoplasm"):
        name = f"{stem}_{role}.png"
        save_png(out / name, channels.plane(role))
        names[role] = name
    manifest = out / f"{stem}.json"
    manifest.write_text(json.dumps(names, indent=2, sort_keys=True) + "\n")
    (out / f"{stem}_truth.json").write_text(truth.to_json())
    return manifest

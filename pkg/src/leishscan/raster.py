"""Image loading, channel splitting and overlay rendering.

A *plane* is a read-only ``uint8`` array of shape ``(height, width)``.  RGB
rasters are split so that blue carries macrophage nuclei, green carries
parasite nuclei and red carries nuclei plus cytoplasm.  Multi-channel
acquisitions that are not RGB files are described by a JSON manifest::

    {"macrophage": "blue.png", "parasite": "green.png", "cytoplasm": "red.png"}

Relative manifest paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from skimage.draw import line as draw_line

from .annotations import AnnotationSet

ROLES = ("macrophage", "parasite", "cytoplasm")
LOSSY_SUFFIXES = {".jpg", ".jpeg"}

MACROPHAGE_COLOR = (255, 255, 0)
PARASITE_COLOR = (255, 0, 255)
SUBCENTROID_COLOR = (0, 255, 255)
LINK_COLOR = (255, 255, 255)


class RasterError(Exception):
    """Base class for image loading problems."""


class ImageFormatError(RasterError):
    pass


class ChannelMappingError(RasterError):
    pass


class GeometryError(RasterError):
    pass


class CoordinateError(RasterError):
    pass


def as_plane(data) -> np.ndarray:
    """Validate ``data`` as a plane and return a read-only uint8 copy."""
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise GeometryError(f"plane must be a non-empty 2-D array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
            raise ValueError("plane contains non-finite values")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("plane intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    out = np.array(arr, dtype=np.uint8, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ChannelSet:
    macrophage: np.ndarray
    parasite: np.ndarray
    cytoplasm: np.ndarray
    lossy: bool = False

    def __post_init__(self):
        for role in ROLES:
            object.__setattr__(self, role, as_plane(getattr(self, role)))
        shapes = {getattr(self, role).shape for role in ROLES}
        if len(shapes) != 1:
            raise GeometryError(f"channel planes differ in size: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.macrophage.shape

    def plane(self, role: str) -> np.ndarray:
        if role not in ROLES:
            raise KeyError(role)
        return getattr(self, role)

    def to_rgb(self) -> np.ndarray:
        """Re-merge into an ``(h, w, 3)`` RGB array (inverse of the split)."""
        return np.stack([self.cytoplasm, self.parasite, self.macrophage], axis=-1)


def split_rgb(rgb: np.ndarray, lossy: bool = False) -> ChannelSet:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ChannelMappingError("expected an RGB raster")
    # alpha, if any, is ignored
    return ChannelSet(
        macrophage=rgb[:, :, 2], parasite=rgb[:, :, 1], cytoplasm=rgb[:, :, 0], lossy=lossy
    )


def _open(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc
    return img


def _gray_plane(path: Path) -> np.ndarray:
    img = _open(path)
    if img.mode not in ("L", "P", "I;16", "I", "1"):
        if img.mode in ("RGB", "RGBA"):
            arr = np.asarray(img)
            if not (np.array_equal(arr[..., 0], arr[..., 1]) and np.array_equal(arr[..., 1], arr[..., 2])):
                raise ChannelMappingError(f"manifest entry {path} is not grayscale")
            return arr[..., 0]
        raise ChannelMappingError(f"unsupported mode {img.mode} for {path}")
    if img.mode in ("I;16", "I"):
        raise ImageFormatError(f"{path}: only 8-bit planes are supported")
    return np.asarray(img.convert("L"))


def load_manifest(path: str | Path) -> ChannelSet:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ImageFormatError(f"cannot read channel manifest {path}: {exc}") from exc
    if not isinstance(spec, dict) or set(ROLES) - set(spec):
        raise ChannelMappingError(f"manifest {path} must name all of {ROLES}")
    planes = {}
    lossy = False
    for role in ROLES:
        p = Path(spec[role])
        if not p.is_absolute():
            p = path.parent / p
        lossy |= p.suffix.lower() in LOSSY_SUFFIXES
        planes[role] = _gray_plane(p)
    shapes = {planes[r].shape for r in ROLES}
    if len(shapes) != 1:
        raise GeometryError(f"manifest planes differ in size: {sorted(shapes)}")
    return ChannelSet(lossy=lossy, **planes)


def load_image(path: str | Path) -> ChannelSet:
    """Load an RGB raster or a channel manifest into a :class:`ChannelSet`."""
    path = Path(path)
    if not path.exists():
        raise ImageFormatError(f"no such file: {path}")
    if path.suffix.lower() == ".json":
        return load_manifest(path)
    img = _open(path)
    if img.mode in ("L", "LA", "I", "I;16", "1", "F"):
        raise ChannelMappingError(f"{path} is single-channel; supply a channel manifest")
    if img.mode != "RGB":
        img = img.convert("RGB")
    lossy = path.suffix.lower() in LOSSY_SUFFIXES or img.format == "JPEG"
    return split_rgb(np.asarray(img), lossy=lossy)


def save_png(path: str | Path, array: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8)).save(path, format="PNG")


def _check_point(pt, shape) -> tuple[int, int]:
    x, y = int(round(pt[0])), int(round(pt[1]))
    h, w = shape
    if not (0 <= x < w and 0 <= y < h):
        raise CoordinateError(f"annotation point {tuple(pt)} outside {w}x{h} plane")
    return x, y


def _mark(rgb, x, y, color):
    h, w = rgb.shape[:2]
    for dx, dy in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
        xx, yy = x + dx, y + dy
        if 0 <= xx < w and 0 <= yy < h:
            rgb[yy, xx] = color
    rgb[y, x] = color


def render_overlay(channels: ChannelSet, annotations: AnnotationSet) -> np.ndarray:
    """Merged RGB image with centroids, sub-centroids and association links drawn in."""
    rgb = channels.to_rgb().copy()
    shape = channels.shape
    macs = [_check_point(p, shape) for p in annotations.macrophages]
    pars = [_check_point(p, shape) for p in annotations.parasites]
    subs = [_check_point(p, shape) for p in annotations.subcentroids]
    for p_idx, m_idx in annotations.links:
        (x0, y0), (x1, y1) = pars[p_idx], macs[m_idx]
        rr, cc = draw_line(y0, x0, y1, x1)
        rgb[rr, cc] = LINK_COLOR
    for x, y in subs:
        _mark(rgb, x, y, SUBCENTROID_COLOR)
    for x, y in pars:
        _mark(rgb, x, y, PARASITE_COLOR)
    for x, y in macs:
        _mark(rgb, x, y, MACROPHAGE_COLOR)
    return rgb

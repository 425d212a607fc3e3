"""Presentation artifacts: the final map PNG, annotated overlays, tile pyramids.

The overlay stamps a colored disc per sample at its projected position (family
-> palette color by first appearance), with optional id labels and a legend
strip appended below the map.  Tiles follow the {z}/{x}/{y}.png layout with
256px tiles, top-left origin; each zoom level below native is a 2x2 box-filter
downsample with exact round-half-to-even integer averaging.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .atlas import Canvas, WorldBox
from .dataset import Dataset
from .errors import ValidationError
from .font5x7 import GLYPH_H, draw_text
from .imgio import encode_png, save_png
from .io_util import atomic_write_bytes, read_bytes
from .projection.model import ProjectionModel

TILE_SIZE = 256

# categorical 10-color palette (matches the ten-family desk-scale datasets)
DEFAULT_PALETTE: tuple[tuple[int, int, int, int], ...] = (
    (31, 119, 180, 255),
    (255, 127, 14, 255),
    (44, 160, 44, 255),
    (214, 39, 40, 255),
    (148, 103, 189, 255),
    (140, 86, 75, 255),
    (227, 119, 194, 255),
    (127, 127, 127, 255),
    (188, 189, 34, 255),
    (23, 190, 207, 255),
)

LEGEND_ROW_H = 14
LEGEND_PAD = 4
LABEL_COLOR = (255, 255, 255, 255)
LEGEND_BG = (16, 16, 16, 255)


@dataclass(frozen=True)
class OverlaySpec:
    marker_radius: int = 4
    palette: tuple[tuple[int, int, int, int], ...] = DEFAULT_PALETTE
    show_labels: bool = False
    legend: bool = True

    def __post_init__(self):
        if self.marker_radius < 1:
            raise ValidationError(f"marker radius must be >= 1, got {self.marker_radius}")
        if not self.palette:
            raise ValidationError("palette must be nonempty")


def family_order(dataset: Dataset) -> list[str]:
    """Families ranked by first appearance in record order."""
    seen: list[str] = []
    for fam in dataset.families:
        if fam not in seen:
            seen.append(fam)
    return seen


def _draw_disc(pixels: np.ndarray, cx: float, cy: float, radius: float, color) -> None:
    h, w = pixels.shape[:2]
    x0 = max(0, int(math.floor(cx - radius - 1)))
    x1 = min(w, int(math.ceil(cx + radius + 1)))
    y0 = max(0, int(math.floor(cy - radius - 1)))
    y1 = min(h, int(math.ceil(cy + radius + 1)))
    if x0 >= x1 or y0 >= y1:
        return
    ys = np.arange(y0, y1)[:, None] + 0.5
    xs = np.arange(x0, x1)[None, :] + 0.5
    inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
    pixels[y0:y1, x0:x1][inside] = color


def render_overlay(
    canvas: Canvas, model: ProjectionModel, dataset: Dataset, spec: OverlaySpec = OverlaySpec()
) -> np.ndarray:
    """Annotated copy of the canvas; the canvas itself is never modified."""
    families = family_order(dataset)
    if len(families) > len(spec.palette):
        raise ValidationError(
            f"{len(families)} families exceed the {len(spec.palette)}-color palette"
        )
    color_of = {fam: spec.palette[i] for i, fam in enumerate(families)}
    out = canvas.pixels.copy()
    for i, rec in enumerate(dataset.records):
        px, py = canvas.world_to_pixel(model.coords[i, 0], model.coords[i, 1])
        _draw_disc(out, px, py, spec.marker_radius, color_of[rec.family])
    if spec.show_labels:
        for i, rec in enumerate(dataset.records):
            px, py = canvas.world_to_pixel(model.coords[i, 0], model.coords[i, 1])
            draw_text(out, int(px) + spec.marker_radius + 2, int(py) - GLYPH_H // 2,
                      rec.id, LABEL_COLOR)
    if spec.legend:
        legend = np.empty(
            (LEGEND_PAD * 2 + LEGEND_ROW_H * len(families), out.shape[1], 4), dtype=np.uint8
        )
        legend[:, :] = LEGEND_BG
        for row, fam in enumerate(families):
            y = LEGEND_PAD + row * LEGEND_ROW_H
            legend[y + 2 : y + 12, 4:14] = color_of[fam]
            draw_text(legend, 20, y + 2, fam, LABEL_COLOR)
        out = np.concatenate([out, legend], axis=0)
    return out


@dataclass(frozen=True)
class SampleRef:
    id: str
    family: str
    x: float
    y: float
    audio_path: str | None = None


@dataclass(frozen=True)
class TileManifest:
    tile_size: int
    max_zoom: int
    world_bounds: WorldBox
    canvas_size: int
    style: str
    samples: tuple[SampleRef, ...]
    version: int = 1

    def to_json(self) -> str:
        doc = {
            "tile_size": self.tile_size,
            "max_zoom": self.max_zoom,
            "world_bounds": {
                "min_x": self.world_bounds.min_x,
                "min_y": self.world_bounds.min_y,
                "max_x": self.world_bounds.max_x,
                "max_y": self.world_bounds.max_y,
            },
            "canvas_size": self.canvas_size,
            "style": self.style,
            "version": self.version,
            "samples": [
                {
                    "id": s.id,
                    "family": s.family,
                    "x": s.x,
                    "y": s.y,
                    **({"audio_path": s.audio_path} if s.audio_path else {}),
                }
                for s in self.samples
            ],
        }
        return json.dumps(doc, indent=1)


def manifest_from_json(text: str) -> TileManifest:
    doc = json.loads(text)
    wb = doc["world_bounds"]
    return TileManifest(
        tile_size=doc["tile_size"],
        max_zoom=doc["max_zoom"],
        world_bounds=WorldBox(wb["min_x"], wb["min_y"], wb["max_x"], wb["max_y"]),
        canvas_size=doc["canvas_size"],
        style=doc["style"],
        version=doc.get("version", 1),
        samples=tuple(
            SampleRef(
                id=s["id"], family=s["family"], x=s["x"], y=s["y"],
                audio_path=s.get("audio_path"),
            )
            for s in doc["samples"]
        ),
    )


def max_zoom_for(canvas_size: int, tile_size: int = TILE_SIZE) -> int:
    """Smallest z with tile_size * 2^z >= canvas_size (i.e. ceil(log2(size/tile)))."""
    return max(0, (math.ceil(canvas_size / tile_size) - 1).bit_length())


def downsample2x(pixels: np.ndarray) -> np.ndarray:
    """Halve resolution with an exact 2x2 integer box filter, half-to-even.

    Odd dimensions are padded with transparent black before averaging.
    """
    h, w = pixels.shape[:2]
    ph, pw = h + (h & 1), w + (w & 1)
    if (ph, pw) != (h, w):
        padded = np.zeros((ph, pw, 4), dtype=np.uint8)
        padded[:h, :w] = pixels
        pixels = padded
    s = pixels.astype(np.uint32)
    total = s[0::2, 0::2] + s[0::2, 1::2] + s[1::2, 0::2] + s[1::2, 1::2]
    base = total >> 2
    rem = total & 3
    round_up = (rem == 3) | ((rem == 2) & ((base & 1) == 1))
    return (base + round_up.astype(np.uint32)).astype(np.uint8)


def export_tiles(
    canvas: Canvas,
    out_dir: str | Path,
    model: ProjectionModel | None = None,
    dataset: Dataset | None = None,
    style_name: str = "",
    version: int = 1,
    require_covered: bool = True,
) -> TileManifest:
    """Write the {z}/{x}/{y}.png pyramid plus manifest.json under out_dir."""
    if require_covered and not bool(canvas.covered.all()):
        raise ValidationError("canvas is not fully covered; run the atlas loop first")
    if canvas.width != canvas.height:
        raise ValidationError("tile export expects a square canvas")
    out_dir = Path(out_dir)
    size = canvas.width
    max_zoom = max_zoom_for(size)
    level = canvas.pixels
    for z in range(max_zoom, -1, -1):
        s = level.shape[0]
        grid = math.ceil(s / TILE_SIZE)
        for ty in range(grid):
            for tx in range(grid):
                tile = level[
                    ty * TILE_SIZE : (ty + 1) * TILE_SIZE,
                    tx * TILE_SIZE : (tx + 1) * TILE_SIZE,
                ]
                if tile.shape[:2] != (TILE_SIZE, TILE_SIZE):
                    padded = np.zeros((TILE_SIZE, TILE_SIZE, 4), dtype=np.uint8)
                    padded[: tile.shape[0], : tile.shape[1]] = tile
                    tile = padded
                tile_dir = out_dir / str(z) / str(tx)
                tile_dir.mkdir(parents=True, exist_ok=True)
                atomic_write_bytes(tile_dir / f"{ty}.png", encode_png(tile))
        if z > 0:
            level = downsample2x(level)
    samples: tuple[SampleRef, ...] = ()
    if model is not None and dataset is not None:
        samples = tuple(
            SampleRef(
                id=rec.id,
                family=rec.family,
                x=float(model.coords[i, 0]),
                y=float(model.coords[i, 1]),
                audio_path=rec.audio_path,
            )
            for i, rec in enumerate(dataset.records)
        )
    manifest = TileManifest(
        tile_size=TILE_SIZE,
        max_zoom=max_zoom,
        world_bounds=canvas.world,
        canvas_size=size,
        style=style_name,
        samples=samples,
        version=version,
    )
    atomic_write_bytes(out_dir / "manifest.json", manifest.to_json().encode("utf-8"))
    return manifest


def load_manifest(path: str | Path) -> TileManifest:
    return manifest_from_json(read_bytes(path).decode("utf-8"))


def export_png(canvas: Canvas, path: str | Path) -> None:
    """Lossless PNG of the RGBA buffer; reload reproduces pixels byte-exactly."""
    save_png(canvas.pixels, path)

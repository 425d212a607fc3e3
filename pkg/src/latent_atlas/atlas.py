"""The map-construction loop: canvas geometry, patch scheduling, compositing.

A canvas carries the RGBA map under construction, a per-pixel coverage mask,
and the affine correspondence between 2D latent coordinates and pixels.  Jobs
walk a raster-order patch grid; each job inpaints exactly the not-yet-covered
pixels of its rectangle (overlap bands with earlier patches stay as context),
then the rectangle is marked covered.  Runs are resumable: state persists as
a single versioned container and a rerun is byte-identical.

Pixel convention: x grows right, y grows down; world min_x maps to pixel
column 0 and world min_y to pixel row 0.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import (
    BackendError,
    CorruptFileError,
    DegenerateBoundsError,
    ValidationError,
)
from .io_util import BlockReader, atomic_write_bytes, matrix_from_bytes, matrix_to_bytes, pack_block, read_bytes
from .projection.model import ProjectionModel, inverse_transform
from .prompt import KeywordWeights, PromptSpec, expand_all, keyword_weights
from .renderer.types import InpaintMask, PatchImage, RenderRequest, render

log = logging.getLogger("latent_atlas.atlas")

RUN_MAGIC = b"LATRN001"
DEFAULT_CANVAS = 1024
DEFAULT_PATCH = 256
DEFAULT_OVERLAP = 64
DEFAULT_MARGIN = 0.05


@dataclass(frozen=True)
class WorldBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y


@dataclass(frozen=True)
class Rect:
    """A pixel rectangle: origin (x, y), extent (w, h)."""

    x: int
    y: int
    w: int
    h: int

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h


@dataclass
class Canvas:
    pixels: np.ndarray  # (H, W, 4) uint8
    covered: np.ndarray  # (H, W) bool
    world: WorldBox

    def __post_init__(self):
        if self.pixels.shape[:2] != self.covered.shape:
            raise ValidationError("pixels and coverage mask must share dimensions")
        if self.world.width <= 0 or self.world.height <= 0:
            raise ValidationError("world box must have positive extent")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def world_to_pixel(self, wx: float, wy: float) -> tuple[float, float]:
        return (
            (wx - self.world.min_x) * self.width / self.world.width,
            (wy - self.world.min_y) * self.height / self.world.height,
        )

    def pixel_to_world(self, px: float, py: float) -> tuple[float, float]:
        return (
            self.world.min_x + px * self.world.width / self.width,
            self.world.min_y + py * self.world.height / self.height,
        )

    def copy(self) -> "Canvas":
        return Canvas(pixels=self.pixels.copy(), covered=self.covered.copy(), world=self.world)


@dataclass(frozen=True)
class PlanJob:
    rect: Rect
    center_world: tuple[float, float]


@dataclass(frozen=True)
class PatchPlan:
    jobs: tuple[PlanJob, ...]
    patch_size: int
    overlap: int

    def __len__(self) -> int:
        return len(self.jobs)


@dataclass
class AtlasRun:
    """Loop state: the canvas, the schedule, the style, and progress."""

    canvas: Canvas
    plan: PatchPlan
    style: PromptSpec
    seed: int
    dataset: Dataset
    model: ProjectionModel
    backend_id: str = "procedural"
    completed: int = 0


def make_canvas(model: ProjectionModel, size: int, margin_fraction: float = DEFAULT_MARGIN) -> Canvas:
    """Square canvas whose world box is the margin-expanded projection bounds,
    letterboxed to equal aspect so both axes share one pixel scale."""
    if size < 1:
        raise ValidationError(f"canvas size must be positive, got {size}")
    if margin_fraction < 0:
        raise ValidationError(f"margin fraction must be >= 0, got {margin_fraction}")
    coords = model.coords
    min_x, min_y = coords.min(axis=0)
    max_x, max_y = coords.max(axis=0)
    span_x, span_y = max_x - min_x, max_y - min_y
    if span_x <= 0 or span_y <= 0:
        raise DegenerateBoundsError("projection bounding box has zero area")
    min_x -= margin_fraction * span_x
    max_x += margin_fraction * span_x
    min_y -= margin_fraction * span_y
    max_y += margin_fraction * span_y
    side = max(max_x - min_x, max_y - min_y)
    pad_x = (side - (max_x - min_x)) / 2.0
    pad_y = (side - (max_y - min_y)) / 2.0
    world = WorldBox(
        min_x=float(min_x - pad_x),
        min_y=float(min_y - pad_y),
        max_x=float(min_x - pad_x + side),
        max_y=float(min_y - pad_y + side),
    )
    return Canvas(
        pixels=np.zeros((size, size, 4), dtype=np.uint8),
        covered=np.zeros((size, size), dtype=bool),
        world=world,
    )


def _axis_starts(origin: int, extent: int, patch: int, stride: int) -> list[int]:
    if extent <= patch:
        return [origin]
    starts = list(range(origin, origin + extent - patch + 1, stride))
    last = origin + extent - patch
    if starts[-1] != last:
        starts.append(last)
    return starts


def plan_patches_region(canvas: Canvas, region: Rect, patch_size: int, overlap: int) -> PatchPlan:
    """Raster-order grid of patch-size rects covering a region.

    Stride is patch_size - overlap; final row/column rects sit flush with the
    region edge.  Regions smaller than a patch get one patch-size rect that
    contains them, shifted to stay inside the canvas (the surplus becomes
    inpainting context).
    """
    if not 0 < overlap < patch_size:
        raise ValidationError(f"need 0 < overlap < patch_size, got {overlap}, {patch_size}")
    if patch_size > min(canvas.width, canvas.height):
        raise ValidationError(f"patch {patch_size} exceeds canvas {canvas.width}x{canvas.height}")
    if (region.w <= 0 or region.h <= 0 or region.x < 0 or region.y < 0
            or region.x1 > canvas.width or region.y1 > canvas.height):
        raise ValidationError(f"region {region} does not fit the canvas")
    stride = patch_size - overlap

    def starts(origin, extent, limit):
        if extent < patch_size:
            lo = origin - (patch_size - extent) // 2
            return [min(max(0, lo), limit - patch_size)]
        return _axis_starts(origin, extent, patch_size, stride)

    xs = starts(region.x, region.w, canvas.width)
    ys = starts(region.y, region.h, canvas.height)
    jobs = []
    for y in ys:
        for x in xs:
            cx = x + patch_size / 2.0
            cy = y + patch_size / 2.0
            jobs.append(PlanJob(
                rect=Rect(x=x, y=y, w=patch_size, h=patch_size),
                center_world=canvas.pixel_to_world(cx, cy),
            ))
    return PatchPlan(jobs=tuple(jobs), patch_size=patch_size, overlap=overlap)


def plan_patches(canvas: Canvas, patch_size: int, overlap: int) -> PatchPlan:
    return plan_patches_region(
        canvas, Rect(0, 0, canvas.width, canvas.height), patch_size, overlap
    )


def derive_weights(
    model: ProjectionModel, dataset: Dataset, style: PromptSpec, center_world
) -> KeywordWeights:
    """Keyword weights at a latent coordinate: invert the projection there,
    then weight the style's keywords by similarity to the recovered embedding."""
    embedding = inverse_transform(model, dataset, center_world)
    return keyword_weights(style, embedding)


def run(atlas: AtlasRun, backend, state_path=None, checkpoint_every: int = 0,
        progress=None) -> Canvas:
    """Execute the remaining jobs of a plan, compositing patch by patch.

    Backend failures persist resumable state (when state_path is given) and
    re-raise; resuming re-executes from the first incomplete job and yields a
    canvas byte-identical to an uninterrupted run.  progress, when given, is
    called as progress(completed, total) after each job.
    """
    canvas = atlas.canvas
    prompts = expand_all(atlas.style)
    total = len(atlas.plan)
    if progress is not None:
        progress(atlas.completed, total)
    while atlas.completed < total:
        idx = atlas.completed
        job = atlas.plan.jobs[idx]
        r = job.rect
        region_covered = canvas.covered[r.y : r.y1, r.x : r.x1]
        mask = ~region_covered
        if not mask.any():
            log.debug("job %d/%d: already covered, skipping", idx + 1, total)
            atlas.completed = idx + 1
            if progress is not None:
                progress(atlas.completed, total)
            continue
        weights = derive_weights(atlas.model, atlas.dataset, atlas.style, job.center_world)
        request = RenderRequest(
            patch=PatchImage(pixels=canvas.pixels[r.y : r.y1, r.x : r.x1].copy()),
            mask=InpaintMask(mask=mask.copy()),
            weights=weights,
            prompts=prompts,
            seed=atlas.seed ^ idx,
            origin=(r.x, r.y),
            tag=f"job-{idx}",
        )
        try:
            out = render(backend, request)
        except BackendError:
            if state_path is not None:
                save_run_state(atlas, state_path)
                log.error("job %d/%d failed; resumable state saved to %s",
                          idx + 1, total, state_path)
            raise
        region = canvas.pixels[r.y : r.y1, r.x : r.x1]
        region[mask] = out.pixels[mask]
        canvas.covered[r.y : r.y1, r.x : r.x1] = True
        atlas.completed = idx + 1
        if progress is not None:
            progress(atlas.completed, total)
        log.info("job %d/%d composited (%d px)", idx + 1, total, int(mask.sum()))
        if state_path is not None and checkpoint_every and atlas.completed % checkpoint_every == 0:
            save_run_state(atlas, state_path)
    if state_path is not None:
        save_run_state(atlas, state_path)
    return canvas


def world_rect_to_pixels(canvas: Canvas, min_x: float, min_y: float, max_x: float, max_y: float) -> Rect:
    """Pixel bounding rect of a world rectangle, clamped to the canvas."""
    if max_x <= min_x or max_y <= min_y:
        raise ValidationError("world rect must have positive extent")
    px0, py0 = canvas.world_to_pixel(min_x, min_y)
    px1, py1 = canvas.world_to_pixel(max_x, max_y)
    x0 = max(0, int(np.floor(px0)))
    y0 = max(0, int(np.floor(py0)))
    x1 = min(canvas.width, int(np.ceil(px1)))
    y1 = min(canvas.height, int(np.ceil(py1)))
    if x1 <= x0 or y1 <= y0:
        raise ValidationError("world rect does not intersect the canvas")
    return Rect(x=x0, y=y0, w=x1 - x0, h=y1 - y0)


def restyle_region(atlas: AtlasRun, rect_world, style2: PromptSpec, backend,
                   state_path=None, progress=None) -> Canvas:
    """Re-render one world rectangle in a different style.

    Coverage inside the rect is cleared and the rect is re-planned; pixels
    outside stay covered, so the surrounding map serves as inpainting context
    and is never touched.
    """
    region = world_rect_to_pixels(atlas.canvas, *rect_world)
    atlas.canvas.covered[region.y : region.y1, region.x : region.x1] = False
    sub_plan = plan_patches_region(atlas.canvas, region, atlas.plan.patch_size, atlas.plan.overlap)
    sub_run = AtlasRun(
        canvas=atlas.canvas,
        plan=sub_plan,
        style=style2,
        seed=atlas.seed,
        dataset=atlas.dataset,
        model=atlas.model,
        backend_id=atlas.backend_id,
        completed=0,
    )
    log.info("restyling %s with style %r: %d jobs", region, style2.name, len(sub_plan))
    return run(sub_run, backend, state_path=state_path, progress=progress)


def ownership_map(plan: PatchPlan, height: int, width: int) -> np.ndarray:
    """Replay the plan's coverage logic: owner[p] = index of the job that
    first covers pixel p (-1 if never covered)."""
    owner = np.full((height, width), -1, dtype=np.int64)
    covered = np.zeros((height, width), dtype=bool)
    for idx, job in enumerate(plan.jobs):
        r = job.rect
        fresh = ~covered[r.y : r.y1, r.x : r.x1]
        owner[r.y : r.y1, r.x : r.x1][fresh] = idx
        covered[r.y : r.y1, r.x : r.x1] = True
    return owner


def save_run_state(atlas: AtlasRun, path) -> None:
    header = {
        "version": 1,
        "seed": atlas.seed,
        "completed": atlas.completed,
        "backend_id": atlas.backend_id,
        "patch_size": atlas.plan.patch_size,
        "overlap": atlas.plan.overlap,
        "canvas": {
            "width": atlas.canvas.width,
            "height": atlas.canvas.height,
            "world": [atlas.canvas.world.min_x, atlas.canvas.world.min_y,
                      atlas.canvas.world.max_x, atlas.canvas.world.max_y],
        },
        "style": {
            "name": atlas.style.name,
            "template": atlas.style.template,
            "keywords": list(atlas.style.keywords),
            "temperature": atlas.style.temperature,
        },
        "jobs": [
            [j.rect.x, j.rect.y, j.rect.w, j.rect.h, j.center_world[0], j.center_world[1]]
            for j in atlas.plan.jobs
        ],
        "dataset_checksum": atlas.dataset.checksum(),
        "model_source": atlas.model.source.checksum,
    }
    head = json.dumps(header).encode("utf-8")
    if atlas.style.keyword_embeddings is None:
        raise ValidationError("cannot persist a run whose style has no keyword embeddings")
    data = RUN_MAGIC + struct.pack("<I", len(head)) + head
    data += pack_block(zlib.compress(atlas.canvas.pixels.tobytes(), level=6))
    data += pack_block(np.packbits(atlas.canvas.covered).tobytes())
    data += pack_block(matrix_to_bytes(atlas.style.keyword_embeddings))
    atomic_write_bytes(path, data)


def load_run_state(path, dataset: Dataset, model: ProjectionModel) -> AtlasRun:
    data = read_bytes(path)
    if len(data) < len(RUN_MAGIC) + 4 or data[: len(RUN_MAGIC)] != RUN_MAGIC:
        raise CorruptFileError(f"{path}: bad run-state signature")
    (header_len,) = struct.unpack_from("<I", data, len(RUN_MAGIC))
    start = len(RUN_MAGIC) + 4
    if start + header_len > len(data):
        raise CorruptFileError(f"{path}: truncated run-state header")
    try:
        header = json.loads(data[start : start + header_len])
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: unreadable run-state header") from exc
    if header.get("version") != 1:
        raise CorruptFileError(f"{path}: unsupported run-state version")
    if header["dataset_checksum"] != dataset.checksum():
        raise ValidationError(f"{path}: run state belongs to a different dataset")
    if header["model_source"] != model.source.checksum:
        raise ValidationError(f"{path}: run state belongs to a different model")
    reader = BlockReader(data, start + header_len, source=str(path))
    width = header["canvas"]["width"]
    height = header["canvas"]["height"]
    try:
        raw = zlib.decompress(reader.next_block())
    except zlib.error as exc:
        raise CorruptFileError(f"{path}: undecodable canvas block") from exc
    if len(raw) != height * width * 4:
        raise CorruptFileError(f"{path}: canvas block has wrong length")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 4).copy()
    bits = np.frombuffer(reader.next_block(), dtype=np.uint8)
    covered = np.unpackbits(bits, count=height * width).astype(bool).reshape(height, width)
    embeddings = matrix_from_bytes(reader.next_block(), source=str(path))
    reader.expect_end()
    wb = header["canvas"]["world"]
    canvas = Canvas(
        pixels=pixels,
        covered=covered,
        world=WorldBox(min_x=wb[0], min_y=wb[1], max_x=wb[2], max_y=wb[3]),
    )
    style = PromptSpec(
        template=header["style"]["template"],
        keywords=tuple(header["style"]["keywords"]),
        keyword_embeddings=embeddings,
        temperature=header["style"]["temperature"],
        name=header["style"]["name"],
    )
    jobs = tuple(
        PlanJob(rect=Rect(x=j[0], y=j[1], w=j[2], h=j[3]), center_world=(j[4], j[5]))
        for j in header["jobs"]
    )
    plan = PatchPlan(jobs=jobs, patch_size=header["patch_size"], overlap=header["overlap"])
    return AtlasRun(
        canvas=canvas,
        plan=plan,
        style=style,
        seed=header["seed"],
        dataset=dataset,
        model=model,
        backend_id=header["backend_id"],
        completed=header["completed"],
    )

"""Renderer data types and the mask-respecting dispatcher.

Backends receive a RenderRequest and return a completed patch.  The
dispatcher, not the backend, guarantees that pixels outside the inpainting
mask survive byte-exactly: remote services are free to repaint context, so
the dispatcher's final overwrite is what makes the contract hold everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BackendError, ValidationError
from ..prompt import KeywordWeights


@dataclass(frozen=True)
class PatchImage:
    """An RGBA pixel rectangle, 8 bits per channel, row-major."""

    pixels: np.ndarray  # (H, W, 4) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ValidationError(f"patch pixels must be (H, W, 4) uint8, got {px.shape} {px.dtype}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class InpaintMask:
    """True where the renderer should generate, false where context persists."""

    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2 or m.dtype != np.bool_:
            raise ValidationError(f"mask must be (H, W) bool, got {m.shape} {m.dtype}")
        object.__setattr__(self, "mask", m)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


@dataclass(frozen=True)
class RenderRequest:
    """Everything a backend needs to complete one patch.

    origin is the patch's (x, y) offset in canvas pixels; world-aligned
    backends (the procedural one) sample their textures there so that
    independently rendered patches agree on shared pixels.  seed is the
    per-job seed; stateless diffusion backends key their sampling off it.
    """

    patch: PatchImage
    mask: InpaintMask
    weights: KeywordWeights
    prompts: tuple[str, ...]
    seed: int
    origin: tuple[int, int] = (0, 0)
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if len(self.weights) != len(self.prompts):
            raise ValidationError(
                f"{len(self.weights)} weights for {len(self.prompts)} prompts"
            )
        if (self.patch.height, self.patch.width) != (self.mask.height, self.mask.width):
            raise ValidationError(
                f"mask {self.mask.mask.shape} does not match patch "
                f"{self.patch.pixels.shape[:2]}"
            )
        if not bool(self.mask.mask.any()):
            raise ValidationError(f"request {self.tag or '<untagged>'}: mask is all-false")


def render(backend, request: RenderRequest) -> PatchImage:
    """Dispatch a request to a backend and enforce the output contract.

    Output dimensions must equal input dimensions, and every pixel where
    mask=false is overwritten with the input patch regardless of what the
    backend produced.
    """
    out = backend.render(request)
    if (out.height, out.width) != (request.patch.height, request.patch.width):
        raise BackendError(
            f"backend returned {out.width}x{out.height} for a "
            f"{request.patch.width}x{request.patch.height} patch",
            tag=request.tag,
        )
    pixels = out.pixels.copy()
    keep = ~request.mask.mask
    pixels[keep] = request.patch.pixels[keep]
    return PatchImage(pixels=pixels)

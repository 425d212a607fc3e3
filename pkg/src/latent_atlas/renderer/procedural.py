"""Deterministic procedural backend: keyword-blended value noise.

Each keyword owns an RGB value-noise texture seeded by (keyword index, global
seed).  Lattice values come from a 64-bit avalanche hash, samples are bilinear
between lattice points 32 pixels apart, and a patch's pixels are addressed in
canvas coordinates, so independently rendered patches agree byte-exactly on
shared pixels.  The masked region's color is the weight-blended mix of the
keyword textures, rounded half-to-even per channel.
"""

from __future__ import annotations

import numpy as np

from .types import PatchImage, RenderRequest

LATTICE_CELL = 32
_U64 = np.uint64
_SM_GAMMA = _U64(0x9E3779B97F4A7C15)
_SM_MUL1 = _U64(0xBF58476D1CE4E5B9)
_SM_MUL2 = _U64(0x94D049BB133111EB)


def splitmix64(x):
    """SplitMix64 avalanche finalizer over uint64 scalars or arrays."""
    with np.errstate(over="ignore"):  # wraparound is the point
        x = np.asarray(x, dtype=np.uint64)
        x = x + _SM_GAMMA
        x = (x ^ (x >> _U64(30))) * _SM_MUL1
        x = (x ^ (x >> _U64(27))) * _SM_MUL2
        return x ^ (x >> _U64(31))


def lattice_hash(keyword: int, seed: int, lx, ly):
    """64-bit hash of (keyword, seed, lattice x, lattice y)."""
    h = splitmix64(_U64(seed & 0xFFFFFFFFFFFFFFFF))
    h = splitmix64(h ^ _U64(keyword))
    h = splitmix64(h ^ np.asarray(lx, dtype=np.uint64))
    return splitmix64(h ^ np.asarray(ly, dtype=np.uint64))


_FRAC = np.arange(LATTICE_CELL, dtype=np.float64) / LATTICE_CELL


def keyword_texture(keyword: int, seed: int, origin: tuple[int, int], width: int, height: int) -> np.ndarray:
    """RGB float64 texture for one keyword over a canvas-aligned rectangle.

    Per pixel at canvas position (x, y): bilinear interpolation of the four
    surrounding lattice values, n0 = v00 + fx(v01-v00), n1 = v10 + fx(v11-v10),
    value = n0 + fy(n1-n0), with fx = (x mod 32)/32 and fy likewise.  Computed
    cell-blocked (the fractions repeat every cell) but element-for-element the
    arithmetic is exactly the per-pixel formula.
    """
    ox, oy = origin
    lx0, lx1 = ox // LATTICE_CELL, (ox + width - 1) // LATTICE_CELL
    ly0, ly1 = oy // LATTICE_CELL, (oy + height - 1) // LATTICE_CELL
    gx = np.arange(lx0, lx1 + 2, dtype=np.uint64)
    gy = np.arange(ly0, ly1 + 2, dtype=np.uint64)
    grid = lattice_hash(keyword, seed, gx[None, :], gy[:, None])
    vals = np.empty(grid.shape + (3,), dtype=np.float64)
    for c, shift in enumerate((_U64(0), _U64(8), _U64(16))):
        vals[:, :, c] = ((grid >> shift) & _U64(0xFF)).astype(np.float64)
    v00 = vals[:-1, :-1]
    v01 = vals[:-1, 1:]
    v10 = vals[1:, :-1]
    v11 = vals[1:, 1:]
    fx = _FRAC[None, None, :, None]
    n0 = v00[:, :, None, :] + fx * (v01 - v00)[:, :, None, :]  # (cy, cx, 32, 3)
    n1 = v10[:, :, None, :] + fx * (v11 - v10)[:, :, None, :]
    fy = _FRAC[None, :, None, None, None]
    block = n0[:, None] + fy * (n1 - n0)[:, None]  # (cy, 32, cx, 32, 3)
    ch, cw = v00.shape[0], v00.shape[1]
    block = block.reshape(ch * LATTICE_CELL, cw * LATTICE_CELL, 3)
    y_off = oy - ly0 * LATTICE_CELL
    x_off = ox - lx0 * LATTICE_CELL
    return block[y_off : y_off + height, x_off : x_off + width]


def blend_textures(weights, seed: int, origin: tuple[int, int], width: int, height: int) -> np.ndarray:
    """Weight-blended keyword textures, rounded half-to-even to uint8 RGB.

    Accumulates in keyword order; zero weights contribute exactly nothing, so
    skipping them cannot change the result.
    """
    acc = np.zeros((height, width, 3), dtype=np.float64)
    for k, w in enumerate(np.asarray(weights, dtype=np.float64).tolist()):
        if w == 0.0:
            continue
        acc += w * keyword_texture(k, seed, origin, width, height)
    return np.clip(np.rint(acc), 0, 255).astype(np.uint8)


class ProceduralBackend:
    """Reference backend: pure function of (request, global seed)."""

    name = "procedural"

    def __init__(self, seed: int):
        self.seed = seed

    def render(self, request: RenderRequest) -> PatchImage:
        h, w = request.patch.height, request.patch.width
        rgb = blend_textures(request.weights.weights, self.seed, request.origin, w, h)
        pixels = request.patch.pixels.copy()
        m = request.mask.mask
        pixels[m, :3] = rgb[m]
        pixels[m, 3] = 255
        return PatchImage(pixels=pixels)


def procedural_render(request: RenderRequest, seed: int) -> PatchImage:
    """Functional form of the procedural backend."""
    return ProceduralBackend(seed).render(request)

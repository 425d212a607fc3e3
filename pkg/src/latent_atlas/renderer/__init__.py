"""Patch renderer backends behind a single mask-respecting dispatch contract."""

from .procedural import ProceduralBackend, lattice_hash, procedural_render, splitmix64
from .remote import RemoteBackend, RetryPolicy
from .types import InpaintMask, PatchImage, RenderRequest, render

__all__ = [
    "PatchImage",
    "InpaintMask",
    "RenderRequest",
    "render",
    "ProceduralBackend",
    "procedural_render",
    "splitmix64",
    "lattice_hash",
    "RemoteBackend",
    "RetryPolicy",
]

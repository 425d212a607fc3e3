"""Prompt styles: keyword lists, templates, and similarity-weighted mixing.

A style is a template with one <KEYWORD> slot plus an ordered keyword list.
Given an embedding, keyword weights are the softmax (at a configurable
temperature) of its cosine similarities to per-keyword embedding vectors.
Keyword embeddings are precomputed offline and loaded from a matrix file;
no text encoder runs here.  For desk-scale work without a real encoder,
deterministic pseudo-embeddings can be derived from the keyword text.

All functions are pure over immutable PromptSpec values.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .io_util import atomic_write_bytes, read_bytes, read_matrix

log = logging.getLogger("latent_atlas.prompt")

KEYWORD_SLOT = "<KEYWORD>"
DEFAULT_TEMPERATURE = 0.07
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class PromptSpec:
    """A map style: template, keywords, optional unit-norm keyword embeddings."""

    template: str
    keywords: tuple[str, ...]
    keyword_embeddings: np.ndarray | None = None
    temperature: float = DEFAULT_TEMPERATURE
    name: str = "style"

    def __post_init__(self):
        if self.template.count(KEYWORD_SLOT) != 1:
            raise ValidationError(
                f"template must contain the {KEYWORD_SLOT} slot exactly once: {self.template!r}"
            )
        if len(self.keywords) < 1:
            raise ValidationError("a style needs at least one keyword")
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(self, "keywords", tuple(self.keywords))
        if self.keyword_embeddings is not None:
            emb = np.asarray(self.keyword_embeddings, dtype=np.float64)
            if emb.ndim != 2 or emb.shape[0] != len(self.keywords):
                raise ValidationError(
                    f"keyword embeddings must be K x D' with K={len(self.keywords)}, "
                    f"got shape {emb.shape}"
                )
            norms = np.sqrt((emb**2).sum(axis=1))
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise ValidationError("keyword embedding rows must be unit-norm")
            emb.setflags(write=False)
            object.__setattr__(self, "keyword_embeddings", emb)
        dupes = {kw for kw in self.keywords if self.keywords.count(kw) > 1}
        if dupes:
            log.warning(
                "style %r has duplicate keywords %s; their prompt weight is shared",
                self.name,
                sorted(dupes),
            )

    @property
    def n_keywords(self) -> int:
        return len(self.keywords)


@dataclass(frozen=True)
class KeywordWeights:
    """Nonnegative interpolation coefficients over a style's keywords, sum 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0):
            raise ValidationError("keyword weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValidationError(f"keyword weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.shape[0]


def expand_template(spec: PromptSpec, index: int) -> str:
    """Substitute keyword `index` into the template, all else byte-identical."""
    if not 0 <= index < spec.n_keywords:
        raise ValidationError(f"keyword index {index} out of range [0, {spec.n_keywords})")
    return spec.template.replace(KEYWORD_SLOT, spec.keywords[index])


def expand_all(spec: PromptSpec) -> list[str]:
    return [expand_template(spec, i) for i in range(spec.n_keywords)]


def keyword_weights(spec: PromptSpec, embedding) -> KeywordWeights:
    """Softmax over cosine similarities between the embedding and each keyword.

    Stabilized by subtracting the max similarity before exponentiation; scale
    of the input embedding does not matter.
    """
    if spec.keyword_embeddings is None:
        raise ValidationError(f"style {spec.name!r} has no keyword embeddings loaded")
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape != (spec.keyword_embeddings.shape[1],):
        raise DimensionMismatchError(
            f"embedding has shape {e.shape}, keyword embeddings are "
            f"{spec.keyword_embeddings.shape[1]}-dimensional"
        )
    norm = float(np.sqrt((e**2).sum()))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValidationError("cannot weight keywords for a zero or non-finite embedding")
    sims = spec.keyword_embeddings @ (e / norm)
    scores = (sims - sims.max()) / spec.temperature
    exps = np.exp(scores)
    return KeywordWeights(weights=exps / exps.sum())


def interpolate_prompt_embedding(weights: KeywordWeights, prompt_embeddings) -> np.ndarray:
    """Convex combination of per-keyword prompt embeddings."""
    matrix = np.asarray(prompt_embeddings, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(weights):
        raise DimensionMismatchError(
            f"prompt embedding matrix has {matrix.shape[0] if matrix.ndim == 2 else '?'} rows, "
            f"expected {len(weights)}"
        )
    return weights.weights @ matrix


def derive_keyword_embeddings(keywords, dimension: int) -> np.ndarray:
    """Deterministic unit vectors derived from keyword text.

    A stand-in for offline text-encoder output at desk scale: each keyword's
    vector is seeded from the SHA-256 of its text, so it is stable across
    runs, platforms, and styles.  Duplicate keywords get identical vectors.
    """
    if dimension < 2:
        raise ValidationError(f"embedding dimension must be >= 2, got {dimension}")
    rows = []
    for kw in keywords:
        digest = hashlib.sha256(kw.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        v = rng.standard_normal(dimension)
        rows.append(v / np.sqrt((v**2).sum()))
    return np.asarray(rows, dtype=np.float64)


def with_embeddings(spec: PromptSpec, embeddings: np.ndarray) -> PromptSpec:
    return replace(spec, keyword_embeddings=embeddings)


def load_style(path: str | Path, embeddings_dim: int | None = None) -> PromptSpec:
    """Load a .style file (JSON).

    Fields: template, keywords, optional temperature, optional
    keyword_embeddings_path (matrix container, resolved relative to the style
    file).  When no embeddings file is named and embeddings_dim is given,
    deterministic derived embeddings are attached at that dimension.
    """
    path = Path(path)
    try:
        doc = json.loads(read_bytes(path).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid style file ({exc})") from exc
    for field in ("template", "keywords"):
        if field not in doc:
            raise ValidationError(f"{path}: style file missing field {field!r}")
    embeddings = None
    emb_path = doc.get("keyword_embeddings_path")
    if emb_path is not None:
        embeddings = read_matrix(path.parent / emb_path)
        norms = np.sqrt((embeddings**2).sum(axis=1))
        if np.any(norms == 0):
            raise ValidationError(f"{path}: zero-norm keyword embedding row")
        embeddings = embeddings / norms[:, None]  # defensive renormalization
    elif embeddings_dim is not None:
        embeddings = derive_keyword_embeddings(doc["keywords"], embeddings_dim)
    return PromptSpec(
        template=doc["template"],
        keywords=tuple(doc["keywords"]),
        keyword_embeddings=embeddings,
        temperature=float(doc.get("temperature", DEFAULT_TEMPERATURE)),
        name=doc.get("name", path.stem),
    )


def save_style(spec: PromptSpec, path: str | Path, embeddings_path: str | None = None) -> None:
    doc = {
        "name": spec.name,
        "template": spec.template,
        "keywords": list(spec.keywords),
        "temperature": spec.temperature,
    }
    if embeddings_path is not None:
        doc["keyword_embeddings_path"] = embeddings_path
    atomic_write_bytes(path, (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8"))

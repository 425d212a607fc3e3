"""Fitted projection models: the full fit pipeline, inversion, persistence.

fit composes build_knn -> smooth_knn -> fuzzy_union -> fit_curve -> layout and
stamps the result with the dataset checksum so the inverse transform can
refuse mismatched data.

The inverse transform is inverse-distance-weighted interpolation over the
nearest projected points: simple, convex, and exact on hits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..dataset import Dataset
from ..errors import ChecksumMismatchError, CorruptFileError, ValidationError
from ..io_util import BlockReader, atomic_write_bytes, pack_block, read_bytes
from .graph import FuzzyGraph, KnnGraph, directed_memberships, fuzzy_union, smooth_knn, build_knn
from .layout import fit_curve, layout, pca_init

MODEL_MAGIC = b"LATPM001"
INVERSE_K = 8
INVERSE_EPS = 1e-9


@dataclass(frozen=True)
class Hyper:
    """Projection hyperparameters with the conventional defaults."""

    k: int = 15
    min_dist: float = 0.1
    n_epochs: int = 200
    negative_sample_rate: int = 5
    learning_rate: float = 1.0
    seed: int = 42


@dataclass(frozen=True)
class SourceRef:
    """Identity of the dataset a model was fitted on."""

    name: str
    checksum: str


@dataclass(frozen=True)
class ProjectionModel:
    coords: np.ndarray
    knn: KnnGraph
    fuzzy: FuzzyGraph
    a: float
    b: float
    hyper: Hyper
    source: SourceRef

    def __post_init__(self):
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError("model coordinates must be finite")
        if self.coords.shape != (self.fuzzy.n_points, 2):
            raise ValidationError("coords length must equal dataset length")
        if self.a <= 0 or self.b <= 0:
            raise ValidationError("curve parameters a, b must be positive")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]


def fit(dataset: Dataset, hyper: Hyper = Hyper()) -> ProjectionModel:
    """Fit a 2D layout of the dataset; deterministic for a fixed seed."""
    knn = build_knn(dataset.matrix, hyper.k)
    rho, sigma, degenerate = smooth_knn(knn)
    heads, tails, weights = directed_memberships(knn, rho, sigma)
    fuzzy = fuzzy_union(
        len(dataset), heads, tails, weights, rho=rho, sigma=sigma, degenerate=degenerate
    )
    a, b = fit_curve(hyper.min_dist)
    init = pca_init(dataset.matrix, hyper.seed)
    coords = layout(
        fuzzy,
        a,
        b,
        init,
        n_epochs=hyper.n_epochs,
        learning_rate=hyper.learning_rate,
        negative_sample_rate=hyper.negative_sample_rate,
        seed=hyper.seed,
    )
    return ProjectionModel(
        coords=coords,
        knn=knn,
        fuzzy=fuzzy,
        a=a,
        b=b,
        hyper=hyper,
        source=SourceRef(name=dataset.name, checksum=dataset.checksum()),
    )


def inverse_transform(
    model: ProjectionModel,
    dataset: Dataset,
    point,
    k_inv: int = INVERSE_K,
    eps: float = INVERSE_EPS,
) -> np.ndarray:
    """Map a 2D coordinate back to embedding space.

    Inverse-distance-weighted mean over the k_inv nearest projected points
    (weights 1/(d + eps)^2, normalized); a query within eps of a projected
    point returns that record's embedding exactly.
    """
    if dataset.checksum() != model.source.checksum:
        raise ChecksumMismatchError(
            f"model was fitted on {model.source.name!r}, not this dataset"
        )
    p = np.asarray(point, dtype=np.float64)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise ValidationError(f"query point must be a finite 2D coordinate, got {point!r}")
    d = np.sqrt(((model.coords - p) ** 2).sum(axis=1))
    nearest = int(np.argmin(d))
    if d[nearest] <= eps:
        return dataset.records[nearest].vector.copy()
    idx = np.argsort(d, kind="stable")[: min(k_inv, len(dataset))]
    u = 1.0 / (d[idx] + eps) ** 2
    u /= u.sum()
    return u @ dataset.matrix[idx]


def model_to_bytes(model: ProjectionModel) -> bytes:
    header = {
        "version": 1,
        "hyper": asdict(model.hyper),
        "a": model.a,
        "b": model.b,
        "source": asdict(model.source),
        "n": model.n_points,
        "k": model.knn.k,
        "edges": int(model.fuzzy.n_edges),
    }
    head = json.dumps(header).encode("utf-8")
    blocks = [
        np.ascontiguousarray(model.coords, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.fuzzy.rho, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.fuzzy.sigma, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.fuzzy.degenerate, dtype="u1").tobytes(),
        np.ascontiguousarray(model.knn.neighbors, dtype="<i8").tobytes(),
        np.ascontiguousarray(model.knn.distances, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.fuzzy.edge_i, dtype="<i8").tobytes(),
        np.ascontiguousarray(model.fuzzy.edge_j, dtype="<i8").tobytes(),
        np.ascontiguousarray(model.fuzzy.edge_w, dtype="<f8").tobytes(),
    ]
    out = MODEL_MAGIC + struct.pack("<I", len(head)) + head
    for block in blocks:
        out += pack_block(block)
    return out


def save_model(model: ProjectionModel, path) -> None:
    atomic_write_bytes(path, model_to_bytes(model))


def load_model(path) -> ProjectionModel:
    data = read_bytes(path)
    if len(data) < len(MODEL_MAGIC) + 4 or data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise CorruptFileError(f"{path}: bad model signature")
    (header_len,) = struct.unpack_from("<I", data, len(MODEL_MAGIC))
    start = len(MODEL_MAGIC) + 4
    if start + header_len > len(data):
        raise CorruptFileError(f"{path}: truncated model header")
    try:
        header = json.loads(data[start : start + header_len])
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: unreadable model header") from exc
    if header.get("version") != 1:
        raise CorruptFileError(f"{path}: unsupported model version {header.get('version')}")
    n, k, m = header["n"], header["k"], header["edges"]
    reader = BlockReader(data, start + header_len, source=str(path))

    def block(dtype, shape):
        arr = np.frombuffer(reader.next_block(), dtype=dtype)
        expected = int(np.prod(shape))
        if arr.size != expected:
            raise CorruptFileError(f"{path}: block has {arr.size} items, expected {expected}")
        return arr.reshape(shape).copy()

    coords = block("<f8", (n, 2))
    rho = block("<f8", (n,))
    sigma = block("<f8", (n,))
    degenerate = block("u1", (n,)).astype(bool)
    neighbors = block("<i8", (n, k))
    distances = block("<f8", (n, k))
    edge_i = block("<i8", (m,))
    edge_j = block("<i8", (m,))
    edge_w = block("<f8", (m,))
    reader.expect_end()
    knn = KnnGraph(k=k, neighbors=neighbors, distances=distances)
    fuzzy = FuzzyGraph(
        rho=rho, sigma=sigma, degenerate=degenerate,
        edge_i=edge_i, edge_j=edge_j, edge_w=edge_w,
    )
    return ProjectionModel(
        coords=coords,
        knn=knn,
        fuzzy=fuzzy,
        a=float(header["a"]),
        b=float(header["b"]),
        hyper=Hyper(**header["hyper"]),
        source=SourceRef(**header["source"]),
    )

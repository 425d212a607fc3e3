"""Embedding datasets: ingest, validation, persistence, synthetic fixtures.

A dataset is an ordered collection of records, each carrying an id, a
D-dimensional float64 vector, an instrument-family label, and optional MIDI
pitch / audio path.  Values are immutable after construction and safe to
share across threads.

Native persistence is a small binary container (.latds): magic, a JSON
metadata header (name, dimension, per-record fields), then the raw float64
vector block.  JSONL and CSV are accepted at ingest only.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFileError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyDatasetError,
    IoError,
    NonFiniteVectorError,
    ValidationError,
)
from .io_util import atomic_write_bytes, read_bytes, sha256_hex

DATASET_MAGIC = b"LATDS001"


@dataclass(frozen=True)
class EmbeddingRecord:
    """One audio sample: id, embedding vector, family label, optional pitch/path."""

    id: str
    vector: np.ndarray
    family: str
    pitch: int | None = None
    audio_path: str | None = None

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise ValidationError(f"record {self.id!r}: vector must be 1-D")
        if not np.all(np.isfinite(vec)):
            raise NonFiniteVectorError(f"record {self.id!r}: non-finite vector component")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class Dataset:
    """An ordered, validated set of equal-dimension embedding records."""

    dimension: int
    records: tuple[EmbeddingRecord, ...]
    name: str = "dataset"
    _matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.records) == 0:
            raise EmptyDatasetError(f"dataset {self.name!r} has no records")
        if self.dimension < 2:
            raise ValidationError(f"dataset dimension must be >= 2, got {self.dimension}")
        seen = set()
        for rec in self.records:
            if rec.vector.shape[0] != self.dimension:
                raise DimensionMismatchError(
                    f"record {rec.id!r} has dimension {rec.vector.shape[0]}, "
                    f"dataset declares {self.dimension}"
                )
            if rec.id in seen:
                raise DuplicateIdError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
        matrix = np.stack([rec.vector for rec in self.records])
        matrix.setflags(write=False)
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "_matrix", matrix)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def matrix(self) -> np.ndarray:
        """All vectors as a read-only (n, D) float64 array, row i = record i."""
        return self._matrix

    @property
    def families(self) -> list[str]:
        return [rec.family for rec in self.records]

    @property
    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]

    def to_bytes(self) -> bytes:
        meta = {
            "name": self.name,
            "dimension": self.dimension,
            "count": len(self.records),
            "records": [
                {
                    "id": rec.id,
                    "family": rec.family,
                    "pitch": rec.pitch,
                    "audio_path": rec.audio_path,
                }
                for rec in self.records
            ],
        }
        header = json.dumps(meta, ensure_ascii=False).encode("utf-8")
        body = np.ascontiguousarray(self._matrix, dtype="<f8").tobytes()
        return DATASET_MAGIC + struct.pack("<I", len(header)) + header + body

    def checksum(self) -> str:
        """Stable content hash; ties a fitted model to its training data."""
        return sha256_hex(self.to_bytes())


def _build(records: list[EmbeddingRecord], name: str) -> Dataset:
    if not records:
        raise EmptyDatasetError(f"no records parsed for dataset {name!r}")
    return Dataset(dimension=records[0].vector.shape[0], records=tuple(records), name=name)


def _parse_pitch(raw, where: str) -> int | None:
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: pitch {raw!r} is not an integer") from None


def _ingest_jsonl(text: str, name: str) -> Dataset:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: invalid JSON ({exc})") from exc
        missing = {"id", "vector", "family"} - obj.keys()
        if missing:
            raise ValidationError(f"line {lineno}: missing fields {sorted(missing)}")
        records.append(
            EmbeddingRecord(
                id=str(obj["id"]),
                vector=np.asarray(obj["vector"], dtype=np.float64),
                family=str(obj["family"]),
                pitch=_parse_pitch(obj.get("pitch"), f"line {lineno}"),
                audio_path=obj.get("audio_path"),
            )
        )
    return _build(records, name)


def _ingest_csv(text: str, name: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyDatasetError("empty CSV file") from None
    fixed = ["id", "family", "pitch", "audio_path"]
    if header[: len(fixed)] != fixed:
        raise ValidationError(f"CSV header must start with {','.join(fixed)}, got {header[:4]}")
    dim = len(header) - len(fixed)
    if dim < 1:
        raise ValidationError("CSV header declares no vector columns")
    expected_cols = [f"v{i}" for i in range(dim)]
    if header[len(fixed):] != expected_cols:
        raise ValidationError("CSV vector columns must be v0..v{D-1} in order")
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValidationError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            vector = np.asarray([float(c) for c in row[len(fixed):]], dtype=np.float64)
        except ValueError:
            raise ValidationError(f"line {lineno}: non-numeric vector cell") from None
        records.append(
            EmbeddingRecord(
                id=row[0],
                vector=vector,
                family=row[1],
                pitch=_parse_pitch(row[2], f"line {lineno}"),
                audio_path=row[3] or None,
            )
        )
    return _build(records, name)


def ingest(path: str | Path, format: str = "jsonl", name: str | None = None) -> Dataset:
    """Parse a JSONL or CSV embedding file into a validated Dataset.

    Rejects (never repairs) dimension mismatches, non-finite components,
    duplicate ids, and empty files.
    """
    path = Path(path)
    text = read_bytes(path).decode("utf-8")
    if not text.strip():
        raise EmptyDatasetError(f"{path}: empty file")
    dataset_name = name if name is not None else path.stem
    if format == "jsonl":
        return _ingest_jsonl(text, dataset_name)
    if format == "csv":
        return _ingest_csv(text, dataset_name)
    raise ValidationError(f"unknown ingest format {format!r}")


def synth_fixture(
    n_clusters: int,
    points_per_cluster: int,
    dimension: int,
    seed: int,
    name: str | None = None,
) -> Dataset:
    """Deterministic clustered fixture standing in for real embedding data.

    Cluster centers sit on a jittered planar grid inside a random 2D subspace
    of R^D, rescaled so the minimum pairwise center distance is 10x the
    within-cluster per-coordinate noise std (1.0).  Points are centers plus
    unit isotropic noise, except the first point of each cluster, which sits
    exactly on its center.  The planar center layout gives the data a faithful
    2D arrangement for projection tests; the noise is genuinely D-dimensional.
    Family label is the cluster index; pitch is fixed at MIDI 60 (C4).
    """
    dataset, _, _ = synth_fixture_detail(n_clusters, points_per_cluster, dimension, seed, name)
    return dataset


def synth_fixture_detail(
    n_clusters: int,
    points_per_cluster: int,
    dimension: int,
    seed: int,
    name: str | None = None,
) -> tuple[Dataset, np.ndarray, float]:
    """synth_fixture plus the true centers and noise std, for direct verification."""
    if min(n_clusters, points_per_cluster, dimension, seed + 1) < 1 or dimension < 2:
        raise ValidationError("fixture arguments must be positive (dimension >= 2, seed >= 0)")
    rng = np.random.default_rng(seed)
    noise_std = 1.0
    cols = int(np.ceil(np.sqrt(n_clusters)))
    grid = np.array([(i % cols, i // cols) for i in range(n_clusters)], dtype=np.float64)
    grid += rng.uniform(-0.15, 0.15, size=grid.shape)
    basis = np.linalg.qr(rng.standard_normal((dimension, 2)))[0]
    centers = grid @ basis.T
    if n_clusters > 1:
        diffs = centers[:, None, :] - centers[None, :, :]
        dists = np.sqrt((diffs**2).sum(axis=2))
        min_dist = dists[np.triu_indices(n_clusters, k=1)].min()
        if min_dist <= 0:
            raise ValidationError("degenerate center draw; use a different seed")
        centers = centers * (10.0 * noise_std / min_dist)
    records = []
    for c in range(n_clusters):
        noise = rng.standard_normal((points_per_cluster, dimension)) * noise_std
        noise[0] = 0.0  # first point of each cluster sits exactly on the center
        points = centers[c] + noise
        for p in range(points_per_cluster):
            records.append(
                EmbeddingRecord(
                    id=f"c{c:02d}s{p:03d}",
                    vector=points[p],
                    family=f"family{c:02d}",
                    pitch=60,
                )
            )
    fixture_name = name or f"fixture-{n_clusters}x{points_per_cluster}d{dimension}s{seed}"
    return _build(records, fixture_name), centers, noise_std


def save(dataset: Dataset, path: str | Path) -> None:
    """Write the native container; load(save(d)) is bit-exact."""
    atomic_write_bytes(path, dataset.to_bytes())


def load(path: str | Path) -> Dataset:
    data = read_bytes(path)
    if len(data) < len(DATASET_MAGIC) + 4:
        raise CorruptFileError(f"{path}: truncated dataset container")
    if data[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise CorruptFileError(f"{path}: bad dataset signature")
    (header_len,) = struct.unpack_from("<I", data, len(DATASET_MAGIC))
    header_start = len(DATASET_MAGIC) + 4
    if header_start + header_len > len(data):
        raise CorruptFileError(f"{path}: truncated metadata header")
    try:
        meta = json.loads(data[header_start : header_start + header_len])
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: unreadable metadata header") from exc
    dim = meta["dimension"]
    count = meta["count"]
    body_start = header_start + header_len
    expected = count * dim * 8
    if len(data) - body_start != expected:
        raise CorruptFileError(
            f"{path}: vector block is {len(data) - body_start} bytes, expected {expected}"
        )
    matrix = np.frombuffer(data, dtype="<f8", count=count * dim, offset=body_start)
    matrix = matrix.reshape(count, dim)
    records = tuple(
        EmbeddingRecord(
            id=rec["id"],
            vector=matrix[i],
            family=rec["family"],
            pitch=rec.get("pitch"),
            audio_path=rec.get("audio_path"),
        )
        for i, rec in enumerate(meta["records"])
    )
    return Dataset(dimension=dim, records=records, name=meta["name"])

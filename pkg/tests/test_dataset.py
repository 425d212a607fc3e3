import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_atlas import dataset as ds
from latent_atlas.errors import (
    CorruptFileError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyDatasetError,
    NonFiniteVectorError,
    ValidationError,
)


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


class TestIngestJsonl:
    def test_paper_shape(self, tmp_path):
        rows = [
            {"id": f"s{i}", "vector": list(np.random.default_rng(i).normal(size=512)),
             "family": f"fam{i % 10}", "pitch": 60}
            for i in range(60)
        ]
        write_jsonl(tmp_path / "d.jsonl", rows)
        d = ds.ingest(tmp_path / "d.jsonl", format="jsonl")
        assert d.dimension == 512
        assert len(d) == 60
        assert len(set(d.families)) == 10
        assert d.ids == [f"s{i}" for i in range(60)]  # row order preserved

    def test_minimal_single_row(self, tmp_path):
        write_jsonl(tmp_path / "d.jsonl", [{"id": "a", "vector": [0, 0, 0], "family": "x"}])
        d = ds.ingest(tmp_path / "d.jsonl")
        assert d.dimension == 3 and len(d) == 1
        assert np.array_equal(d.records[0].vector, np.zeros(3))

    def test_dimension_mismatch(self, tmp_path):
        write_jsonl(tmp_path / "d.jsonl", [
            {"id": "a", "vector": [1, 2, 3, 4], "family": "x"},
            {"id": "b", "vector": [1, 2, 3, 4, 5], "family": "x"},
        ])
        with pytest.raises(DimensionMismatchError):
            ds.ingest(tmp_path / "d.jsonl")

    def test_non_finite_component(self, tmp_path):
        (tmp_path / "d.jsonl").write_text('{"id":"a","vector":[1,NaN],"family":"x"}\n')
        with pytest.raises((NonFiniteVectorError, ValidationError)):
            ds.ingest(tmp_path / "d.jsonl")

    def test_duplicate_id(self, tmp_path):
        write_jsonl(tmp_path / "d.jsonl", [
            {"id": "a", "vector": [1, 2], "family": "x"},
            {"id": "a", "vector": [3, 4], "family": "y"},
        ])
        with pytest.raises(DuplicateIdError):
            ds.ingest(tmp_path / "d.jsonl")

    def test_empty_file(self, tmp_path):
        (tmp_path / "d.jsonl").write_text("")
        with pytest.raises(EmptyDatasetError):
            ds.ingest(tmp_path / "d.jsonl")

    def test_optional_fields_roundtrip(self, tmp_path):
        write_jsonl(tmp_path / "d.jsonl", [
            {"id": "a", "vector": [1, 2], "family": "x", "pitch": 60, "audio_path": "a.wav"},
            {"id": "b", "vector": [3, 4], "family": "y"},
        ])
        d = ds.ingest(tmp_path / "d.jsonl")
        assert d.records[0].pitch == 60 and d.records[0].audio_path == "a.wav"
        assert d.records[1].pitch is None and d.records[1].audio_path is None


class TestIngestCsv:
    def test_basic(self, tmp_path):
        text = "id,family,pitch,audio_path,v0,v1\nr0,guitar,60,,1.5,-2.5\nr1,flute,,x.wav,0,3\n"
        (tmp_path / "d.csv").write_text(text)
        d = ds.ingest(tmp_path / "d.csv", format="csv")
        assert d.dimension == 2 and len(d) == 2
        assert d.records[0].vector[0] == 1.5
        assert d.records[0].audio_path is None
        assert d.records[1].audio_path == "x.wav"
        assert d.records[1].pitch is None

    def test_bad_header(self, tmp_path):
        (tmp_path / "d.csv").write_text("id,vector\n")
        with pytest.raises(ValidationError):
            ds.ingest(tmp_path / "d.csv", format="csv")

    def test_non_numeric_cell(self, tmp_path):
        (tmp_path / "d.csv").write_text("id,family,pitch,audio_path,v0\nr0,x,,,oops\n")
        with pytest.raises(ValidationError):
            ds.ingest(tmp_path / "d.csv", format="csv")


class TestSynthFixture:
    def test_paper_shape(self):
        d = ds.synth_fixture(10, 6, 32, 42)
        assert len(d) == 60
        assert d.dimension == 32
        assert len(set(d.families)) == 10

    def test_single_point_at_center(self):
        d, centers, _ = ds.synth_fixture_detail(1, 1, 2, 0)
        assert len(d) == 1
        assert np.array_equal(d.records[0].vector, centers[0])

    def test_center_separation(self):
        # brute-force distance check over all center pairs
        _, centers, noise_std = ds.synth_fixture_detail(3, 20, 16, 7)
        for i in range(3):
            for j in range(i + 1, 3):
                dist = float(np.sqrt(((centers[i] - centers[j]) ** 2).sum()))
                assert dist >= 10.0 * noise_std - 1e-9

    def test_deterministic(self):
        a = ds.synth_fixture(3, 5, 8, 1)
        b = ds.synth_fixture(3, 5, 8, 1)
        assert a.to_bytes() == b.to_bytes()

    def test_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            ds.synth_fixture(0, 5, 8, 1)
        with pytest.raises(ValidationError):
            ds.synth_fixture(3, 5, 1, 1)


class TestPersistence:
    def test_roundtrip_small(self, tmp_path):
        d = ds.synth_fixture(3, 5, 8, 1)
        ds.save(d, tmp_path / "d.latds")
        d2 = ds.load(tmp_path / "d.latds")
        assert d2.name == d.name and d2.dimension == d.dimension
        assert [r.id for r in d2.records] == [r.id for r in d.records]
        assert d2.to_bytes() == d.to_bytes()

    def test_roundtrip_60x512_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        recs = tuple(
            ds.EmbeddingRecord(id=f"r{i}", vector=rng.normal(size=512), family=f"f{i%10}")
            for i in range(60)
        )
        d = ds.Dataset(dimension=512, records=recs, name="big")
        ds.save(d, tmp_path / "big.latds")
        d2 = ds.load(tmp_path / "big.latds")
        for a, b in zip(d.records, d2.records):
            assert np.array_equal(a.vector, b.vector)  # component-wise, bit-exact

    def test_truncated_file(self, tmp_path):
        d = ds.synth_fixture(2, 3, 4, 0)
        ds.save(d, tmp_path / "d.latds")
        blob = (tmp_path / "d.latds").read_bytes()
        (tmp_path / "trunc.latds").write_bytes(blob[: len(blob) - 7])
        with pytest.raises(CorruptFileError):
            ds.load(tmp_path / "trunc.latds")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "junk.latds").write_bytes(b"NOTADATASET" + b"\x00" * 64)
        with pytest.raises(CorruptFileError):
            ds.load(tmp_path / "junk.latds")

    @settings(max_examples=20, deadline=None)
    @given(
        n_clusters=st.integers(1, 4),
        per=st.integers(1, 5),
        dim=st.integers(2, 16),
        seed=st.integers(0, 1000),
    )
    def test_roundtrip_property(self, tmp_path_factory, n_clusters, per, dim, seed):
        d = ds.synth_fixture(n_clusters, per, dim, seed)
        path = tmp_path_factory.mktemp("rt") / "d.latds"
        ds.save(d, path)
        assert ds.load(path).to_bytes() == d.to_bytes()


class TestInvariants:
    def test_duplicate_rejected_in_constructor(self):
        recs = (
            ds.EmbeddingRecord(id="a", vector=np.zeros(2), family="x"),
            ds.EmbeddingRecord(id="a", vector=np.ones(2), family="y"),
        )
        with pytest.raises(DuplicateIdError):
            ds.Dataset(dimension=2, records=recs)

    def test_matrix_is_readonly(self):
        d = ds.synth_fixture(2, 2, 4, 3)
        with pytest.raises(ValueError):
            d.matrix[0, 0] = 99.0
        with pytest.raises(ValueError):
            d.records[0].vector[0] = 99.0

    def test_checksum_changes_with_content(self):
        a = ds.synth_fixture(2, 2, 4, 3)
        b = ds.synth_fixture(2, 2, 4, 4)
        assert a.checksum() != b.checksum()
        assert a.checksum() == ds.synth_fixture(2, 2, 4, 3).checksum()

import logging
from pathlib import Path

import pytest

from latent_atlas import atlas as atlas_mod
from latent_atlas import dataset as dataset_mod
from latent_atlas import output as output_mod
from latent_atlas.projection import Hyper, fit
from latent_atlas.prompt import load_style
from latent_atlas.renderer import ProceduralBackend

logging.getLogger("latent_atlas.prompt").setLevel(logging.ERROR)  # duplicate-keyword lint noise

REPO_ROOT = Path(__file__).resolve().parent.parent
STYLES_DIR = REPO_ROOT / "styles"


@pytest.fixture(scope="session")
def fixture60():
    """The paper-shaped dataset: 60 points, 10 families, D=32."""
    return dataset_mod.synth_fixture(10, 6, 32, 42)


@pytest.fixture(scope="session")
def model60(fixture60):
    return fit(fixture60, Hyper(k=15, min_dist=0.1, seed=42))


@pytest.fixture(scope="session")
def fixture_small():
    """3 clusters x 20 points, D=16: the quick-iteration dataset."""
    return dataset_mod.synth_fixture(3, 20, 16, 7)


@pytest.fixture(scope="session")
def model_small(fixture_small):
    return fit(fixture_small, Hyper(k=10, min_dist=0.1, seed=7))


@pytest.fixture(scope="session")
def instruments_style_path():
    return STYLES_DIR / "instruments.style"


@pytest.fixture(scope="session")
def instruments_style(fixture60):
    return load_style(STYLES_DIR / "instruments.style", embeddings_dim=fixture60.dimension)


@pytest.fixture(scope="session")
def small_style(fixture_small):
    return load_style(STYLES_DIR / "instruments.style", embeddings_dim=fixture_small.dimension)


@pytest.fixture(scope="session")
def small_style2(fixture_small):
    return load_style(STYLES_DIR / "ornaments.style", embeddings_dim=fixture_small.dimension)


def build_stub_model(coords, dimension=4, seed=99):
    """A minimal valid ProjectionModel over a fresh dataset, coords as given."""
    import numpy as np

    from latent_atlas.projection.graph import FuzzyGraph, KnnGraph
    from latent_atlas.projection.model import Hyper, ProjectionModel, SourceRef

    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    rng = np.random.default_rng(seed)
    records = tuple(
        dataset_mod.EmbeddingRecord(
            id=f"r{i}", vector=rng.normal(size=dimension), family=f"f{i}"
        )
        for i in range(n)
    )
    data = dataset_mod.Dataset(dimension=dimension, records=records, name="stub")
    neighbors = np.array([[(i + 1) % n] for i in range(n)])
    distances = np.ones((n, 1))
    knn = KnnGraph(k=1, neighbors=neighbors, distances=distances)
    fuzzy = FuzzyGraph(
        rho=np.zeros(n),
        sigma=np.ones(n),
        degenerate=np.zeros(n, dtype=bool),
        edge_i=np.array([0]),
        edge_j=np.array([1]),
        edge_w=np.array([0.5]),
    )
    model = ProjectionModel(
        coords=coords, knn=knn, fuzzy=fuzzy, a=1.58, b=0.9,
        hyper=Hyper(k=1), source=SourceRef(name="stub", checksum=data.checksum()),
    )
    return model, data


def build_small_run(dataset, model, style, size=160, patch=64, overlap=16, seed=11):
    canvas = atlas_mod.make_canvas(model, size, 0.05)
    plan = atlas_mod.plan_patches(canvas, patch, overlap)
    return atlas_mod.AtlasRun(
        canvas=canvas, plan=plan, style=style, seed=seed, dataset=dataset, model=model
    )


@pytest.fixture(scope="session")
def finished_small_run(fixture_small, model_small, small_style):
    """A completed 160px atlas run (9 jobs), shared read-only."""
    run = build_small_run(fixture_small, model_small, small_style)
    atlas_mod.run(run, ProceduralBackend(seed=run.seed))
    return run


@pytest.fixture(scope="session")
def atlas_dir(tmp_path_factory, fixture_small, model_small, finished_small_run):
    """A full on-disk atlas directory: dataset, model, state, tiles, map."""
    from latent_atlas.projection import save_model

    root = tmp_path_factory.mktemp("atlas")
    dataset_mod.save(fixture_small, root / "dataset.latds")
    save_model(model_small, root / "model.latmodel")
    run = finished_small_run
    atlas_mod.save_run_state(run, root / "state.latrun")
    output_mod.export_png(run.canvas, root / "map.png")
    output_mod.export_tiles(
        run.canvas, root / "tiles",
        model=model_small, dataset=fixture_small, style_name=run.style.name,
    )
    (root / "styles").mkdir()
    for style_file in STYLES_DIR.glob("*.style"):
        (root / "styles" / style_file.name).write_bytes(style_file.read_bytes())
    return root

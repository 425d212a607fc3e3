import numpy as np
import pytest

from latent_atlas import atlas
from latent_atlas.errors import BackendError, DegenerateBoundsError, ValidationError
from latent_atlas.prompt import PromptSpec, derive_keyword_embeddings, keyword_weights
from latent_atlas.renderer import InpaintMask, PatchImage, ProceduralBackend, RenderRequest
from latent_atlas.renderer.types import render

from conftest import build_small_run, build_stub_model
from oracles import replay_ownership


class FailAfter:
    """Backend wrapper that injects a failure after n successful renders."""

    def __init__(self, inner, n):
        self.inner = inner
        self.n = n
        self.count = 0

    def render(self, request):
        if self.count >= self.n:
            raise BackendError("injected kill", tag=request.tag)
        self.count += 1
        return self.inner.render(request)


class WriteCounter:
    """Backend wrapper that accumulates per-pixel write counts from masks."""

    def __init__(self, inner, height, width):
        self.inner = inner
        self.writes = np.zeros((height, width), dtype=np.int64)

    def render(self, request):
        x, y = request.origin
        h, w = request.mask.height, request.mask.width
        self.writes[y : y + h, x : x + w] += request.mask.mask
        return self.inner.render(request)


class TestMakeCanvas:
    def test_unit_square_margin_arithmetic(self):
        model, _ = build_stub_model([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        canvas = atlas.make_canvas(model, 1024, 0.05)
        w = canvas.world
        assert (w.min_x, w.min_y, w.max_x, w.max_y) == pytest.approx(
            (-0.05, -0.05, 1.05, 1.05), abs=1e-12
        )
        px, py = canvas.world_to_pixel(1.05, 1.05)
        assert (px, py) == pytest.approx((1024.0, 1024.0), abs=1e-9)
        scale = 1024 / 1.1
        qx, _ = canvas.world_to_pixel(0.0, 0.0)
        assert qx == pytest.approx(0.05 * scale, abs=1e-9)

    def test_zero_margin_square_span_exact_scale(self):
        model, _ = build_stub_model([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        canvas = atlas.make_canvas(model, 512, 0.0)
        assert canvas.world.width == 2.0
        px, _ = canvas.world_to_pixel(2.0, 0.0)
        assert px == 512.0  # scale = size / span exactly

    def test_letterbox_preserves_aspect(self):
        model, _ = build_stub_model([[0.0, 0.0], [4.0, 0.0], [0.0, 1.0], [4.0, 1.0]])
        canvas = atlas.make_canvas(model, 256, 0.0)
        assert canvas.world.width == pytest.approx(canvas.world.height)
        assert canvas.world.width == pytest.approx(4.0)
        # y span centered: [-1.5, 2.5] around the 0..1 data
        assert canvas.world.min_y == pytest.approx(-1.5)

    def test_single_point_degenerate(self):
        model, _ = build_stub_model([[3.0, 4.0], [3.0, 4.0]])
        with pytest.raises(DegenerateBoundsError):
            atlas.make_canvas(model, 128, 0.05)

    def test_pixel_world_roundtrip(self, model_small):
        canvas = atlas.make_canvas(model_small, 160, 0.05)
        for wx, wy in [(0.0, 0.0), (1.5, -2.0), canvas.pixel_to_world(37.5, 111.25)]:
            px, py = canvas.world_to_pixel(wx, wy)
            rx, ry = canvas.pixel_to_world(px, py)
            assert abs(rx - wx) <= 1e-9 and abs(ry - wy) <= 1e-9


class TestPlanPatches:
    def test_stride_arithmetic_1024(self, model_small):
        canvas = atlas.make_canvas(model_small, 1024, 0.05)
        plan = atlas.plan_patches(canvas, 256, 64)
        assert len(plan) == 25
        xs = sorted({j.rect.x for j in plan.jobs})
        assert xs == [0, 192, 384, 576, 768]
        assert xs[-1] == 1024 - 256

    def test_single_job_when_canvas_equals_patch(self, model_small):
        canvas = atlas.make_canvas(model_small, 256, 0.05)
        plan = atlas.plan_patches(canvas, 256, 64)
        assert len(plan) == 1
        assert plan.jobs[0].rect == atlas.Rect(0, 0, 256, 256)

    def test_union_covers_canvas_pixelwise(self, model_small):
        canvas = atlas.make_canvas(model_small, 200, 0.05)
        plan = atlas.plan_patches(canvas, 64, 16)
        covered = np.zeros((200, 200), dtype=bool)
        for job in plan.jobs:
            r = job.rect
            assert 0 <= r.x and r.x1 <= 200 and 0 <= r.y and r.y1 <= 200
            covered[r.y : r.y1, r.x : r.x1] = True
        assert covered.all()

    def test_consecutive_overlap_at_least_nominal(self, model_small):
        canvas = atlas.make_canvas(model_small, 300, 0.05)
        plan = atlas.plan_patches(canvas, 128, 32)
        xs = sorted({j.rect.x for j in plan.jobs})
        for a, b in zip(xs, xs[1:]):
            assert a + 128 - b >= 32  # overlap band

    def test_raster_order(self, model_small):
        canvas = atlas.make_canvas(model_small, 160, 0.05)
        plan = atlas.plan_patches(canvas, 64, 16)
        seq = [(j.rect.y, j.rect.x) for j in plan.jobs]
        assert seq == sorted(seq)

    def test_center_world_matches_affine(self, model_small):
        canvas = atlas.make_canvas(model_small, 160, 0.05)
        plan = atlas.plan_patches(canvas, 64, 16)
        for job in plan.jobs:
            cx = job.rect.x + 32.0
            cy = job.rect.y + 32.0
            assert job.center_world == pytest.approx(canvas.pixel_to_world(cx, cy))

    def test_invalid_overlap_rejected(self, model_small):
        canvas = atlas.make_canvas(model_small, 160, 0.05)
        with pytest.raises(ValidationError):
            atlas.plan_patches(canvas, 64, 64)
        with pytest.raises(ValidationError):
            atlas.plan_patches(canvas, 64, 0)
        with pytest.raises(ValidationError):
            atlas.plan_patches(canvas, 512, 64)


class TestDeriveWeights:
    def test_center_at_sample_matching_keyword_is_maximal(self):
        model, data = build_stub_model(
            [[0.0, 0.0], [50.0, 0.0], [0.0, 50.0], [50.0, 50.0]], dimension=8
        )
        emb = derive_keyword_embeddings(["a", "b", "c"], 8)
        # make record 1's embedding exactly keyword "b"
        records = list(data.records)
        from latent_atlas.dataset import Dataset, EmbeddingRecord

        records[1] = EmbeddingRecord(id="r1", vector=emb[1], family="f1")
        data2 = Dataset(dimension=8, records=tuple(records), name="stub2")
        from latent_atlas.projection.model import ProjectionModel, SourceRef

        model2 = ProjectionModel(
            coords=model.coords, knn=model.knn, fuzzy=model.fuzzy, a=model.a,
            b=model.b, hyper=model.hyper,
            source=SourceRef(name="stub2", checksum=data2.checksum()),
        )
        style = PromptSpec(template="<KEYWORD>", keywords=("a", "b", "c"),
                           keyword_embeddings=emb)
        w = atlas.derive_weights(model2, data2, style, (50.0, 0.0))
        assert int(np.argmax(w.weights)) == 1

    def test_weights_valid_for_random_centers(self, fixture_small, model_small, small_style):
        canvas = atlas.make_canvas(model_small, 160, 0.05)
        rng = np.random.default_rng(12)
        for _ in range(100):
            cw = canvas.pixel_to_world(rng.uniform(0, 160), rng.uniform(0, 160))
            w = atlas.derive_weights(model_small, fixture_small, small_style, cw)
            assert np.all(w.weights >= 0)
            assert abs(float(w.weights.sum()) - 1.0) <= 1e-9

    def test_adjacent_centers_bounded_variation(self, fixture_small, model_small, small_style):
        canvas = atlas.make_canvas(model_small, 160, 0.05)
        plan = atlas.plan_patches(canvas, 64, 16)
        w0 = atlas.derive_weights(model_small, fixture_small, small_style,
                                  plan.jobs[0].center_world).weights
        w1 = atlas.derive_weights(model_small, fixture_small, small_style,
                                  plan.jobs[1].center_world).weights
        assert 0.5 * np.abs(w0 - w1).sum() < 1.0


class TestRun:
    def test_deterministic_and_covered(self, fixture_small, model_small, small_style):
        r1 = build_small_run(fixture_small, model_small, small_style)
        atlas.run(r1, ProceduralBackend(seed=r1.seed))
        r2 = build_small_run(fixture_small, model_small, small_style)
        atlas.run(r2, ProceduralBackend(seed=r2.seed))
        assert r1.canvas.covered.all()
        assert np.array_equal(r1.canvas.pixels, r2.canvas.pixels)

    def test_single_patch_equals_direct_render(self, fixture_small, model_small, small_style):
        run = build_small_run(fixture_small, model_small, small_style,
                              size=64, patch=64, overlap=16, seed=5)
        assert len(run.plan) == 1
        atlas.run(run, ProceduralBackend(seed=5))
        job = run.plan.jobs[0]
        from latent_atlas.prompt import expand_all

        request = RenderRequest(
            patch=PatchImage(pixels=np.zeros((64, 64, 4), dtype=np.uint8)),
            mask=InpaintMask(mask=np.ones((64, 64), dtype=bool)),
            weights=atlas.derive_weights(model_small, fixture_small, small_style,
                                         job.center_world),
            prompts=tuple(expand_all(small_style)),
            seed=5 ^ 0,
            origin=(0, 0),
        )
        direct = render(ProceduralBackend(seed=5), request)
        assert np.array_equal(run.canvas.pixels, direct.pixels)

    def test_every_pixel_written_exactly_once(self, fixture_small, model_small, small_style):
        run = build_small_run(fixture_small, model_small, small_style)
        counter = WriteCounter(ProceduralBackend(seed=run.seed), 160, 160)
        atlas.run(run, counter)
        assert np.all(counter.writes == 1)
        rects = [(j.rect.x, j.rect.y, j.rect.w, j.rect.h) for j in run.plan.jobs]
        owner = replay_ownership(rects, 160, 160)
        assert np.all(owner >= 0)
        mine = atlas.ownership_map(run.plan, 160, 160)
        assert np.array_equal(owner, mine)

    def test_monotone_coverage(self, fixture_small, model_small, small_style):
        run = build_small_run(fixture_small, model_small, small_style)
        counts = []
        backend = ProceduralBackend(seed=run.seed)

        class Spy:
            def render(self, request):
                counts.append(int(run.canvas.covered.sum()))
                return backend.render(request)

        atlas.run(run, Spy())
        assert counts == sorted(counts)
        assert run.canvas.covered.all()

    def test_kill_and_resume_byte_identical(self, fixture_small, model_small, small_style,
                                            tmp_path):
        reference = build_small_run(fixture_small, model_small, small_style)
        atlas.run(reference, ProceduralBackend(seed=reference.seed))

        for boundary in (1, 4, 8):
            state = tmp_path / f"state{boundary}.latrun"
            victim = build_small_run(fixture_small, model_small, small_style)
            with pytest.raises(BackendError):
                atlas.run(victim, FailAfter(ProceduralBackend(seed=victim.seed), boundary),
                          state_path=state)
            assert state.exists()
            resumed = atlas.load_run_state(state, fixture_small, model_small)
            assert resumed.completed == boundary
            atlas.run(resumed, ProceduralBackend(seed=resumed.seed))
            assert np.array_equal(resumed.canvas.pixels, reference.canvas.pixels)

    def test_state_roundtrip_preserves_everything(self, finished_small_run, fixture_small,
                                                  model_small, tmp_path):
        run = finished_small_run
        atlas.save_run_state(run, tmp_path / "s.latrun")
        back = atlas.load_run_state(tmp_path / "s.latrun", fixture_small, model_small)
        assert back.completed == run.completed
        assert back.seed == run.seed
        assert np.array_equal(back.canvas.pixels, run.canvas.pixels)
        assert np.array_equal(back.canvas.covered, run.canvas.covered)
        assert back.plan == run.plan
        assert back.style.keywords == run.style.keywords
        assert np.array_equal(back.style.keyword_embeddings, run.style.keyword_embeddings)

    def test_state_rejects_wrong_dataset(self, finished_small_run, fixture60, model_small,
                                         model60, tmp_path):
        atlas.save_run_state(finished_small_run, tmp_path / "s.latrun")
        with pytest.raises(ValidationError):
            atlas.load_run_state(tmp_path / "s.latrun", fixture60, model60)

    def test_skips_fully_covered_jobs(self, fixture_small, model_small, small_style):
        run = build_small_run(fixture_small, model_small, small_style)
        run.canvas.covered[:] = True
        run.canvas.covered[0:8, 0:8] = False  # only job 0 has work
        calls = []
        backend = ProceduralBackend(seed=run.seed)

        class Spy:
            def render(self, request):
                calls.append(request.tag)
                return backend.render(request)

        atlas.run(run, Spy())
        assert calls == ["job-0"]
        assert run.completed == len(run.plan)


class TestRestyle:
    def test_full_rect_same_style_idempotent(self, fixture_small, model_small, small_style):
        run = build_small_run(fixture_small, model_small, small_style)
        atlas.run(run, ProceduralBackend(seed=run.seed))
        before = run.canvas.pixels.copy()
        w = run.canvas.world
        atlas.restyle_region(run, (w.min_x, w.min_y, w.max_x, w.max_y), small_style,
                             ProceduralBackend(seed=run.seed))
        assert np.array_equal(run.canvas.pixels, before)

    def test_one_patch_rect_other_style_outside_unchanged(
        self, fixture_small, model_small, small_style, small_style2
    ):
        run = build_small_run(fixture_small, model_small, small_style)
        atlas.run(run, ProceduralBackend(seed=run.seed))
        before = run.canvas.pixels.copy()
        rect_px = atlas.Rect(48, 48, 64, 64)
        x0, y0 = run.canvas.pixel_to_world(rect_px.x, rect_px.y)
        x1, y1 = run.canvas.pixel_to_world(rect_px.x1, rect_px.y1)
        atlas.restyle_region(run, (x0, y0, x1, y1), small_style2,
                             ProceduralBackend(seed=run.seed))
        outside = np.ones((160, 160), dtype=bool)
        region = atlas.world_rect_to_pixels(run.canvas, x0, y0, x1, y1)
        outside[region.y : region.y1, region.x : region.x1] = False
        assert np.array_equal(run.canvas.pixels[outside], before[outside])
        assert not np.array_equal(run.canvas.pixels[~outside], before[~outside])
        assert run.canvas.covered.all()

    def test_empty_intersection_rejected(self, finished_small_run, small_style):
        w = finished_small_run.canvas.world
        far = (w.max_x + 10, w.max_y + 10, w.max_x + 20, w.max_y + 20)
        with pytest.raises(ValidationError):
            atlas.restyle_region(finished_small_run, far, small_style,
                                 ProceduralBackend(seed=finished_small_run.seed))

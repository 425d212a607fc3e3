"""Command-line pipeline: ingest -> project -> map -> overlay/tiles, plus
restyle, the conformance stub, and the viewer server.

Each subcommand runs one pipeline stage, writes its artifact, and prints a
single JSON summary line to stdout (progress goes to stderr).  Exit codes:
1 usage, 2 I/O, 3 validation, 4 backend, 5 internal.  LATENT_ATLAS_LOG
(error|info|debug) controls stderr verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, atlas as atlas_mod, dataset as dataset_mod, output as output_mod
from .errors import AtlasError, BackendError, IoError, UsageError, ValidationError
from .projection import model as model_mod
from .prompt import derive_keyword_embeddings, load_style, with_embeddings
from .renderer.procedural import ProceduralBackend
from .renderer.remote import RemoteBackend, RetryPolicy
from .renderer.stub import ConformanceStub

log = logging.getLogger("latent_atlas.cli")

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_BACKEND = 4
EXIT_INTERNAL = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def _emit(summary: dict) -> None:
    print(json.dumps(summary), flush=True)


def _setup_logging() -> None:
    level = os.environ.get("LATENT_ATLAS_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"LATENT_ATLAS_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(
        stream=sys.stderr,
        level=levels[level],
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_style_for(dataset, path: str):
    """Resolve a style against a dataset: styles without an embeddings file
    get deterministic text-derived embeddings at the dataset's dimension."""
    return load_style(path, embeddings_dim=dataset.dimension)


def _make_backend(args):
    if args.backend == "procedural":
        return ProceduralBackend(seed=args.seed)
    if args.backend == "remote":
        if not args.endpoint:
            raise UsageError("--backend remote requires --endpoint")
        return RemoteBackend(
            endpoint=args.endpoint,
            policy=RetryPolicy(timeout=args.timeout, retries=args.retries),
        )
    raise UsageError(f"unknown backend {args.backend!r}")


def cmd_ingest(args) -> dict:
    ds = dataset_mod.ingest(args.input, format=args.format, name=args.name)
    dataset_mod.save(ds, args.out)
    return {
        "command": "ingest",
        "records": len(ds),
        "dimension": ds.dimension,
        "families": len(set(ds.families)),
        "out": str(args.out),
    }


def cmd_fixture(args) -> dict:
    ds = dataset_mod.synth_fixture(args.clusters, args.per, args.dim, args.seed)
    dataset_mod.save(ds, args.out)
    return {
        "command": "fixture",
        "records": len(ds),
        "dimension": ds.dimension,
        "families": len(set(ds.families)),
        "out": str(args.out),
    }


def cmd_project(args) -> dict:
    ds = dataset_mod.load(args.dataset)
    hyper = model_mod.Hyper(
        k=args.k,
        min_dist=args.min_dist,
        n_epochs=args.epochs,
        negative_sample_rate=args.negative_rate,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    model = model_mod.fit(ds, hyper)
    model_mod.save_model(model, args.out)
    return {
        "command": "project",
        "points": model.n_points,
        "edges": int(model.fuzzy.n_edges),
        "a": model.a,
        "b": model.b,
        "out": str(args.out),
    }


def cmd_map(args) -> dict:
    if not 0 < args.overlap < args.patch:
        raise UsageError(f"need 0 < overlap < patch, got {args.overlap}, {args.patch}")
    if args.patch > args.size:
        raise UsageError(f"patch {args.patch} exceeds canvas size {args.size}")
    if args.margin < 0:
        raise UsageError(f"margin must be >= 0, got {args.margin}")
    ds = dataset_mod.load(args.dataset)
    model = model_mod.load_model(args.model)
    out_dir = Path(args.out_dir)
    state_path = out_dir / "state.latrun"
    if args.resume:
        run = atlas_mod.load_run_state(state_path, ds, model)
    else:
        style = _load_style_for(ds, args.style)
        canvas = atlas_mod.make_canvas(model, args.size, args.margin)
        plan = atlas_mod.plan_patches(canvas, args.patch, args.overlap)
        run = atlas_mod.AtlasRun(
            canvas=canvas, plan=plan, style=style, seed=args.seed,
            dataset=ds, model=model, backend_id=args.backend,
        )
    backend = _make_backend(args)
    canvas = atlas_mod.run(run, backend, state_path=state_path)
    png_path = out_dir / "map.png"
    output_mod.export_png(canvas, png_path)
    return {
        "command": "map",
        "jobs": len(run.plan),
        "completed": run.completed,
        "style": run.style.name,
        "map": str(png_path),
        "state": str(state_path),
    }


def cmd_restyle(args) -> dict:
    ds = dataset_mod.load(args.dataset)
    model = model_mod.load_model(args.model)
    run = atlas_mod.load_run_state(args.state, ds, model)
    style2 = _load_style_for(ds, args.style)
    try:
        rect = tuple(float(v) for v in args.rect.split(","))
    except ValueError:
        raise UsageError(f"--rect must be min_x,min_y,max_x,max_y, got {args.rect!r}") from None
    if len(rect) != 4:
        raise UsageError(f"--rect must have 4 components, got {len(rect)}")
    backend = _make_backend(args)
    atlas_mod.restyle_region(run, rect, style2, backend)
    atlas_mod.save_run_state(run, args.state)
    png_path = Path(args.state).parent / "map.png"
    output_mod.export_png(run.canvas, png_path)
    return {
        "command": "restyle",
        "rect": list(rect),
        "style": style2.name,
        "map": str(png_path),
        "state": str(args.state),
    }


def cmd_overlay(args) -> dict:
    ds = dataset_mod.load(args.dataset)
    model = model_mod.load_model(args.model)
    run = atlas_mod.load_run_state(args.state, ds, model)
    spec = output_mod.OverlaySpec(
        marker_radius=args.radius,
        show_labels=args.labels,
        legend=not args.no_legend,
    )
    image = output_mod.render_overlay(run.canvas, model, ds, spec)
    from .imgio import save_png

    save_png(image, args.out)
    return {
        "command": "overlay",
        "families": len(set(ds.families)),
        "out": str(args.out),
    }


def cmd_tiles(args) -> dict:
    ds = dataset_mod.load(args.dataset)
    model = model_mod.load_model(args.model)
    run = atlas_mod.load_run_state(args.state, ds, model)
    manifest = output_mod.export_tiles(
        run.canvas, args.out_dir, model=model, dataset=ds, style_name=run.style.name
    )
    return {
        "command": "tiles",
        "max_zoom": manifest.max_zoom,
        "samples": len(manifest.samples),
        "out_dir": str(args.out_dir),
    }


def cmd_stub(args) -> dict:
    script = [s for s in (args.script.split(",") if args.script else []) if s]
    stub = ConformanceStub(port=args.port, mode=args.mode, script=script)
    stub.start()
    _emit({"command": "stub", "endpoint": stub.endpoint, "mode": args.mode, "script": script})
    try:
        stub._thread.join()
    except KeyboardInterrupt:
        stub.stop()
    return {"command": "stub", "status": "stopped"}


def cmd_serve(args) -> dict:
    from .serve import AtlasServer

    server = AtlasServer(
        atlas_dir=args.atlas_dir,
        styles_dir=args.styles_dir,
        port=args.port,
        cors_origin=args.cors_origin,
    )
    server.start()
    _emit({"command": "serve", "endpoint": f"http://127.0.0.1:{server.port}"})
    try:
        server.join()
    except KeyboardInterrupt:
        server.stop()
    return {"command": "serve", "status": "stopped"}


def build_parser() -> _Parser:
    parser = _Parser(prog="latent-atlas", description=__doc__)
    parser.add_argument("--version", action="version", version=f"latent-atlas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert JSONL/CSV embeddings to the native container")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--name", default=None)
    p.add_argument("--out", default="dataset.latds")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fixture", help="generate a deterministic clustered fixture dataset")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--per", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset.latds")
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("project", help="fit the 2D projection model")
    p.add_argument("--dataset", default="dataset.latds")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--min-dist", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--negative-rate", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="model.latmodel")
    p.set_defaults(func=cmd_project)

    def add_backend_flags(p):
        p.add_argument("--backend", choices=["procedural", "remote"], default="procedural")
        p.add_argument("--endpoint", default=None)
        p.add_argument("--timeout", type=float, default=30.0)
        p.add_argument("--retries", type=int, default=3)

    p = sub.add_parser("map", help="paint the map through the patch-inpainting loop")
    p.add_argument("--dataset", default="dataset.latds")
    p.add_argument("--model", default="model.latmodel")
    p.add_argument("--style", default="styles/instruments.style")
    p.add_argument("--size", type=int, default=atlas_mod.DEFAULT_CANVAS)
    p.add_argument("--patch", type=int, default=atlas_mod.DEFAULT_PATCH)
    p.add_argument("--overlap", type=int, default=atlas_mod.DEFAULT_OVERLAP)
    p.add_argument("--margin", type=float, default=atlas_mod.DEFAULT_MARGIN)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--resume", action="store_true", help="continue from state.latrun")
    p.add_argument("--out-dir", default=".")
    add_backend_flags(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("restyle", help="re-render a world-rect in a different style")
    p.add_argument("--dataset", default="dataset.latds")
    p.add_argument("--model", default="model.latmodel")
    p.add_argument("--state", default="state.latrun")
    p.add_argument("--rect", required=True, help="min_x,min_y,max_x,max_y in world units")
    p.add_argument("--style", required=True)
    p.add_argument("--seed", type=int, default=7)
    add_backend_flags(p)
    p.set_defaults(func=cmd_restyle)

    p = sub.add_parser("overlay", help="render sample markers and legend over the map")
    p.add_argument("--dataset", default="dataset.latds")
    p.add_argument("--model", default="model.latmodel")
    p.add_argument("--state", default="state.latrun")
    p.add_argument("--radius", type=int, default=4)
    p.add_argument("--labels", action="store_true")
    p.add_argument("--no-legend", action="store_true")
    p.add_argument("--out", default="overlay.png")
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("tiles", help="export the tile pyramid and manifest")
    p.add_argument("--dataset", default="dataset.latds")
    p.add_argument("--model", default="model.latmodel")
    p.add_argument("--state", default="state.latrun")
    p.add_argument("--out-dir", default="tiles")
    p.set_defaults(func=cmd_tiles)

    p = sub.add_parser("stub", help="run the inpainting-protocol conformance stub")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--mode", choices=["echo", "fill", "error", "wrong_dims", "malformed"],
                   default="echo")
    p.add_argument("--script", default=None,
                   help="comma-separated behaviors consumed one per request")
    p.set_defaults(func=cmd_stub)

    p = sub.add_parser("serve", help="serve a finished atlas to the viewer")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--atlas-dir", default=".")
    p.add_argument("--styles-dir", default="styles")
    p.add_argument("--cors-origin", default="*")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        parser = build_parser()
        args = parser.parse_args(argv)
        summary = args.func(args)
        _emit(summary)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IoError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AtlasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - map unexpected failures to exit 5
        if os.environ.get("LATENT_ATLAS_LOG", "").lower() == "debug":
            import traceback

            traceback.print_exc(file=sys.stderr)
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

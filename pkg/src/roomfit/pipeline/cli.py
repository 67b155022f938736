"""Command-line interface: fit, render, serve, validate."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from ..errors import MissingInput, RoomfitError, UnknownPath
from ..imaging import ImageF, save_png, write_pfm
from ..matgraph import library_for_assets
from ..render import RenderConfig, render
from ..scene import Emissive
from .fit import FitConfig, FitSession, write_outputs
from .overrides import apply_overrides
from .bundle import validate_bundle
from .scenefile import load_scene


def _apply_thread_cap() -> None:
    cap = os.environ.get("ROOMFIT_THREADS")
    if not cap:
        return
    n = max(1, int(cap))
    import torch
    torch.set_num_threads(n)
    try:
        import numba
        numba.set_num_threads(n)
    except Exception:
        pass


def _error_exit(out_dir, exc: Exception) -> int:
    kind = type(exc).__name__
    payload = {"kind": kind, "message": str(exc)}
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "error.json").write_text(json.dumps(payload, indent=1))
    print(f"error: {kind}: {exc}", file=sys.stderr)
    return 2 if isinstance(exc, MissingInput) else 1


def cmd_fit(args) -> int:
    config = FitConfig.from_json(args.config) if args.config else FitConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.stage:
        config.stop_after = args.stage
    try:
        session = FitSession(args.bundle, args.assets, config)
        session.run_all()
        write_outputs(session, args.out, render_spp=config.render_spp)
    except RoomfitError as exc:
        return _error_exit(args.out, exc)
    print(f"fit complete: {args.out}/scene.json (stage={session.stage_done()})")
    return 0


def cmd_render(args) -> int:
    try:
        scene = load_scene(args.scene, assets_dir=args.assets)
        graphs = library_for_assets(scene.assets_dir)
        if args.set:
            scene = apply_overrides(scene, args.set, graphs)
        shaded = bool(scene.lights) or any(
            isinstance(m, Emissive) for o in scene.objects for m in o.materials.values())
        width = args.width or scene.camera.width
        height = args.height or scene.camera.height
        cfg = RenderConfig(width=width, height=height, spp=args.spp,
                           seed=args.seed if args.seed is not None else 0,
                           mode="shaded" if shaded else "mask_depth",
                           shade_spp=min(args.spp, 4))
        out = render(scene, cfg, graphs)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if out.rgb is not None:
            write_pfm(out_dir / "render.pfm", ImageF(out.rgb))
            save_png(out_dir / "render.png", ImageF(np.clip(out.rgb, 0, 1)))
        write_pfm(out_dir / "depth.pfm", ImageF(out.depth))
        if args.masks:
            for key, plane in out.masks.items():
                save_png(out_dir / f"mask_{key.replace('.', '_')}.png", ImageF(plane))
    except (RoomfitError, KeyError) as exc:
        if isinstance(exc, KeyError):
            exc = UnknownPath(str(exc))
        return _error_exit(args.out, exc)
    print(f"rendered to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve
    config = FitConfig.from_json(args.config) if args.config else FitConfig()
    if args.seed is not None:
        config.seed = args.seed
    try:
        serve(args.bundle, args.assets, args.out, port=args.port, config=config,
              ui_dir=args.ui)
    except RoomfitError as exc:
        return _error_exit(args.out, exc)
    return 0


def cmd_validate(args) -> int:
    problems = validate_bundle(args.bundle)
    if problems:
        for p in problems:
            print(f"invalid: {p}")
        return 1
    print("bundle ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roomfit",
                                 description="Fit an editable 3D room scene to a photo.")
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the full fitting pipeline")
    fit.add_argument("bundle", help="input bundle directory")
    fit.add_argument("--assets", required=True, help="asset directory")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--config", help="JSON config file")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--stage", choices=["room", "object", "final"],
                     help="stop after this stage")
    fit.set_defaults(func=cmd_fit)

    ren = sub.add_parser("render", help="re-render a scene.json")
    ren.add_argument("scene", help="scene.json path")
    ren.add_argument("--assets", help="asset directory (defaults to scene.json's)")
    ren.add_argument("--out", required=True)
    ren.add_argument("--spp", type=int, default=16)
    ren.add_argument("--width", type=int)
    ren.add_argument("--height", type=int)
    ren.add_argument("--seed", type=int)
    ren.add_argument("--masks", action="store_true", help="dump per-entity masks")
    ren.add_argument("--set", action="append", default=[],
                     help="override, e.g. object.chair0.yaw=30")
    ren.set_defaults(func=cmd_render)

    srv = sub.add_parser("serve", help="HTTP service for the companion UI")
    srv.add_argument("bundle")
    srv.add_argument("--assets", required=True)
    srv.add_argument("--out", required=True)
    srv.add_argument("--port", type=int, default=8080)
    srv.add_argument("--config")
    srv.add_argument("--seed", type=int)
    srv.add_argument("--ui", help="static UI directory to serve at /")
    srv.set_defaults(func=cmd_serve)

    val = sub.add_parser("validate", help="check a bundle against the contract")
    val.add_argument("bundle")
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Builds demo asset directories and synthetic bundles for tests.

Dummy embeddings are deterministic functions of the asset id (sha256-seeded
unit vectors), matching the exporter's --dummy mode, so retrieval round-trips
without any neural model.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from roomfit.imaging import ImageF, save_png, write_pfm
from roomfit.mesh import save_obj
from roomfit.primitives import box_mesh, cylinder_mesh, lamp_mesh, table_mesh
from roomfit.render import RenderConfig, render
from roomfit.retrieval import KIND_MATERIAL, KIND_MODEL, write_index
from roomfit.scene import Camera, ObjectInstance, Pose, Scene

EMBED_DIM = 32  # small dim keeps tests fast; format supports any


def dummy_embedding(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def perturbed_query(asset_id: str, noise: float = 0.15, dim: int = EMBED_DIM) -> np.ndarray:
    """A query vector close to (but not equal to) the asset's embedding."""
    v = dummy_embedding(asset_id, dim)
    n = dummy_embedding(asset_id + "/query-noise", dim)
    q = v + noise * n
    return q / np.linalg.norm(q)


DEMO_MODELS = {
    "box_small": lambda: box_mesh(size=(0.8, 0.9, 0.7)),
    "box_wide": lambda: box_mesh(size=(1.6, 0.7, 1.0)),
    "cylinder_tall": lambda: cylinder_mesh(radius=0.3, height=1.2),
    "cylinder_squat": lambda: cylinder_mesh(radius=0.5, height=0.5),
    "table_4leg": table_mesh,
    "lamp_floor": lamp_mesh,
}


def _thumbnail(mesh) -> ImageF:
    scene = Scene(camera=Camera(50.0, 64, 64))
    radius = mesh.bounding_radius()
    lo, hi = mesh.bbox()
    center = 0.5 * (lo + hi)
    scene.objects.append(ObjectInstance(
        id="thumb", asset_id="thumb", mesh=mesh,
        pose=Pose(translation=-center + [0, 0, -3.0 * radius], yaw_deg=30, scale=1.0)))
    out = render(scene, RenderConfig(width=64, height=64, spp=4, seed=0))
    return ImageF(out.masks["thumb"])


def build_demo_assets(root) -> Path:
    root = Path(root)
    entries = []
    for asset_id, factory in DEMO_MODELS.items():
        mesh = factory()
        mdir = root / "models" / asset_id
        mdir.mkdir(parents=True, exist_ok=True)
        save_obj(mdir / "model.obj", mesh)
        save_png(mdir / "thumbnail.png", _thumbnail(mesh))
        entries.append((asset_id, KIND_MODEL, dummy_embedding(asset_id)))
    from roomfit.matgraph import default_library
    (root / "materials").mkdir(exist_ok=True)
    for gid in default_library().ids():
        entries.append((gid, KIND_MATERIAL, dummy_embedding(gid)))
    write_index(root / "embeddings.bin", EMBED_DIM, entries)
    return root


def write_queries(bundle_dir, mapping: dict[str, str], noise: float = 0.15) -> None:
    """seg/queries.bin: query vectors pointing at the given asset per segment.

    mapping: segment id (or "<segment>/material") -> asset/graph id.
    """
    entries = []
    for key, asset_id in sorted(mapping.items()):
        kind = KIND_MATERIAL if key.endswith("/material") else KIND_MODEL
        entries.append((key, kind, perturbed_query(asset_id, noise)))
    write_index(Path(bundle_dir) / "seg" / "queries.bin", EMBED_DIM, entries)


def write_bundle(bundle_dir, scene: Scene, *, seed: int = 11, spp: int = 32,
                 seg_labels: dict[str, str] | None = None,
                 queries: dict[str, str] | None = None) -> Path:
    """Render a ground-truth scene into a valid interchange bundle.

    seg_labels maps scene entity -> label (defaults: room surfaces by name,
    objects to object:misc).
    """
    d = Path(bundle_dir)
    (d / "seg").mkdir(parents=True, exist_ok=True)
    cam = scene.camera
    shaded = bool(scene.lights)
    cfg = RenderConfig(width=cam.width, height=cam.height, spp=spp, seed=seed,
                       mode="shaded" if shaded else "mask_depth", shade_spp=4)
    out = render(scene, cfg)

    if out.rgb is not None:
        save_png(d / "input.png", ImageF(np.clip(out.rgb, 0.0, 1.0)))
    else:
        # mask-depth ground truth still needs some target image
        save_png(d / "input.png", ImageF(np.stack([out.depth / max(out.depth.max(), 1e-9)] * 3, -1)))

    depth = out.depth
    lo, hi = depth.min(), depth.max()
    write_pfm(d / "depth.pfm", ImageF((depth - lo) / (hi - lo)))
    (d / "camera.json").write_text(json.dumps(
        {"vfov_deg": cam.vfov_deg, "width": cam.width, "height": cam.height}))

    seg_labels = seg_labels or {}
    segs = []

    def add_segment(sid, label, plane):
        save_png(d / "seg" / f"{sid}.png", ImageF(plane))
        segs.append({"id": sid, "label": label, "mask": f"seg/{sid}.png"})

    if scene.room is not None:
        add_segment("floor", "floor", out.masks["room.floor"])
        add_segment("ceiling", "ceiling", out.masks["room.ceiling"])
        add_segment("wall", "wall", out.masks["room.wall"])
    for obj in scene.sorted_objects():
        label = seg_labels.get(obj.id, "object:misc")
        add_segment(obj.id, label, out.masks[obj.id])
    (d / "seg" / "index.json").write_text(json.dumps({"segments": segs}, indent=1))
    if queries:
        write_queries(d, queries)
    return d

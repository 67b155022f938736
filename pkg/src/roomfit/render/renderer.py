"""Deterministic differentiable renderer: anti-aliased masks, depth, shading.

Masks are Monte-Carlo coverage fractions (stratified jittered subpixel
samples), depth is the coverage-weighted mean view-space z, and shaded mode
adds direct lighting over the scene's area lights with an optional single
diffuse indirect bounce.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from ..errors import MissingForward
from ..imaging import Rect
from ..scene import Scene
from . import rng
from .geometry import SceneGeometry, build_geometry
from .intersect import nearest_hit
from .shading import ShadeCache, material_eval_tables, shade_hits

INTERSECT_DTYPE = torch.float64


@dataclass(frozen=True)
class RenderConfig:
    width: int
    height: int
    spp: int = 16
    seed: int = 0
    mode: str = "mask_depth"  # "mask_depth" | "shaded"
    bounces: int = 0
    edge_samples_per_silhouette_px: int = 2
    shade_spp: int = 4  # shading samples per pixel (<= spp)
    light_samples: int = 4
    roi: Rect | None = None

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.mode not in ("mask_depth", "shaded"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.bounces not in (0, 1):
            raise ValueError("bounces must be 0 or 1")

    def view(self) -> Rect:
        return self.roi if self.roi is not None else Rect(0, 0, self.width, self.height)


@dataclass
class RenderCache:
    """Retained forward intermediates for the adjoint pass."""

    config: RenderConfig
    geom: SceneGeometry
    hit_tri: np.ndarray          # (Npix * spp,) int64, -1 on miss
    pix_index: np.ndarray        # (Npix * spp,) global pixel index (for RNG)
    dirs: np.ndarray             # (Npix * spp, 3) float64 unit directions
    shade_sel: np.ndarray | None = None   # indices of shaded samples
    shade_cache: ShadeCache | None = None
    coverage_samples: np.ndarray | None = None  # per-pixel hit count


@dataclass
class RenderOutput:
    width: int
    height: int
    masks: dict[str, np.ndarray]                     # aggregated coverage planes
    part_masks: dict[tuple[str, str], np.ndarray]    # (owner, group) -> plane
    depth: np.ndarray                                # (h, w) view-space z
    coverage: np.ndarray                             # (h, w) any-geometry coverage
    rgb: np.ndarray | None = None                    # (h, w, 3) linear radiance
    cache: RenderCache | None = None

    def mask(self, key: str) -> np.ndarray:
        return self.masks[key]


def subpixel_positions(cfg: RenderConfig, pix_x: np.ndarray, pix_y: np.ndarray,
                       sample: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jittered-stratified positions inside each pixel, in pixel units.

    pix_x/pix_y are integer pixel coordinates; output is float64.
    """
    gpix = pix_y.astype(np.uint64) * np.uint64(cfg.width) + pix_x.astype(np.uint64)
    j1, j2 = rng.uniform_pair(cfg.seed, rng.STREAM_SUBPIXEL, gpix, sample)
    s = int(np.sqrt(cfg.spp))
    if s * s == cfg.spp and s > 1:
        cx = (sample % s).astype(np.float64)
        cy = (sample // s).astype(np.float64)
        return pix_x + (cx + j1) / s, pix_y + (cy + j2) / s
    return pix_x + j1, pix_y + j2


def ray_dirs(camera_width: int, camera_height: int, focal_px: float,
             px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Unit world-space directions (float32) through continuous pixel positions."""
    x = ((px - camera_width / 2.0) / focal_px).astype(np.float32)
    y = ((camera_height / 2.0 - py) / focal_px).astype(np.float32)
    d = np.empty((len(x), 3), dtype=np.float32)
    d[:, 0] = x
    d[:, 1] = y
    d[:, 2] = -1.0
    inv = 1.0 / np.sqrt(x * x + y * y + 1.0)
    d *= inv[:, None]
    return d


def render(scene: Scene, config: RenderConfig, graphs=None) -> RenderOutput:
    """Forward render. Deterministic for a fixed (scene, config)."""
    if graphs is None:
        from ..matgraph.library import default_library
        graphs = default_library()
    shaded = config.mode == "shaded"
    geom = build_geometry(scene, shaded)
    cam = scene.camera.scaled(config.width, config.height)
    view = config.view()

    ys, xs = np.mgrid[view.y:view.y + view.h, view.x:view.x + view.w]
    xi = np.repeat(xs.reshape(-1), config.spp)
    yi = np.repeat(ys.reshape(-1), config.spp)
    sample = np.tile(np.arange(config.spp, dtype=np.uint64), view.w * view.h)
    px, py = subpixel_positions(config, xi, yi, sample)
    dirs = ray_dirs(config.width, config.height, cam.focal_px, px, py)

    verts_t = torch.from_numpy(geom.verts)
    tris_t = torch.from_numpy(geom.tris)
    n_tris = geom.tris.shape[0] if shaded else geom.n_geom_tris
    with torch.no_grad():
        hit_tri, hit_t = nearest_hit(verts_t, tris_t[:n_tris],
                                     torch.zeros(3, dtype=torch.float32),
                                     torch.from_numpy(dirs))
    hit_tri = hit_tri.numpy()
    hit_t = hit_t.numpy()

    npix = view.w * view.h
    local_pix = np.arange(npix, dtype=np.int64).repeat(config.spp)
    is_geom = (hit_tri >= 0) & (hit_tri < geom.n_geom_tris)

    # per-part coverage
    ent = np.where(is_geom, geom.tri_entity[np.clip(hit_tri, 0, None)], -1)
    n_ent = len(geom.entities)
    counts = np.bincount(
        (ent[is_geom] * npix + local_pix[is_geom]).astype(np.int64),
        minlength=n_ent * npix).reshape(n_ent, npix)
    part_masks: dict[tuple[str, str], np.ndarray] = {}
    for i, e in enumerate(geom.entities):
        if e.kind == "light":
            continue
        part_masks[e.key] = (counts[i] / config.spp).reshape(view.h, view.w)

    masks: dict[str, np.ndarray] = {}
    if scene.room is not None:
        masks["room.floor"] = part_masks[("room", "floor")]
        masks["room.ceiling"] = part_masks[("room", "ceiling")]
        masks["room.wall"] = sum(part_masks[("room", f"wall{i}")] for i in range(4))
    for obj in scene.sorted_objects():
        planes = [m for (owner, _g), m in part_masks.items() if owner == obj.id]
        masks[obj.id] = sum(planes)

    # coverage-weighted mean view-space depth
    view_z = -hit_t * dirs[:, 2]
    num = np.bincount(local_pix[is_geom], weights=view_z[is_geom], minlength=npix)
    cov_count = np.bincount(local_pix[is_geom], minlength=npix).astype(np.float64)
    depth = np.where(cov_count > 0, num / np.maximum(cov_count, 1), 0.0).reshape(view.h, view.w)
    coverage = (cov_count / config.spp).reshape(view.h, view.w)

    cache = RenderCache(config=config, geom=geom, hit_tri=hit_tri,
                        pix_index=yi.astype(np.uint64) * np.uint64(config.width)
                        + xi.astype(np.uint64),
                        dirs=dirs, coverage_samples=cov_count)

    rgb = None
    if shaded:
        shade_spp = min(config.shade_spp, config.spp)
        sel = np.nonzero(sample < shade_spp)[0]
        with torch.no_grad():
            mats = material_eval_tables(geom, None)
            rad, shade_cache = shade_hits(
                geom, verts_t, mats, graphs,
                torch.from_numpy(hit_tri[sel]), torch.from_numpy(dirs[sel]),
                cache.pix_index[sel], sample[sel].astype(np.uint64),
                light_samples=config.light_samples, bounces=config.bounces,
                seed=config.seed, cache=None)
        # samples are ordered per pixel, so the shaded subset is contiguous
        rgb = rad.numpy().reshape(npix, shade_spp, 3).mean(axis=1).reshape(view.h, view.w, 3)
        cache.shade_sel = sel
        cache.shade_cache = shade_cache

    return RenderOutput(width=view.w, height=view.h, masks=masks,
                        part_masks=part_masks, depth=depth, coverage=coverage,
                        rgb=rgb, cache=cache)


def require_cache(forward: RenderOutput, config: RenderConfig) -> RenderCache:
    if forward is None or forward.cache is None:
        raise MissingForward("render_backward needs the retained forward output")
    if forward.cache.config != config:
        raise MissingForward("forward cache was produced with a different config")
    return forward.cache

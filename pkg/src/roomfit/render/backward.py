"""Reverse-mode rendering gradients: interior autodiff + boundary edge sampling.

The interior term re-evaluates each retained sample's contribution as a torch
graph over the stage's parameter leaves (hit selection, shadow visibility and
sampling decisions stay detached). The boundary term samples the image-space
projections of visibility-discontinuity edges of the moving geometry,
measures the integrand jump across each edge with paired rays, and
accumulates jump x normal-velocity - the only gradient source for binary
quantities like coverage masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..params import Stage, pack_params
from ..scene import Scene
from .edges import clip_segment_near, discontinuity_edges
from .geometry import world_verts_torch
from .intersect import nearest_hit
from .renderer import RenderConfig, RenderOutput, ray_dirs, require_cache
from .shading import material_eval_tables, shade_hits

EDGE_EPS_PX = 0.01       # half-gap between paired boundary rays
EDGE_BUDGET = 16384      # max boundary samples per moving mesh
_CHUNK = 1 << 19


@dataclass
class RenderAdjoint:
    """Gradients of a scalar loss with respect to render outputs."""

    masks: dict[str, np.ndarray] = field(default_factory=dict)
    depth: np.ndarray | None = None
    rgb: np.ndarray | None = None


def _make_leaves(scene: Scene, stage: Stage, graphs):
    vec = pack_params(scene, stage, graphs)
    leaves: dict[tuple[str, str], torch.Tensor] = {}
    for s in vec.slots:
        leaves[(s.owner, s.name)] = torch.tensor(vec.values[s.range()],
                                                 dtype=torch.float64, requires_grad=True)
    return leaves, vec.slots


def _collect_grads(leaves: dict, slots: list) -> np.ndarray:
    grad = np.zeros(sum(s.size for s in slots))
    for s in slots:
        g = leaves[(s.owner, s.name)].grad
        if g is not None:
            grad[s.range()] = g.numpy()
    return grad


def _entity_sets(geom, scene: Scene) -> dict[str, np.ndarray]:
    """Aggregated mask key -> per-entity membership."""
    n = len(geom.entities)
    sets: dict[str, np.ndarray] = {}

    def mark(key, pred):
        m = np.zeros(n, dtype=bool)
        for i, e in enumerate(geom.entities):
            if pred(e):
                m[i] = True
        sets[key] = m

    if scene.room is not None:
        mark("room.floor", lambda e: e.owner == "room" and e.group == "floor")
        mark("room.ceiling", lambda e: e.owner == "room" and e.group == "ceiling")
        mark("room.wall", lambda e: e.owner == "room" and e.group.startswith("wall"))
    for obj in scene.objects:
        mark(obj.id, lambda e, oid=obj.id: e.owner == oid)
    return sets


def render_backward(scene: Scene, config: RenderConfig, stage: Stage,
                    adjoint: RenderAdjoint, forward: RenderOutput,
                    graphs=None) -> np.ndarray:
    """Parameter gradients for the stage's slots, in pack_params order."""
    if graphs is None:
        from ..matgraph.library import default_library
        graphs = default_library()
    cache = require_cache(forward, config)
    geom = cache.geom
    leaves, slots = _make_leaves(scene, stage, graphs)

    view = config.view()
    npix = view.w * view.h
    local_pix = np.arange(npix, dtype=np.int64).repeat(config.spp)
    geometry_live = stage in (Stage.Room, Stage.Object)

    # ---- interior: depth ----
    if adjoint.depth is not None and geometry_live:
        adj_flat = adjoint.depth.reshape(-1)
        counts = np.maximum(cache.coverage_samples, 1.0)
        w_pix = adj_flat / counts
        is_geom = (cache.hit_tri >= 0) & (cache.hit_tri < geom.n_geom_tris)
        sel = np.nonzero(is_geom & (w_pix[local_pix] != 0.0))[0]
        tris_t = torch.from_numpy(geom.tris)
        for cs in range(0, len(sel), _CHUNK):
            part = sel[cs:cs + _CHUNK]
            verts_t = world_verts_torch(scene, geom, leaves, stage)
            tv = verts_t[tris_t[torch.from_numpy(cache.hit_tri[part])]]
            n_g = torch.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0], dim=-1)
            d = torch.from_numpy(cache.dirs[part]).double()
            dn = (d * n_g).sum(-1)
            dn = torch.where(dn.abs() > 1e-14, dn, torch.full_like(dn, 1e-14))
            t_hit = (tv[:, 0] * n_g).sum(-1) / dn
            z = t_hit * (-d[:, 2])
            w = torch.from_numpy(w_pix[local_pix[part]])
            (z * w).sum().backward()

    # ---- interior: rgb ----
    if adjoint.rgb is not None and cache.shade_sel is not None:
        sel = cache.shade_sel
        shade_spp = min(config.shade_spp, config.spp)
        adj_rgb = adjoint.rgb.reshape(npix, 3) / shade_spp
        verts_t = world_verts_torch(scene, geom, leaves, stage if geometry_live else None)
        mats = material_eval_tables(geom, leaves)
        sample_ids = np.tile(np.arange(config.spp, dtype=np.uint64), npix)[sel]
        rad, _ = shade_hits(
            geom, verts_t, mats, graphs,
            torch.from_numpy(cache.hit_tri[sel]), torch.from_numpy(cache.dirs[sel]).double(),
            cache.pix_index[sel], sample_ids,
            light_samples=config.light_samples, bounces=config.bounces,
            seed=config.seed, cache=cache.shade_cache)
        w = torch.from_numpy(adj_rgb[local_pix[sel]])
        (rad * w).sum().backward()

    # ---- boundary: masks and depth ----
    if geometry_live and (any(a is not None for a in adjoint.masks.values())
                          or adjoint.depth is not None):
        moving = ["room"] if stage == Stage.Room else [o.id for o in scene.sorted_objects()]
        moving = [m for m in moving if m in geom.blocks]
        verts_t = world_verts_torch(scene, geom, leaves, stage)
        term = _boundary_term(scene, config, geom, verts_t, moving, adjoint, forward)
        if term is not None:
            term.backward()

    return _collect_grads(leaves, slots)


def _clip_2d_interval(q0, q1, width, height, pad=2.0):
    """Liang-Barsky: s-range of segment q0->q1 inside the padded image rect."""
    s0, s1 = 0.0, 1.0
    d = q1 - q0
    for axis, limit in ((0, width), (1, height)):
        for sign, bound in ((-1.0, pad), (1.0, limit + pad)):
            # sign -1: q >= -pad  ->  -d*s <= q0 + pad ; sign +1: q <= limit+pad
            if sign < 0:
                p, qv = -d[axis], q0[axis] + pad
            else:
                p, qv = d[axis], limit + pad - q0[axis]
            if abs(p) < 1e-30:
                if qv < 0:
                    return None
                continue
            r = qv / p
            if p < 0:
                s0 = max(s0, r)
            else:
                s1 = min(s1, r)
            if s0 > s1:
                return None
    return s0, s1


def _edge_samples(a_w, b_w, spans, cam, density):
    """Stratified samples along the visible projected portion of each edge.

    The u-interval whose projection lies inside the image is found by 2D
    clipping plus the perspective-correct screen->segment parameter map, so
    near-clipped edges (which project to enormous screen spans) do not starve
    the sample budget. Returns (edge_of, u, q, n_hat, w_len); w_len carries
    the arc-length measure in pixels per sample.
    """
    p0 = a_w + spans[:, 0:1] * (b_w - a_w)
    p1 = a_w + spans[:, 1:2] * (b_w - a_w)
    q0 = _project(p0, cam)
    q1 = _project(p1, cam)
    z0 = np.maximum(-p0[:, 2], 1e-9)
    z1 = np.maximum(-p1[:, 2], 1e-9)

    vis_u = np.zeros((len(a_w), 2))
    seg_len = np.zeros(len(a_w))
    for i in range(len(a_w)):
        s_range = _clip_2d_interval(q0[i], q1[i], cam.width, cam.height)
        if s_range is None:
            continue
        s0, s1 = s_range
        # perspective-correct screen parameter -> 3D segment parameter
        t0 = s0 * z0[i] / ((1 - s0) * z1[i] + s0 * z0[i])
        t1 = s1 * z0[i] / ((1 - s1) * z1[i] + s1 * z0[i])
        u0 = spans[i, 0] + t0 * (spans[i, 1] - spans[i, 0])
        u1 = spans[i, 0] + t1 * (spans[i, 1] - spans[i, 0])
        vis_u[i] = (u0, u1)
        seg_len[i] = np.linalg.norm((q0[i] + s1 * (q1[i] - q0[i]))
                                    - (q0[i] + s0 * (q1[i] - q0[i])))

    n_samp = np.where(seg_len > 0, np.ceil(seg_len * density), 0).astype(np.int64)
    total = int(n_samp.sum())
    if total > EDGE_BUDGET:
        n_samp = np.maximum(np.where(n_samp > 0, 1, 0),
                            (n_samp * (EDGE_BUDGET / total)).astype(np.int64))
    if int(n_samp.sum()) == 0:
        return (np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros((0, 2)),
                np.zeros((0, 2)), np.zeros(0))

    edge_of = np.repeat(np.arange(len(a_w)), n_samp)
    frac = (np.concatenate([np.arange(c) for c in n_samp if c > 0]) + 0.5) / n_samp[edge_of]
    u = vis_u[edge_of, 0] + frac * (vis_u[edge_of, 1] - vis_u[edge_of, 0])
    p = a_w[edge_of] + u[:, None] * (b_w[edge_of] - a_w[edge_of])
    q = _project(p, cam)

    # arc-length weight: |dq/du| via symmetric differences (perspective-correct)
    dpu = 1e-5
    q_f = _project(p + dpu * (b_w[edge_of] - a_w[edge_of]), cam)
    q_b = _project(p - dpu * (b_w[edge_of] - a_w[edge_of]), cam)
    speed = np.linalg.norm(q_f - q_b, axis=1) / (2 * dpu)
    w_len = speed * (vis_u[edge_of, 1] - vis_u[edge_of, 0]) / n_samp[edge_of]

    e2d = q1[edge_of] - q0[edge_of]
    e_norm = np.linalg.norm(e2d, axis=1, keepdims=True)
    ok = e_norm[:, 0] > 1e-9
    tang = np.divide(e2d, e_norm, out=np.zeros_like(e2d), where=e_norm > 1e-9)
    n_hat = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
    w_len = np.where(ok, w_len, 0.0)
    return edge_of, u, q, n_hat, w_len


def _boundary_term(scene, config: RenderConfig, geom, verts_t, moving,
                   adjoint: RenderAdjoint, forward: RenderOutput):
    cam = scene.camera.scaled(config.width, config.height)
    view = config.view()
    ent_sets = _entity_sets(geom, scene)
    mask_keys = [k for k, a in adjoint.masks.items() if a is not None and np.any(a)]
    use_depth = adjoint.depth is not None and bool(np.any(adjoint.depth))
    if not mask_keys and not use_depth:
        return None

    verts_det = torch.from_numpy(geom.verts)
    tris_geo = torch.from_numpy(geom.tris[:geom.n_geom_tris])
    total = None
    for owner in moving:
        block = geom.blocks[owner]
        edges = discontinuity_edges(geom, owner, cam)
        if not len(edges):
            continue
        ga_all = edges[:, 0] + block.vert_start
        gb_all = edges[:, 1] + block.vert_start
        a_all, b_all = geom.verts[ga_all], geom.verts[gb_all]
        spans, keep = [], []
        for i in range(len(edges)):
            s = clip_segment_near(a_all[i], b_all[i])
            if s is not None:
                spans.append(s)
                keep.append(i)
        if not keep:
            continue
        keep = np.asarray(keep)
        spans = np.asarray(spans, dtype=np.float64)
        a_w, b_w = a_all[keep], b_all[keep]
        ga, gb = ga_all[keep], gb_all[keep]

        edge_of, u, q, n_hat, w_len = _edge_samples(
            a_w, b_w, spans, cam, config.edge_samples_per_silhouette_px)

        px = np.floor(q[:, 0]).astype(np.int64)
        py = np.floor(q[:, 1]).astype(np.int64)
        inside = ((w_len > 0) & (px >= view.x) & (px < view.x + view.w)
                  & (py >= view.y) & (py < view.y + view.h))
        if not inside.any():
            continue
        idx = np.nonzero(inside)[0]
        q, n_hat, w_len = q[idx], n_hat[idx], w_len[idx]
        edge_of, u = edge_of[idx], u[idx]
        lpx = (py[idx] - view.y) * view.w + (px[idx] - view.x)

        sides = []
        for sign in (-1.0, +1.0):
            qq = q + sign * EDGE_EPS_PX * n_hat
            dirs = ray_dirs(config.width, config.height, cam.focal_px, qq[:, 0], qq[:, 1])
            with torch.no_grad():
                tri, t = nearest_hit(verts_det, tris_geo,
                                     torch.zeros(3, dtype=torch.float64),
                                     torch.from_numpy(dirs))
            tri, t = tri.numpy(), t.numpy()
            hit = tri >= 0
            ent = np.where(hit, geom.tri_entity[np.clip(tri, 0, None)], -1)
            z = np.where(hit, t * (-dirs[:, 2]), 0.0)
            sides.append((hit, ent, z))
        (hit_m, ent_m, z_m), (hit_p, ent_p, z_p) = sides

        coeff = np.zeros(len(q))
        for key in mask_keys:
            members = ent_sets.get(key)
            if members is None:
                continue
            adj = adjoint.masks[key].reshape(-1)
            f_m = (ent_m >= 0) & members[np.clip(ent_m, 0, None)]
            f_p = (ent_p >= 0) & members[np.clip(ent_p, 0, None)]
            coeff += adj[lpx] * (f_m.astype(np.float64) - f_p.astype(np.float64))
        if use_depth:
            adj_d = adjoint.depth.reshape(-1)[lpx]
            cov_px = forward.coverage.reshape(-1)[lpx]
            dep_px = forward.depth.reshape(-1)[lpx]
            valid = cov_px > 1e-9
            adj_nu = np.where(valid, adj_d / np.maximum(cov_px, 1e-12), 0.0)
            adj_de = np.where(valid, -adj_d * dep_px / np.maximum(cov_px, 1e-12), 0.0)
            coeff += adj_nu * (z_m - z_p)
            coeff += adj_de * (hit_m.astype(np.float64) - hit_p.astype(np.float64))

        live = np.nonzero(coeff != 0.0)[0]
        if not len(live):
            continue
        u_t = torch.from_numpy(u[live]).unsqueeze(1)
        p_t = (verts_t[torch.from_numpy(ga[edge_of[live]])] * (1 - u_t)
               + verts_t[torch.from_numpy(gb[edge_of[live]])] * u_t)
        q_t = _project_torch(p_t, cam)
        c = torch.from_numpy(coeff[live] * w_len[live])
        nh = torch.from_numpy(n_hat[live])
        term = (c * (nh * q_t).sum(dim=1)).sum()
        total = term if total is None else total + term
    return total


def _project(pts: np.ndarray, cam) -> np.ndarray:
    f = cam.focal_px
    z = np.maximum(-pts[:, 2], 1e-9)
    return np.stack([cam.width / 2.0 + f * pts[:, 0] / z,
                     cam.height / 2.0 - f * pts[:, 1] / z], axis=1)


def _project_torch(pts: torch.Tensor, cam) -> torch.Tensor:
    f = cam.focal_px
    z = (-pts[:, 2]).clamp_min(1e-9)
    return torch.stack([cam.width / 2.0 + f * pts[:, 0] / z,
                        cam.height / 2.0 - f * pts[:, 1] / z], dim=1)

"""Direct-lighting shading shared by the forward pass and the adjoint recompute.

Shadow visibility is always evaluated detached (shadow boundary gradients are
an accepted bias); everything else is a torch graph over whatever leaves the
caller supplied (vertex positions, material parameters, light radiances).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..scene import Emissive, Homogeneous, Procedural
from . import rng
from .brdf import ggx_eval
from .geometry import DTYPE, SceneGeometry
from .intersect import any_hit, nearest_hit

SHADOW_EPS = 1e-3
NORMAL_DELTA = 1.0 / 256.0  # uv step for height-to-normal differences


@dataclass
class MaterialEval:
    """Per-entity material tensors; leaves may require grad in the adjoint pass."""

    kind: str  # "homogeneous" | "procedural" | "emissive"
    albedo: torch.Tensor | None = None
    roughness: torch.Tensor | None = None
    specular: torch.Tensor | None = None
    radiance: torch.Tensor | None = None
    graph_id: str | None = None
    params: dict = field(default_factory=dict)
    uv_scale: torch.Tensor | None = None
    uv_rot: torch.Tensor | None = None
    uv_off: torch.Tensor | None = None


def material_eval_tables(geom: SceneGeometry, leaves: dict | None) -> dict[int, MaterialEval]:
    """Build per-entity evaluators, overriding constants with supplied leaves."""

    def leaf(owner_key: str, name: str, fallback):
        if leaves is not None and (owner_key, name) in leaves:
            return leaves[(owner_key, name)]
        return torch.as_tensor(np.asarray(fallback, dtype=np.float64))

    tables: dict[int, MaterialEval] = {}
    for idx, ent in enumerate(geom.entities):
        if ent.kind == "light":
            light = geom.lights[ent.light_index]
            rad = leaf(f"light:{light.id}", "radiance", light.radiance)
            tables[idx] = MaterialEval("emissive", radiance=rad)
            continue
        mat = ent.material
        key = f"material:{ent.owner}/{ent.group}"
        if isinstance(mat, Homogeneous):
            tables[idx] = MaterialEval(
                "homogeneous",
                albedo=leaf(key, "albedo", mat.albedo),
                roughness=leaf(key, "roughness", mat.roughness).reshape(()),
                specular=leaf(key, "specular", mat.specular).reshape(()),
            )
        elif isinstance(mat, Emissive):
            tables[idx] = MaterialEval("emissive", radiance=leaf(key, "radiance", mat.radiance))
        elif isinstance(mat, Procedural):
            params = {}
            if leaves is not None:
                for (owner_key, name), tensor in leaves.items():
                    if owner_key == key and name.startswith("p:"):
                        params[name[2:]] = tensor.reshape(())
            for pname, pval in mat.params.items():
                params.setdefault(pname, torch.as_tensor(float(pval), dtype=DTYPE))
            tables[idx] = MaterialEval(
                "procedural",
                graph_id=mat.graph_id,
                params=params,
                uv_scale=leaf(key, "uv_scale", mat.uv_transform.scale).reshape(()),
                uv_rot=leaf(key, "uv_rot", mat.uv_transform.rotation_deg).reshape(()),
                uv_off=leaf(key, "uv_off", mat.uv_transform.offset).reshape(2),
            )
        else:
            raise TypeError(f"unknown material {mat!r}")
    return tables


def transform_uv(uv: torch.Tensor, m: MaterialEval) -> torch.Tensor:
    a = m.uv_rot * (torch.pi / 180.0)
    c, s = torch.cos(a), torch.sin(a)
    x = uv[:, 0] * c - uv[:, 1] * s
    y = uv[:, 0] * s + uv[:, 1] * c
    return torch.stack([x, y], dim=1) * m.uv_scale + m.uv_off


def _barycentric(tv: torch.Tensor, x: torch.Tensor):
    e1 = tv[:, 1] - tv[:, 0]
    e2 = tv[:, 2] - tv[:, 0]
    w = x - tv[:, 0]
    d11 = (e1 * e1).sum(-1)
    d12 = (e1 * e2).sum(-1)
    d22 = (e2 * e2).sum(-1)
    dw1 = (w * e1).sum(-1)
    dw2 = (w * e2).sum(-1)
    denom = (d11 * d22 - d12 * d12).clamp_min(1e-30)
    bu = (d22 * dw1 - d12 * dw2) / denom
    bv = (d11 * dw2 - d12 * dw1) / denom
    return bu, bv


def _light_points(light_idx: int, quad: np.ndarray, n_samples: int,
                  pix: np.ndarray, sample: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic jittered-stratified points on a quad, per shading sample.

    Returns (Ns, S, 3) float64 numpy (light geometry is never differentiated).
    """
    sx = max(1, int(round(np.sqrt(n_samples))))
    while n_samples % sx:
        sx -= 1
    sy = n_samples // sx
    pts = np.empty((len(pix), n_samples, 3))
    c0, c1, c2, c3 = quad
    for j in range(n_samples):
        gx, gy = j % sx, j // sx
        ju = rng.uniform(seed, rng.STREAM_LIGHT, pix, sample, np.uint64(light_idx * 131 + j * 2))
        jv = rng.uniform(seed, rng.STREAM_LIGHT, pix, sample, np.uint64(light_idx * 131 + j * 2 + 1))
        u = (gx + ju) / sx
        v = (gy + jv) / sy
        a = c0[None, :] * (1 - u)[:, None] + c1[None, :] * u[:, None]
        b = c3[None, :] * (1 - u)[:, None] + c2[None, :] * u[:, None]
        pts[:, j, :] = a * (1 - v)[:, None] + b * v[:, None]
    return pts


@dataclass
class ShadeCache:
    """Detached quantities reused bit-identically by the adjoint recompute."""

    vis: dict[int, torch.Tensor]            # light idx -> (Ns, S) float 0/1
    indirect_tri: torch.Tensor | None = None   # (Ns,) secondary hit tri or -1
    indirect_dir: torch.Tensor | None = None   # (Ns, 3)
    indirect_vis: dict[int, torch.Tensor] | None = None


def shade_hits(geom: SceneGeometry, verts_t: torch.Tensor, mats: dict[int, MaterialEval],
               graphs, hit_tri: torch.Tensor, dirs: torch.Tensor,
               pix: np.ndarray, sample: np.ndarray, *, light_samples: int,
               bounces: int, seed: int, cache: ShadeCache | None):
    """Radiance (Ns, 3) for samples that hit something; misses get black.

    When `cache` is None, shadow/indirect visibility is traced here and
    returned in a fresh cache; otherwise the cached visibility is reused.
    """
    ns = hit_tri.shape[0]
    rad_out = torch.zeros((ns, 3), dtype=DTYPE)
    hit = hit_tri >= 0
    if not bool(hit.any()):
        return rad_out, cache or ShadeCache(vis={})
    idx = torch.nonzero(hit).squeeze(1)
    tris_t = geom.torch_tris()
    tri = hit_tri[idx]
    tv = verts_t[tris_t[tri]]
    n_g = torch.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0], dim=-1)
    d = dirs[idx].double()
    dn = (d * n_g).sum(-1)
    t_den = torch.where(dn.abs() > 1e-14, dn, torch.full_like(dn, 1e-14))
    t_hit = (tv[:, 0] * n_g).sum(-1) / t_den
    x = t_hit.unsqueeze(-1) * d
    n_hat = torch.nn.functional.normalize(n_g, dim=-1, eps=1e-14)
    # flip shading normal toward the viewer (two-sided surfaces)
    flip = torch.sign(-(d * n_hat).sum(-1)).unsqueeze(-1)
    flip = torch.where(flip == 0, torch.ones_like(flip), flip)
    n = n_hat * flip
    ent_of_tri = torch.from_numpy(geom.tri_entity)
    ent = ent_of_tri[tri]

    albedo = torch.zeros((len(idx), 3), dtype=DTYPE)
    rough = torch.full((len(idx),), 0.5, dtype=DTYPE)
    specular = torch.zeros(len(idx), dtype=DTYPE)
    emitted = torch.zeros((len(idx), 3), dtype=DTYPE)
    reflective = torch.zeros(len(idx), dtype=torch.bool)
    shade_n = n

    uv_all = None
    for e_idx in sorted(set(ent.tolist())):
        m = mats[e_idx]
        sel = torch.nonzero(ent == e_idx).squeeze(1)
        if m.kind == "emissive":
            one_sided = geom.entities[e_idx].kind == "light"
            if one_sided:
                front = ((d[sel] * n_hat[sel]).sum(-1) < 0).to(DTYPE).unsqueeze(-1)
            else:
                front = torch.ones((len(sel), 1), dtype=DTYPE)
            emitted[sel] = m.radiance.unsqueeze(0) * front
            continue
        reflective[sel] = True
        if m.kind == "homogeneous":
            albedo[sel] = m.albedo.unsqueeze(0).expand(len(sel), 3)
            rough[sel] = m.roughness
            specular[sel] = m.specular
            continue
        # procedural: evaluate the graph at transformed hit UVs
        if uv_all is None:
            bu, bv = _barycentric(tv, x)
            uvw = torch.from_numpy(geom.uv_tris)[tri]
            uv_all = (uvw[:, 0] * (1 - bu - bv).unsqueeze(-1)
                      + uvw[:, 1] * bu.unsqueeze(-1) + uvw[:, 2] * bv.unsqueeze(-1))
        uv = transform_uv(uv_all[sel], m)
        tex = graphs.eval_uv(m.graph_id, m.params, uv)
        albedo[sel] = tex["albedo"]
        rough[sel] = tex["roughness"]
        specular[sel] = tex.get("specular", torch.full((len(sel),), 0.04, dtype=DTYPE))
        if tex.get("height") is not None and tex.get("normal_strength") is not None:
            shade_n = shade_n.clone()
            shade_n[sel] = _perturb_normals(
                graphs, m, uv_all[sel], tv[sel], uvw_sel=torch.from_numpy(geom.uv_tris)[tri[sel]],
                n=n[sel], strength=tex["normal_strength"])

    wo = -d
    out = emitted.clone()
    new_cache = cache is None
    if new_cache:
        cache = ShadeCache(vis={})
    refl_idx = torch.nonzero(reflective).squeeze(1)
    if len(refl_idx) and geom.lights:
        out = out + _direct_light(
            geom, verts_t, mats, x, shade_n, wo, albedo, rough, specular,
            reflective, pix[idx.numpy()], sample[idx.numpy()],
            light_samples, seed, cache, vis_key_offset=0)
    if bounces >= 1 and len(refl_idx) and geom.lights:
        out = out + _indirect_bounce(
            geom, verts_t, mats, graphs, x, shade_n, albedo, reflective,
            pix[idx.numpy()], sample[idx.numpy()], seed, cache)
    rad_out[idx] = out
    return rad_out, cache


def _perturb_normals(graphs, m: MaterialEval, uv_base, tv, uvw_sel, n, strength):
    """Height-derived normal mapping using the triangle's UV tangent frame."""
    du = torch.tensor([NORMAL_DELTA, 0.0], dtype=DTYPE)
    dv = torch.tensor([0.0, NORMAL_DELTA], dtype=DTYPE)

    def height(uv):
        return graphs.eval_uv(m.graph_id, m.params, transform_uv(uv, m))["height"]

    h_u = (height(uv_base + du) - height(uv_base - du)) / (2 * NORMAL_DELTA)
    h_v = (height(uv_base + dv) - height(uv_base - dv)) / (2 * NORMAL_DELTA)
    e1 = tv[:, 1] - tv[:, 0]
    e2 = tv[:, 2] - tv[:, 0]
    duv1 = uvw_sel[:, 1] - uvw_sel[:, 0]
    duv2 = uvw_sel[:, 2] - uvw_sel[:, 0]
    det = duv1[:, 0] * duv2[:, 1] - duv2[:, 0] * duv1[:, 1]
    safe = det.abs() > 1e-12
    inv = torch.where(safe, 1.0 / torch.where(safe, det, torch.ones_like(det)), torch.zeros_like(det))
    tangent = (duv2[:, 1:2] * e1 - duv1[:, 1:2] * e2) * inv.unsqueeze(-1)
    tangent = tangent - n * (tangent * n).sum(-1, keepdim=True)
    tangent = torch.nn.functional.normalize(tangent, dim=-1, eps=1e-12)
    bitan = torch.cross(n, tangent, dim=-1)
    perturbed = (n - strength.unsqueeze(-1) * (h_u.unsqueeze(-1) * tangent + h_v.unsqueeze(-1) * bitan))
    perturbed = torch.nn.functional.normalize(perturbed, dim=-1, eps=1e-12)
    return torch.where(safe.unsqueeze(-1), perturbed, n)


def _direct_light(geom, verts_t, mats, x, n, wo, albedo, rough, specular,
                  reflective, pix, sample, light_samples, seed, cache, vis_key_offset):
    out = torch.zeros((x.shape[0], 3), dtype=DTYPE)
    verts_det = verts_t.detach()
    tris_geo = geom.torch_tris()[: geom.n_geom_tris]
    x_det = x.detach()
    n_det = n.detach()
    for li, light in enumerate(geom.lights):
        ent_idx = next(i for i, e in enumerate(geom.entities)
                       if e.kind == "light" and e.light_index == li)
        rad = mats[ent_idx].radiance
        pts = torch.from_numpy(_light_points(li, light.quad, light_samples, pix, sample, seed))
        n_l = torch.from_numpy(light.normal())
        area = light.area()
        key = vis_key_offset * 1000 + li
        if key not in cache.vis:
            with torch.no_grad():
                origins = (x_det + n_det * SHADOW_EPS).unsqueeze(1).expand_as(pts).reshape(-1, 3)
                to_l = pts.reshape(-1, 3) - origins
                dist = to_l.norm(dim=-1)
                dirs_l = to_l / dist.clamp_min(1e-12).unsqueeze(-1)
                blocked = any_hit(verts_det, tris_geo, origins, dirs_l,
                                  dist * (1.0 - 1e-4), t_min=SHADOW_EPS)
                cache.vis[key] = (~blocked).reshape(pts.shape[:2]).to(DTYPE)
        vis = cache.vis[key]
        to_l = pts - x.unsqueeze(1)
        r2 = (to_l * to_l).sum(-1).clamp_min(1e-9)
        wi = to_l / r2.sqrt().unsqueeze(-1)
        cos_x = (n.unsqueeze(1) * wi).sum(-1).clamp_min(0.0)
        cos_y = (-(wi * n_l)).sum(-1).clamp_min(0.0)
        weight = cos_x * cos_y / r2 * (area / light_samples) * vis
        f = ggx_eval(n.unsqueeze(1).expand_as(wi).reshape(-1, 3),
                     wo.unsqueeze(1).expand_as(wi).reshape(-1, 3),
                     wi.reshape(-1, 3),
                     albedo.unsqueeze(1).expand(-1, light_samples, 3).reshape(-1, 3),
                     rough.unsqueeze(1).expand(-1, light_samples).reshape(-1),
                     specular.unsqueeze(1).expand(-1, light_samples).reshape(-1))
        contrib = (f.reshape(x.shape[0], light_samples, 3) * weight.unsqueeze(-1)).sum(dim=1)
        out = out + rad.unsqueeze(0) * contrib * reflective.to(DTYPE).unsqueeze(-1)
    return out


def _cosine_dirs(n_det: torch.Tensor, pix, sample, seed) -> torch.Tensor:
    u1 = torch.from_numpy(rng.uniform(seed, rng.STREAM_INDIRECT, pix, sample, 0))
    u2 = torch.from_numpy(rng.uniform(seed, rng.STREAM_INDIRECT, pix, sample, 1))
    r = torch.sqrt(u1)
    phi = 2 * torch.pi * u2
    local = torch.stack([r * torch.cos(phi), r * torch.sin(phi),
                         torch.sqrt((1 - u1).clamp_min(0.0))], dim=1)
    # orthonormal basis around n
    helper = torch.where((n_det[:, 0].abs() < 0.9).unsqueeze(-1),
                         torch.tensor([1.0, 0.0, 0.0], dtype=DTYPE).expand_as(n_det),
                         torch.tensor([0.0, 1.0, 0.0], dtype=DTYPE).expand_as(n_det))
    t1 = torch.nn.functional.normalize(torch.cross(helper, n_det, dim=-1), dim=-1, eps=1e-12)
    t2 = torch.cross(n_det, t1, dim=-1)
    return (local[:, 0:1] * t1 + local[:, 1:2] * t2 + local[:, 2:3] * n_det)


def _indirect_bounce(geom, verts_t, mats, graphs, x, n, albedo, reflective,
                     pix, sample, seed, cache: ShadeCache):
    """One diffuse bounce: cosine-sampled direction, NEE at the secondary hit."""
    ns = x.shape[0]
    verts_det = verts_t.detach()
    tris_geo = geom.torch_tris()[: geom.n_geom_tris]
    if cache.indirect_tri is None:
        with torch.no_grad():
            dirs = _cosine_dirs(n.detach(), pix, sample, seed)
            origins = x.detach() + n.detach() * SHADOW_EPS
            tri2, _t2 = nearest_hit(verts_det, tris_geo, origins, dirs, t_min=SHADOW_EPS)
            cache.indirect_dir = dirs
            cache.indirect_tri = tri2
            cache.indirect_vis = {}
    dirs = cache.indirect_dir
    tri2 = cache.indirect_tri
    ent_of_tri = torch.from_numpy(geom.tri_entity)
    emis = torch.zeros(len(geom.entities), dtype=torch.bool)
    for i, e in enumerate(geom.entities):
        if e.kind == "light" or (e.material is not None and isinstance(e.material, Emissive)):
            emis[i] = True
    ok = (tri2 >= 0) & reflective
    ok &= ~emis[ent_of_tri[tri2.clamp_min(0)]]
    if not bool(ok.any()):
        return torch.zeros((ns, 3), dtype=DTYPE)
    sel = torch.nonzero(ok).squeeze(1)
    tv2 = verts_t[geom.torch_tris()[tri2[sel]]]
    n2_g = torch.cross(tv2[:, 1] - tv2[:, 0], tv2[:, 2] - tv2[:, 0], dim=-1)
    d2 = dirs[sel]
    dn2 = (d2 * n2_g).sum(-1)
    t2 = (tv2[:, 0] * n2_g).sum(-1) / torch.where(dn2.abs() > 1e-14, dn2, torch.full_like(dn2, 1e-14))
    # origin of the secondary ray: primary hit point (detached offset)
    x2 = (x[sel].detach() + n[sel].detach() * SHADOW_EPS) + t2.unsqueeze(-1) * d2
    n2_hat = torch.nn.functional.normalize(n2_g, dim=-1, eps=1e-14)
    flip2 = torch.sign(-(d2 * n2_hat).sum(-1)).unsqueeze(-1)
    flip2 = torch.where(flip2 == 0, torch.ones_like(flip2), flip2)
    n2 = n2_hat * flip2

    # secondary albedo (diffuse-only bounce)
    ent2 = ent_of_tri[tri2[sel]]
    alb2 = torch.zeros((len(sel), 3), dtype=DTYPE)
    for e_idx in sorted(set(ent2.tolist())):
        m = mats[e_idx]
        ssel = torch.nonzero(ent2 == e_idx).squeeze(1)
        if m.kind == "homogeneous":
            alb2[ssel] = m.albedo.unsqueeze(0).expand(len(ssel), 3)
        elif m.kind == "procedural":
            bu, bv = _barycentric(tv2[ssel], x2[ssel])
            uvw = torch.from_numpy(geom.uv_tris)[tri2[sel][ssel]]
            uv = (uvw[:, 0] * (1 - bu - bv).unsqueeze(-1)
                  + uvw[:, 1] * bu.unsqueeze(-1) + uvw[:, 2] * bv.unsqueeze(-1))
            alb2[ssel] = graphs.eval_uv(m.graph_id, m.params, transform_uv(uv, m))["albedo"]

    out_sel = torch.zeros((len(sel), 3), dtype=DTYPE)
    pix_sel = pix[sel.numpy()]
    samp_sel = sample[sel.numpy()]
    for li, light in enumerate(geom.lights):
        ent_idx = next(i for i, e in enumerate(geom.entities)
                       if e.kind == "light" and e.light_index == li)
        rad = mats[ent_idx].radiance
        pts = torch.from_numpy(_light_points(li, light.quad, 1, pix_sel, samp_sel,
                                             seed ^ 0x5EC0)).squeeze(1)
        key = 7000 + li
        if key not in cache.indirect_vis:
            with torch.no_grad():
                origins = x2.detach() + n2.detach() * SHADOW_EPS
                to_l = pts - origins
                dist = to_l.norm(dim=-1)
                dirs_l = to_l / dist.clamp_min(1e-12).unsqueeze(-1)
                blocked = any_hit(verts_det, tris_geo, origins, dirs_l,
                                  dist * (1.0 - 1e-4), t_min=SHADOW_EPS)
                cache.indirect_vis[key] = (~blocked).to(DTYPE)
        vis = cache.indirect_vis[key]
        to_l = pts - x2
        r2 = (to_l * to_l).sum(-1).clamp_min(1e-9)
        wi = to_l / r2.sqrt().unsqueeze(-1)
        cos2 = (n2 * wi).sum(-1).clamp_min(0.0)
        n_l = torch.from_numpy(light.normal())
        cos_y = (-(wi * n_l)).sum(-1).clamp_min(0.0)
        l_in = rad.unsqueeze(0) * (alb2 / torch.pi) * (cos2 * cos_y / r2 * light.area() * vis).unsqueeze(-1)
        out_sel = out_sel + l_in
    out = torch.zeros((ns, 3), dtype=DTYPE)
    out[sel] = albedo[sel] * out_sel
    return out

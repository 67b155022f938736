"""Brute-force ray-triangle intersection against precomputed plane data.

For each triangle the plane and barycentric dual basis are precomputed; a
compiled per-ray loop (numba) tests all triangles with early rejection. At
desk scale (tens to a few hundred triangles) this beats any acceleration
structure, and per-ray independence keeps results thread-count invariant.
A pure-torch fallback covers environments without numba.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

try:
    import os

    # avoid probing TBB (old versions emit a warning); workqueue is built in
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    from numba import njit, prange
    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False

T_MIN = 1e-4
_TARGET_ELEMS = 1 << 21  # keep (rays x tris) work blocks cache-resident
_BARY_EPS = 1e-7
DTYPE = torch.float32


@dataclass
class TriAccel:
    """Per-triangle constants for plane + barycentric intersection."""

    n: torch.Tensor       # (T, 3) unnormalized plane normal e1 x e2
    v0n: torch.Tensor     # (T,) v0 . n
    e1: torch.Tensor      # (T, 3)
    e2: torch.Tensor
    v0e1: torch.Tensor
    v0e2: torch.Tensor
    d22: torch.Tensor
    d12: torch.Tensor
    d11: torch.Tensor
    inv_den: torch.Tensor

    @property
    def count(self) -> int:
        return self.n.shape[0]


def build_accel(verts: torch.Tensor, tris: torch.Tensor) -> TriAccel:
    v = verts.to(DTYPE)
    v0 = v[tris[:, 0]]
    e1 = v[tris[:, 1]] - v0
    e2 = v[tris[:, 2]] - v0
    n = torch.cross(e1, e2, dim=-1)
    d11 = (e1 * e1).sum(-1)
    d12 = (e1 * e2).sum(-1)
    d22 = (e2 * e2).sum(-1)
    den = d11 * d22 - d12 * d12
    inv_den = torch.where(den.abs() > 1e-18, 1.0 / den, torch.zeros_like(den))
    return TriAccel(n=n, v0n=(v0 * n).sum(-1), e1=e1, e2=e2,
                    v0e1=(v0 * e1).sum(-1), v0e2=(v0 * e2).sum(-1),
                    d22=d22, d12=d12, d11=d11, inv_den=inv_den)


def _blocks(n_rays: int, n_tris: int) -> int:
    return max(4096, _TARGET_ELEMS // max(1, n_tris))


def _candidate_t(acc: TriAccel, o, d, ts, te, t_min: float, t_lim=None):
    """Hit distances for rays x triangles [ts:te); invalid entries +inf.

    Division hazards produce inf/nan which the validity tests reject, so a
    single in-place masked_fill suffices.
    """
    dn = d @ acc.n[ts:te].T
    de1 = d @ acc.e1[ts:te].T
    de2 = d @ acc.e2[ts:te].T
    if o.dim() == 1:
        on = (o @ acc.n[ts:te].T).unsqueeze(0)
        oe1 = (o @ acc.e1[ts:te].T).unsqueeze(0)
        oe2 = (o @ acc.e2[ts:te].T).unsqueeze(0)
    else:
        on = o @ acc.n[ts:te].T
        oe1 = o @ acc.e1[ts:te].T
        oe2 = o @ acc.e2[ts:te].T
    t = (acc.v0n[ts:te] - on) / dn
    we1 = oe1 + t * de1 - acc.v0e1[ts:te]
    we2 = oe2 + t * de2 - acc.v0e2[ts:te]
    u = (acc.d22[ts:te] * we1 - acc.d12[ts:te] * we2) * acc.inv_den[ts:te]
    v = (acc.d11[ts:te] * we2 - acc.d12[ts:te] * we1) * acc.inv_den[ts:te]
    ok = (t > t_min) & (u >= -_BARY_EPS) & (v >= -_BARY_EPS) & (u + v <= 1.0 + _BARY_EPS)
    if t_lim is not None:
        ok &= t < t_lim
    return t.masked_fill_(~ok, float("inf"))


def nearest_hit_accel(acc: TriAccel, origins: torch.Tensor, dirs: torch.Tensor,
                      t_min: float = T_MIN):
    """Closest triangle per ray: (hit int64, -1 on miss; t float32)."""
    n = dirs.shape[0]
    best_t = torch.full((n,), float("inf"), dtype=DTYPE)
    best_tri = torch.full((n,), -1, dtype=torch.int64)
    if acc.count == 0 or n == 0:
        return best_tri, best_t
    dirs = dirs.to(DTYPE)
    origins = origins.to(DTYPE)
    ray_block = _blocks(n, acc.count)
    tri_block = min(acc.count, 512)
    shared = origins.dim() == 1
    for rs in range(0, n, ray_block):
        re = min(n, rs + ray_block)
        d = dirs[rs:re]
        o = origins if shared else origins[rs:re]
        bt = best_t[rs:re]
        bi = best_tri[rs:re]
        for ts in range(0, acc.count, tri_block):
            te = min(acc.count, ts + tri_block)
            t = _candidate_t(acc, o, d, ts, te, t_min)
            blk_t, blk_i = t.min(dim=1)
            better = blk_t < bt
            bt = torch.where(better, blk_t, bt)
            bi = torch.where(better, blk_i + ts, bi)
        best_t[rs:re] = bt
        best_tri[rs:re] = bi
    return best_tri, best_t


def any_hit_accel(acc: TriAccel, origins: torch.Tensor, dirs: torch.Tensor,
                  t_max: torch.Tensor, t_min: float = T_MIN) -> torch.Tensor:
    """True where some triangle blocks the segment (t_min, t_max)."""
    n = dirs.shape[0]
    blocked = torch.zeros(n, dtype=torch.bool)
    if acc.count == 0 or n == 0:
        return blocked
    dirs = dirs.to(DTYPE)
    origins = origins.to(DTYPE)
    lim = t_max.to(DTYPE)
    ray_block = _blocks(n, acc.count)
    tri_block = min(acc.count, 512)
    for rs in range(0, n, ray_block):
        re = min(n, rs + ray_block)
        d = dirs[rs:re]
        o = origins[rs:re]
        l = lim[rs:re].unsqueeze(1)
        acc_blocked = blocked[rs:re]
        for ts in range(0, acc.count, tri_block):
            te = min(acc.count, ts + tri_block)
            t = _candidate_t(acc, o, d, ts, te, t_min, t_lim=l)
            acc_blocked = acc_blocked | (t != float("inf")).any(dim=1)
        blocked[rs:re] = acc_blocked
    return blocked


if _HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _nearest_kernel(ox, oy, oz, shared, dirs, nx, ny, nz, v0n,
                        e1x, e1y, e1z, e2x, e2y, e2z, v0e1, v0e2,
                        d11, d12, d22, inv_den, t_min):
        n = dirs.shape[0]
        t_count = nx.shape[0]
        out_tri = np.full(n, -1, dtype=np.int64)
        out_t = np.full(n, np.inf, dtype=np.float32)
        for i in prange(n):
            dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
            if shared:
                px, py, pz = ox[0], oy[0], oz[0]
            else:
                px, py, pz = ox[i], oy[i], oz[i]
            best_t = np.inf
            best_k = -1
            for k in range(t_count):
                dn = dx * nx[k] + dy * ny[k] + dz * nz[k]
                if dn == 0.0:
                    continue
                on = px * nx[k] + py * ny[k] + pz * nz[k]
                t = (v0n[k] - on) / dn
                if t <= t_min or t >= best_t:
                    continue
                hx, hy, hz = px + t * dx, py + t * dy, pz + t * dz
                we1 = hx * e1x[k] + hy * e1y[k] + hz * e1z[k] - v0e1[k]
                we2 = hx * e2x[k] + hy * e2y[k] + hz * e2z[k] - v0e2[k]
                u = (d22[k] * we1 - d12[k] * we2) * inv_den[k]
                v = (d11[k] * we2 - d12[k] * we1) * inv_den[k]
                if u >= -_BARY_EPS and v >= -_BARY_EPS and u + v <= 1.0 + _BARY_EPS:
                    best_t = t
                    best_k = k
            out_tri[i] = best_k
            out_t[i] = best_t
        return out_tri, out_t

    @njit(parallel=True, cache=True)
    def _any_kernel(ox, oy, oz, dirs, t_max, nx, ny, nz, v0n,
                    e1x, e1y, e1z, e2x, e2y, e2z, v0e1, v0e2,
                    d11, d12, d22, inv_den, t_min):
        n = dirs.shape[0]
        t_count = nx.shape[0]
        blocked = np.zeros(n, dtype=np.bool_)
        for i in prange(n):
            dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
            px, py, pz = ox[i], oy[i], oz[i]
            lim = t_max[i]
            for k in range(t_count):
                dn = dx * nx[k] + dy * ny[k] + dz * nz[k]
                if dn == 0.0:
                    continue
                on = px * nx[k] + py * ny[k] + pz * nz[k]
                t = (v0n[k] - on) / dn
                if t <= t_min or t >= lim:
                    continue
                hx, hy, hz = px + t * dx, py + t * dy, pz + t * dz
                we1 = hx * e1x[k] + hy * e1y[k] + hz * e1z[k] - v0e1[k]
                we2 = hx * e2x[k] + hy * e2y[k] + hz * e2z[k] - v0e2[k]
                u = (d22[k] * we1 - d12[k] * we2) * inv_den[k]
                v = (d11[k] * we2 - d12[k] * we1) * inv_den[k]
                if u >= -_BARY_EPS and v >= -_BARY_EPS and u + v <= 1.0 + _BARY_EPS:
                    blocked[i] = True
                    break
        return blocked

    def _acc_arrays(acc: TriAccel):
        n = acc.n.numpy()
        e1 = acc.e1.numpy()
        e2 = acc.e2.numpy()
        return (n[:, 0], n[:, 1], n[:, 2], acc.v0n.numpy(),
                e1[:, 0], e1[:, 1], e1[:, 2], e2[:, 0], e2[:, 1], e2[:, 2],
                acc.v0e1.numpy(), acc.v0e2.numpy(),
                acc.d11.numpy(), acc.d12.numpy(), acc.d22.numpy(), acc.inv_den.numpy())


def nearest_hit_fast(acc: TriAccel, origins: torch.Tensor, dirs: torch.Tensor,
                     t_min: float = T_MIN):
    if not _HAVE_NUMBA:
        return nearest_hit_accel(acc, origins, dirs, t_min)
    d = np.ascontiguousarray(dirs.to(DTYPE).numpy())
    o = origins.to(DTYPE).numpy().reshape(-1, 3)
    shared = origins.dim() == 1
    a = _acc_arrays(acc)
    tri, t = _nearest_kernel(np.ascontiguousarray(o[:, 0]), np.ascontiguousarray(o[:, 1]),
                             np.ascontiguousarray(o[:, 2]), shared, d, *a,
                             np.float32(t_min))
    return torch.from_numpy(tri), torch.from_numpy(t)


def any_hit_fast(acc: TriAccel, origins: torch.Tensor, dirs: torch.Tensor,
                 t_max: torch.Tensor, t_min: float = T_MIN) -> torch.Tensor:
    if not _HAVE_NUMBA:
        return any_hit_accel(acc, origins, dirs, t_max, t_min)
    d = np.ascontiguousarray(dirs.to(DTYPE).numpy())
    o = np.ascontiguousarray(origins.to(DTYPE).numpy())
    a = _acc_arrays(acc)
    blocked = _any_kernel(np.ascontiguousarray(o[:, 0]), np.ascontiguousarray(o[:, 1]),
                          np.ascontiguousarray(o[:, 2]), d,
                          np.ascontiguousarray(t_max.to(DTYPE).numpy()), *a,
                          np.float32(t_min))
    return torch.from_numpy(blocked)


# -- compatibility wrappers (verts/tris signature) --------------------------------


def nearest_hit(verts: torch.Tensor, tris: torch.Tensor,
                origins: torch.Tensor, dirs: torch.Tensor, t_min: float = T_MIN):
    return nearest_hit_fast(build_accel(verts, tris), origins, dirs, t_min)


def any_hit(verts: torch.Tensor, tris: torch.Tensor, origins: torch.Tensor,
            dirs: torch.Tensor, t_max: torch.Tensor, t_min: float = T_MIN) -> torch.Tensor:
    return any_hit_fast(build_accel(verts, tris), origins, dirs, t_max, t_min)

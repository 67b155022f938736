"""Differentiable texture nodes. All generators are periodic with period 1 in
UV so every graph output tiles; lattice hash values are constants (gradients
flow through amplitudes and remaps only)."""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch

DTYPE = torch.float64


def node_seed(graph_id: str, node_id: str) -> int:
    h = hashlib.blake2b(f"{graph_id}:{node_id}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def _t(v) -> torch.Tensor:
    return v if isinstance(v, torch.Tensor) else torch.as_tensor(float(v), dtype=DTYPE)


def _hash01(seed: int, *idx: torch.Tensor) -> torch.Tensor:
    """Deterministic lattice hash -> [0, 1), detached."""
    h = torch.full_like(idx[0], seed & 0x7FFFFFFF, dtype=torch.int64)
    for x in idx:
        h = (h * 0x9E3779B1 + x.to(torch.int64) * 0x85EBCA77 + 0x165667B1) & 0x7FFFFFFF
        h = (h ^ (h >> 13)) * 0xC2B2AE35 & 0x7FFFFFFF
        h = h ^ (h >> 16)
    return (h & 0xFFFFFF).to(DTYPE) / float(1 << 24)


def _smoothstep(e0, e1, x):
    t = ((x - e0) / (e1 - e0 + 1e-12)).clamp(0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


# -- generators ---------------------------------------------------------------


def uniform_color(uv, params):
    n = uv.shape[0]
    col = torch.stack([_t(params["r"]), _t(params["g"]), _t(params["b"])])
    return col.unsqueeze(0).expand(n, 3)


def checker(uv, params, structural):
    tiles = int(structural.get("tiles", 2))
    soft = _t(params.get("softness", 0.03))
    v0 = _t(params.get("value0", 0.0))
    v1 = _t(params.get("value1", 1.0))
    # triangle wave in [0,1] per axis, smooth-thresholded at 0.5
    tri_u = 2.0 * (uv[:, 0] * tiles - torch.floor(uv[:, 0] * tiles) - 0.5).abs()
    tri_v = 2.0 * (uv[:, 1] * tiles - torch.floor(uv[:, 1] * tiles) - 0.5).abs()
    a = _smoothstep(0.5 - soft, 0.5 + soft, tri_u)
    b = _smoothstep(0.5 - soft, 0.5 + soft, tri_v)
    x = a + b - 2.0 * a * b  # soft xor
    return v0 + (v1 - v0) * x


def brick(uv, params, structural, seed: int):
    rows = int(structural.get("rows", 4))
    cols = int(structural.get("cols", 2))
    mortar = _t(params.get("mortar", 0.04))
    soft = _t(params.get("softness", 0.01))
    variation = _t(params.get("variation", 0.3))
    v = uv[:, 1] * rows
    row = torch.floor(v)
    row_par = ((row.to(torch.int64) % rows) + rows) % rows
    offset = (row_par % 2).to(DTYPE) * 0.5
    u = uv[:, 0] * cols + offset
    col = torch.floor(u)
    col_par = ((col.to(torch.int64) % cols) + cols) % cols
    fu, fv = u - col, v - row
    # distance to brick border in brick-local units
    half_m_u = mortar * cols * 0.5
    half_m_v = mortar * rows * 0.5
    du = torch.minimum(fu, 1.0 - fu)
    dv = torch.minimum(fv, 1.0 - fv)
    body_u = _smoothstep(half_m_u - soft * cols, half_m_u + soft * cols, du)
    body_v = _smoothstep(half_m_v - soft * rows, half_m_v + soft * rows, dv)
    body = body_u * body_v
    rand = _hash01(seed, row_par, col_par).detach()
    return body * (1.0 - variation * rand)


def _perlin_single(uv_scaled: torch.Tensor, period: int, seed: int) -> torch.Tensor:
    x, y = uv_scaled[:, 0], uv_scaled[:, 1]
    x0, y0 = torch.floor(x), torch.floor(y)
    fx, fy = x - x0, y - y0
    wx = fx * fx * fx * (fx * (fx * 6 - 15) + 10)
    wy = fy * fy * fy * (fy * (fy * 6 - 15) + 10)
    acc = []
    for dx in (0, 1):
        for dy in (0, 1):
            ix = (x0.to(torch.int64) + dx) % period
            iy = (y0.to(torch.int64) + dy) % period
            ang = _hash01(seed, ix, iy) * (2 * math.pi)
            gx, gy = torch.cos(ang), torch.sin(ang)
            dot = gx * (fx - dx) + gy * (fy - dy)
            acc.append(dot)
    nx0 = acc[0] + wy * (acc[1] - acc[0])   # dx=0: dy 0/1
    nx1 = acc[2] + wy * (acc[3] - acc[2])   # dx=1
    out = nx0 + wx * (nx1 - nx0)
    return out * math.sqrt(2.0)  # roughly [-1, 1]


def perlin(uv, params, structural, seed: int):
    octaves = int(structural.get("octaves", 3))
    freq = int(structural.get("frequency", 4))
    persistence = _t(params.get("persistence", 0.5))
    amplitude = _t(params.get("amplitude", 0.5))
    total = torch.zeros(uv.shape[0], dtype=DTYPE)
    norm = torch.zeros((), dtype=DTYPE)
    weight = torch.ones((), dtype=DTYPE)
    for k in range(octaves):
        period = freq * (1 << k)
        total = total + weight * _perlin_single(uv * period, period, seed + 17 * k)
        norm = norm + weight
        weight = weight * persistence
    return 0.5 + amplitude * total / norm


# -- filters ------------------------------------------------------------------


def color_ramp(t: torch.Tensor, params, structural):
    positions = structural["positions"]
    n = len(positions)
    cols = torch.stack([torch.stack([_t(params[f"c{i}_r"]), _t(params[f"c{i}_g"]),
                                     _t(params[f"c{i}_b"])]) for i in range(n)])
    t = t.clamp(positions[0], positions[-1])
    out = cols[0].unsqueeze(0).expand(t.shape[0], 3).clone()
    for i in range(n - 1):
        p0, p1 = positions[i], positions[i + 1]
        w = ((t - p0) / max(p1 - p0, 1e-9)).clamp(0.0, 1.0).unsqueeze(-1)
        seg = cols[i].unsqueeze(0) * (1 - w) + cols[i + 1].unsqueeze(0) * w
        inside = ((t >= p0) & (t <= p1)).unsqueeze(-1)
        out = torch.where(inside, seg, out)
    return out


def blend(a, b, factor, structural):
    mode = structural.get("mode", "mix")
    if a.dim() != b.dim():
        if a.dim() == 1:
            a = a.unsqueeze(-1).expand(-1, 3)
        if b.dim() == 1:
            b = b.unsqueeze(-1).expand(-1, 3)
    if isinstance(factor, torch.Tensor) and factor.dim() == 1 and a.dim() == 2:
        factor = factor.unsqueeze(-1)
    if mode == "multiply":
        return a * (1 - factor) + a * b * factor
    return a * (1 - factor) + b * factor


def levels(x, params):
    in_lo = _t(params.get("in_lo", 0.0))
    in_hi = _t(params.get("in_hi", 1.0))
    gamma = _t(params.get("gamma", 1.0))
    out_lo = _t(params.get("out_lo", 0.0))
    out_hi = _t(params.get("out_hi", 1.0))
    t = ((x - in_lo) / (in_hi - in_lo + 1e-9)).clamp(1e-6, 1.0)
    return out_lo + (out_hi - out_lo) * t ** gamma


NODE_PARAM_BOUNDS = {
    "uniform_color": {"r": (0.0, 1.0, 0.5), "g": (0.0, 1.0, 0.5), "b": (0.0, 1.0, 0.5)},
    "checker": {"softness": (0.005, 0.25, 0.03), "value0": (0.0, 1.0, 0.0),
                "value1": (0.0, 1.0, 1.0)},
    "brick": {"mortar": (0.01, 0.2, 0.05), "softness": (0.002, 0.1, 0.01),
              "variation": (0.0, 1.0, 0.3)},
    "perlin": {"persistence": (0.2, 0.8, 0.5), "amplitude": (0.05, 1.0, 0.5)},
    "color_ramp": None,  # derived from stop count
    "blend": {"factor": (0.0, 1.0, 0.5)},
    "levels": {"in_lo": (0.0, 0.49, 0.0), "in_hi": (0.51, 1.0, 1.0),
               "gamma": (0.2, 5.0, 1.0), "out_lo": (0.0, 1.0, 0.0),
               "out_hi": (0.0, 1.0, 1.0)},
    "normal_from_height": {"strength": (0.0, 2.0, 0.5)},
    "transform_uv": {},  # structural-only inside graphs (keeps tileability)
}


def ramp_param_bounds(n_stops: int) -> dict:
    out = {}
    for i in range(n_stops):
        for c in "rgb":
            out[f"c{i}_{c}"] = (0.0, 1.0, 0.5)
    return out

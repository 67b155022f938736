"""Differentiable twins of the imaging primitives, used inside losses.

These mirror the numpy implementations (same kernels, same boundary modes) so
loss values agree with the public imaging ops while remaining torch graphs.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from ..imaging import clamped_taps


def soft_iou_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    inter = torch.minimum(a, b).sum()
    union = torch.maximum(a, b).sum()
    if float(union.detach()) == 0.0:
        return torch.ones((), dtype=a.dtype)
    return inter / union


def normalize_unit_t(depth: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Min/max normalization over valid pixels; differentiable subgradient at
    the extrema. Invalid pixels map to 0."""
    vals = depth[valid]
    lo = vals.min()
    hi = vals.max()
    # exact (hi - lo) keeps normalized values bitwise equal to a numpy
    # normalization of identical data (zero residual at ground truth)
    rng = (hi - lo).clamp_min(1e-30)
    out = (depth - lo) / rng
    return out * valid.to(depth.dtype)


def _blur2d_t(plane: torch.Tensor, sigma: float) -> torch.Tensor:
    x = plane.unsqueeze(0).unsqueeze(0)
    for axis in (2, 3):
        taps = torch.from_numpy(clamped_taps(sigma, x.shape[axis]))
        pad = len(taps) // 2
        if axis == 2:
            xp = F.pad(x, (0, 0, pad, pad), mode="reflect")
            x = F.conv2d(xp, taps.reshape(1, 1, -1, 1))
        else:
            xp = F.pad(x, (pad, pad, 0, 0), mode="reflect")
            x = F.conv2d(xp, taps.reshape(1, 1, 1, -1))
    return x.squeeze(0).squeeze(0)


def gaussian_pyramid_t(mask: torch.Tensor, levels: int = 4, sigma: float = 2.0):
    cur = _blur2d_t(mask, sigma)
    out = [cur]
    for _ in range(1, levels):
        cur = _blur2d_t(cur, sigma)[::2, ::2]
        out.append(cur)
    return out


def box_down_t(img: torch.Tensor, k: int) -> torch.Tensor:
    """Box-filter downsample of (h, w, c) by integer k (dims must divide)."""
    h, w, c = img.shape
    return img.reshape(h // k, k, w // k, k, c).mean(dim=(1, 3))

"""Stage losses over render outputs, with adjoints for the renderer.

Each loss builds a small torch graph over leaf copies of the render's output
images; backward() on the scalar yields the adjoint images handed to
render_backward (the loss side of the chain rule).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..render import RenderAdjoint, RenderOutput
from .crops import CropPair
from .descriptor import descriptor_torch
from .torchops import box_down_t, gaussian_pyramid_t, normalize_unit_t, soft_iou_t

ROOM_SURFACES = ("room.wall", "room.floor", "room.ceiling")


@dataclass
class LossResult:
    total: float
    terms: dict[str, float]
    adjoint: RenderAdjoint
    crop_adjoints: list[np.ndarray] = field(default_factory=list)


def _leaf(arr: np.ndarray) -> torch.Tensor:
    return torch.tensor(arr, dtype=torch.float64, requires_grad=True)


def loss_box(out: RenderOutput, targets, weights: dict | None = None) -> LossResult:
    """Room-stage loss: -sum of surface soft-IoUs + L1 of normalized depths
    restricted to target room-surface pixels."""
    w = weights or {}
    mask_leaves = {k: _leaf(out.masks[k]) for k in ROOM_SURFACES}
    depth_leaf = _leaf(out.depth)

    total = torch.zeros((), dtype=torch.float64)
    terms = {}
    for k in ROOM_SURFACES:
        iou = soft_iou_t(mask_leaves[k], torch.from_numpy(targets.masks[k]))
        terms[f"iou.{k}"] = float(iou)
        total = total - w.get("iou", 1.0) * iou

    region = torch.from_numpy(targets.room_region)
    if bool(region.any()):
        d_r = normalize_unit_t(depth_leaf, region)
        d_t = torch.from_numpy(targets.depth_norm)
        depth_l1 = (d_r - d_t).abs()[region].mean()
        terms["depth_l1"] = float(depth_l1)
        total = total + w.get("depth", 1.0) * depth_l1
    total.backward()

    adj = RenderAdjoint(
        masks={k: mask_leaves[k].grad.numpy() for k in ROOM_SURFACES},
        depth=depth_leaf.grad.numpy() if depth_leaf.grad is not None else None)
    return LossResult(float(total), terms, adj)


def loss_obj(out: RenderOutput, targets, weights: dict | None = None,
             pyramid_levels: int = 4, pyramid_sigma: float = 2.0) -> LossResult:
    """Object-stage loss: depth-weighted mask L1 plus blurred-mask pyramid L1."""
    w = weights or {}
    obj_ids = sorted(targets.object_masks)
    mask_leaves = {oid: _leaf(out.masks[oid]) for oid in obj_ids}
    depth_leaf = _leaf(out.depth)

    valid = torch.from_numpy(out.coverage > 0.5)
    d_r = normalize_unit_t(depth_leaf, valid)
    d_t = torch.from_numpy(targets.depth_norm)

    total = torch.zeros((), dtype=torch.float64)
    terms = {}
    for oid in obj_ids:
        m_t = torch.from_numpy(targets.object_masks[oid])
        m_r = mask_leaves[oid]
        term = (m_r * d_r - m_t * d_t).abs().mean()
        terms[f"maskdepth.{oid}"] = float(term)
        total = total + w.get("maskdepth", 1.0) * term
        pyr_r = gaussian_pyramid_t(m_r, pyramid_levels, pyramid_sigma)
        pyr_t = gaussian_pyramid_t(m_t, pyramid_levels, pyramid_sigma)
        pterm = torch.zeros((), dtype=torch.float64)
        for a, b in zip(pyr_r, pyr_t):
            pterm = pterm + (a - b).abs().mean()
        terms[f"pyramid.{oid}"] = float(pterm)
        total = total + w.get("pyramid", 1.0) * pterm
    total.backward()

    adj = RenderAdjoint(
        masks={oid: mask_leaves[oid].grad.numpy() for oid in obj_ids
               if mask_leaves[oid].grad is not None},
        depth=depth_leaf.grad.numpy() if depth_leaf.grad is not None else None)
    return LossResult(float(total), terms, adj)


def loss_final_full(out: RenderOutput, targets, weights: dict | None = None) -> LossResult:
    """Full-frame terms of the appearance loss: 1/8-downsized L1 plus
    mean-color-per-part L1 against initialization medians."""
    w = weights or {}
    rgb_leaf = _leaf(out.rgb)
    total = torch.zeros((), dtype=torch.float64)
    terms = {}

    k = out.rgb.shape[0] * 8 // targets.image.shape[0]
    down_r = box_down_t(rgb_leaf, max(1, k))
    down_t = torch.from_numpy(targets.image_eighth)
    l1 = (down_r - down_t).abs().mean()
    terms["image_l1"] = float(l1)
    total = total + w.get("image", 1.0) * l1

    for oid, med in sorted(targets.object_medians.items()):
        m = out.masks.get(oid)
        if m is None or m.sum() < 1.0:
            continue
        wm = torch.from_numpy(m).unsqueeze(-1)
        mean_rgb = (rgb_leaf * wm).sum(dim=(0, 1)) / wm.sum()
        term = (mean_rgb - torch.from_numpy(np.asarray(med))).abs().mean()
        terms[f"mean.{oid}"] = float(term)
        total = total + w.get("mean", 1.0) * term
    total.backward()
    return LossResult(float(total), terms,
                      RenderAdjoint(rgb=rgb_leaf.grad.numpy()))


def loss_final_crop(crop_out: RenderOutput, target_descriptor: np.ndarray,
                    pair: CropPair) -> LossResult:
    """Texture-descriptor L1 for one crop pair (rendered ROI vs target crop)."""
    rgb_leaf = _leaf(crop_out.rgb)
    desc = descriptor_torch(rgb_leaf)
    term = (desc - torch.from_numpy(target_descriptor)).abs().mean()
    term.backward()
    key = f"gram.{pair.owner}/{pair.group}"
    return LossResult(float(term), {key: float(term)},
                      RenderAdjoint(rgb=rgb_leaf.grad.numpy()))

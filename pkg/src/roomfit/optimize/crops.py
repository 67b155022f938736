"""Crop pairs: matched rectangles binding a material part to image evidence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imaging import ImageF, Rect, max_inscribed_rect, soft_mask

MIN_AUTO_CROP = 32
MIN_USER_CROP = 16
MAX_CROPS_PER_PART = 3
CROP_THRESHOLD = 0.5


@dataclass(frozen=True)
class CropPair:
    target_rect: Rect
    render_rect: Rect
    owner: str          # "room" or object id
    group: str          # material group / room face
    source: str = "auto"

    def __post_init__(self):
        lim = MIN_AUTO_CROP if self.source == "auto" else MIN_USER_CROP
        for r in (self.target_rect, self.render_rect):
            if r.w < lim or r.h < lim:
                raise ValueError(f"{self.source} crop below {lim}x{lim}")


def part_crop_rects(part_mask: np.ndarray, target_mask: np.ndarray,
                    max_crops: int = MAX_CROPS_PER_PART) -> list[Rect]:
    """Up to `max_crops` disjoint maximal rectangles inside the intersection
    of a rendered part mask and the object's target mask."""
    inter = np.minimum(part_mask, target_mask)
    rects: list[Rect] = []
    work = inter.copy()
    for _ in range(max_crops):
        r = max_inscribed_rect(soft_mask(work), CROP_THRESHOLD)
        if r is None or r.w < MIN_AUTO_CROP or r.h < MIN_AUTO_CROP:
            break
        rects.append(r)
        ys, xs = r.slice()
        work[ys, xs] = 0.0
    return rects


def auto_crop_pairs(part_masks: dict[tuple[str, str], np.ndarray],
                    target_masks_by_owner: dict[str, np.ndarray]) -> list[CropPair]:
    """Shared-window crop pairs for every material part with usable overlap.

    part_masks come from a target-resolution render; the same rectangle is
    used in both images (the paper's shared window).
    """
    pairs: list[CropPair] = []
    for (owner, group) in sorted(part_masks):
        target = target_masks_by_owner.get(owner if owner != "room" else f"room.{group}")
        if target is None and owner == "room" and group.startswith("wall"):
            target = target_masks_by_owner.get("room.wall")
        if target is None:
            continue
        for r in part_crop_rects(part_masks[(owner, group)], target):
            pairs.append(CropPair(r, r, owner, group, "auto"))
    return pairs

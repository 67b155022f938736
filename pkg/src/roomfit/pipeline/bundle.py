"""Interchange bundle: the file set decoupling neural preprocessing from the
optimization engine.

    bundle/
      input.png       # target photo (sRGB)
      depth.pfm       # normalized [0,1] view depth
      camera.json     # {"vfov_deg": .., "width": .., "height": ..}
      seg/index.json  # {"segments": [{"id", "label", "mask"}]}
      seg/*.png       # one 8-bit mask per segment
      seg/queries.bin # optional retrieval query vectors (embeddings.bin format)
      crops.json      # optional user crop pairs
      choices.json    # optional user asset/material picks per segment
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BundleError, MissingInput
from ..imaging import ImageF, Rect, load_png, read_pfm
from ..retrieval import AssetIndex, load_index
from ..scene import Camera

LABELS = ("wall", "floor", "ceiling", "window", "lamp")  # plus object:<category>


def valid_label(label: str) -> bool:
    return label in LABELS or label.startswith("object:")


@dataclass
class Segment:
    id: str
    label: str
    mask: ImageF

    @property
    def is_object(self) -> bool:
        return self.label.startswith("object:") or self.label == "lamp"


@dataclass
class UserCrop:
    owner: str
    group: str
    target_rect: Rect
    render_rect: Rect


@dataclass
class Bundle:
    directory: Path
    image: ImageF               # linear RGB
    depth: ImageF
    camera: Camera
    segments: list[Segment]
    choices: dict[str, str] = field(default_factory=dict)
    crops: list[UserCrop] = field(default_factory=list)
    queries: AssetIndex | None = None

    def segment_by_id(self, sid: str) -> Segment:
        for s in self.segments:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def object_segments(self) -> list[Segment]:
        return sorted((s for s in self.segments if s.is_object), key=lambda s: s.id)

    def label_mask(self, label: str) -> np.ndarray | None:
        planes = [s.mask.plane() for s in self.segments if s.label == label]
        if not planes:
            return None
        return np.clip(np.sum(planes, axis=0), 0.0, 1.0)


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInput(str(path))
    return path


def load_bundle(directory) -> Bundle:
    d = Path(directory)
    if not d.is_dir():
        raise MissingInput(f"bundle directory {d}")
    image = load_png(_require(d / "input.png"))
    depth = read_pfm(_require(d / "depth.pfm"))
    if depth.channels != 1:
        raise BundleError("depth.pfm must be single-channel")
    cam_raw = json.loads(_require(d / "camera.json").read_text())
    try:
        camera = Camera(cam_raw["vfov_deg"], cam_raw["width"], cam_raw["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"camera.json: {exc}") from exc
    if (camera.width, camera.height) != (image.width, image.height):
        raise BundleError("camera.json dimensions disagree with input.png")
    if not depth.same_size(image):
        raise BundleError("depth.pfm dimensions disagree with input.png")

    seg_raw = json.loads(_require(d / "seg" / "index.json").read_text())
    segments: list[Segment] = []
    seen = set()
    for entry in seg_raw.get("segments", []):
        sid, label = entry.get("id"), entry.get("label")
        if not sid or sid in seen:
            raise BundleError(f"missing or duplicate segment id {sid!r}")
        seen.add(sid)
        if not valid_label(label):
            raise BundleError(f"segment {sid}: label {label!r} outside vocabulary")
        mask = load_png(_require(d / entry["mask"]))
        if mask.channels != 1:
            mask = ImageF(mask.data.mean(axis=2))
        if not mask.same_size(image):
            raise BundleError(f"segment {sid}: mask size mismatch")
        segments.append(Segment(sid, label, mask))
    if not segments:
        raise BundleError("bundle has no segments")

    choices = {}
    if (d / "choices.json").exists():
        choices = json.loads((d / "choices.json").read_text())
        if not isinstance(choices, dict):
            raise BundleError("choices.json must be an object")

    crops: list[UserCrop] = []
    if (d / "crops.json").exists():
        raw = json.loads((d / "crops.json").read_text())
        for entry in raw.get("crops", []):
            try:
                t = Rect(*entry["target_rect"])
                r = Rect(*entry["render_rect"])
            except (KeyError, TypeError, ValueError) as exc:
                raise BundleError(f"crops.json: {exc}") from exc
            for rect in (t, r):
                if not rect.clipped_to(image.width, image.height):
                    raise BundleError(f"crops.json: rect {rect} outside image")
                if rect.w < 16 or rect.h < 16:
                    raise BundleError("crops.json: user crops must be >= 16x16")
            crops.append(UserCrop(entry["owner"], entry.get("group", ""), t, r))

    queries = None
    if (d / "seg" / "queries.bin").exists():
        queries = load_index(d / "seg" / "queries.bin")

    return Bundle(directory=d, image=image, depth=depth, camera=camera,
                  segments=segments, choices=choices, crops=crops, queries=queries)


def validate_bundle(directory) -> list[str]:
    """Contract check used by the `validate` subcommand; returns problems."""
    problems: list[str] = []
    try:
        bundle = load_bundle(directory)
    except (MissingInput, BundleError) as exc:
        return [f"{type(exc).__name__}: {exc}"]
    d = bundle.depth.plane()
    if d.min() < -1e-6 or d.max() > 1 + 1e-6:
        problems.append("depth.pfm values outside [0, 1]")
    if not any(s.label == "floor" for s in bundle.segments):
        problems.append("no floor segment (room initialization will fail)")
    return problems


def bundle_hashes(directory) -> dict[str, str]:
    """SHA-256 of every file in the bundle, for the run manifest."""
    d = Path(directory)
    out = {}
    for p in sorted(d.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(d))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out

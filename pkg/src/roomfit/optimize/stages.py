"""Stage drivers: iterate render -> loss -> adjoint -> Adam -> projection."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..imaging import Rect
from ..params import ParamVector, Stage, pack_params, unpack_params
from ..render import RenderConfig, render, render_backward
from ..scene import Scene
from .adam import AdamState, adam_step
from .crops import CropPair
from .descriptor import gram_descriptor
from .losses import LossResult, loss_box, loss_final_crop, loss_final_full, loss_obj
from ..imaging import ImageF

DEFAULT_LR = {
    "translation": 0.01,
    "yaw": 0.6,          # degrees; ~0.01 rad per step
    "log_scale": 0.01,
    "albedo": 0.005,
    "roughness": 0.005,
    "specular": 0.005,
    "mat_param": 0.005,
    "uv": 0.005,
    "log_radiance": 0.05,
}

DEFAULT_ITERATIONS = {Stage.Room: 100, Stage.Object: 300, Stage.Final: 120}


@dataclass
class StageConfig:
    iterations: int
    width: int
    height: int
    spp: int = 64
    seed: int = 0
    lr: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    shade_spp: int = 4
    light_samples: int = 4
    bounces: int = 0
    crop_spp: int = 4
    snapshot_every: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for v in self.weights.values():
            if v < 0:
                raise ValueError("loss weights must be >= 0")

    def lr_for(self, kind: str) -> float:
        return self.lr.get(kind, DEFAULT_LR[kind])

    @staticmethod
    def for_stage(stage: Stage, target_width: int, target_height: int,
                  seed: int = 0, iterations: int | None = None) -> "StageConfig":
        iters = DEFAULT_ITERATIONS[stage] if iterations is None else iterations
        if stage in (Stage.Room, Stage.Object):
            return StageConfig(iters, max(16, target_width // 4),
                               max(16, target_height // 4), spp=64, seed=seed)
        return StageConfig(iters, max(32, target_width // 2),
                           max(32, target_height // 2), spp=4, seed=seed,
                           shade_spp=4)


@dataclass
class RoomTargets:
    masks: dict          # room.wall / room.floor / room.ceiling planes
    depth_norm: np.ndarray
    room_region: np.ndarray  # bool plane: pixels where depth is compared


@dataclass
class ObjectTargets:
    object_masks: dict   # object id -> plane
    depth_norm: np.ndarray


@dataclass
class FinalTargets:
    image: np.ndarray           # (H, W, 3) linear, target resolution
    image_eighth: np.ndarray    # 1/8 box reduction (or a render-consistent stand-in)
    object_medians: dict        # object id -> median rgb from initialization
    crops: list[CropPair] = field(default_factory=list)
    crop_descriptors: list[np.ndarray] = field(default_factory=list)


@dataclass
class TraceRow:
    iteration: int
    total: float
    terms: dict[str, float]


def _lr_vector(vec: ParamVector, config: StageConfig) -> np.ndarray:
    return np.array([config.lr_for(k) for k in vec.kinds()])


def _render_config(stage: Stage, config: StageConfig, roi: Rect | None = None,
                   full_res: tuple[int, int] | None = None) -> RenderConfig:
    if stage == Stage.Final:
        mode = "shaded"
        if roi is not None:
            w, h = full_res
            return RenderConfig(width=w, height=h, spp=config.crop_spp, seed=config.seed,
                                mode=mode, shade_spp=config.crop_spp,
                                light_samples=config.light_samples,
                                bounces=config.bounces, roi=roi)
        return RenderConfig(width=config.width, height=config.height, spp=config.spp,
                            seed=config.seed, mode=mode, shade_spp=config.shade_spp,
                            light_samples=config.light_samples, bounces=config.bounces)
    return RenderConfig(width=config.width, height=config.height, spp=config.spp,
                        seed=config.seed, mode="mask_depth")


def run_stage(scene: Scene, stage: Stage, config: StageConfig, targets,
              graphs=None, observer=None, cancel=None) -> tuple[Scene, list[TraceRow]]:
    """Optimize the stage's parameters for config.iterations steps.

    Deterministic for a fixed seed; emits one TraceRow per iteration and
    re-projects support constraints after every parameter update.
    """
    vec = pack_params(scene, stage, graphs)
    state = AdamState.zeros(len(vec.values))
    lr = _lr_vector(vec, config)
    lower, upper = vec.lower(), vec.upper()
    log_mask = vec.log_mask()
    trace: list[TraceRow] = []
    current = unpack_params(scene, vec, graphs)

    target_res = None
    if stage == Stage.Final:
        target_res = (targets.image.shape[1], targets.image.shape[0])

    for it in range(config.iterations):
        if cancel is not None and cancel():
            break
        result, grads = _evaluate(current, stage, config, targets, graphs, target_res)
        if not np.isfinite(result.total) or not np.isfinite(grads).all():
            raise FloatingPointError(f"non-finite loss/gradients at iteration {it}")
        state, new_values = adam_step(state, vec.values, grads, lr, lower, upper, log_mask)
        vec = ParamVector(new_values, vec.slots, vec.stage)
        current = unpack_params(current, vec, graphs)
        trace.append(TraceRow(it, result.total, result.terms))
        if observer is not None:
            observer(it, result, current)
    return current, trace


def _evaluate(scene: Scene, stage: Stage, config: StageConfig, targets, graphs,
              target_res) -> tuple[LossResult, np.ndarray]:
    if stage == Stage.Room:
        rcfg = _render_config(stage, config)
        out = render(scene, rcfg, graphs)
        res = loss_box(out, targets, config.weights)
        grads = render_backward(scene, rcfg, stage, res.adjoint, out, graphs)
        return res, grads
    if stage == Stage.Object:
        rcfg = _render_config(stage, config)
        out = render(scene, rcfg, graphs)
        res = loss_obj(out, targets, config.weights)
        grads = render_backward(scene, rcfg, stage, res.adjoint, out, graphs)
        return res, grads
    # final: full frame plus crop ROI renders
    rcfg = _render_config(stage, config)
    out = render(scene, rcfg, graphs)
    res = loss_final_full(out, targets, config.weights)
    grads = render_backward(scene, rcfg, stage, res.adjoint, out, graphs)
    total = res.total
    terms = dict(res.terms)
    for pair, desc in zip(targets.crops, targets.crop_descriptors):
        crop_cfg = _render_config(stage, config, roi=pair.render_rect, full_res=target_res)
        crop_out = render(scene, crop_cfg, graphs)
        crop_res = loss_final_crop(crop_out, desc, pair)
        w = config.weights.get("gram", 1.0)
        total += w * crop_res.total
        for k, v in crop_res.terms.items():
            terms[k] = terms.get(k, 0.0) + w * v
        if w != 0.0:
            if w != 1.0:
                crop_res.adjoint.rgb = crop_res.adjoint.rgb * w
            grads = grads + render_backward(scene, crop_cfg, stage,
                                            crop_res.adjoint, crop_out, graphs)
    res.total = total
    res.terms = terms
    return res, grads


def make_final_targets(target_image: ImageF, object_medians: dict,
                       crops: list[CropPair],
                       image_eighth: np.ndarray | None = None) -> FinalTargets:
    from ..imaging import resize_box
    eighth = resize_box(target_image, 8).data if image_eighth is None else image_eighth
    descs = []
    for pair in crops:
        ys, xs = pair.target_rect.slice()
        descs.append(gram_descriptor(ImageF(target_image.data[ys, xs])))
    return FinalTargets(image=target_image.data, image_eighth=eighth,
                        object_medians=object_medians, crops=crops,
                        crop_descriptors=descs)

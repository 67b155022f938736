"""End-to-end scene fitting: ingest bundle, initialize, run the three stages.

FitSession holds the incremental state so serve mode can re-run stages after
user overrides: asset choices invalidate from the object stage onward, crop
edits invalidate only the final stage.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import MissingInput, RoomfitError, StageNotReady
from ..imaging import ImageF, area_resample, luminance, median_color, save_png, soft_mask, write_pfm
from ..initialize import (
    backproject, detect_all_supports, init_object_pose, init_room,
    normalize_scene_scale, ransac_plane, rotation_search,
)
from ..matgraph import library_for_assets
from ..matgraph.search import search_transform
from ..optimize.crops import CropPair, auto_crop_pairs
from ..optimize.descriptor import descriptor_distance, gram_descriptor
from ..optimize.lights import init_lights, init_radiance
from ..optimize.stages import (
    FinalTargets, ObjectTargets, RoomTargets, StageConfig, make_final_targets, run_stage,
)
from ..params import Stage
from ..render import RenderConfig, render
from ..retrieval import KIND_MATERIAL, KIND_MODEL, query_topk, select_material
from ..scene import Emissive, Homogeneous, Scene
from .assets import load_asset_index, load_asset_mesh
from .bundle import Bundle, bundle_hashes, load_bundle

logger = logging.getLogger(__name__)


@dataclass
class FitConfig:
    seed: int = 0
    iterations: dict = field(default_factory=dict)   # stage name -> overrides
    lr: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    spp: dict = field(default_factory=dict)
    render_spp: int = 16
    stop_after: str | None = None   # "room" | "object" | "final"

    @staticmethod
    def from_json(path_or_dict) -> "FitConfig":
        data = path_or_dict
        if not isinstance(data, dict):
            data = json.loads(Path(path_or_dict).read_text())
        cfg = FitConfig()
        for key in ("seed", "iterations", "lr", "weights", "spp", "render_spp", "stop_after"):
            if key in data:
                setattr(cfg, key, data[key])
        return cfg

    def stage_config(self, stage: Stage, width: int, height: int) -> StageConfig:
        name = stage.value
        sc = StageConfig.for_stage(stage, width, height, seed=self.seed,
                                   iterations=self.iterations.get(name))
        if self.lr:
            sc.lr = dict(self.lr)
        if self.weights:
            sc.weights = dict(self.weights)
        if name in self.spp:
            sc.spp = int(self.spp[name])
        return sc


class FitSession:
    """Loaded bundle plus staged fitting state."""

    def __init__(self, bundle_dir, assets_dir, config: FitConfig | None = None):
        self.bundle: Bundle = load_bundle(bundle_dir)
        self.assets_dir = str(assets_dir)
        self.config = config or FitConfig()
        self.graphs = library_for_assets(assets_dir)
        self.index = load_asset_index(assets_dir)
        self.choices: dict[str, str] = dict(self.bundle.choices)
        self.user_crops = list(self.bundle.crops)
        self.scene_room: Scene | None = None
        self.scene_object: Scene | None = None
        self.scene_final: Scene | None = None
        self.traces: dict[str, list] = {}
        self.candidates: dict[str, list] = {}
        self.crop_pairs: list[CropPair] = []
        self.radiance_multiplier: float | None = None
        self._target_masks_cache: dict[str, np.ndarray] | None = None

    # ---- target helpers ----

    @property
    def camera(self):
        return self.bundle.camera

    def target_masks(self) -> dict[str, np.ndarray]:
        """Aggregated target masks: room.floor/ceiling/wall + per object id."""
        if self._target_masks_cache is None:
            masks = {}
            for label in ("floor", "ceiling", "wall"):
                m = self.bundle.label_mask(label)
                if m is not None:
                    masks[f"room.{label}"] = m
            for seg in self.bundle.object_segments():
                masks[seg.id] = seg.mask.plane()
            self._target_masks_cache = masks
        return self._target_masks_cache

    def _down(self, plane: np.ndarray, w: int, h: int) -> np.ndarray:
        return area_resample(plane, h, w)

    def _room_targets(self, sc: StageConfig) -> RoomTargets:
        masks = {}
        tm = self.target_masks()
        for key in ("room.wall", "room.floor", "room.ceiling"):
            plane = tm.get(key, np.zeros((self.camera.height, self.camera.width)))
            masks[key] = self._down(plane, sc.width, sc.height)
        region_full = np.zeros((self.camera.height, self.camera.width))
        for key in ("room.wall", "room.floor", "room.ceiling"):
            if key in tm:
                region_full = np.maximum(region_full, tm[key])
        region = self._down(region_full, sc.width, sc.height) > 0.5
        depth = self._down(self.bundle.depth.plane(), sc.width, sc.height)
        dvals = depth[region] if region.any() else depth.reshape(-1)
        lo, hi = dvals.min(), dvals.max()
        depth_n = np.zeros_like(depth)
        if hi > lo:
            depth_n[region] = (depth[region] - lo) / (hi - lo)
        return RoomTargets(masks=masks, depth_norm=depth_n, room_region=region)

    def _object_targets(self, sc: StageConfig) -> ObjectTargets:
        tm = self.target_masks()
        obj_masks = {}
        assert self.scene_object is not None
        for obj in self.scene_object.sorted_objects():
            if obj.id in tm:
                obj_masks[obj.id] = self._down(tm[obj.id], sc.width, sc.height)
        depth = self._down(self.bundle.depth.plane(), sc.width, sc.height)
        lo, hi = depth.min(), depth.max()
        depth_n = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
        return ObjectTargets(object_masks=obj_masks, depth_norm=depth_n)

    # ---- stage: room ----

    def run_room(self, observer=None, cancel=None) -> Scene:
        bundle = self.bundle
        labels = {s.id: s.label for s in bundle.segments}
        masks = {s.id: s.mask for s in bundle.segments}
        cloud = backproject(bundle.depth, bundle.camera, masks, labels)
        floor_ids = [s.id for s in bundle.segments if s.label == "floor"]
        if not floor_ids:
            raise MissingInput("bundle has no floor segment")
        floor_pts = np.vstack([cloud.of_segment(sid) for sid in floor_ids])
        if len(floor_pts) < 3:
            raise StageNotReady("not enough floor points")
        floor = ransac_plane(floor_pts, seed=self.config.seed)
        scene = Scene(camera=bundle.camera, assets_dir=self.assets_dir)
        scene.room = init_room(cloud, floor, labels)
        normalize_scene_scale(scene, cloud)
        self._cloud = cloud

        sc = self.config.stage_config(Stage.Room, self.camera.width, self.camera.height)
        targets = self._room_targets(sc)
        scene, trace = run_stage(scene, Stage.Room, sc, targets,
                                 self.graphs, observer, cancel)
        self.scene_room = scene
        self.traces["room"] = trace
        self.scene_object = None
        self.scene_final = None
        return scene

    # ---- stage: objects ----

    def retrieve_candidates(self, seg_id: str, k: int = 5) -> list[tuple[str, float]]:
        if self.index is None:
            raise MissingInput("assets directory has no embeddings.bin")
        if self.bundle.queries is None:
            raise MissingInput("bundle has no seg/queries.bin for retrieval")
        entry = self.bundle.queries.by_id(seg_id)
        return query_topk(self.index, entry.vector, k, kind=KIND_MODEL)

    def _asset_for_segment(self, seg_id: str) -> str:
        if seg_id in self.choices:
            return self.choices[seg_id]
        ranked = self.retrieve_candidates(seg_id, k=5)
        self.candidates[seg_id] = ranked
        if not ranked:
            raise MissingInput(f"no model candidates for segment {seg_id}")
        return ranked[0][0]

    def run_object(self, observer=None, cancel=None) -> Scene:
        if self.scene_room is None:
            raise StageNotReady("room stage has not run")
        from ..scene import ObjectInstance, Pose
        scene = self.scene_room.clone()
        scene.objects = []
        cloud = self._cloud
        tm = self.target_masks()
        for seg in self.bundle.object_segments():
            asset_id = self._asset_for_segment(seg.id)
            mesh = load_asset_mesh(self.assets_dir, asset_id)
            pts = cloud.of_segment(seg.id)
            pose = init_object_pose(pts, mesh)
            scene.objects.append(ObjectInstance(id=seg.id, asset_id=asset_id,
                                                mesh=mesh, pose=pose))
            yaw = rotation_search(scene, seg.id, tm[seg.id], seed=self.config.seed,
                                  graphs=self.graphs)
            scene.object_by_id(seg.id).pose.yaw_deg = yaw
        detect_all_supports(scene, tm)

        sc = self.config.stage_config(Stage.Object, self.camera.width, self.camera.height)
        self.scene_object = scene
        targets = self._object_targets(sc)
        scene, trace = run_stage(scene, Stage.Object, sc, targets,
                                 self.graphs, observer, cancel)
        self.scene_object = scene
        self.traces["object"] = trace
        self.scene_final = None
        return scene

    # ---- stage: materials & lights ----

    def _part_target_mask(self, owner: str, group: str) -> np.ndarray | None:
        tm = self.target_masks()
        if owner == "room":
            return tm.get(f"room.{group}") if not group.startswith("wall") \
                else tm.get("room.wall")
        return tm.get(owner)

    def _material_query(self, owner: str) -> np.ndarray | None:
        if self.bundle.queries is None:
            return None
        key = f"{owner}/material"
        try:
            return self.bundle.queries.by_id(key).vector
        except KeyError:
            return None

    def run_final(self, observer=None, cancel=None) -> Scene:
        if self.scene_object is None:
            raise StageNotReady("object stage has not run")
        scene = self.scene_object.clone()
        cam = self.camera
        tm = self.target_masks()

        mask_cfg = RenderConfig(width=cam.width, height=cam.height, spp=16,
                                seed=self.config.seed)
        mask_out = render(scene, mask_cfg, self.graphs)

        # crop pairs: auto, then user pairs replace auto on the parts they touch
        pairs = auto_crop_pairs(mask_out.part_masks, tm)
        user_parts = {(c.owner, c.group) for c in self.user_crops}
        pairs = [p for p in pairs if (p.owner, p.group) not in user_parts]
        for c in self.user_crops:
            pairs.append(CropPair(c.target_rect, c.render_rect, c.owner,
                                  c.group or "default", "user"))
        self.crop_pairs = pairs

        part_medians = self._init_homogeneous(scene, mask_out)

        lamp_ids = [s.id for s in self.bundle.segments if s.label == "lamp"
                    and any(o.id == s.id for o in scene.objects)]
        window_masks = {s.id: s.mask.plane() for s in self.bundle.segments
                        if s.label == "window"}
        scene = init_lights(scene, mask_out, lamp_ids=lamp_ids, window_masks=window_masks)

        def render_unit(s):
            cfg = RenderConfig(width=max(32, cam.width // 2), height=max(32, cam.height // 2),
                               spp=4, seed=self.config.seed, mode="shaded", shade_spp=4)
            return render(s, cfg, self.graphs).rgb

        scene, mult = init_radiance(scene, self.bundle.image, render_unit)
        self.radiance_multiplier = mult

        if self.index is not None and self.index.of_kind(KIND_MATERIAL):
            self._select_materials(scene, pairs, part_medians)

        object_medians = {}
        for obj in scene.sorted_objects():
            target = tm.get(obj.id)
            if target is not None and (target >= 0.5).sum() >= 4:
                object_medians[obj.id] = median_color(self.bundle.image,
                                                      soft_mask(target), 0.5)
        sc = self.config.stage_config(Stage.Final, cam.width, cam.height)
        targets = make_final_targets(self.bundle.image, object_medians, pairs)
        scene, trace = run_stage(scene, Stage.Final, sc, targets,
                                 self.graphs, observer, cancel)
        self.scene_final = scene
        self.traces["final"] = trace
        return scene

    def _init_homogeneous(self, scene: Scene, mask_out) -> dict:
        """Median-color homogeneous materials per part (roughness 0.5)."""
        medians: dict = {}
        image = self.bundle.image

        def part_iter():
            for face in scene.room.materials:
                yield "room", face, scene.room.materials
            for obj in scene.sorted_objects():
                for g in obj.mesh.group_names():
                    yield obj.id, g, obj.materials

        for owner, group, store in part_iter():
            part_mask = mask_out.part_masks.get((owner, group))
            target = self._part_target_mask(owner, group)
            med = None
            if part_mask is not None and target is not None:
                inter = np.minimum(part_mask, target)
                if (inter >= 0.5).sum() >= 4:
                    med = median_color(image, soft_mask(inter), 0.5)
            if med is None and target is not None and (target >= 0.5).sum() >= 4:
                med = median_color(image, soft_mask(target), 0.5)
            if med is None and part_mask is not None and (part_mask >= 0.5).sum() >= 4:
                med = median_color(image, soft_mask(part_mask), 0.5)
            if med is None:
                med = np.array([0.5, 0.5, 0.5])
            store[group] = Homogeneous(albedo=np.clip(med, 0, 1), roughness=0.5,
                                       specular=0.04)
            medians[(owner, group)] = np.clip(med, 0, 1)
        return medians

    def _select_materials(self, scene: Scene, pairs: list[CropPair],
                          part_medians: dict) -> None:
        """CLIP-style retrieval + voting, then transform search per part."""
        by_part: dict[tuple[str, str], list[CropPair]] = {}
        for p in pairs:
            by_part.setdefault((p.owner, p.group), []).append(p)
        cam = self.camera
        for (owner, group), plist in sorted(by_part.items()):
            choice_key = f"{owner}/material"
            chosen = self.choices.get(choice_key)
            if chosen == "homogeneous":
                continue
            if chosen is None:
                q = self._material_query(owner)
                if q is None:
                    continue
                chosen = select_material([q] * len(plist), self.index)
                if chosen is None:
                    continue  # cosine below threshold: stay homogeneous
            params = self.graphs.defaults(chosen)
            store = scene.room.materials if owner == "room" \
                else scene.object_by_id(owner).materials
            pair = plist[0]
            ys, xs = pair.target_rect.slice()
            target_desc = gram_descriptor(ImageF(self.bundle.image.data[ys, xs]))

            def render_crop(mat, _store=store, _group=group, _pair=pair):
                prev = _store[_group]
                _store[_group] = mat
                cfg = RenderConfig(width=cam.width, height=cam.height, spp=4,
                                   seed=self.config.seed, mode="shaded", shade_spp=4,
                                   roi=_pair.render_rect)
                out = render(scene, cfg, self.graphs)
                _store[_group] = prev
                return out.rgb

            def score(rgb, _d=target_desc):
                return descriptor_distance(gram_descriptor(ImageF(rgb)), _d)

            best, _evals = search_transform(chosen, params, render_crop, score,
                                            part_medians[(owner, group)])
            store[group] = best

    # ---- full pipeline ----

    def run_all(self, observer=None, cancel=None) -> Scene:
        self.run_room(observer, cancel)
        if self.config.stop_after == "room":
            return self.scene_room
        self.run_object(observer, cancel)
        if self.config.stop_after == "object":
            return self.scene_object
        return self.run_final(observer, cancel)

    def current_scene(self) -> Scene | None:
        return self.scene_final or self.scene_object or self.scene_room

    def stage_done(self) -> str | None:
        if self.scene_final is not None:
            return "final"
        if self.scene_object is not None:
            return "object"
        if self.scene_room is not None:
            return "room"
        return None

    def apply_choice(self, segment: str, asset_id: str) -> None:
        self.choices[segment] = asset_id
        self.scene_object = None
        self.scene_final = None

    def apply_crops(self, crops) -> None:
        self.user_crops = list(crops)
        self.scene_final = None


def write_outputs(session: FitSession, out_dir, render_spp: int = 16) -> dict:
    """scene.json, final renders, traces and the reproducibility manifest."""
    from .scenefile import save_scene

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = session.current_scene()
    if scene is None:
        raise StageNotReady("nothing fitted yet")
    save_scene(out / "scene.json", scene)

    cam = session.camera
    shaded = bool(scene.lights) or any(
        isinstance(m, Emissive) for o in scene.objects for m in o.materials.values())
    cfg = RenderConfig(width=cam.width, height=cam.height, spp=max(4, render_spp // 2),
                       seed=session.config.seed,
                       mode="shaded" if shaded else "mask_depth",
                       shade_spp=min(4, max(1, render_spp // 4)))
    final = render(scene, cfg, session.graphs)
    if final.rgb is not None:
        write_pfm(out / "render.pfm", ImageF(final.rgb))
        save_png(out / "render.png", ImageF(np.clip(final.rgb, 0, 1)))
    write_pfm(out / "depth.pfm", ImageF(final.depth))

    for name, trace in session.traces.items():
        with open(out / f"trace_{name}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            term_keys = sorted({k for row in trace for k in row.terms})
            writer.writerow(["iteration", "total"] + term_keys)
            for row in trace:
                writer.writerow([row.iteration, repr(row.total)]
                                + [repr(row.terms.get(k, "")) for k in term_keys])

    manifest = {
        "seed": session.config.seed,
        "config": session.config.__dict__ | {"iterations": dict(session.config.iterations)},
        "assets_dir": session.assets_dir,
        "input_hashes": bundle_hashes(session.bundle.directory),
        "radiance_multiplier": session.radiance_multiplier,
        "stage_done": session.stage_done(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))
    return manifest

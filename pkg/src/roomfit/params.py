"""Flat parameter vectors: the optimizer's view of a scene.

Slots are stored in the raw domain; slots flagged `log` are stepped in
log-space by the optimizer, keeping pack/unpack an exact bijection.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import SlotMismatch, StageNotReady
from .primitives import ROOM_FACES
from .scene import Emissive, Homogeneous, ObjectInstance, Procedural, Scene

TRANSLATION_BOUNDS = (-1e3, 1e3)
YAW_BOUNDS = (-720.0, 720.0)  # degrees
SCALE_BOUNDS = (1e-2, 1e2)
RADIANCE_BOUNDS = (1e-4, 1e4)
UV_SCALE_BOUNDS = (0.25, 16.0)
UV_ROT_BOUNDS = (-180.0, 360.0)
UV_OFFSET_BOUNDS = (-4.0, 4.0)


class Stage(enum.Enum):
    Room = "room"
    Object = "object"
    Final = "final"


@dataclass(frozen=True)
class Slot:
    owner: str
    name: str
    kind: str  # learning-rate class: translation|yaw|log_scale|albedo|roughness|specular|mat_param|uv|log_radiance
    index: int
    size: int
    lower: float
    upper: float
    log: bool = False

    def range(self) -> slice:
        return slice(self.index, self.index + self.size)


@dataclass
class ParamVector:
    values: np.ndarray
    slots: list[Slot]
    stage: Stage

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        cursor = 0
        for s in self.slots:
            if s.index != cursor:
                raise ValueError("slot ranges must be disjoint and contiguous")
            cursor += s.size
        if cursor != len(self.values):
            raise ValueError("slots must cover values exactly")

    def get(self, owner: str, name: str) -> np.ndarray:
        for s in self.slots:
            if s.owner == owner and s.name == name:
                return self.values[s.range()]
        raise KeyError((owner, name))

    def set(self, owner: str, name: str, value) -> None:
        for s in self.slots:
            if s.owner == owner and s.name == name:
                self.values[s.range()] = value
                return
        raise KeyError((owner, name))

    def lower(self) -> np.ndarray:
        lo = np.empty_like(self.values)
        for s in self.slots:
            lo[s.range()] = s.lower
        return lo

    def upper(self) -> np.ndarray:
        hi = np.empty_like(self.values)
        for s in self.slots:
            hi[s.range()] = s.upper
        return hi

    def log_mask(self) -> np.ndarray:
        m = np.zeros(len(self.values), dtype=bool)
        for s in self.slots:
            if s.log:
                m[s.range()] = True
        return m

    def kinds(self) -> list[str]:
        out = []
        for s in self.slots:
            out.extend([s.kind] * s.size)
        return out


def _object_translation_slots(obj: ObjectInstance) -> list[tuple[str, str]]:
    """(slot name, axis spec) pairs; constrained supports drop an axis."""
    kind = obj.support.kind
    if kind in ("floor", "object"):
        return [("tx", "x"), ("tz", "z")]
    if kind == "wall":
        return [("t_wall_u", "wall_u"), ("t_wall_v", "y")]
    return [("tx", "x"), ("ty", "y"), ("tz", "z")]


class _SlotBuilder:
    def __init__(self):
        self.slots: list[Slot] = []
        self.cursor = 0

    def add(self, owner, name, kind, size, lower, upper, log=False):
        self.slots.append(Slot(owner, name, kind, self.cursor, size, lower, upper, log))
        self.cursor += size


def _material_owner(owner_id: str, group: str) -> str:
    return f"material:{owner_id}/{group}"


def _iter_material_parts(scene: Scene):
    """Deterministic (owner key, material) iteration: room faces then objects."""
    if scene.room is not None:
        for face in ROOM_FACES:
            yield _material_owner("room", face), scene.room.materials[face]
    for obj in scene.sorted_objects():
        for group in obj.mesh.group_names():
            yield _material_owner(obj.id, group), obj.materials[group]


def stage_slots(scene: Scene, stage: Stage, graphs=None) -> list[Slot]:
    """The stage's optimizable slots, in pack order.

    `graphs` supplies procedural parameter bounds via bounds(graph_id); it is
    required only when the Final stage contains procedural materials.
    """
    b = _SlotBuilder()
    if stage == Stage.Room:
        if scene.room is None:
            raise StageNotReady("room stage requires a room box")
        for name in ("tx", "ty", "tz"):
            b.add("room", name, "translation", 1, *TRANSLATION_BOUNDS)
        b.add("room", "yaw", "yaw", 1, *YAW_BOUNDS)
        for name in ("log_sx", "log_sy", "log_sz"):
            b.add("room", name, "log_scale", 1, *SCALE_BOUNDS, log=True)
        return b.slots
    if stage == Stage.Object:
        if not scene.objects:
            raise StageNotReady("object stage requires at least one object")
        for obj in scene.sorted_objects():
            for name, _axis in _object_translation_slots(obj):
                b.add(obj.id, name, "translation", 1, *TRANSLATION_BOUNDS)
            b.add(obj.id, "yaw", "yaw", 1, *YAW_BOUNDS)
            b.add(obj.id, "log_scale", "log_scale", 1, *SCALE_BOUNDS, log=True)
        return b.slots
    if stage == Stage.Final:
        has_emitter = bool(scene.lights)
        for owner, mat in _iter_material_parts(scene):
            if isinstance(mat, Homogeneous):
                b.add(owner, "albedo", "albedo", 3, 0.0, 1.0)
                b.add(owner, "roughness", "roughness", 1, 0.0, 1.0)
                b.add(owner, "specular", "specular", 1, 0.0, 1.0)
            elif isinstance(mat, Procedural):
                if graphs is None:
                    from .matgraph.library import default_library
                    graphs = default_library()
                bounds = graphs.bounds(mat.graph_id)
                for pname in sorted(bounds):
                    lo, hi = bounds[pname]
                    b.add(owner, f"p:{pname}", "mat_param", 1, lo, hi)
                b.add(owner, "uv_scale", "uv", 1, *UV_SCALE_BOUNDS, log=True)
                b.add(owner, "uv_rot", "uv", 1, *UV_ROT_BOUNDS)
                b.add(owner, "uv_off", "uv", 2, *UV_OFFSET_BOUNDS)
            elif isinstance(mat, Emissive):
                has_emitter = True
                b.add(owner, "radiance", "log_radiance", 3, *RADIANCE_BOUNDS, log=True)
        for light in sorted(scene.lights, key=lambda l: l.id):
            b.add(f"light:{light.id}", "radiance", "log_radiance", 3, *RADIANCE_BOUNDS, log=True)
        if not has_emitter:
            raise StageNotReady("final stage requires lights or emissive materials")
        return b.slots
    raise ValueError(stage)


def _read_slot(scene: Scene, slot: Slot, graphs=None) -> np.ndarray:
    owner, name = slot.owner, slot.name
    if owner == "room":
        pose = scene.room.pose
        if name in ("tx", "ty", "tz"):
            return np.array([pose.translation["xyz".index(name[1])]])
        if name == "yaw":
            return np.array([pose.yaw_deg])
        if name.startswith("log_s"):
            return np.array([pose.scale["xyz".index(name[-1])]])
    elif owner.startswith("material:"):
        return _read_material_slot(scene, slot, graphs)
    elif owner.startswith("light:"):
        return scene.light_by_id(owner[6:]).radiance.copy()
    else:
        obj = scene.object_by_id(owner)
        pose = obj.pose
        if name in ("tx", "ty", "tz"):
            return np.array([pose.translation["xyz".index(name[1])]])
        if name == "t_wall_u":
            along, anchor = _wall_axes(scene, obj)
            return np.array([(pose.translation - anchor) @ along])
        if name == "t_wall_v":
            return np.array([pose.translation[1]])
        if name == "yaw":
            return np.array([pose.yaw_deg])
        if name == "log_scale":
            return np.array([pose.scale])
    raise KeyError((owner, name))


def _find_material(scene: Scene, owner: str):
    part = owner[len("material:"):]
    owner_id, group = part.split("/", 1)
    if owner_id == "room":
        return scene.room.materials, group
    return scene.object_by_id(owner_id).materials, group


def _read_material_slot(scene: Scene, slot: Slot, graphs=None) -> np.ndarray:
    store, group = _find_material(scene, slot.owner)
    mat = store[group]
    name = slot.name
    if isinstance(mat, Homogeneous):
        if name == "albedo":
            return mat.albedo.copy()
        if name == "roughness":
            return np.array([mat.roughness])
        if name == "specular":
            return np.array([mat.specular])
    if isinstance(mat, Procedural):
        if name.startswith("p:"):
            pname = name[2:]
            if pname not in mat.params:
                if graphs is None:
                    from .matgraph.library import default_library
                    graphs = default_library()
                return np.array([graphs.defaults(mat.graph_id)[pname]])
            return np.array([mat.params[pname]])
        if name == "uv_scale":
            return np.array([mat.uv_transform.scale])
        if name == "uv_rot":
            return np.array([mat.uv_transform.rotation_deg])
        if name == "uv_off":
            return mat.uv_transform.offset.copy()
    if isinstance(mat, Emissive) and name == "radiance":
        return mat.radiance.copy()
    raise KeyError((slot.owner, name))


def _wall_axes(scene: Scene, obj: ObjectInstance) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal along-wall unit vector and an anchor point on the wall."""
    n, d = scene.room.wall_plane(obj.support.ref)
    along = np.cross(np.array([0.0, 1.0, 0.0]), n)
    along /= np.linalg.norm(along)
    anchor = n * d  # closest point of the plane to the origin
    return along, anchor


def _write_slot(scene: Scene, slot: Slot, value: np.ndarray) -> None:
    owner, name = slot.owner, slot.name
    if owner == "room":
        pose = scene.room.pose
        if name in ("tx", "ty", "tz"):
            _assign(pose.translation, "xyz".index(name[1]), value[0])
        elif name == "yaw":
            _assign_yaw(pose, value[0])
        elif name.startswith("log_s"):
            _assign(pose.scale, "xyz".index(name[-1]), value[0])
        else:
            raise KeyError((owner, name))
    elif owner.startswith("material:"):
        _write_material_slot(scene, slot, value)
    elif owner.startswith("light:"):
        light = scene.light_by_id(owner[6:])
        if not np.array_equal(light.radiance, value):
            light.radiance = value.copy()
    else:
        obj = scene.object_by_id(owner)
        pose = obj.pose
        if name in ("tx", "ty", "tz"):
            _assign(pose.translation, "xyz".index(name[1]), value[0])
        elif name == "t_wall_u":
            along, anchor = _wall_axes(scene, obj)
            cur = (pose.translation - anchor) @ along
            if cur != value[0]:
                pose.translation += (value[0] - cur) * along
        elif name == "t_wall_v":
            _assign(pose.translation, 1, value[0])
        elif name == "yaw":
            _assign_yaw(pose, value[0])
        elif name == "log_scale":
            if pose.scale != value[0]:
                pose.scale = float(value[0])
        else:
            raise KeyError((owner, name))


def _assign(arr: np.ndarray, idx: int, v: float) -> None:
    if arr[idx] != v:
        arr[idx] = v


def _assign_yaw(pose, yaw_deg: float) -> None:
    # write-if-changed keeps unpack(pack(s)) bitwise identical
    if pose.yaw_deg != yaw_deg:
        pose.yaw_deg = float(yaw_deg)


def _write_material_slot(scene: Scene, slot: Slot, value: np.ndarray) -> None:
    store, group = _find_material(scene, slot.owner)
    mat = store[group]
    name = slot.name
    if isinstance(mat, Homogeneous):
        if name == "albedo":
            if not np.array_equal(mat.albedo, value):
                mat.albedo = value.copy()
            return
        if name == "roughness":
            mat.roughness = float(value[0])
            return
        if name == "specular":
            mat.specular = float(value[0])
            return
    if isinstance(mat, Procedural):
        if name.startswith("p:"):
            mat.params[name[2:]] = float(value[0])
            return
        if name == "uv_scale":
            mat.uv_transform.scale = float(value[0])
            return
        if name == "uv_rot":
            mat.uv_transform.rotation_deg = float(value[0])
            return
        if name == "uv_off":
            if not np.array_equal(mat.uv_transform.offset, value):
                mat.uv_transform.offset = value.copy()
            return
    if isinstance(mat, Emissive) and name == "radiance":
        if not np.array_equal(mat.radiance, value):
            mat.radiance = value.copy()
        return
    raise KeyError((slot.owner, name))


def pack_params(scene: Scene, stage: Stage, graphs=None) -> ParamVector:
    """Collect the stage's optimizable parameters into a flat vector."""
    slots = stage_slots(scene, stage, graphs)
    n = sum(s.size for s in slots)
    values = np.empty(n, dtype=np.float64)
    for s in slots:
        values[s.range()] = _read_slot(scene, s, graphs)
    return ParamVector(values, slots, stage)


def unpack_params(scene: Scene, v: ParamVector, graphs=None) -> Scene:
    """Return a scene clone with the vector's parameters written back.

    Support constraints are re-projected after writing (floor/wall/parent
    snapping), so constrained objects stay attached after scale changes.
    """
    expected = stage_slots(scene, v.stage, graphs)
    if expected != v.slots:
        raise SlotMismatch(f"{len(v.slots)} slots given, scene expects {len(expected)}")
    out = scene.clone()
    for s in v.slots:
        _write_slot(out, s, v.values[s.range()])
    out.project_supports()
    return out

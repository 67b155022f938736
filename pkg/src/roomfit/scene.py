"""Scene domain types: camera, room box, object instances, materials, lights.

World frame conventions: the camera is the anchor, fixed at the origin,
right-handed, looking down -Z with +Y up. The room floor plane is horizontal
(normal +Y) at a height derived from the room box pose; object vertical axes
stay orthogonal to the floor.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import TriMesh
from .primitives import ROOM_FACES, room_box_mesh


@dataclass
class Camera:
    vfov_deg: float
    width: int
    height: int

    def __post_init__(self):
        if not 0.0 < self.vfov_deg < 180.0:
            raise ValueError("vfov_deg must be in (0, 180)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    @property
    def focal_px(self) -> float:
        """Focal length in pixels (square pixels, vertical FOV)."""
        return (self.height / 2.0) / math.tan(math.radians(self.vfov_deg) / 2.0)

    def scaled(self, width: int, height: int) -> "Camera":
        return Camera(self.vfov_deg, width, height)


def yaw_matrix(yaw_deg: float) -> np.ndarray:
    """Rotation about +Y: yaw 90 maps +X to -Z."""
    a = math.radians(yaw_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass
class Pose:
    """Object pose: isotropic scale, then yaw about +Y, then translate."""

    translation: np.ndarray
    yaw_deg: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = yaw_matrix(self.yaw_deg) * self.scale
        m[:3, 3] = self.translation
        return m


@dataclass
class RoomPose:
    """Room pose: per-axis scale, then yaw about +Y, then translate."""

    translation: np.ndarray
    yaw_deg: float = 0.0
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        if (self.scale <= 0).any():
            raise ValueError("scales must be positive")

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = yaw_matrix(self.yaw_deg) @ np.diag(self.scale)
        m[:3, 3] = self.translation
        return m


def apply_pose(mesh: TriMesh, pose: Pose | RoomPose) -> TriMesh:
    """World-space copy of the mesh: scale, then yaw, then translate."""
    r = yaw_matrix(pose.yaw_deg)
    s = pose.scale if isinstance(pose, RoomPose) else np.full(3, pose.scale)
    verts = (mesh.vertices * s) @ r.T + pose.translation
    return TriMesh(verts, mesh.faces.copy(),
                   None if mesh.uv_faces is None else mesh.uv_faces.copy(),
                   list(mesh.groups))


# -- materials --------------------------------------------------------------------


@dataclass
class Homogeneous:
    albedo: np.ndarray
    roughness: float = 0.5
    specular: float = 0.04

    def __post_init__(self):
        self.albedo = np.clip(np.asarray(self.albedo, dtype=np.float64).reshape(3), 0.0, 1.0)
        if not 0.0 <= self.roughness <= 1.0 or not 0.0 <= self.specular <= 1.0:
            raise ValueError("roughness and specular must be in [0, 1]")


@dataclass
class UVTransform:
    scale: float = 1.0
    rotation_deg: float = 0.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(2)
        if not 0.25 <= self.scale <= 16.0:
            raise ValueError("uv scale must be in [0.25, 16]")


@dataclass
class Procedural:
    graph_id: str
    params: dict[str, float] = field(default_factory=dict)
    uv_transform: UVTransform = field(default_factory=UVTransform)


@dataclass
class Emissive:
    radiance: np.ndarray

    def __post_init__(self):
        self.radiance = np.asarray(self.radiance, dtype=np.float64).reshape(3)
        if (self.radiance < 0).any() or not np.isfinite(self.radiance).all():
            raise ValueError("radiance must be finite and >= 0")


Material = Homogeneous | Procedural | Emissive

DEFAULT_MATERIAL = Homogeneous(albedo=np.array([0.6, 0.6, 0.6]))


# -- support relations --------------------------------------------------------------


@dataclass(frozen=True)
class Support:
    kind: str  # "free" | "floor" | "wall" | "object"
    ref: str | None = None

    @staticmethod
    def free() -> "Support":
        return Support("free")

    @staticmethod
    def on_floor() -> "Support":
        return Support("floor")

    @staticmethod
    def on_wall(wall: str) -> "Support":
        if wall not in ("wall0", "wall1", "wall2", "wall3"):
            raise ValueError(f"unknown wall {wall!r}")
        return Support("wall", wall)

    @staticmethod
    def on_object(parent_id: str) -> "Support":
        return Support("object", parent_id)


# -- room and objects ----------------------------------------------------------------


@dataclass
class RoomBox:
    pose: RoomPose
    materials: dict[str, Material] = field(
        default_factory=lambda: {f: copy.deepcopy(DEFAULT_MATERIAL) for f in ROOM_FACES})

    _mesh_cache = None

    def mesh(self) -> TriMesh:
        return room_box_mesh()

    def floor_y(self) -> float:
        """World height of the floor plane (canonical floor at y=-0.5)."""
        return float(self.pose.translation[1] - 0.5 * self.pose.scale[1])

    def ceiling_y(self) -> float:
        return float(self.pose.translation[1] + 0.5 * self.pose.scale[1])

    def wall_plane(self, wall: str) -> tuple[np.ndarray, float]:
        """Inward unit normal n and offset d (n . p = d) of a wall plane."""
        local = {"wall0": np.array([1.0, 0, 0]), "wall1": np.array([-1.0, 0, 0]),
                 "wall2": np.array([0, 0, 1.0]), "wall3": np.array([0, 0, -1.0])}[wall]
        half = {"wall0": self.pose.scale[0], "wall1": self.pose.scale[0],
                "wall2": self.pose.scale[2], "wall3": self.pose.scale[2]}[wall] * 0.5
        r = yaw_matrix(self.pose.yaw_deg)
        n = r @ local
        point = self.pose.translation - n * half
        return n, float(n @ point)

    def floor_diagonal(self) -> float:
        return float(math.hypot(self.pose.scale[0], self.pose.scale[2]))


@dataclass
class ObjectInstance:
    id: str
    asset_id: str
    mesh: TriMesh
    pose: Pose
    support: Support = field(default_factory=Support.free)
    materials: dict[str, Material] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.mesh.group_names():
            self.materials.setdefault(name, copy.deepcopy(DEFAULT_MATERIAL))

    def world_mesh(self) -> TriMesh:
        return apply_pose(self.mesh, self.pose)

    def world_bottom(self) -> float:
        return float(self.pose.translation[1] + self.pose.scale * self.mesh.bbox()[0][1])

    def world_top(self) -> float:
        return float(self.pose.translation[1] + self.pose.scale * self.mesh.bbox()[1][1])


@dataclass
class AreaLight:
    id: str
    quad: np.ndarray  # (4, 3) coplanar corners; CCW winding defines emit side
    radiance: np.ndarray = field(default_factory=lambda: np.ones(3))
    enabled: bool = True

    def __post_init__(self):
        self.quad = np.asarray(self.quad, dtype=np.float64).reshape(4, 3)
        self.radiance = np.asarray(self.radiance, dtype=np.float64).reshape(3)
        if not np.isfinite(self.radiance).all() or (self.radiance < 0).any():
            raise ValueError("radiance must be finite and >= 0")
        n = np.cross(self.quad[1] - self.quad[0], self.quad[2] - self.quad[0])
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            raise ValueError("degenerate light quad")
        if abs((self.quad[3] - self.quad[0]) @ (n / nn)) > 1e-6:
            raise ValueError("light quad is not planar")

    def normal(self) -> np.ndarray:
        n = np.cross(self.quad[1] - self.quad[0], self.quad[2] - self.quad[0])
        return n / np.linalg.norm(n)

    def area(self) -> float:
        a = np.cross(self.quad[1] - self.quad[0], self.quad[2] - self.quad[0])
        b = np.cross(self.quad[2] - self.quad[0], self.quad[3] - self.quad[0])
        return float(0.5 * (np.linalg.norm(a) + np.linalg.norm(b)))


@dataclass
class Scene:
    """The single mutable optimization subject. Value semantics: clone freely."""

    camera: Camera
    room: RoomBox | None = None
    objects: list[ObjectInstance] = field(default_factory=list)
    lights: list[AreaLight] = field(default_factory=list)
    assets_dir: str | None = None

    def clone(self) -> "Scene":
        return copy.deepcopy(self)

    def object_by_id(self, oid: str) -> ObjectInstance:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def sorted_objects(self) -> list[ObjectInstance]:
        return sorted(self.objects, key=lambda o: o.id)

    def light_by_id(self, lid: str) -> AreaLight:
        for l in self.lights:
            if l.id == lid:
                return l
        raise KeyError(lid)

    def floor_y(self) -> float:
        if self.room is None:
            raise ValueError("scene has no room box")
        return self.room.floor_y()

    def project_supports(self) -> None:
        """Re-snap supported objects; parents are projected before children.

        Assignments are absolute (not incremental) so projection is exactly
        idempotent.
        """
        if self.room is None:
            return
        floor = self.room.floor_y()
        deferred = []
        for obj in self.sorted_objects():
            if obj.support.kind == "floor":
                obj.pose.translation[1] = floor - obj.pose.scale * obj.mesh.bbox()[0][1]
            elif obj.support.kind == "wall":
                self._snap_to_wall(obj)
            elif obj.support.kind == "object":
                deferred.append(obj)
        for obj in deferred:
            parent = self.object_by_id(obj.support.ref)
            obj.pose.translation[1] = parent.world_top() \
                - obj.pose.scale * obj.mesh.bbox()[0][1]

    def _snap_to_wall(self, obj: ObjectInstance) -> None:
        n, d = self.room.wall_plane(obj.support.ref)
        world = obj.world_mesh()
        # closest approach of the object toward the wall, along inward normal
        depth = (world.vertices @ n).min()
        delta = d - depth
        if abs(delta) > 1e-12 * (1.0 + abs(d)):
            obj.pose.translation += n * delta

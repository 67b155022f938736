"""Flattened render geometry and the differentiable world-vertex builder.

The same torch pose math produces both the detached forward geometry and
the autograd graph used by the adjoint pass, so interior gradients are exact
with respect to the rendered configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..params import Stage
from ..scene import Emissive, Scene, Material

DTYPE = torch.float64


@dataclass
class Entity:
    """One maskable part: a room face, an object material group, or a light."""

    owner: str          # "room" | object id | "light"
    group: str          # face name / material group / light id
    kind: str           # "room_face" | "object_part" | "light"
    material: Material | None = None
    light_index: int = -1

    @property
    def key(self) -> tuple[str, str]:
        return (self.owner, self.group)


@dataclass
class OwnerBlock:
    """Vertex/face ranges of one posed mesh inside the flat arrays."""

    owner: str
    vert_start: int
    vert_end: int
    tri_start: int
    tri_end: int
    canonical: np.ndarray          # (V, 3) rest vertices
    edges: np.ndarray              # (E, 2) local vertex indices
    edge_faces: np.ndarray         # (E, 2) local face indices, -1 for border


@dataclass
class SceneGeometry:
    verts: np.ndarray              # (V, 3) world, float64
    tris: np.ndarray               # (T, 3) vertex indices
    tri_entity: np.ndarray         # (T,) entity indices
    uv_tris: np.ndarray            # (T, 3, 2)
    entities: list[Entity]
    blocks: dict[str, OwnerBlock]
    n_geom_tris: int               # tris before this index are scene geometry, after: lights
    n_geom_verts: int
    lights: list = field(default_factory=list)

    def torch_verts(self) -> torch.Tensor:
        return torch.from_numpy(self.verts)

    def torch_tris(self) -> torch.Tensor:
        return torch.from_numpy(self.tris)


def _edge_arrays(mesh) -> tuple[np.ndarray, np.ndarray]:
    adj = mesh.edges()
    edges = np.empty((len(adj), 2), dtype=np.int64)
    faces = np.full((len(adj), 2), -1, dtype=np.int64)
    for i, (key, fs) in enumerate(sorted(adj.items())):
        edges[i] = key
        faces[i, :len(fs[:2])] = fs[:2]
    return edges, faces


def yaw_matrix_t(yaw_deg: torch.Tensor) -> torch.Tensor:
    a = yaw_deg * (math.pi / 180.0)
    c, s = torch.cos(a), torch.sin(a)
    zero = torch.zeros_like(c)
    one = torch.ones_like(c)
    return torch.stack([
        torch.stack([c, zero, s]),
        torch.stack([zero, one, zero]),
        torch.stack([-s, zero, c]),
    ]).reshape(3, 3)


def _leaf(leaves: dict | None, owner: str, name: str, fallback) -> torch.Tensor:
    if leaves is not None and (owner, name) in leaves:
        return leaves[(owner, name)]
    return torch.as_tensor(fallback, dtype=DTYPE)


def _room_pose_tensors(scene: Scene, leaves):
    pose = scene.room.pose
    t = torch.stack([_leaf(leaves, "room", n, pose.translation[i]).reshape(())
                     for i, n in enumerate(("tx", "ty", "tz"))])
    yaw = _leaf(leaves, "room", "yaw", pose.yaw_deg).reshape(())
    s = torch.stack([_leaf(leaves, "room", f"log_s{ax}", pose.scale[i]).reshape(())
                     for i, ax in enumerate("xyz")])
    return t, yaw, s


def _object_pose_tensors(scene: Scene, obj, leaves, floor_y):
    """Differentiable (t, yaw, s); support constraints are part of the graph."""
    pose = obj.pose
    yaw = _leaf(leaves, obj.id, "yaw", pose.yaw_deg).reshape(())
    s = _leaf(leaves, obj.id, "log_scale", pose.scale).reshape(())
    lo, hi = obj.mesh.bbox()
    kind = obj.support.kind
    if kind in ("floor", "object"):
        tx = _leaf(leaves, obj.id, "tx", pose.translation[0]).reshape(())
        tz = _leaf(leaves, obj.id, "tz", pose.translation[2]).reshape(())
        if kind == "floor":
            base = floor_y
        else:
            parent = scene.object_by_id(obj.support.ref)
            pt, pyaw, ps = _object_pose_tensors(scene, parent, leaves, floor_y)
            base = pt[1] + ps * parent.mesh.bbox()[1][1]
        ty = base - s * lo[1]
        t = torch.stack([tx, ty, tz])
    elif kind == "wall":
        n_np, d = scene.room.wall_plane(obj.support.ref)
        n = torch.as_tensor(n_np, dtype=DTYPE)
        along_np = np.cross([0.0, 1.0, 0.0], n_np)
        along = torch.as_tensor(along_np / np.linalg.norm(along_np), dtype=DTYPE)
        u = _leaf(leaves, obj.id, "t_wall_u", float((pose.translation - n_np * d) @ (along_np / np.linalg.norm(along_np)))).reshape(())
        v = _leaf(leaves, obj.id, "t_wall_v", pose.translation[1]).reshape(())
        r = yaw_matrix_t(yaw)
        local = torch.from_numpy(obj.mesh.vertices) * s
        depth = (local @ r.T @ n).min()
        t = n * (d - depth) + along * u + torch.stack([torch.zeros_like(v), v, torch.zeros_like(v)])
    else:
        t = torch.stack([_leaf(leaves, obj.id, n, pose.translation[i]).reshape(())
                         for i, n in enumerate(("tx", "ty", "tz"))])
    return t, yaw, s


def world_verts_torch(scene: Scene, geom: SceneGeometry, leaves: dict | None,
                      stage: Stage | None) -> torch.Tensor:
    """World vertices as a torch graph over the supplied pose leaves.

    Owners without leaves contribute detached constants; light quad vertices
    are always detached (light geometry is never optimized).
    """
    parts: list[torch.Tensor] = []
    room_live = leaves is not None and stage == Stage.Room
    for owner, block in geom.blocks.items():
        canonical = torch.from_numpy(block.canonical)
        if owner == "room":
            t, yaw, s = _room_pose_tensors(scene, leaves if room_live else None)
            r = yaw_matrix_t(yaw)
            parts.append((canonical * s) @ r.T + t)
        elif owner == "__lights__":
            parts.append(canonical)
        else:
            obj = scene.object_by_id(owner)
            obj_leaves = leaves if (leaves is not None and stage == Stage.Object) else None
            floor_y = torch.as_tensor(scene.floor_y() if scene.room else 0.0, dtype=DTYPE)
            t, yaw, s = _object_pose_tensors(scene, obj, obj_leaves, floor_y)
            r = yaw_matrix_t(yaw)
            parts.append((canonical * s) @ r.T + t)
    return torch.cat(parts, dim=0)


def build_geometry(scene: Scene, shaded: bool) -> SceneGeometry:
    """Flatten the scene into triangle soup with entity and owner tables."""
    entities: list[Entity] = []
    blocks: dict[str, OwnerBlock] = {}
    verts_parts, tris_parts, ent_parts, uv_parts = [], [], [], []
    v_off = t_off = 0

    def add_mesh(owner: str, mesh, materials: dict | None, kind: str):
        nonlocal v_off, t_off
        edges, edge_faces = _edge_arrays(mesh)
        blocks[owner] = OwnerBlock(owner, v_off, v_off + len(mesh.vertices),
                                   t_off, t_off + mesh.num_faces,
                                   mesh.vertices.copy(), edges, edge_faces)
        tris_parts.append(mesh.faces + v_off)
        uv_parts.append(mesh.uv_faces if mesh.uv_faces is not None
                        else np.zeros((mesh.num_faces, 3, 2)))
        ent_ids = np.empty(mesh.num_faces, dtype=np.int64)
        for gname, s, e in mesh.groups:
            ent = Entity(owner, gname, kind,
                         material=None if materials is None else materials[gname])
            ent_ids[s:e] = len(entities)
            entities.append(ent)
        ent_parts.append(ent_ids)
        verts_parts.append(np.zeros((len(mesh.vertices), 3)))  # filled below
        v_off += len(mesh.vertices)
        t_off += mesh.num_faces

    if scene.room is not None:
        add_mesh("room", scene.room.mesh(), scene.room.materials, "room_face")
    for obj in scene.sorted_objects():
        add_mesh(obj.id, obj.mesh, obj.materials, "object_part")
    if not entities:
        from ..errors import EmptyScene
        raise EmptyScene("no room or objects to render")
    n_geom_tris, n_geom_verts = t_off, v_off

    lights = [l for l in scene.lights if l.enabled] if shaded else []
    if lights:
        lv, lt, le = [], [], []
        for li, light in enumerate(lights):
            base = v_off + 4 * li
            lv.append(light.quad)
            lt.append(np.array([[base, base + 1, base + 2], [base, base + 2, base + 3]]))
            ent = Entity("light", light.id, "light", light_index=li)
            le.append(np.full(2, len(entities), dtype=np.int64))
            entities.append(ent)
        canonical = np.vstack(lv)
        blocks["__lights__"] = OwnerBlock("__lights__", v_off, v_off + len(canonical),
                                          t_off, t_off + 2 * len(lights),
                                          canonical,
                                          np.zeros((0, 2), dtype=np.int64),
                                          np.zeros((0, 2), dtype=np.int64))
        verts_parts.append(np.zeros((len(canonical), 3)))
        tris_parts.append(np.vstack(lt))
        ent_parts.append(np.concatenate(le))
        uv_parts.append(np.zeros((2 * len(lights), 3, 2)))
        v_off += len(canonical)
        t_off += 2 * len(lights)

    geom = SceneGeometry(
        verts=np.vstack(verts_parts),
        tris=np.vstack(tris_parts),
        tri_entity=np.concatenate(ent_parts),
        uv_tris=np.vstack(uv_parts),
        entities=entities,
        blocks=blocks,
        n_geom_tris=n_geom_tris,
        n_geom_verts=n_geom_verts,
        lights=lights,
    )
    with torch.no_grad():
        geom.verts = world_verts_torch(scene, geom, None, None).numpy()
    return geom


def emissive_entities(geom: SceneGeometry) -> set[int]:
    out = set()
    for i, e in enumerate(geom.entities):
        if e.kind == "light" or isinstance(e.material, Emissive):
            out.add(i)
    return out

"""Silhouette and discontinuity edges, with image-space projection helpers.

A visibility-discontinuity edge separates regions whose render integrand
jumps: classic silhouettes (front/back flip), mesh borders, and edges between
different mask entities. Crease-only edges carry no value discontinuity for
masks or depth, so the adjoint pass skips them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import Camera
from .geometry import SceneGeometry

NEAR_Z = 1e-4  # clip plane: keep points with z <= -NEAR_Z (camera looks down -Z)


@dataclass
class SilhouetteEdge:
    a_index: int
    b_index: int
    a_world: np.ndarray
    b_world: np.ndarray
    a_img: np.ndarray  # (2,) pixel coords
    b_img: np.ndarray


def project_points(pts: np.ndarray, camera: Camera) -> np.ndarray:
    """World points (N, 3) with z < 0 to continuous pixel coordinates."""
    f = camera.focal_px
    z = -pts[:, 2]
    u = camera.width / 2.0 + f * pts[:, 0] / z
    v = camera.height / 2.0 - f * pts[:, 1] / z
    return np.stack([u, v], axis=1)


def clip_segment_near(a: np.ndarray, b: np.ndarray) -> tuple[float, float] | None:
    """Parameter range [u0, u1] of the segment in front of the near plane."""
    za, zb = a[2], b[2]
    ok_a, ok_b = za <= -NEAR_Z, zb <= -NEAR_Z
    if ok_a and ok_b:
        return 0.0, 1.0
    if not ok_a and not ok_b:
        return None
    # crossing: solve z(u) = -NEAR_Z
    u = (-NEAR_Z - za) / (zb - za)
    return (u, 1.0) if ok_b else (0.0, u)


def classify_faces(verts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """True where a face is front-facing for a camera at the origin."""
    v0 = verts[tris[:, 0]]
    v1 = verts[tris[:, 1]]
    v2 = verts[tris[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    centroid = (v0 + v1 + v2) / 3.0
    return (n * centroid).sum(axis=1) < 0.0


def silhouette_edges(world_verts: np.ndarray, faces: np.ndarray,
                     edges: np.ndarray, edge_faces: np.ndarray,
                     camera: Camera) -> list[SilhouetteEdge]:
    """Edges where front/back classification differs, plus border edges."""
    front = classify_faces(world_verts, faces)
    out: list[SilhouetteEdge] = []
    for (ia, ib), (f0, f1) in zip(edges, edge_faces):
        if f1 < 0:
            sil = True  # border edge
        else:
            sil = front[f0] != front[f1]
        if not sil:
            continue
        a, b = world_verts[ia], world_verts[ib]
        span = clip_segment_near(a, b)
        if span is None:
            continue
        u0, u1 = span
        pa = a + u0 * (b - a)
        pb = a + u1 * (b - a)
        img = project_points(np.stack([pa, pb]), camera)
        out.append(SilhouetteEdge(int(ia), int(ib), pa, pb, img[0], img[1]))
    return out


def mesh_silhouette_edges(mesh, camera: Camera) -> list[SilhouetteEdge]:
    """Public convenience: silhouettes of a world-space TriMesh."""
    adj = mesh.edges()
    edges = np.array(sorted(adj.keys()), dtype=np.int64).reshape(-1, 2)
    efaces = np.full((len(edges), 2), -1, dtype=np.int64)
    for i, key in enumerate(map(tuple, edges)):
        fs = adj[key]
        efaces[i, :len(fs[:2])] = fs[:2]
    return silhouette_edges(mesh.vertices, mesh.faces, edges, efaces, camera)


def discontinuity_edges(geom: SceneGeometry, owner: str, camera: Camera) -> np.ndarray:
    """Edge rows (local vert a, local vert b) of one owner that can carry
    mask/depth discontinuities: silhouettes, borders, and entity boundaries."""
    block = geom.blocks[owner]
    verts = geom.verts[block.vert_start:block.vert_end]
    local_tris = geom.tris[block.tri_start:block.tri_end] - block.vert_start
    front = classify_faces(verts, local_tris)
    ent = geom.tri_entity[block.tri_start:block.tri_end]
    keep = []
    for i, ((_, _), (f0, f1)) in enumerate(zip(block.edges, block.edge_faces)):
        if f1 < 0 or front[f0] != front[f1] or ent[f0] != ent[f1]:
            keep.append(i)
    return block.edges[keep] if keep else np.zeros((0, 2), dtype=np.int64)

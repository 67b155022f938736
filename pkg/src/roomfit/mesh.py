"""Triangle meshes with material groups, OBJ I/O, and edge adjacency."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class TriMesh:
    """Indexed triangle mesh.

    vertices: (V, 3) float64 positions.
    faces: (F, 3) int64 vertex indices, CCW winding defines the normal.
    uv_faces: optional (F, 3, 2) per-corner texture coordinates.
    groups: list of (name, face_start, face_end) half-open ranges that must
        partition the faces exactly.
    """

    vertices: np.ndarray
    faces: np.ndarray
    uv_faces: np.ndarray | None = None
    groups: list[tuple[str, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.uv_faces is not None:
            self.uv_faces = np.asarray(self.uv_faces, dtype=np.float64).reshape(-1, 3, 2)
            if len(self.uv_faces) != len(self.faces):
                raise ValueError("uv_faces length must match faces")
        if not self.groups:
            self.groups = [("default", 0, len(self.faces))]
        self._check_groups()

    def _check_groups(self):
        cursor = 0
        for name, start, end in self.groups:
            if start != cursor or end < start:
                raise ValueError(f"groups do not partition faces at {name!r}")
            cursor = end
        if cursor != len(self.faces):
            raise ValueError("groups do not cover all faces")

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def group_names(self) -> list[str]:
        return [g[0] for g in self.groups]

    def group_range(self, name: str) -> tuple[int, int]:
        for g, s, e in self.groups:
            if g == name:
                return s, e
        raise KeyError(name)

    def group_of_face(self, face_idx: int) -> str:
        for g, s, e in self.groups:
            if s <= face_idx < e:
                return g
        raise IndexError(face_idx)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bounding_radius(self) -> float:
        """Max distance from the bbox center to any vertex."""
        lo, hi = self.bbox()
        c = 0.5 * (lo + hi)
        return float(np.linalg.norm(self.vertices - c, axis=1).max())

    def face_normals(self) -> np.ndarray:
        v0 = self.vertices[self.faces[:, 0]]
        e1 = self.vertices[self.faces[:, 1]] - v0
        e2 = self.vertices[self.faces[:, 2]] - v0
        n = np.cross(e1, e2)
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(length, 1e-300)

    def edges(self) -> dict[tuple[int, int], list[int]]:
        """Undirected edge -> adjacent face indices."""
        adj: dict[tuple[int, int], list[int]] = {}
        for fi, (a, b, c) in enumerate(self.faces):
            for u, v in ((a, b), (b, c), (c, a)):
                key = (min(u, v), max(u, v))
                adj.setdefault(key, []).append(fi)
        return adj

    def copy(self) -> "TriMesh":
        return TriMesh(
            self.vertices.copy(),
            self.faces.copy(),
            None if self.uv_faces is None else self.uv_faces.copy(),
            list(self.groups),
        )

    def welded(self, decimals: int = 9) -> "TriMesh":
        """Merge positionally identical vertices so shared edges are topological.

        Edge adjacency (silhouette detection, boundary sampling) requires faces
        to reference common vertices; per-corner UVs are unaffected.
        """
        keys = {}
        remap = np.empty(len(self.vertices), dtype=np.int64)
        kept = []
        for i, v in enumerate(np.round(self.vertices, decimals)):
            k = (v[0], v[1], v[2])
            if k in keys:
                remap[i] = keys[k]
            else:
                keys[k] = len(kept)
                remap[i] = len(kept)
                kept.append(self.vertices[i])
        return TriMesh(np.asarray(kept), remap[self.faces],
                       None if self.uv_faces is None else self.uv_faces.copy(),
                       list(self.groups))


def concat_meshes(parts: list[tuple[str, TriMesh]]) -> TriMesh:
    """Join meshes into one, each becoming a named material group."""
    verts, faces, uvs, groups = [], [], [], []
    v_off = f_off = 0
    for name, m in parts:
        verts.append(m.vertices)
        faces.append(m.faces + v_off)
        uvs.append(m.uv_faces if m.uv_faces is not None else np.zeros((m.num_faces, 3, 2)))
        groups.append((name, f_off, f_off + m.num_faces))
        v_off += len(m.vertices)
        f_off += m.num_faces
    return TriMesh(np.vstack(verts), np.vstack(faces), np.vstack(uvs), groups)


# -- OBJ + parts.json -----------------------------------------------------------


def save_obj(path, mesh: TriMesh) -> None:
    """Write positions, normals and UVs; groups go to parts.json next to it."""
    path = Path(path)
    normals = mesh.face_normals()
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    uv_index: dict[tuple[float, float], int] = {}
    uv_refs = np.zeros((mesh.num_faces, 3), dtype=np.int64)
    if mesh.uv_faces is not None:
        for fi in range(mesh.num_faces):
            for k in range(3):
                key = (round(mesh.uv_faces[fi, k, 0], 9), round(mesh.uv_faces[fi, k, 1], 9))
                if key not in uv_index:
                    uv_index[key] = len(uv_index) + 1
                    lines.append(f"vt {key[0]:.9g} {key[1]:.9g}")
                uv_refs[fi, k] = uv_index[key]
    for nx, ny, nz in normals:
        lines.append(f"vn {nx:.9g} {ny:.9g} {nz:.9g}")
    for fi, (a, b, c) in enumerate(mesh.faces):
        n = fi + 1
        if mesh.uv_faces is not None:
            t = uv_refs[fi]
            lines.append(f"f {a + 1}/{t[0]}/{n} {b + 1}/{t[1]}/{n} {c + 1}/{t[2]}/{n}")
        else:
            lines.append(f"f {a + 1}//{n} {b + 1}//{n} {c + 1}//{n}")
    path.write_text("\n".join(lines) + "\n")
    parts = {name: [int(s), int(e)] for name, s, e in mesh.groups}
    (path.parent / "parts.json").write_text(json.dumps(parts, indent=1))


def load_obj(path) -> TriMesh:
    """Read an OBJ (triangulating polygons) plus the sibling parts.json groups."""
    path = Path(path)
    positions: list[list[float]] = []
    texcoords: list[list[float]] = []
    faces: list[list[int]] = []
    face_uvs: list[list[int]] = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            positions.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            texcoords.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            refs = []
            for tok in parts[1:]:
                fields = tok.split("/")
                vi = int(fields[0])
                ti = int(fields[1]) if len(fields) > 1 and fields[1] else 0
                refs.append((vi, ti))
            for k in range(1, len(refs) - 1):  # fan triangulation
                tri = [refs[0], refs[k], refs[k + 1]]
                faces.append([r[0] - 1 for r in tri])
                face_uvs.append([r[1] - 1 for r in tri])
    verts = np.asarray(positions, dtype=np.float64)
    fcs = np.asarray(faces, dtype=np.int64)
    uv_faces = None
    if texcoords and all(t >= 0 for tri in face_uvs for t in tri):
        tc = np.asarray(texcoords, dtype=np.float64)
        uv_faces = tc[np.asarray(face_uvs, dtype=np.int64)]
    groups = None
    parts_path = path.parent / "parts.json"
    if parts_path.exists():
        raw = json.loads(parts_path.read_text())
        groups = sorted(((name, s, e) for name, (s, e) in raw.items()), key=lambda g: g[1])
    return TriMesh(verts, fcs, uv_faces, groups or []).welded()

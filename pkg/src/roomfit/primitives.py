"""Procedural test meshes: quads, boxes, cylinders and simple furniture."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh, concat_meshes


def quad_mesh(corners, uv_corners=None, group: str = "default") -> TriMesh:
    """Two triangles over 4 corners given CCW as seen from the front side."""
    c = np.asarray(corners, dtype=np.float64).reshape(4, 3)
    if uv_corners is None:
        uv_corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    uv = np.asarray(uv_corners, dtype=np.float64).reshape(4, 2)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    uv_faces = uv[faces]
    return TriMesh(c, faces, uv_faces, [(group, 0, 2)])


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), group: str = "body",
             inward: bool = False) -> TriMesh:
    """Axis-aligned box; inward=True flips winding (room interiors)."""
    sx, sy, sz = [s / 2.0 for s in size]
    cx, cy, cz = center
    # 8 corners: index bit 0 -> +x, bit 1 -> +y, bit 2 -> +z
    corners = np.array([
        [cx + (1 if i & 1 else -1) * sx,
         cy + (1 if i & 2 else -1) * sy,
         cz + (1 if i & 4 else -1) * sz] for i in range(8)
    ])
    # outward-facing quads (CCW from outside)
    quads = {
        "-y": [0, 4, 5, 1], "+y": [2, 3, 7, 6],
        "-x": [0, 2, 6, 4], "+x": [1, 5, 7, 3],
        "-z": [0, 1, 3, 2], "+z": [4, 6, 7, 5],
    }
    parts = []
    for name in ("-y", "+y", "-x", "+x", "-z", "+z"):
        idx = quads[name]
        if inward:
            idx = idx[::-1]
        parts.append((name, quad_mesh(corners[idx])))
    merged = concat_meshes(parts).welded()
    return TriMesh(merged.vertices, merged.faces, merged.uv_faces,
                   [(group, 0, merged.num_faces)])


ROOM_FACES = ("floor", "ceiling", "wall0", "wall1", "wall2", "wall3")


def room_box_mesh() -> TriMesh:
    """Canonical unit room: cube [-0.5, 0.5]^3 with inward normals.

    Groups: floor (y=-0.5), ceiling (y=+0.5), wall0 (x=-0.5), wall1 (x=+0.5),
    wall2 (z=-0.5), wall3 (z=+0.5).
    """
    h = 0.5
    c = {(sx, sy, sz): np.array([sx * h, sy * h, sz * h])
         for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)}
    faces = {
        # CCW as seen from inside the room -> normals point inward
        "floor": [c[-1, -1, -1], c[-1, -1, 1], c[1, -1, 1], c[1, -1, -1]],
        "ceiling": [c[-1, 1, -1], c[1, 1, -1], c[1, 1, 1], c[-1, 1, 1]],
        "wall0": [c[-1, -1, -1], c[-1, 1, -1], c[-1, 1, 1], c[-1, -1, 1]],
        "wall1": [c[1, -1, -1], c[1, -1, 1], c[1, 1, 1], c[1, 1, -1]],
        "wall2": [c[-1, -1, -1], c[1, -1, -1], c[1, 1, -1], c[-1, 1, -1]],
        "wall3": [c[-1, -1, 1], c[-1, 1, 1], c[1, 1, 1], c[1, -1, 1]],
    }
    return concat_meshes([(name, quad_mesh(faces[name], group=name)) for name in ROOM_FACES]).welded()


def cylinder_mesh(radius: float = 0.5, height: float = 1.0, segments: int = 16,
                  group: str = "body") -> TriMesh:
    """Closed cylinder, axis +Y, centered at the origin."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), np.zeros(segments), radius * np.sin(ang)], axis=1)
    top = ring + [0, height / 2, 0]
    bot = ring + [0, -height / 2, 0]
    verts = [bot, top, [[0, -height / 2, 0]], [[0, height / 2, 0]]]
    v = np.vstack(verts)
    ib, it, cb, ct = 0, segments, 2 * segments, 2 * segments + 1
    faces, uvf = [], []
    for i in range(segments):
        j = (i + 1) % segments
        u0, u1 = i / segments, (i + 1) / segments
        # side quad, outward winding
        faces.append([ib + i, it + i, it + j])
        uvf.append([[u0, 0], [u0, 1], [u1, 1]])
        faces.append([ib + i, it + j, ib + j])
        uvf.append([[u0, 0], [u1, 1], [u1, 0]])
        # caps: bottom faces -Y, top faces +Y
        faces.append([cb, ib + i, ib + j])
        uvf.append([[0.5, 0.5], [u0, 0], [u1, 0]])
        faces.append([ct, it + j, it + i])
        uvf.append([[0.5, 0.5], [u1, 1], [u0, 1]])
    return TriMesh(v, np.asarray(faces), np.asarray(uvf), [(group, 0, len(faces))])


def uv_sphere(radius: float = 0.5, n_lat: int = 8, n_lon: int = 12,
              group: str = "body") -> TriMesh:
    """Latitude/longitude sphere centered at the origin."""
    verts = [[0.0, radius, 0.0]]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2 * np.pi * j / n_lon
            verts.append([radius * np.sin(theta) * np.cos(phi),
                          radius * np.cos(theta),
                          radius * np.sin(theta) * np.sin(phi)])
    verts.append([0.0, -radius, 0.0])
    top, bottom = 0, len(verts) - 1
    faces = []
    ring = lambda i, j: 1 + (i - 1) * n_lon + (j % n_lon)
    for j in range(n_lon):
        faces.append([top, ring(1, j + 1), ring(1, j)])
        faces.append([bottom, ring(n_lat - 1, j), ring(n_lat - 1, j + 1)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    uvf = np.zeros((len(faces), 3, 2))
    return TriMesh(np.asarray(verts), np.asarray(faces), uvf,
                   [(group, 0, len(faces))])


def table_mesh() -> TriMesh:
    """Four-legged table, 1 unit tall, 1.2 x 0.8 top; groups top/legs."""
    top = box_mesh(size=(1.2, 0.08, 0.8), center=(0, 0.96, 0))
    legs = []
    for sx in (-1, 1):
        for sz in (-1, 1):
            legs.append(box_mesh(size=(0.08, 0.92, 0.08),
                                 center=(sx * 0.52, 0.46, sz * 0.32)))
    leg_all = concat_meshes([(f"l{i}", m) for i, m in enumerate(legs)])
    leg_all = TriMesh(leg_all.vertices, leg_all.faces, leg_all.uv_faces,
                      [("legs", 0, leg_all.num_faces)])
    return concat_meshes([("top", top), ("legs", leg_all)])


def lamp_mesh() -> TriMesh:
    """Floor lamp: thin pole plus a cylindrical shade; groups pole/shade."""
    pole = cylinder_mesh(radius=0.03, height=1.2, segments=8)
    pole = TriMesh(pole.vertices + [0, 0.6, 0], pole.faces, pole.uv_faces, pole.groups)
    shade = cylinder_mesh(radius=0.18, height=0.25, segments=12)
    shade = TriMesh(shade.vertices + [0, 1.3, 0], shade.faces, shade.uv_faces, shade.groups)
    return concat_meshes([("pole", pole), ("shade", shade)])

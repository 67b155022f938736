"""Light placement and one-render radiance initialization.

Lighting starts as a shrunk ceiling grid of area lights, minus any light the
camera could see directly, plus fill lights behind the camera and on walls
outside the view; window and lamp segments become emissive geometry.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NoFloorSegment
from ..imaging import ImageF, luminance, resize_box
from ..mesh import concat_meshes
from ..primitives import box_mesh
from ..scene import AreaLight, Emissive, Homogeneous, ObjectInstance, Pose, Scene, Support, yaw_matrix

GRID = 3
SHRINK = 0.8          # linear shrink per grid cell
WALL_SHRINK = 0.9
INSET_FRAC = 1e-3     # offset off the surface, relative to room height
INVISIBLE_COVERAGE = 0.005  # wall visible-pixel fraction below which it gets a light
RADIANCE_MULTIPLIERS = np.logspace(-2.0, 2.0, 32)


class NoRoom(NoFloorSegment):
    pass


def _ceiling_grid_quads(scene: Scene, grid: int, shrink: float) -> list[np.ndarray]:
    pose = scene.room.pose
    r = yaw_matrix(pose.yaw_deg)
    sy = pose.scale[1]
    y_local = 0.5 - INSET_FRAC
    quads = []
    step = 1.0 / grid
    for gi in range(grid):
        for gj in range(grid):
            cx = -0.5 + (gi + 0.5) * step
            cz = -0.5 + (gj + 0.5) * step
            h = 0.5 * step * shrink
            local = np.array([
                [cx - h, y_local, cz - h],
                [cx + h, y_local, cz - h],
                [cx + h, y_local, cz + h],
                [cx - h, y_local, cz + h],
            ])
            world = (local * pose.scale) @ r.T + pose.translation
            quads.append(world)
    return quads


def _quad_intersects_frustum(quad: np.ndarray, camera) -> bool:
    tan_v = math.tan(math.radians(camera.vfov_deg) / 2.0)
    tan_h = tan_v * camera.width / camera.height
    ts = np.linspace(0.0, 1.0, 3)
    for u in ts:
        for v in ts:
            a = quad[0] * (1 - u) + quad[1] * u
            b = quad[3] * (1 - u) + quad[2] * u
            p = a * (1 - v) + b * v
            if p[2] < 0 and abs(p[0]) <= -p[2] * tan_h and abs(p[1]) <= -p[2] * tan_v:
                return True
    return False


def _fully_behind(quad: np.ndarray) -> bool:
    return bool((quad[:, 2] > 0).all())


def _wall_quad(scene: Scene, wall: str, shrink: float) -> np.ndarray:
    pose = scene.room.pose
    n, d = scene.room.wall_plane(wall)
    along = np.cross([0.0, 1.0, 0.0], n)
    along /= np.linalg.norm(along)
    half_h = 0.5 * pose.scale[1] * shrink
    extent = pose.scale[2] if wall in ("wall0", "wall1") else pose.scale[0]
    half_a = 0.5 * extent * shrink
    center = pose.translation - n * (0.5 * {"wall0": pose.scale[0], "wall1": pose.scale[0],
                                            "wall2": pose.scale[2], "wall3": pose.scale[2]}[wall])
    center = center + n * (INSET_FRAC * pose.scale[1])
    y = np.array([0.0, 1.0, 0.0])
    return np.stack([
        center - along * half_a - y * half_h,
        center + along * half_a - y * half_h,
        center + along * half_a + y * half_h,
        center - along * half_a + y * half_h,
    ])


def _window_frame_mesh(width: float, height: float, along: np.ndarray,
                       up: np.ndarray, normal: np.ndarray):
    """Two thin crossing bars spanning a window rectangle, in world offsets."""
    bar = 0.06
    depth = 0.02
    basis = np.stack([along, up, normal], axis=1)

    def oriented(size):
        m = box_mesh(size=size)
        return m.vertices @ basis.T, m.faces, m.uv_faces

    vert_v, faces_v, uv_v = oriented((bar * width, height, depth))
    vert_h, faces_h, uv_h = oriented((width, bar * height, depth))
    from ..mesh import TriMesh
    mv = TriMesh(vert_v, faces_v, uv_v, [("frame", 0, len(faces_v))])
    mh = TriMesh(vert_h, faces_h, uv_h, [("frame", 0, len(faces_h))])
    merged = concat_meshes([("v", mv), ("h", mh)])
    return TriMesh(merged.vertices, merged.faces, merged.uv_faces,
                   [("frame", 0, merged.num_faces)])


def init_lights(scene: Scene, render_out, *, lamp_ids=(), window_masks=None,
                grid: int = GRID, shrink: float = SHRINK) -> Scene:
    """Place initial lighting (unit radiance everywhere).

    render_out must be a target-resolution mask render of the posed scene: it
    supplies wall visibility and lamp part areas.
    """
    if scene.room is None:
        raise NoRoom("light initialization requires a room box")
    out = scene.clone()
    cam = scene.camera
    out.lights = [l for l in out.lights if l.id.startswith("user:")]

    for idx, quad in enumerate(_ceiling_grid_quads(out, grid, shrink)):
        if _quad_intersects_frustum(quad, cam) or _fully_behind(quad):
            continue
        out.lights.append(AreaLight(id=f"ceil_{idx // grid}{idx % grid}", quad=quad,
                                    radiance=np.ones(3)))

    walls = ("wall0", "wall1", "wall2", "wall3")
    centers = {}
    for w in walls:
        n, _d = out.room.wall_plane(w)
        half = 0.5 * (out.room.pose.scale[0] if w in ("wall0", "wall1")
                      else out.room.pose.scale[2])
        centers[w] = out.room.pose.translation - n * half
    behind = max(walls, key=lambda w: centers[w][2])
    out.lights.append(AreaLight(id="back_wall", quad=_wall_quad(out, behind, WALL_SHRINK),
                                radiance=np.ones(3)))

    npix = render_out.width * render_out.height
    for w in walls:
        if w == behind:
            continue
        cov = render_out.part_masks.get(("room", w))
        if cov is not None and cov.sum() / npix < INVISIBLE_COVERAGE:
            out.lights.append(AreaLight(id=f"invis_{w}", quad=_wall_quad(out, w, WALL_SHRINK),
                                        radiance=np.ones(3)))

    for oid in sorted(lamp_ids):
        obj = out.object_by_id(oid)
        areas = {g: float(render_out.part_masks.get((oid, g), np.zeros(1)).sum())
                 for g in obj.mesh.group_names()}
        largest = max(sorted(areas), key=lambda g: areas[g])
        obj.materials[largest] = Emissive(radiance=np.ones(3))

    if window_masks:
        for seg_id in sorted(window_masks):
            _add_window(out, seg_id, window_masks[seg_id])
    return out


def _add_window(scene: Scene, seg_id: str, mask: np.ndarray) -> None:
    ys, xs = np.nonzero(mask >= 0.5)
    if len(ys) < 16:
        return
    cam = scene.camera
    h, w = mask.shape
    f = cam.focal_px * h / cam.height  # mask may be a different resolution

    def ray(px, py):
        d = np.array([(px - w / 2.0) / f, (h / 2.0 - py) / f, -1.0])
        return d / np.linalg.norm(d)

    cx, cy = xs.mean() + 0.5, ys.mean() + 0.5
    best = None
    for wall in ("wall0", "wall1", "wall2", "wall3"):
        n, d = scene.room.wall_plane(wall)
        dn = ray(cx, cy) @ n
        if abs(dn) < 1e-9:
            continue
        t = d / dn
        if t > 0 and (best is None or t < best[0]):
            best = (t, wall, n, d)
    if best is None:
        return
    _t, wall, n, d = best
    corners_px = [(xs.min(), ys.min()), (xs.max() + 1.0, ys.min()),
                  (xs.max() + 1.0, ys.max() + 1.0), (xs.min(), ys.max() + 1.0)]
    quad = []
    for px, py in corners_px:
        dirv = ray(px, py)
        t = d / (dirv @ n)
        if t <= 0:
            return
        quad.append(dirv * t + n * (INSET_FRAC * scene.room.pose.scale[1]))
    quad = np.asarray(quad)
    # ensure the emitting side faces into the room (inward normal n)
    qn = np.cross(quad[1] - quad[0], quad[2] - quad[0])
    if qn @ n < 0:
        quad = quad[::-1].copy()
    scene.lights.append(AreaLight(id=f"window:{seg_id}", quad=quad, radiance=np.ones(3)))

    along = quad[1] - quad[0]
    width = float(np.linalg.norm(along))
    up = quad[3] - quad[0]
    height = float(np.linalg.norm(up))
    if width < 1e-6 or height < 1e-6:
        return
    center = quad.mean(axis=0) + n * 0.01
    frame = _window_frame_mesh(width, height, along / width, up / height, n)
    scene.objects.append(ObjectInstance(
        id=f"window_frame:{seg_id}", asset_id="__window_frame__", mesh=frame,
        pose=Pose(translation=center),
        support=Support.free(),
        materials={"frame": Homogeneous(albedo=np.array([0.2, 0.2, 0.2]),
                                        roughness=0.6, specular=0.04)}))


def init_radiance(scene: Scene, target_image: ImageF, render_fn,
                  down_to: int = 8) -> tuple[Scene, float]:
    """Pick the light level from a single unit-radiance render.

    render_fn(scene) -> linear rgb ndarray at a resolution dividing the
    target after 1/down_to box reduction; transport linearity makes scaling
    that one render exact for every candidate multiplier.
    """
    unit = scene.clone()
    for light in unit.lights:
        light.radiance = np.ones(3)
    for obj in unit.objects:
        for g, m in obj.materials.items():
            if isinstance(m, Emissive):
                obj.materials[g] = Emissive(radiance=np.ones(3))
    rgb = render_fn(unit)

    t_small = resize_box(luminance(target_image), down_to)
    k = max(1, rgb.shape[0] // t_small.height)
    r_small = resize_box(luminance(ImageF(rgb)), k)
    t_plane = t_small.plane()[: r_small.height, : r_small.width]
    r_plane = r_small.plane()[: t_plane.shape[0], : t_plane.shape[1]]

    best_m, best_loss = None, None
    for m in RADIANCE_MULTIPLIERS:
        loss = float(np.abs(m * r_plane - t_plane).mean())
        if best_loss is None or loss < best_loss:
            best_loss, best_m = loss, float(m)
    out = unit
    for light in out.lights:
        light.radiance = np.full(3, best_m)
    for obj in out.objects:
        for g, mmat in obj.materials.items():
            if isinstance(mmat, Emissive):
                obj.materials[g] = Emissive(radiance=np.full(3, best_m))
    return out, best_m

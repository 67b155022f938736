"""Geometric initialization from the preprocessed bundle: depth back-projection,
RANSAC floor fitting, coarse room/object placement, rotation search, and
support-relation detection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateInput,
    DegenerateRadius,
    NoFloorSegment,
    TooFewPoints,
)
from .imaging import ImageF, area_resample
from .mesh import TriMesh
from .scene import Camera, Pose, RoomBox, RoomPose, Scene, Support

ROOM_SURFACE_LABELS = ("floor", "ceiling", "wall")
EROSION_PX = 3
ROOM_YAW_CANDIDATES = 36
OBJECT_YAW_CANDIDATES = 8
RANSAC_ITERS = 500
NO_CEILING_HEIGHT_FACTOR = 1.2   # room height when no ceiling is visible
FALLBACK_EXTENT_FACTOR = 1.2     # unsupported wall placement
SUPPORT_DIST_WORLD = 0.1
SUPPORT_DIST_PX = 20.0
MIN_SEGMENT_POINTS = 10
FLOOR_DIAGONAL_NORM = 10.0


@dataclass
class PointCloud:
    points: np.ndarray          # (N, 3) camera space
    segment: np.ndarray         # (N,) int segment index
    segment_ids: list[str]      # index -> segment id

    def of_segment(self, seg_id: str) -> np.ndarray:
        idx = self.segment_ids.index(seg_id)
        return self.points[self.segment == idx]


@dataclass
class Plane:
    normal: np.ndarray
    offset: float  # n . p = offset

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > 1e-9:
            self.normal = self.normal / n

    def distance(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(pts @ self.normal - self.offset)


def backproject(depth: ImageF, camera: Camera, masks: dict[str, ImageF],
                labels: dict[str, str] | None = None) -> PointCloud:
    """Segmented point cloud from a normalized depth map.

    Depth is view-space z (not ray length). A pixel contributes one point
    tagged with the segment of maximal coverage (>= 0.5); room-surface masks
    are eroded by 3 px first.
    """
    h, w = depth.height, depth.width
    f = camera.focal_px * h / camera.height
    labels = labels or {}
    seg_ids = sorted(masks)
    planes = []
    for sid in seg_ids:
        plane = masks[sid].plane()
        if labels.get(sid, sid) in ROOM_SURFACE_LABELS:
            binary = plane >= 0.5
            plane = plane * ndimage.binary_erosion(
                binary, structure=np.ones((EROSION_PX, EROSION_PX)))
        planes.append(plane)
    stack = np.stack(planes) if planes else np.zeros((0, h, w))
    best = stack.argmax(axis=0)
    best_cov = stack.max(axis=0) if planes else np.zeros((h, w))
    ys, xs = np.nonzero(best_cov >= 0.5)
    z = depth.plane()[ys, xs]
    px = (xs + 0.5 - w / 2.0) / f
    py = (h / 2.0 - (ys + 0.5)) / f
    pts = np.stack([px * z, py * z, -z], axis=1)
    return PointCloud(points=pts, segment=best[ys, xs].astype(np.int64),
                      segment_ids=seg_ids)


def ransac_plane(pts: np.ndarray, iters: int = RANSAC_ITERS,
                 inlier_eps: float | None = None, seed: int = 0) -> Plane:
    """Best-of-iters 3-point plane by inlier count, least-squares refit,
    normal oriented toward the camera (origin)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateInput("need at least 3 points")
    if inlier_eps is None:
        center = pts.mean(axis=0)
        inlier_eps = 0.01 * max(np.linalg.norm(pts - center, axis=1).max(), 1e-9)
    rng = np.random.default_rng(seed)
    best_inliers = None
    best_count = -1
    for _ in range(iters):
        idx = rng.choice(len(pts), size=3, replace=False)
        a, b, c = pts[idx]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n = n / norm
        d = n @ a
        inl = np.abs(pts @ n - d) <= inlier_eps
        count = int(inl.sum())
        if count > best_count:
            best_count = count
            best_inliers = inl
    if best_inliers is None or best_count < 3:
        raise DegenerateInput("all hypotheses degenerate (collinear points?)")
    sel = pts[best_inliers]
    centroid = sel.mean(axis=0)
    _u, _s, vt = np.linalg.svd(sel - centroid, full_matrices=False)
    n = vt[-1]
    d = float(n @ centroid)
    # orient the normal toward the camera side (origin)
    if -d < 0:
        n, d = -n, -d
    return Plane(n, d)


def _wall_rect_score(xz: np.ndarray, rect) -> float:
    x0, x1, z0, z1 = rect
    dx = np.minimum(xz[:, 0] - x0, x1 - xz[:, 0])
    dz = np.minimum(xz[:, 1] - z0, z1 - xz[:, 1])
    return float(np.minimum(dx, dz).clip(min=0).mean())


def init_room(cloud: PointCloud, floor: Plane,
              labels: dict[str, str] | None = None) -> RoomBox:
    """Coarse room box: floor height from the RANSAC plane, height from
    ceiling points (or 1.2x max height), yaw/extent from a 36-angle tightest
    rectangle fit over wall points."""
    labels = labels or {sid: sid for sid in cloud.segment_ids}
    seg_label = [labels.get(sid, sid) for sid in cloud.segment_ids]

    def pts_of(label: str) -> np.ndarray:
        idx = [i for i, l in enumerate(seg_label) if l == label]
        if not idx:
            return np.zeros((0, 3))
        return cloud.points[np.isin(cloud.segment, idx)]

    floor_pts = pts_of("floor")
    if len(floor_pts) == 0:
        raise NoFloorSegment("no floor points in the cloud")
    floor_y = float(np.median(floor_pts[:, 1]))

    all_pts = cloud.points
    ceil_pts = pts_of("ceiling")
    if len(ceil_pts) >= MIN_SEGMENT_POINTS:
        top_y = float(np.median(ceil_pts[:, 1]))
        height = top_y - floor_y
    else:
        height = NO_CEILING_HEIGHT_FACTOR * (float(all_pts[:, 1].max()) - floor_y)
    height = max(height, 1e-3)

    wall_pts = pts_of("wall")
    fit_pts = wall_pts if len(wall_pts) >= MIN_SEGMENT_POINTS else all_pts
    best = None
    for k in range(ROOM_YAW_CANDIDATES):
        yaw = k * (360.0 / ROOM_YAW_CANDIDATES)
        a = math.radians(yaw)
        c, s = math.cos(a), math.sin(a)
        # rotate by -yaw into room-local frame (yaw about +Y maps +X to -Z)
        x = fit_pts[:, 0] * c - fit_pts[:, 2] * s
        z = fit_pts[:, 0] * s + fit_pts[:, 2] * c
        rect = (x.min(), x.max(), z.min(), z.max())
        score = _wall_rect_score(np.stack([x, z], axis=1), rect)
        if best is None or score < best[0] - 1e-12:
            best = (score, yaw, rect)
    _score, yaw, rect = best
    x0, x1, z0, z1 = rect

    # sides without wall evidence (or a degenerate rectangle, e.g. a single
    # visible wall) fall back to 1.2x the horizontal extent of all points
    a = math.radians(yaw)
    c, s = math.cos(a), math.sin(a)
    ax = all_pts[:, 0] * c - all_pts[:, 2] * s
    az = all_pts[:, 0] * s + all_pts[:, 2] * c
    mid_x, mid_z = ax.mean(), az.mean()
    span_x = max(ax.max() - ax.min(), 1e-6)
    span_z = max(az.max() - az.min(), 1e-6)
    if len(wall_pts) >= MIN_SEGMENT_POINTS:
        wx = wall_pts[:, 0] * c - wall_pts[:, 2] * s
        wz = wall_pts[:, 0] * s + wall_pts[:, 2] * c
        big = max(x1 - x0, z1 - z0, 1e-6)
        margin = 0.05 * big
        thin_x = (x1 - x0) < 0.1 * big
        thin_z = (z1 - z0) < 0.1 * big
        if thin_x or (wx <= x0 + margin).sum() < 2:
            x0 = mid_x - FALLBACK_EXTENT_FACTOR * span_x / 2
        if thin_x or (wx >= x1 - margin).sum() < 2:
            x1 = mid_x + FALLBACK_EXTENT_FACTOR * span_x / 2
        if thin_z or (wz <= z0 + margin).sum() < 2:
            z0 = mid_z - FALLBACK_EXTENT_FACTOR * span_z / 2
        if thin_z or (wz >= z1 - margin).sum() < 2:
            z1 = mid_z + FALLBACK_EXTENT_FACTOR * span_z / 2
    # the camera (world origin) must sit strictly inside the box
    cam_x = cam_z = 0.0
    pad = 0.05 * max(x1 - x0, z1 - z0, 1.0)
    x0, x1 = min(x0, cam_x - pad), max(x1, cam_x + pad)
    z0, z1 = min(z0, cam_z - pad), max(z1, cam_z + pad)

    scale = np.array([x1 - x0, height, z1 - z0])
    center_local = np.array([(x0 + x1) / 2, 0.0, (z0 + z1) / 2])
    from .scene import yaw_matrix
    center_world = yaw_matrix(yaw) @ center_local
    translation = np.array([center_world[0], floor_y + height / 2, center_world[2]])
    return RoomBox(pose=RoomPose(translation=translation, yaw_deg=yaw, scale=scale))


def normalize_scene_scale(scene: Scene, cloud: PointCloud | None = None) -> float:
    """Scale the world about the camera so the floor diagonal is 10.

    Uniform scaling about the origin leaves the image projection and any
    normalized depth unchanged, so this is a free choice of units.
    """
    diag = scene.room.floor_diagonal()
    if diag <= 0:
        return 1.0
    k = FLOOR_DIAGONAL_NORM / diag
    scene.room.pose.translation *= k
    scene.room.pose.scale *= k
    for obj in scene.objects:
        obj.pose.translation *= k
        obj.pose.scale *= k
    for light in scene.lights:
        light.quad *= k
    if cloud is not None:
        cloud.points *= k
    return k


def init_object_pose(segment_pts: np.ndarray, mesh: TriMesh) -> Pose:
    """Coarse pose: translation at the per-axis median, deliberately
    undersized scale (half the median point radius over the bounding radius)."""
    pts = np.asarray(segment_pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) < MIN_SEGMENT_POINTS:
        raise TooFewPoints(f"{len(pts)} points")
    center = np.median(pts, axis=0)
    radius = float(np.median(np.linalg.norm(pts - center, axis=1)))
    if radius <= 1e-12:
        raise DegenerateRadius("point cloud radius is zero")
    mesh_radius = mesh.bounding_radius()
    if mesh_radius <= 0:
        raise DegenerateRadius("mesh bounding radius is zero")
    scale = 0.5 * radius / mesh_radius
    lo, hi = mesh.bbox()
    mesh_center = 0.5 * (lo + hi)
    return Pose(translation=center - scale * mesh_center, yaw_deg=0.0, scale=scale)


def rotation_search(scene: Scene, obj_id: str, target_mask: np.ndarray,
                    n_angles: int = OBJECT_YAW_CANDIDATES, *, resolution: int = 96,
                    seed: int = 0, graphs=None) -> float:
    """Yaw (degrees) minimizing mean L1 between the object's solo rendered
    mask and its target mask; ties break toward the smaller angle."""
    from .render import RenderConfig, render

    if n_angles < 1:
        return 0.0
    th, tw = target_mask.shape
    rh = resolution
    rw = max(1, int(round(resolution * tw / th)))
    small_target = area_resample(target_mask, rh, rw)
    best = None
    base = scene.object_by_id(obj_id)
    for k in range(n_angles):
        yaw = k * (360.0 / n_angles)
        from .scene import ObjectInstance
        probe = Scene(camera=scene.camera, room=None,
                      objects=[], lights=[], assets_dir=scene.assets_dir)
        probe.objects.append(ObjectInstance(
            id=base.id, asset_id=base.asset_id, mesh=base.mesh,
            pose=Pose(base.pose.translation.copy(), yaw, base.pose.scale),
            support=Support.free(), materials=dict(base.materials)))
        cfg = RenderConfig(width=rw, height=rh, spp=4, seed=seed)
        out = render(probe, cfg, graphs)
        l1 = float(np.abs(out.masks[obj_id] - small_target).mean())
        if best is None or l1 < best[0] - 1e-12:
            best = (l1, yaw)
    return best[1]


def _mask_bottom_distance(obj_mask: np.ndarray, other_mask: np.ndarray) -> float:
    """Distance (px) from the object's lowest mask edge to another mask."""
    obj_on = obj_mask >= 0.5
    other_on = other_mask >= 0.5
    if not obj_on.any() or not other_on.any():
        return float("inf")
    ys, xs = np.nonzero(obj_on)
    bottom_y = ys.max()
    sel = ys >= bottom_y - 1
    edge = np.zeros_like(obj_on)
    edge[ys[sel], xs[sel]] = True
    dist = ndimage.distance_transform_edt(~other_on)
    return float(dist[edge].min())


def detect_support(scene: Scene, obj_id: str, target_masks: dict[str, np.ndarray],
                   floor_mask: np.ndarray | None,
                   on_floor_ids: set[str] | None = None) -> Support:
    """Support classification per the threshold rules: floor contact within
    0.1 world units + 20 px mask adjacency; else stacking on an on-floor
    object within 20 px; else wall contact; else free."""
    obj = scene.object_by_id(obj_id)
    floor_y = scene.floor_y()
    mask = target_masks[obj_id]

    if abs(obj.world_bottom() - floor_y) < SUPPORT_DIST_WORLD and floor_mask is not None:
        if _mask_bottom_distance(mask, floor_mask) < SUPPORT_DIST_PX:
            return Support.on_floor()

    candidates = []
    for other_id in sorted(on_floor_ids or ()):
        if other_id == obj_id or other_id not in target_masks:
            continue
        d = _mask_bottom_distance(mask, target_masks[other_id])
        if d < SUPPORT_DIST_PX:
            candidates.append((d, other_id))
    if candidates:
        candidates.sort()
        return Support.on_object(candidates[0][1])

    world = obj.world_mesh()
    wall_mask = target_masks.get("room.wall")
    for wall in ("wall0", "wall1", "wall2", "wall3"):
        n, d = scene.room.wall_plane(wall)
        dist = float((world.vertices @ n - d).min())
        if abs(dist) < SUPPORT_DIST_WORLD and wall_mask is not None:
            if _mask_bottom_distance(mask, wall_mask) < SUPPORT_DIST_PX:
                return Support.on_wall(wall)
    return Support.free()


def detect_all_supports(scene: Scene, target_masks: dict[str, np.ndarray]) -> None:
    """Assign supports for every object (sorted by id), floor pass first."""
    floor_mask = target_masks.get("room.floor")
    on_floor: set[str] = set()
    for obj in scene.sorted_objects():
        sup = detect_support(scene, obj.id, target_masks, floor_mask, set())
        if sup.kind == "floor":
            obj.support = sup
            on_floor.add(obj.id)
    for obj in scene.sorted_objects():
        if obj.id in on_floor:
            continue
        obj.support = detect_support(scene, obj.id, target_masks, floor_mask, on_floor)
    scene.project_supports()

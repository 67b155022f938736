"""Shared scene builders and synthetic fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from roomfit.imaging import ImageF
from roomfit.primitives import box_mesh, cylinder_mesh, table_mesh
from roomfit.scene import (
    AreaLight, Camera, Homogeneous, ObjectInstance, Pose, RoomBox, RoomPose,
    Scene, Support,
)


def simple_room_scene(width=64, height=64, vfov=60.0) -> Scene:
    """Empty box room seen from inside; camera slightly above mid-height."""
    scene = Scene(camera=Camera(vfov, width, height))
    scene.room = RoomBox(pose=RoomPose(translation=[0.0, 0.0, 0.0], yaw_deg=0.0,
                                       scale=[8.0, 3.0, 10.0]))
    return scene


def room_with_box(width=64, height=64, *, tx=0.0, yaw=20.0, scale=1.0,
                  size=(1.2, 0.8, 1.0)) -> Scene:
    scene = simple_room_scene(width, height)
    scene.objects.append(ObjectInstance(
        id="box1", asset_id="test_box", mesh=box_mesh(size=size),
        pose=Pose(translation=[tx, -0.9, -3.0], yaw_deg=yaw, scale=scale)))
    return scene


def down_light(lid="L0", radiance=5.0, y=1.45, cx=0.0, cz=-3.0, half=1.0) -> AreaLight:
    """Rectangular light emitting downward (toward -Y)."""
    quad = [[cx - half, y, cz - half], [cx + half, y, cz - half],
            [cx + half, y, cz + half], [cx - half, y, cz + half]]
    return AreaLight(id=lid, quad=quad, radiance=np.full(3, float(radiance)))


def grid_lights(scene: Scene, radiance=4.0, n=3, inset=0.004):
    """n x n downward grid over the room ceiling (0.8 linear shrink)."""
    cy = scene.room.ceiling_y() - inset
    cx, cz = scene.room.pose.translation[0], scene.room.pose.translation[2]
    sx, sz = scene.room.pose.scale[0], scene.room.pose.scale[2]
    out = []
    k = 0
    for i in range(n):
        for j in range(n):
            ccx = cx + (i - (n - 1) / 2) * sx / n
            ccz = cz + (j - (n - 1) / 2) * sz / n
            h = 0.8 * sx / (2 * n)
            g = 0.8 * sz / (2 * n)
            out.append(AreaLight(id=f"L{k}", quad=[[ccx - h, cy, ccz - g],
                                                   [ccx + h, cy, ccz - g],
                                                   [ccx + h, cy, ccz + g],
                                                   [ccx - h, cy, ccz + g]],
                                 radiance=np.full(3, float(radiance))))
            k += 1
    return out


def three_object_scene(width=256, height=256) -> Scene:
    scene = Scene(camera=Camera(55.0, width, height))
    scene.room = RoomBox(pose=RoomPose(translation=[0.0, 0.2, -1.0], yaw_deg=0.0,
                                       scale=[7.0, 3.2, 9.0]))
    scene.objects.append(ObjectInstance(
        id="table0", asset_id="t", mesh=table_mesh(),
        pose=Pose(translation=[-1.0, 0, -3.2], yaw_deg=15, scale=1.3),
        support=Support.on_floor()))
    scene.objects.append(ObjectInstance(
        id="boxy1", asset_id="b", mesh=box_mesh(size=(0.8, 0.9, 0.7)),
        pose=Pose(translation=[1.4, 0, -4.0], yaw_deg=-30, scale=1.2),
        support=Support.on_floor()))
    scene.objects.append(ObjectInstance(
        id="cyl2", asset_id="c", mesh=cylinder_mesh(radius=0.3, height=0.9),
        pose=Pose(translation=[0.3, 0, -2.2], yaw_deg=0, scale=1.0),
        support=Support.on_floor()))
    scene.project_supports()
    return scene


def image_from(plane) -> ImageF:
    return ImageF(np.asarray(plane, dtype=np.float64))


@pytest.fixture(scope="session")
def demo_assets(tmp_path_factory):
    """Asset directory with primitive models, thumbnails and dummy embeddings."""
    from tests.asset_factory import build_demo_assets

    root = tmp_path_factory.mktemp("assets")
    build_demo_assets(root)
    return root

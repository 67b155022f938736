import math

import numpy as np
import pytest

from roomfit.errors import SlotMismatch, StageNotReady
from roomfit.mesh import TriMesh, load_obj, save_obj
from roomfit.params import Stage, pack_params, unpack_params
from roomfit.primitives import box_mesh, room_box_mesh, table_mesh
from roomfit.scene import (
    Camera, ObjectInstance, Pose, RoomBox, RoomPose, Scene, Support, apply_pose,
)
from tests.conftest import room_with_box, simple_room_scene


class TestApplyPose:
    def test_identity(self):
        mesh = box_mesh()
        out = apply_pose(mesh, Pose(translation=[0, 0, 0]))
        assert np.array_equal(out.vertices, mesh.vertices)
        assert np.array_equal(out.faces, mesh.faces)

    def test_yaw_90_convention(self):
        mesh = TriMesh(np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]]),
                       np.array([[0, 1, 2]]))
        out = apply_pose(mesh, Pose(translation=[0, 0, 0], yaw_deg=90.0))
        assert np.allclose(out.vertices[0], [0, 0, -1], atol=1e-12)

    def test_scale_then_translate(self):
        mesh = TriMesh(np.array([[1.0, 1, 1], [0, 0, 0], [1, 0, 0]]),
                       np.array([[0, 1, 2]]))
        out = apply_pose(mesh, Pose(translation=[1, 0, 0], scale=2.0))
        assert np.allclose(out.vertices[0], [3, 2, 2])

    def test_winding_preserved(self):
        mesh = box_mesh()
        n0 = mesh.face_normals()
        out = apply_pose(mesh, Pose(translation=[5, 1, -2], yaw_deg=37.0, scale=1.7))
        n1 = out.face_normals()
        r = np.array([[math.cos(math.radians(37)), 0, math.sin(math.radians(37))],
                      [0, 1, 0],
                      [-math.sin(math.radians(37)), 0, math.cos(math.radians(37))]])
        assert np.allclose(n1, n0 @ r.T, atol=1e-12)


class TestPackParams:
    def test_room_stage_is_seven(self):
        vec = pack_params(simple_room_scene(), Stage.Room)
        assert len(vec.values) == 7

    def test_two_onfloor_objects_pack_eight(self):
        scene = simple_room_scene()
        for i in range(2):
            scene.objects.append(ObjectInstance(
                id=f"o{i}", asset_id="a", mesh=box_mesh(),
                pose=Pose(translation=[i, 0, -3]), support=Support.on_floor()))
        scene.project_supports()
        vec = pack_params(scene, Stage.Object)
        assert len(vec.values) == 8  # 2 horizontal translation + yaw + scale each

    def test_free_object_packs_five(self):
        scene = room_with_box()
        vec = pack_params(scene, Stage.Object)
        assert len(vec.values) == 5

    def test_wall_object_packs_four(self):
        scene = simple_room_scene()
        scene.objects.append(ObjectInstance(
            id="pic", asset_id="p", mesh=box_mesh(size=(0.6, 0.4, 0.05)),
            pose=Pose(translation=[0, 0, -4.9]), support=Support.on_wall("wall3")))
        scene.project_supports()
        vec = pack_params(scene, Stage.Object)
        assert len(vec.values) == 4

    def test_stage_not_ready(self):
        with pytest.raises(StageNotReady):
            pack_params(Scene(camera=Camera(60, 8, 8)), Stage.Room)
        with pytest.raises(StageNotReady):
            pack_params(simple_room_scene(), Stage.Object)

    def test_final_stage_requires_emitter(self):
        with pytest.raises(StageNotReady):
            pack_params(simple_room_scene(), Stage.Final)


class TestRoundTrip:
    def test_unpack_pack_identity_bitwise(self):
        scene = room_with_box()
        scene.room.pose.yaw_deg = 13.370000000000001
        scene.object_by_id("box1").pose.scale = 1.2345678901234567
        for stage in (Stage.Room, Stage.Object):
            vec = pack_params(scene, stage)
            back = unpack_params(scene, vec)
            assert back.room.pose.yaw_deg == scene.room.pose.yaw_deg
            assert np.array_equal(back.room.pose.translation, scene.room.pose.translation)
            assert np.array_equal(back.room.pose.scale, scene.room.pose.scale)
            o0, o1 = scene.object_by_id("box1"), back.object_by_id("box1")
            assert o1.pose.scale == o0.pose.scale
            assert o1.pose.yaw_deg == o0.pose.yaw_deg
            assert np.array_equal(o1.pose.translation, o0.pose.translation)

    def test_pack_unpack_pack_exact(self):
        scene = room_with_box()
        vec = pack_params(scene, Stage.Object)
        vec.values[:] = vec.values + 0.123
        back = pack_params(unpack_params(scene, vec), Stage.Object)
        assert np.array_equal(back.values, vec.values)

    def test_perturb_and_restore(self):
        scene = room_with_box()
        vec = pack_params(scene, Stage.Room)
        eps = 1e-3
        up = unpack_params(scene, type(vec)(vec.values + eps, vec.slots, vec.stage))
        down = pack_params(up, Stage.Room)
        down.values[:] = down.values - eps
        restored = unpack_params(up, down)
        assert np.allclose(restored.room.pose.translation,
                           scene.room.pose.translation, atol=1e-12)
        assert np.allclose(restored.room.pose.scale, scene.room.pose.scale,
                           atol=1e-12)

    def test_set_yaw_slot_only_changes_yaw(self):
        scene = room_with_box()
        vec = pack_params(scene, Stage.Object)
        vec.set("box1", "yaw", 0.0)
        out = unpack_params(scene, vec)
        assert out.object_by_id("box1").pose.yaw_deg == 0.0
        assert np.array_equal(out.object_by_id("box1").pose.translation,
                              scene.object_by_id("box1").pose.translation)

    def test_slot_mismatch(self):
        scene = room_with_box()
        vec = pack_params(scene, Stage.Object)
        other = simple_room_scene()
        other.objects.append(ObjectInstance(
            id="different", asset_id="a", mesh=box_mesh(),
            pose=Pose(translation=[0, 0, -3])))
        with pytest.raises(SlotMismatch):
            unpack_params(other, vec)


class TestSupportProjection:
    def _scene(self):
        scene = simple_room_scene()
        scene.objects.append(ObjectInstance(
            id="t", asset_id="t", mesh=table_mesh(),
            pose=Pose(translation=[0, 0.7, -3]), support=Support.on_floor()))
        return scene

    def test_scale_keeps_floor_contact(self):
        scene = self._scene()
        scene.project_supports()
        vec = pack_params(scene, Stage.Object)
        vec.set("t", "log_scale", 1.7)
        out = unpack_params(scene, vec)
        assert abs(out.object_by_id("t").world_bottom() - out.floor_y()) < 1e-9

    def test_projection_idempotent(self):
        scene = self._scene()
        scene.project_supports()
        t1 = scene.object_by_id("t").pose.translation.copy()
        scene.project_supports()
        assert np.array_equal(scene.object_by_id("t").pose.translation, t1)

    def test_stacked_object_follows_parent(self):
        scene = self._scene()
        scene.objects.append(ObjectInstance(
            id="z_cup", asset_id="c", mesh=box_mesh(size=(0.2, 0.2, 0.2)),
            pose=Pose(translation=[0, 2, -3]), support=Support.on_object("t")))
        scene.project_supports()
        parent = scene.object_by_id("t")
        child = scene.object_by_id("z_cup")
        assert child.world_bottom() == pytest.approx(parent.world_top(), abs=1e-9)
        vec = pack_params(scene, Stage.Object)
        vec.set("t", "log_scale", 1.5)
        out = unpack_params(scene, vec)
        assert out.object_by_id("z_cup").world_bottom() == pytest.approx(
            out.object_by_id("t").world_top(), abs=1e-9)

    def test_wall_object_snaps_to_plane(self):
        scene = simple_room_scene()
        scene.room.pose.yaw_deg = 25.0
        scene.objects.append(ObjectInstance(
            id="pic", asset_id="p", mesh=box_mesh(size=(0.6, 0.4, 0.05)),
            pose=Pose(translation=[0.5, 0.2, -3.0]), support=Support.on_wall("wall3")))
        scene.project_supports()
        n, d = scene.room.wall_plane("wall3")
        world = scene.object_by_id("pic").world_mesh()
        assert (world.vertices @ n - d).min() == pytest.approx(0.0, abs=1e-9)


class TestMeshIO:
    def test_obj_round_trip(self, tmp_path):
        mesh = table_mesh()
        save_obj(tmp_path / "m.obj", mesh)
        back = load_obj(tmp_path / "m.obj")
        assert back.num_faces == mesh.num_faces
        assert [g[0] for g in back.groups] == [g[0] for g in mesh.groups]
        assert np.allclose(np.sort(back.vertices, axis=0),
                           np.sort(mesh.vertices, axis=0), atol=1e-8)
        assert np.allclose(back.uv_faces, mesh.uv_faces, atol=1e-8)

    def test_groups_partition_validated(self):
        with pytest.raises(ValueError):
            TriMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]),
                    groups=[("a", 0, 2)])
        with pytest.raises(ValueError):
            TriMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]),
                    groups=[("a", 1, 1)])

    def test_room_mesh_welded(self):
        mesh = room_box_mesh()
        assert len(mesh.vertices) == 8
        border = [e for e, fs in mesh.edges().items() if len(fs) == 1]
        assert not border

"""Finite-difference validation of render_backward.

Central differences are evaluated through the same pack/unpack path the
optimizer uses, so support projections are part of the differentiated map.
"""

import math

import numpy as np
import pytest
import torch

from roomfit.params import ParamVector, Stage, pack_params, unpack_params
from roomfit.primitives import box_mesh, quad_mesh
from roomfit.render import RenderAdjoint, RenderConfig, render, render_backward
from roomfit.scene import (
    AreaLight, Camera, Emissive, Homogeneous, ObjectInstance, Pose, Procedural,
    Scene, UVTransform,
)
from tests.conftest import down_light, room_with_box


def shifted(scene, stage, owner, name, delta):
    vec = pack_params(scene, stage)
    vec.set(owner, name, vec.get(owner, name) + delta)
    return unpack_params(scene, vec)


def mask_loss(scene, cfg, key, weights):
    out = render(scene, cfg)
    return float((out.masks[key] * weights).sum()), out


def rgb_loss(scene, cfg, weights):
    out = render(scene, cfg)
    return float((out.rgb * weights).sum()), out


def fd_central(scene, stage, owner, name, delta, loss_fn):
    lp, _ = loss_fn(shifted(scene, stage, owner, name, +delta))
    lm, _ = loss_fn(shifted(scene, stage, owner, name, -delta))
    return (lp - lm) / (2 * delta)


class TestBoundaryGradients:
    def test_square_sliding_off_target_iou(self):
        """The spec's canonical case: pure mask IoU, gradient only from the
        boundary term, delta = 1e-3 world units, 5% relative."""
        def build(tx=0.0):
            scene = Scene(camera=Camera(60.0, 128, 128))
            scene.objects.append(ObjectInstance(
                id="sq", asset_id="a", mesh=box_mesh(size=(1.0, 1.0, 0.1)),
                pose=Pose(translation=[tx, 0.0, -1.4])))
            return scene

        cfg = RenderConfig(width=128, height=128, spp=256, seed=4,
                           edge_samples_per_silhouette_px=4)
        target = render(build(tx=0.25), cfg).masks["sq"]
        t_t = torch.from_numpy(target)

        def iou_loss(scene):
            out = render(scene, cfg)
            leaf = torch.tensor(out.masks["sq"], requires_grad=True)
            inter = torch.minimum(leaf, t_t).sum()
            union = torch.maximum(leaf, t_t).sum()
            iou = inter / union
            iou.backward()
            return float(iou), out, leaf.grad.numpy()

        scene = build()
        val, out, adj = iou_loss(scene)
        grads = render_backward(scene, cfg, Stage.Object,
                                RenderAdjoint(masks={"sq": adj}), out)
        vec = pack_params(scene, Stage.Object)
        analytic = grads[[i for i, s in enumerate(vec.slots)
                          for _ in range(s.size) if s.name == "tx"]][0]

        d = 1e-3
        lp = iou_loss(shifted(scene, Stage.Object, "sq", "tx", +d))[0]
        lm = iou_loss(shifted(scene, Stage.Object, "sq", "tx", -d))[0]
        fd = (lp - lm) / (2 * d)
        assert abs(fd) > 1e-3
        assert abs(analytic - fd) / abs(fd) < 0.05

    def test_translation_scale_against_fd(self):
        rng = np.random.default_rng(0)
        W = rng.normal(size=(64, 64))
        cfg = RenderConfig(width=64, height=64, spp=256, seed=3,
                           edge_samples_per_silhouette_px=4)
        scene = room_with_box(yaw=20.0)
        loss = lambda s: mask_loss(s, cfg, "box1", W)
        _, out = loss(scene)
        grads = render_backward(scene, cfg, Stage.Object,
                                RenderAdjoint(masks={"box1": W}), out)
        vec = pack_params(scene, Stage.Object)

        def slot_grad(name):
            for s in vec.slots:
                if s.owner == "box1" and s.name == name:
                    return grads[s.index]
            raise KeyError(name)

        fd_tx = fd_central(scene, Stage.Object, "box1", "tx", 2e-3, loss)
        assert abs(slot_grad("tx") - fd_tx) / abs(fd_tx) < 0.06
        fd_sc = fd_central(scene, Stage.Object, "box1", "log_scale", 2e-3, loss)
        assert abs(slot_grad("log_scale") - fd_sc) / abs(fd_sc) < 0.06

    def test_depth_interior_gradient_exact(self):
        # full-frame quad: no silhouette in frame, d(depth)/d(tz) = -1 everywhere
        quad = quad_mesh([[-9, -9, 0], [9, -9, 0], [9, 9, 0], [-9, 9, 0]])
        scene = Scene(camera=Camera(90.0, 32, 32))
        scene.objects.append(ObjectInstance(id="q", asset_id="a", mesh=quad,
                                            pose=Pose(translation=[0, 0, -2])))
        rng = np.random.default_rng(1)
        W = rng.normal(size=(32, 32))
        cfg = RenderConfig(width=32, height=32, spp=16, seed=0)
        out = render(scene, cfg)
        grads = render_backward(scene, cfg, Stage.Object,
                                RenderAdjoint(depth=W), out)
        vec = pack_params(scene, Stage.Object)
        tz_idx = [s.index for s in vec.slots if s.name == "tz"][0]
        # depth = -z of the hit point: the exact derivative is -sum(W)
        assert grads[tz_idx] == pytest.approx(-W.sum(), rel=1e-9)

    def test_depth_boundary_gradient_against_fd(self):
        # half-frame near quad sliding across a static far backdrop: the
        # depth discontinuity at the vertical edge drives the gradient
        near = quad_mesh([[-4, -4, 0], [0.1, -4, 0], [0.1, 4, 0], [-4, 4, 0]])
        far = quad_mesh([[-9, -9, 0], [9, -9, 0], [9, 9, 0], [-9, 9, 0]])
        scene = Scene(camera=Camera(90.0, 128, 128))
        scene.objects.append(ObjectInstance(id="near", asset_id="a", mesh=near,
                                            pose=Pose(translation=[0, 0, -1])))
        scene.objects.append(ObjectInstance(id="zfar", asset_id="b", mesh=far,
                                            pose=Pose(translation=[0, 0, -3])))
        rng = np.random.default_rng(2)
        W = rng.normal(size=(128, 128))
        cfg = RenderConfig(width=128, height=128, spp=256, seed=3,
                           edge_samples_per_silhouette_px=4)

        def loss(s):
            out = render(s, cfg)
            return float((out.depth * W).sum()), out

        _, out = loss(scene)
        grads = render_backward(scene, cfg, Stage.Object,
                                RenderAdjoint(depth=W), out)
        vec = pack_params(scene, Stage.Object)
        tx_idx = [s.index for s in vec.slots
                  if s.owner == "near" and s.name == "tx"][0]
        fd = fd_central(scene, Stage.Object, "near", "tx", 5e-3, loss)
        assert abs(fd) > 1.0
        assert abs(grads[tx_idx] - fd) / abs(fd) < 0.05

    def test_room_pose_gradient_against_fd(self):
        # smooth weights keep the finite-difference oracle low-noise
        yy, xx = np.mgrid[0:64, 0:64]
        W = 0.5 + xx / 128.0 + yy / 96.0
        cfg = RenderConfig(width=64, height=64, spp=256, seed=6,
                           edge_samples_per_silhouette_px=4)
        scene = room_with_box(yaw=0.0)
        scene.objects.clear()
        scene.room.pose.yaw_deg = 5.0
        loss = lambda s: mask_loss(s, cfg, "room.floor", W)
        _, out = loss(scene)
        grads = render_backward(scene, cfg, Stage.Room,
                                RenderAdjoint(masks={"room.floor": W}), out)
        vec = pack_params(scene, Stage.Room)
        for name, delta in (("ty", 4e-3), ("tz", 4e-3), ("yaw", 0.1)):
            idx = [s.index for s in vec.slots if s.name == name][0]
            fd = fd_central(scene, Stage.Room, "room", name, delta, loss)
            assert abs(fd) > 1e-3
            assert abs(grads[idx] - fd) / abs(fd) < 0.06


class TestInteriorGradients:
    def _plane_under_light(self, specular=0.0, roughness=0.5):
        scene = Scene(camera=Camera(60.0, 32, 32))
        floor = quad_mesh([[-6, 0, 6], [6, 0, 6], [6, 0, -6], [-6, 0, -6]])
        scene.objects.append(ObjectInstance(
            id="plane", asset_id="p", mesh=floor, pose=Pose(translation=[0, -1, 0]),
            materials={"default": Homogeneous(albedo=[0.5, 0.5, 0.5],
                                              roughness=roughness,
                                              specular=specular)}))
        scene.lights.append(down_light(y=1.0, cz=-3.0, half=0.25, radiance=6.0))
        return scene

    def test_albedo_gradient_is_exact_irradiance_factor(self):
        scene = self._plane_under_light(specular=0.0)
        cfg = RenderConfig(width=32, height=32, spp=4, seed=1, mode="shaded",
                           shade_spp=4)
        W = np.full((32, 32, 3), 1.0)

        _, out = rgb_loss(scene, cfg, W)
        grads = render_backward(scene, cfg, Stage.Final, RenderAdjoint(rgb=W), out)
        vec = pack_params(scene, Stage.Final)
        alb = [s for s in vec.slots if s.name == "albedo"
               and s.owner == "material:plane/default"][0]

        # rgb is exactly linear in albedo with specular 0, so FD is exact
        d = 0.05
        lp, _ = rgb_loss(shifted(scene, Stage.Final, alb.owner, "albedo",
                                 np.array([d, 0, 0])), cfg, W)
        lm, _ = rgb_loss(shifted(scene, Stage.Final, alb.owner, "albedo",
                                 np.array([-d, 0, 0])), cfg, W)
        fd = (lp - lm) / (2 * d)
        assert abs(grads[alb.index] - fd) <= 1e-4 * max(1.0, abs(fd))

        # sanity vs a point-source closed form at the light's floor nadir
        light = scene.lights[0]
        p = np.array([0.0, -1.0, -3.0])  # hit point under the light
        r2 = np.sum((light.quad.mean(axis=0) - p) ** 2)
        analytic = light.radiance[0] * light.area() / (np.pi * r2)
        f = scene.camera.focal_px
        v = int(16 + f * 1.0 / 3.0)  # nadir pixel row
        nadir = out.rgb[v, 16, 0] / 0.5  # d rgb / d albedo at that pixel
        assert nadir == pytest.approx(analytic, rel=0.1)

    @pytest.mark.parametrize("name,delta", [("roughness", 1e-3), ("specular", 1e-3)])
    def test_brdf_param_gradients(self, name, delta):
        scene = self._plane_under_light(specular=0.3, roughness=0.4)
        cfg = RenderConfig(width=32, height=32, spp=4, seed=1, mode="shaded",
                           shade_spp=4)
        rng = np.random.default_rng(5)
        W = rng.random((32, 32, 3))
        _, out = rgb_loss(scene, cfg, W)
        grads = render_backward(scene, cfg, Stage.Final, RenderAdjoint(rgb=W), out)
        vec = pack_params(scene, Stage.Final)
        slot = [s for s in vec.slots if s.name == name
                and s.owner == "material:plane/default"][0]
        fd = fd_central(scene, Stage.Final, slot.owner, name, delta,
                        lambda s: rgb_loss(s, cfg, W))
        assert abs(grads[slot.index] - fd) / max(abs(fd), 1e-9) < 0.02

    def test_radiance_gradient_linear_exact(self):
        scene = self._plane_under_light()
        cfg = RenderConfig(width=32, height=32, spp=4, seed=1, mode="shaded",
                           shade_spp=4)
        W = np.full((32, 32, 3), 1.0 / 3072)
        _, out = rgb_loss(scene, cfg, W)
        grads = render_backward(scene, cfg, Stage.Final, RenderAdjoint(rgb=W), out)
        vec = pack_params(scene, Stage.Final)
        slot = [s for s in vec.slots if s.owner == "light:L0"][0]
        d = 0.5
        lp, _ = rgb_loss(shifted(scene, Stage.Final, slot.owner, "radiance",
                                 np.array([d, 0, 0])), cfg, W)
        lm, _ = rgb_loss(shifted(scene, Stage.Final, slot.owner, "radiance",
                                 np.array([-d, 0, 0])), cfg, W)
        fd = (lp - lm) / (2 * d)
        assert grads[slot.index] == pytest.approx(fd, rel=1e-6, abs=1e-10)

    def test_disabled_light_gradient_zero(self):
        scene = self._plane_under_light()
        scene.lights.append(down_light(lid="L_off", radiance=3.0))
        scene.lights[-1].enabled = False
        cfg = RenderConfig(width=16, height=16, spp=4, seed=1, mode="shaded",
                           shade_spp=2)
        W = np.ones((16, 16, 3))
        _, out = rgb_loss(scene, cfg, W)
        grads = render_backward(scene, cfg, Stage.Final, RenderAdjoint(rgb=W), out)
        vec = pack_params(scene, Stage.Final)
        slot = [s for s in vec.slots if s.owner == "light:L_off"][0]
        assert np.array_equal(grads[slot.range()], np.zeros(3))

    def test_emissive_radiance_gradient(self):
        scene = room_with_box()
        scene.object_by_id("box1").materials["body"] = Emissive(radiance=[1.0, 1.0, 1.0])
        cfg = RenderConfig(width=32, height=32, spp=4, seed=0, mode="shaded",
                           shade_spp=2)
        W = np.full((32, 32, 3), 1.0)
        _, out = rgb_loss(scene, cfg, W)
        grads = render_backward(scene, cfg, Stage.Final, RenderAdjoint(rgb=W), out)
        vec = pack_params(scene, Stage.Final)
        slot = [s for s in vec.slots if s.owner == "material:box1/body"][0]
        # emission enters linearly, so central differences are exact
        d = 0.25
        lp, _ = rgb_loss(shifted(scene, Stage.Final, slot.owner, "radiance",
                                 np.array([d, 0, 0])), cfg, W)
        lm, _ = rgb_loss(shifted(scene, Stage.Final, slot.owner, "radiance",
                                 np.array([-d, 0, 0])), cfg, W)
        fd = (lp - lm) / (2 * d)
        assert grads[slot.index] == pytest.approx(fd, rel=1e-6)

    def test_uv_scale_gradient(self):
        # a smooth low-frequency pattern keeps the finite-difference oracle
        # meaningful (high-octave noise aliases under any usable delta)
        from roomfit.matgraph import GraphLibrary, validate_graph
        lib = GraphLibrary([validate_graph({
            "id": "smooth_test",
            "nodes": [
                {"id": "pat", "kind": "checker", "structural": {"tiles": 1},
                 "params": {"softness": [0.005, 0.25, 0.25]}},
                {"id": "albedo", "kind": "color_ramp", "inputs": {"t": "pat"},
                 "structural": {"positions": [0.0, 1.0]},
                 "params": {"c0_r": [0, 1, 0.1], "c0_g": [0, 1, 0.2], "c0_b": [0, 1, 0.3],
                            "c1_r": [0, 1, 0.9], "c1_g": [0, 1, 0.8], "c1_b": [0, 1, 0.7]}},
                {"id": "rough", "kind": "levels", "inputs": {"input": "pat"},
                 "params": {"out_lo": [0, 1, 0.5], "out_hi": [0, 1, 0.6]}},
            ],
            "outputs": {"albedo": "albedo", "roughness": "rough"},
        })])
        scene = self._plane_under_light()
        scene.object_by_id("plane").materials["default"] = Procedural(
            "smooth_test", {}, UVTransform(scale=1.3))
        cfg = RenderConfig(width=32, height=32, spp=4, seed=1, mode="shaded",
                           shade_spp=4)
        rng = np.random.default_rng(8)
        W = rng.random((32, 32, 3))

        def loss(s):
            out = render(s, cfg, lib)
            return float((out.rgb * W).sum()), out

        _, out = loss(scene)
        grads = render_backward(scene, cfg, Stage.Final, RenderAdjoint(rgb=W),
                                out, lib)
        vec = pack_params(scene, Stage.Final, lib)
        slot = [s for s in vec.slots if s.name == "uv_scale"][0]

        def shifted_uv(d):
            v = pack_params(scene, Stage.Final, lib)
            v.set(slot.owner, "uv_scale", v.get(slot.owner, "uv_scale") + d)
            from roomfit.params import unpack_params
            return unpack_params(scene, v, lib)

        d = 2e-3
        fd = (loss(shifted_uv(+d))[0] - loss(shifted_uv(-d))[0]) / (2 * d)
        assert abs(fd) > 1e-3
        assert abs(grads[slot.index] - fd) / abs(fd) < 0.05

    def test_mat_param_gradient(self):
        scene = self._plane_under_light()
        from roomfit.matgraph import default_library
        lib = default_library()
        scene.object_by_id("plane").materials["default"] = Procedural(
            "wood_01", lib.defaults("wood_01"), UVTransform(scale=2.0))
        cfg = RenderConfig(width=32, height=32, spp=4, seed=1, mode="shaded",
                           shade_spp=4)
        W = np.full((32, 32, 3), 1.0)
        _, out = rgb_loss(scene, cfg, W)
        grads = render_backward(scene, cfg, Stage.Final, RenderAdjoint(rgb=W), out)
        vec = pack_params(scene, Stage.Final)
        slot = [s for s in vec.slots if s.name == "p:albedo.c1_r"][0]
        fd = fd_central(scene, Stage.Final, slot.owner, "p:albedo.c1_r", 1e-3,
                        lambda s: rgb_loss(s, cfg, W))
        assert abs(grads[slot.index] - fd) / max(abs(fd), 1e-9) < 0.02

import numpy as np
import pytest

from roomfit.errors import CropTooSmall, ShapeMismatch
from roomfit.imaging import ImageF, Rect, area_resample
from roomfit.matgraph import default_library
from roomfit.optimize import (
    AdamState, adam_step, auto_crop_pairs, descriptor_distance, gram_descriptor,
    init_lights, init_radiance, loss_box, loss_obj,
)
from roomfit.optimize.stages import ObjectTargets, RoomTargets
from roomfit.params import Stage, pack_params, unpack_params
from roomfit.render import RenderAdjoint, RenderConfig, render, render_backward
from roomfit.scene import Emissive
from tests.conftest import grid_lights, room_with_box, simple_room_scene, three_object_scene


def texture_crop(gid: str, size, offset=(0.0, 0.0)):
    """Rasterize a built-in texture patch (albedo only) as a crop image."""
    import torch
    lib = default_library()
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w]
    uv = np.stack([(xs.reshape(-1) + 0.5) / 128 + offset[0],
                   (ys.reshape(-1) + 0.5) / 128 + offset[1]], axis=1)
    with torch.no_grad():
        tex = lib.eval_uv(gid, {}, torch.from_numpy(uv))
    return ImageF(tex["albedo"].numpy().reshape(h, w, 3))


class TestGramDescriptor:
    def test_length_independent_of_size(self):
        d1 = gram_descriptor(texture_crop("wood_01", (32, 32)))
        d2 = gram_descriptor(texture_crop("wood_01", (100, 200)))
        assert d1.shape == (1280,) and d2.shape == (1280,)

    def test_constant_crop_derivative_energy_zero(self):
        d = gram_descriptor(ImageF(np.full((32, 32, 3), 0.43)))
        gram0 = d[:256].reshape(16, 16)
        # filters 0..4 are derivative/Laplacian kernels: zero response on a constant
        assert np.abs(gram0[:5, :]).max() < 1e-6
        assert np.abs(gram0[:, :5]).max() < 1e-6

    def test_shift_stationarity(self):
        base = gram_descriptor(texture_crop("brick_01", (64, 64)))
        shifted = gram_descriptor(texture_crop("brick_01", (64, 64),
                                               offset=(8 / 128, 0)))
        other = gram_descriptor(texture_crop("checker_tile_01", (64, 64)))
        d_shift = np.linalg.norm(base - shifted)
        d_other = np.linalg.norm(base - other)
        assert d_shift < 0.05 * d_other

    def test_size_invariance_across_builtins(self):
        lib = default_library()
        ids = lib.ids()[:6]
        descs_small = {g: gram_descriptor(texture_crop(g, (48, 48))) for g in ids}
        descs_large = {g: gram_descriptor(texture_crop(g, (96, 96))) for g in ids}
        for g in ids:
            self_d = descriptor_distance(descs_small[g], descs_large[g])
            for other in ids:
                if other != g:
                    assert self_d < descriptor_distance(descs_small[g],
                                                        descs_large[other])

    def test_crop_too_small(self):
        with pytest.raises(CropTooSmall):
            gram_descriptor(ImageF(np.zeros((8, 8, 3))))


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = np.array([0.3, 0.5])
        st, out = adam_step(AdamState.zeros(2), p, np.zeros(2), 0.1,
                            np.zeros(2), np.ones(2))
        assert np.array_equal(out, p)

    def test_first_step_magnitude_is_lr(self):
        for g in (1e-3, 1.0, 37.0):
            st, out = adam_step(AdamState.zeros(1), np.array([0.5]),
                                np.array([g]), 0.01, np.array([-10.0]),
                                np.array([10.0]))
            # bias-corrected first step: lr * g / (|g| + eps) ~ lr
            assert abs(out[0] - (0.5 - 0.01)) < 1e-6

    def test_clamped_at_bound(self):
        st, out = adam_step(AdamState.zeros(1), np.array([1.0]),
                            np.array([-5.0]), 0.1, np.array([0.0]),
                            np.array([1.0]))
        assert out[0] == 1.0

    def test_log_slots_stay_positive(self):
        st = AdamState.zeros(1)
        p = np.array([1e-2])
        for _ in range(50):
            st, p = adam_step(st, p, np.array([5.0]), 0.5, np.array([1e-4]),
                              np.array([1e4]), log_mask=np.array([True]))
        assert p[0] >= 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            adam_step(AdamState.zeros(2), np.zeros(2), np.zeros(3), 0.1,
                      np.zeros(2), np.ones(2))


def room_targets_from(scene, cfg):
    out = render(scene, cfg)
    masks = {k: out.masks[k] for k in ("room.wall", "room.floor", "room.ceiling")}
    region = sum(masks.values()) > 0.5
    d = out.depth
    lo, hi = d[region].min(), d[region].max()
    dn = np.zeros_like(d)
    dn[region] = (d[region] - lo) / (hi - lo)
    return RoomTargets(masks=masks, depth_norm=dn, room_region=region)


class TestLossBox:
    def test_exact_match_is_minus_three(self):
        scene = simple_room_scene()
        cfg = RenderConfig(width=48, height=48, spp=16, seed=2)
        targets = room_targets_from(scene, cfg)
        out = render(scene, cfg)
        res = loss_box(out, targets)
        assert res.total == pytest.approx(-3.0, abs=1e-9)

    def test_perturbed_yaw_increases_loss(self):
        scene = simple_room_scene()
        cfg = RenderConfig(width=48, height=48, spp=16, seed=2)
        targets = room_targets_from(scene, cfg)
        base = loss_box(render(scene, cfg), targets).total
        bent = scene.clone()
        bent.room.pose.yaw_deg += 5.0
        worse = loss_box(render(bent, cfg), targets).total
        assert worse > base + 1e-3

    def test_gradient_near_zero_at_truth(self):
        scene = simple_room_scene()
        cfg = RenderConfig(width=64, height=64, spp=256, seed=2)
        targets = room_targets_from(scene, cfg)
        out = render(scene, cfg)
        res = loss_box(out, targets)
        grads = render_backward(scene, cfg, Stage.Room, res.adjoint, out)
        assert np.abs(grads).max() < 1e-3


class TestLossObj:
    def _targets(self, scene, cfg):
        out = render(scene, cfg)
        d = out.depth
        lo, hi = d.min(), d.max()
        return ObjectTargets(
            object_masks={o.id: out.masks[o.id] for o in scene.objects},
            depth_norm=(d - lo) / (hi - lo))

    def test_identical_scene_zero(self):
        scene = three_object_scene(96, 96)
        cfg = RenderConfig(width=96, height=96, spp=16, seed=5)
        targets = self._targets(scene, cfg)
        res = loss_obj(render(scene, cfg), targets)
        assert res.total == pytest.approx(0.0, abs=1e-12)

    def test_translated_object_pyramid_nonzero_all_levels(self):
        scene = three_object_scene(96, 96)
        cfg = RenderConfig(width=96, height=96, spp=16, seed=5)
        targets = self._targets(scene, cfg)
        moved = scene.clone()
        moved.object_by_id("boxy1").pose.translation[0] += 0.9  # ~10% of frame
        moved.project_supports()
        res = loss_obj(render(moved, cfg), targets)
        # four pyramid levels all contribute
        assert res.terms["pyramid.boxy1"] > 0
        out = render(moved, cfg)
        from roomfit.optimize.torchops import gaussian_pyramid_t
        import torch
        pr = gaussian_pyramid_t(torch.from_numpy(out.masks["boxy1"]))
        pt = gaussian_pyramid_t(torch.from_numpy(targets.object_masks["boxy1"]))
        for a, b in zip(pr, pt):
            assert float((a - b).abs().mean()) > 1e-5


class TestInitLights:
    def _posed(self):
        scene = room_with_box(yaw=0.0)
        cfg = RenderConfig(width=96, height=96, spp=8, seed=0)
        return scene, render(scene, cfg)

    def test_grid_culled_and_sized(self):
        scene, out = self._posed()
        lit = init_lights(scene, out)
        grid = [l for l in lit.lights if l.id.startswith("ceil_")]
        assert 0 < len(grid) <= 9
        sx, sz = scene.room.pose.scale[0], scene.room.pose.scale[2]
        cell_area = (sx / 3) * (sz / 3)
        for light in grid:
            assert light.area() == pytest.approx(0.64 * cell_area, rel=1e-9)
        # lights visible in frame were removed: none intersects the frustum
        from roomfit.optimize.lights import _quad_intersects_frustum
        for light in grid:
            assert not _quad_intersects_frustum(light.quad, scene.camera)

    def test_back_wall_light_behind_camera(self):
        scene, out = self._posed()
        lit = init_lights(scene, out)
        back = [l for l in lit.lights if l.id == "back_wall"]
        assert len(back) == 1
        assert (back[0].quad[:, 2] > 0).all()  # behind the camera plane

    def test_no_invisible_wall_lights_when_all_visible(self):
        # wide FOV, shallow room: every wall except the behind-camera one is
        # clearly visible
        scene = simple_room_scene(96, 96, vfov=110.0)
        scene.room.pose.translation[2] = -2.2
        scene.room.pose.scale = np.array([8.0, 3.0, 6.0])
        out = render(scene, RenderConfig(width=96, height=96, spp=8, seed=0))
        for i in (0, 1, 2):
            assert out.part_masks[("room", f"wall{i}")].sum() > 200
        lit = init_lights(scene, out)
        assert [l for l in lit.lights if l.id.startswith("invis_")] == []

    def test_side_walls_outside_view_get_lights(self):
        scene = simple_room_scene(96, 96, vfov=40.0)
        out = render(scene, RenderConfig(width=96, height=96, spp=8, seed=0))
        lit = init_lights(scene, out)
        invis = sorted(l.id for l in lit.lights if l.id.startswith("invis_"))
        assert invis == ["invis_wall0", "invis_wall1"]

    def test_lamp_largest_part_becomes_emissive(self):
        from roomfit.primitives import lamp_mesh
        from roomfit.scene import ObjectInstance, Pose
        scene = simple_room_scene(96, 96)
        scene.objects.append(ObjectInstance(
            id="lamp0", asset_id="lamp", mesh=lamp_mesh(),
            pose=Pose(translation=[0.8, -1.5, -3.0])))
        out = render(scene, RenderConfig(width=96, height=96, spp=8, seed=0))
        lit = init_lights(scene, out, lamp_ids=["lamp0"])
        mats = lit.object_by_id("lamp0").materials
        emissive = [g for g, m in mats.items() if isinstance(m, Emissive)]
        assert emissive == ["shade"]  # the shade dominates the rendered mask


class TestInitRadiance:
    def test_single_render_and_grid_pick(self):
        scene = room_with_box()
        scene.lights = grid_lights(scene, radiance=1.0)
        calls = []

        def render_fn(s):
            calls.append(1)
            cfg = RenderConfig(width=48, height=48, spp=4, seed=0,
                               mode="shaded", shade_spp=2)
            return render(s, cfg).rgb

        unit_rgb = render_fn(scene.clone())
        calls.clear()
        target = ImageF(np.clip(unit_rgb * 4.0, 0, None))
        lit, mult = init_radiance(scene, target, render_fn)
        assert len(calls) == 1  # exactly one render
        grid = np.logspace(-2, 2, 32)
        assert mult == grid[np.argmin(np.abs(grid - 4.0))]
        for light in lit.lights:
            assert np.allclose(light.radiance, mult)

    def test_unit_target_picks_one(self):
        scene = room_with_box()
        scene.lights = grid_lights(scene, radiance=1.0)

        def render_fn(s):
            cfg = RenderConfig(width=48, height=48, spp=4, seed=0,
                               mode="shaded", shade_spp=2)
            return render(s, cfg).rgb

        target = ImageF(np.clip(render_fn(scene.clone()), 0, None))
        _, mult = init_radiance(scene, target, render_fn)
        grid = np.logspace(-2, 2, 32)
        assert mult == grid[np.argmin(np.abs(grid - 1.0))]


class TestAutoCropPairs:
    def test_disjoint_masks_give_nothing(self):
        part = np.zeros((64, 64))
        part[:32] = 1.0
        target = np.zeros((64, 64))
        target[40:] = 1.0
        pairs = auto_crop_pairs({("obj", "g"): part}, {"obj": target})
        assert pairs == []

    def test_full_overlap_first_crop_is_full_square(self):
        m = np.zeros((128, 128))
        m[10:110, 14:114] = 1.0
        pairs = auto_crop_pairs({("obj", "g"): m}, {"obj": m.copy()})
        assert pairs[0].target_rect == Rect(14, 10, 100, 100)
        assert pairs[0].render_rect == pairs[0].target_rect

    def test_at_most_three_disjoint(self):
        m = np.ones((256, 256))
        pairs = auto_crop_pairs({("obj", "g"): m}, {"obj": m.copy()})
        assert 1 <= len(pairs) <= 3
        for i, a in enumerate(pairs):
            for b in pairs[i + 1:]:
                ax, ay = a.target_rect.x, a.target_rect.y
                bx, by = b.target_rect.x, b.target_rect.y
                no_overlap = (ax + a.target_rect.w <= bx or bx + b.target_rect.w <= ax
                              or ay + a.target_rect.h <= by or by + b.target_rect.h <= ay)
                assert no_overlap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visplan.geom3d import CameraIntrinsics, Pose, Rotation, look_at
from visplan.meshkit import Occluders, TriMesh, box_mesh, quad_mesh, segments_hit_bruteforce
from visplan.visibility import (
    DegenerateInputWarning,
    PerturbationConfig,
    QueryPointSet,
    RewardModel,
    RewardWeights,
    composite_reward,
    margin_from_samples,
    point_visibility,
    r_close,
    r_marg,
    r_safe,
    r_vis,
)

INTR = CameraIntrinsics(fx=200.0, fy=200.0, cx=100.0, cy=100.0, width=200, height=200)
CAM = Pose.identity()  # looking down +z
E = np.exp(-1.0)


def qps(points, valid=None):
    return QueryPointSet(np.asarray(points, dtype=float), valid)


def wall(z=1.0, half=0.5, x0=0.0):
    return quad_mesh([x0, 0, z], [2 * half, 2 * half])


class TestPointVisibility:
    def test_empty_scene(self):
        assert point_visibility(CAM, INTR, [0, 0, 2]) == 1

    def test_behind_camera(self):
        assert point_visibility(CAM, INTR, [0, 0, -2]) == 0

    def test_outside_image(self):
        assert point_visibility(CAM, INTR, [5, 0, 2]) == 0

    def test_wall_occludes(self):
        occ = Occluders.build([wall()])
        assert point_visibility(CAM, INTR, [0, 0, 2], occ) == 0
        assert segments_hit_bruteforce(wall(), [0, 0, 0], [0, 0, 2])[0]

    def test_robot_mesh_selected_by_step(self):
        occ = Occluders.build([], [TriMesh(), wall()])
        assert point_visibility(CAM, INTR, [0, 0, 2], occ, step=0) == 1
        assert point_visibility(CAM, INTR, [0, 0, 2], occ, step=1) == 0


class TestRVis:
    def test_all_visible(self):
        q = qps([[[0, 0, 2], [0.2, 0.1, 3]]] * 3)
        assert r_vis([CAM] * 3, q, INTR) == 1.0

    def test_all_behind(self):
        q = qps([[[0, 0, -2], [0.2, 0.1, -3]]] * 3)
        assert r_vis([CAM] * 3, q, INTR) == 0.0

    def test_half_occluded(self):
        # wall covers x in [-0.3, 0.3] at z=1; second point's LOS passes at x=0.45
        occ = Occluders.build([wall(half=0.3)])
        q = qps([[[0, 0, 2], [0.9, 0, 2]]])
        assert r_vis([CAM], q, INTR, occ) == 0.5

    def test_masked_points_excluded(self):
        q = qps([[[0, 0, 2], [0, 0, -2]]], valid=[[True, False]])
        assert r_vis([CAM], q, INTR) == 1.0

    def test_all_masked_flags(self):
        q = qps([[[0, 0, 2]]], valid=[[False]])
        with pytest.warns(DegenerateInputWarning):
            assert r_vis([CAM], q, INTR) == 0.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1, 1, (2, 6, 3)) + [0, 0, 2]
        occ = Occluders.build([wall(half=0.3)])
        perm = rng.permutation(6)
        assert r_vis([CAM] * 2, qps(pts), INTR, occ) == r_vis([CAM] * 2, qps(pts[:, perm]), INTR, occ)

    @pytest.mark.parametrize("seed", range(100))
    def test_removing_meshes_never_lowers(self, seed):
        rng = np.random.default_rng(seed)
        meshes = [box_mesh(rng.uniform(-0.6, 0.6, 3) + [0, 0, 1.2], rng.uniform(0.05, 0.4, 3))
                  for _ in range(4)]
        pts = rng.uniform(-0.8, 0.8, (2, 5, 3)) + [0, 0, 2.2]
        cams = [look_at(rng.uniform(-0.3, 0.3, 3), [0, 0, 2]) for _ in range(2)]
        full = r_vis(cams, qps(pts), INTR, Occluders.build(meshes))
        drop = rng.integers(4)
        fewer = r_vis(cams, qps(pts), INTR, Occluders.build(meshes[:drop] + meshes[drop + 1:]))
        assert fewer >= full


class TestRClose:
    def test_coincident(self):
        assert r_close([Pose([1, 2, 3])], qps([[[1, 2, 3]]])) == 1.0

    def test_unit_distance(self):
        assert abs(r_close([CAM] * 2, qps([[[1, 0, 0]], [[0, 1, 0]]])) - E) < 1e-12

    def test_two_points(self):
        assert abs(r_close([CAM], qps([[[0, 0, 0], [0, 0, 1]]])) - (1 + E) / 2) < 1e-12


class TestRSafe:
    def test_coincident(self):
        assert r_safe([CAM] * 3, np.zeros((3, 3))) == -1.0

    def test_closed_form(self):
        assert abs(r_safe([CAM] * 2, [[0.1, 0, 0], [0, 0, -0.1]], sigma_safe=0.1) + E) < 1e-12

    def test_far_limit(self):
        v = r_safe([CAM], [[100.0, 0, 0]])
        assert -1e-12 < v < 0 or v == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            r_safe([CAM] * 2, np.zeros((3, 3)))


class TestRMarg:
    def test_zero_noise_equals_rvis(self):
        occ = Occluders.build([wall()])
        q = qps([[[0, 0, 2], [1.5, 0, 2], [0.3, 0.2, 3]]] * 2)
        cfg = PerturbationConfig(J=4, sigma_pos=0.0, sigma_rot=0.0)
        assert r_marg([CAM] * 2, q, INTR, occ, cfg) == r_vis([CAM] * 2, q, INTR, occ)

    def test_all_visible_copies(self):
        q = qps([[[0, 0, 3]]])
        assert r_marg([CAM], q, INTR, None, PerturbationConfig(J=5, seed=3)) == 1.0

    def test_formula(self):
        # {1, 0}: min 0, population variance 0.25
        assert margin_from_samples([1.0, 0.0], 0.1) == 0.0
        assert margin_from_samples([1.0, 0.5], 0.1) == pytest.approx(0.5 * (1 - 0.1 * 0.0625))
        assert margin_from_samples([0.7], 0.1) == 0.7

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_bounded_by_best_copy(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, rng.integers(1, 8))
        assert margin_from_samples(x, 0.1) <= x.max()

    def test_seeded_determinism(self):
        occ = Occluders.build([wall(half=0.1)])
        q = qps([[[0.05, 0, 2], [0.12, 0.05, 2.5]]])
        cfg = PerturbationConfig(J=8, sigma_pos=0.05, sigma_rot=0.1, seed=11)
        assert r_marg([CAM], q, INTR, occ, cfg) == r_marg([CAM], q, INTR, occ, cfg)


class TestComposite:
    def scene(self):
        occ = Occluders.build([wall()])
        q = qps([[[0, 0, 2], [1.5, 0, 2]], [[0.1, 0, 2], [1.0, 0.1, 3]]])
        traj = [Pose([0, 0, 0]), Pose([0.05, 0, 0])]
        ee = np.array([[0.1, 0, 0.5], [0.2, 0, 0.5]])
        return occ, q, traj, ee

    def test_zero_weights_give_rvis(self):
        occ, q, traj, ee = self.scene()
        out = composite_reward(traj, q, ee, INTR, occ, RewardWeights(0, 0, 0))
        assert out.total == r_vis(traj, q, INTR, occ)

    def test_empty_meshes_all_visible(self):
        q = qps([[[0, 0, 2]]])
        out = composite_reward([CAM], q, [[5, 5, 5]], INTR, None, RewardWeights(0, 0, 0))
        assert out.total == 1.0

    def test_termwise_oracle(self):
        occ, q, traj, ee = self.scene()
        cfg = PerturbationConfig(J=3, seed=5)
        w = RewardWeights(1.0, 1.0, 1.0)
        out = composite_reward(traj, q, ee, INTR, occ, w, cfg)
        parts = [r_vis(traj, q, INTR, occ), r_close(traj, q),
                 r_marg(traj, q, INTR, occ, cfg), r_safe(traj, ee)]
        np.testing.assert_allclose([out.r_vis, out.r_close, out.r_marg, out.r_safe], parts, rtol=0, atol=1e-15)
        assert out.total == pytest.approx(sum(parts), abs=1e-12)

    def test_affine_in_lambda_c(self):
        occ, q, traj, ee = self.scene()
        a = composite_reward(traj, q, ee, INTR, occ, RewardWeights(lambda_c=0.0))
        b = composite_reward(traj, q, ee, INTR, occ, RewardWeights(lambda_c=1.0))
        assert b.total - a.total == pytest.approx(a.r_close, abs=1e-12)

    def test_invariant_ranges(self):
        occ, q, traj, ee = self.scene()
        out = composite_reward(traj, q, ee, INTR, occ)
        assert 0 <= out.r_vis <= 1 and 0 < out.r_close <= 1 and -1 <= out.r_safe < 0

    def test_batched_model_matches_single(self):
        occ, q, traj, ee = self.scene()
        model = RewardModel(INTR, q, ee, occ)
        rng = np.random.default_rng(0)
        R = np.stack([Rotation.from_rotvec(rng.normal(0, 0.1, 3)).as_matrix() for _ in range(10)]).reshape(5, 2, 3, 3)
        t = rng.normal(0, 0.1, (5, 2, 3))
        batch = model.total(R, t)
        single = [model.total(R[i], t[i]) for i in range(5)]
        np.testing.assert_allclose(batch, single, rtol=0, atol=0)
        assert model.n_evals == 10

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            RewardWeights(lambda_c=-1)
        with pytest.raises(ValueError):
            RewardWeights(sigma_safe=0)
        with pytest.raises(ValueError):
            PerturbationConfig(J=0)

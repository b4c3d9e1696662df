import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from visplan.diffusion import Gaussian, default_schedule, posterior_mean_x0, reverse_kernel_sample
from visplan.geom3d import Pose, Rotation, rot6d_to_matrix
from visplan.svdd import (
    DegenerateWeightsWarning,
    SvddConfig,
    decode_arrays,
    decode_trajectory,
    encode_trajectory,
    reencode,
    resample_step,
    rew_max_diff,
    soft_value_estimate,
    softmax_weights,
)
from visplan.verify import LinearReward

N01 = Gaussian([0.0], [1.0])
S100 = default_schedule(100)


class CountingReward(LinearReward):
    def __init__(self, w):
        super().__init__(w)
        self.calls = 0

    def batch(self, X):
        self.calls += len(X)
        return super().batch(X)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(alpha=0), dict(M=0), dict(K=0), dict(stride=0), dict(mode="x")])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SvddConfig(**kw)

    def test_steps_cover_to_zero(self):
        assert SvddConfig(K=10, stride=4).steps() == [(10, 6), (6, 2), (2, 0)]
        assert SvddConfig(K=3).steps() == [(3, 2), (2, 1), (1, 0)]


class TestSoftmax:
    def test_sums_to_one_without_overflow(self):
        w, bad = softmax_weights(np.array([1e6, 1e6 - 1, -1e6]), 1e-3)
        assert abs(w.sum() - 1) < 1e-9 and not bad
        np.testing.assert_allclose(w, [1, 0, 0], atol=1e-300)

    def test_nan_counts_as_minus_inf(self):
        w, bad = softmax_weights(np.array([np.nan, 0.0, 0.0]), 1.0)
        np.testing.assert_allclose(w, [0, 0.5, 0.5])
        assert not bad

    def test_uniform_fallback(self):
        w, bad = softmax_weights(np.array([[np.nan, -np.inf], [0.0, 1.0]]), 0.5)
        np.testing.assert_array_equal(bad, [True, False])
        np.testing.assert_allclose(w[0], [0.5, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(1e-3, 10))
    def test_shift_invariant(self, v, alpha):
        v = np.array(v)
        a, _ = softmax_weights(v, alpha)
        b, _ = softmax_weights(v + 3.0, alpha)
        np.testing.assert_allclose(a, b, atol=1e-9)
        assert abs(a.sum() - 1) < 1e-9

    def test_all_nan_warns_during_sampling(self):
        cfg = SvddConfig(M=4, K=5, seed=0)
        with pytest.warns(DegenerateWeightsWarning):
            out = rew_max_diff(N01, cfg, lambda x: float("nan"))
        assert np.isfinite(out.values).all()


class TestSoftValue:
    def test_constant_reward(self):
        for k in (1, 40, 100):
            assert soft_value_estimate(N01, np.array([0.3]), k, S100, lambda x: 2.5) == 2.5

    def test_no_noise_limit(self):
        # k = 0 means alpha_bar = 1
        assert soft_value_estimate(Gaussian([1.0], [4.0]), np.array([0.7]), 0, S100, LinearReward([1.0])) == 0.7

    def test_linear_reward_gives_posterior_mean(self):
        g = Gaussian([0.5], [2.0])
        x = np.array([[0.1], [1.2], [-0.8]])
        v = soft_value_estimate(g, x, 30, S100, LinearReward([1.0]))
        np.testing.assert_allclose(v, posterior_mean_x0(g, x, 30, S100)[:, 0], atol=1e-14)


class TestResampleStep:
    def test_constant_reward_selects_uniformly(self):
        M, n = 8, 10_000
        cfg = SvddConfig(M=M, K=100)
        x = np.zeros((n, 1))
        _, cset = resample_step(N01, x, 50, cfg, S100, lambda z: 1.0, np.random.default_rng(0),
                                return_candidates=True)
        counts = np.bincount(cset.selected, minlength=M)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_tiny_alpha_picks_argmax(self):
        cfg = SvddConfig(alpha=1e-6, M=8, K=100)
        x = np.zeros((2000, 1))
        out, cset = resample_step(N01, x, 50, cfg, S100, LinearReward([1.0]), np.random.default_rng(1),
                                  return_candidates=True)
        assert (cset.selected == cset.values.argmax(axis=1)).mean() >= 0.99
        np.testing.assert_array_equal(out, cset.candidates[np.arange(2000), cset.selected])

    def test_single_candidate_is_plain_reverse_step(self):
        cfg = SvddConfig(M=1, K=100)
        x = np.array([0.4])
        a = resample_step(N01, x, 30, cfg, S100, LinearReward([1.0]), np.random.default_rng(2))
        b = reverse_kernel_sample(N01, x[None], 30, S100, np.random.default_rng(2))[0]
        np.testing.assert_array_equal(a, b)

    def test_weights_normalized(self):
        cfg = SvddConfig(alpha=0.05, M=16, K=100)
        _, cset = resample_step(N01, np.zeros((50, 1)), 10, cfg, S100, LinearReward([1.0]),
                                np.random.default_rng(3), return_candidates=True)
        np.testing.assert_allclose(cset.weights.sum(axis=1), 1.0, atol=1e-9)


class TestRewMaxDiff:
    def test_prior_only_never_calls_reward(self):
        r = CountingReward([1.0])
        rew_max_diff(N01, SvddConfig(mode="prior_only", K=20), r, n_samples=10)
        assert r.calls == 0

    def test_single_candidate_matches_prior_only(self):
        r = CountingReward([1.0])
        a = rew_max_diff(N01, SvddConfig(M=1, K=20, seed=4), r, n_samples=100)
        b = rew_max_diff(N01, SvddConfig(mode="prior_only", K=20, seed=4), r, n_samples=100)
        np.testing.assert_array_equal(a.values, b.values)
        assert r.calls == 0

    def test_seeded_determinism(self):
        g = Gaussian([0.5, -0.5], [[1.0, 0.4], [0.4, 0.6]])
        cfg = SvddConfig(alpha=0.3, M=8, K=20, seed=5)
        a = rew_max_diff(g, cfg, LinearReward([1.0, 1.0]), n_samples=20)
        b = rew_max_diff(g, cfg, LinearReward([1.0, 1.0]), n_samples=20)
        assert a.values.tobytes() == b.values.tobytes()

    def test_reward_sees_destandardized_vectors(self):
        seen = []

        def r(x):
            seen.append(x.copy())
            return 0.0

        g = Gaussian([100.0], [1e-4])
        rew_max_diff(g, SvddConfig(M=2, K=3, seed=0), r)
        assert all(abs(v[0] - 100.0) < 0.1 for v in seen)

    def test_tilt_moves_mean_toward_reward(self):
        x = rew_max_diff(N01, SvddConfig(alpha=0.5, M=32, K=30, seed=6), LinearReward([1.0]), n_samples=400)
        assert 1.5 < x.values.mean() < 2.5

    def test_strided_sampling(self):
        x = rew_max_diff(N01, SvddConfig(alpha=0.5, M=32, K=100, stride=10, seed=7), LinearReward([1.0]),
                         n_samples=400)
        assert x.values.shape == (400, 1) and 1.4 < x.values.mean() < 2.6

    def test_trace(self):
        out = rew_max_diff(N01, SvddConfig(M=4, K=5), LinearReward([1.0]), keep_trace=True)
        assert [c.k for c in out.trace] == [5, 4, 3, 2, 1, 0]
        assert out.trace[0].candidates.shape == (1, 4, 1)

    def test_schedule_length_checked(self):
        with pytest.raises(ValueError):
            rew_max_diff(N01, SvddConfig(K=10), LinearReward([1.0]), schedule=S100)


class TestDecode:
    def test_identity(self):
        vec = np.tile([0, 0, 0, 1, 0, 0, 0, 1, 0], 4).astype(float)
        poses = decode_trajectory(vec)
        assert len(poses) == 4
        for p in poses:
            np.testing.assert_allclose(p.as_matrix(), np.eye(4), atol=1e-12)

    def test_scaled_columns(self):
        vec = np.array([1, 2, 3, 2, 0, 0, 0, 5, 0], dtype=float)
        p = decode_trajectory(vec)[0]
        np.testing.assert_allclose(p.rotation.as_matrix(), np.eye(3), atol=1e-12)
        np.testing.assert_allclose(p.position, [1, 2, 3])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_round_trip(self, seed):
        X = np.random.default_rng(seed).normal(size=(3, 5 * 9))
        R, pos, bad = decode_arrays(X)
        assert not bad.any()
        Y = reencode(R, pos)
        R2, pos2, _ = decode_arrays(Y)
        np.testing.assert_allclose(R2, R, atol=1e-10)
        six = X.reshape(3, 5, 9)[..., 3:]
        expect = np.stack([[rot6d_to_matrix(s) for s in row] for row in six])
        np.testing.assert_allclose(R, expect, atol=1e-10)

    def test_encode_decode(self):
        poses = [Pose([0.1 * i, 0, 1], Rotation.from_rotvec([0, 0.2 * i, 0])) for i in range(3)]
        back = decode_trajectory(encode_trajectory(poses))
        for a, b in zip(poses, back):
            np.testing.assert_allclose(a.as_matrix(), b.as_matrix(), atol=1e-12)

    def test_degenerate_block_falls_back(self, caplog):
        good = Rotation.from_rotvec([0.3, 0, 0])
        vec = np.concatenate([encode_trajectory([Pose([0, 0, 0], good)]), np.zeros(9)])
        with caplog.at_level(logging.WARNING):
            poses, bad = decode_trajectory(vec, return_flags=True)
        np.testing.assert_array_equal(bad, [False, True])
        np.testing.assert_allclose(poses[1].rotation.as_matrix(), good.as_matrix(), atol=1e-12)
        assert "degenerate rotation" in caplog.text

    def test_degenerate_first_step_is_identity(self):
        _, _, bad = decode_arrays(np.zeros(9))
        R, _, _ = decode_arrays(np.zeros(9))
        assert bad[0]
        np.testing.assert_array_equal(R[0], np.eye(3))

    def test_bad_length(self):
        with pytest.raises(ValueError):
            decode_arrays(np.zeros(10))

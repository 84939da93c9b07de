import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelact import (
    DependencyParams,
    DependencyTensor,
    MotionSequence,
    build_adjacency,
    dependency_tensor,
    gaussian_correlation,
    graph_conv,
    joint_features,
    refine_adjacency,
    refined_graph_conv,
)


def random_dependency_params(rng, c_in, c_out):
    return DependencyParams(
        phi_weights=rng.standard_normal((c_in, c_out)),
        phi_bias=rng.standard_normal(c_out),
        channel_scale=rng.standard_normal(c_out),
    )


class TestGaussianCorrelation:
    def test_equal_vectors_give_ones(self):
        v = np.array([0.3, -2.0, 5.5])
        np.testing.assert_array_equal(gaussian_correlation(v, v, delta=0.7), np.ones(3))

    def test_huge_delta_saturates_to_one(self, rng):
        v, w = rng.standard_normal(4), rng.standard_normal(4)
        out = gaussian_correlation(v, w, delta=1e6)
        np.testing.assert_allclose(out, np.ones(4), rtol=0, atol=1e-9)

    def test_scaled_difference_oracle(self):
        # difference (delta, 2 delta) -> (exp(-1/2), exp(-2))
        delta = 0.8
        v = np.array([delta, 2 * delta])
        got = gaussian_correlation(v, np.zeros(2), delta)
        np.testing.assert_allclose(
            got, [math.exp(-0.5), math.exp(-2.0)], rtol=0, atol=1e-15
        )

    def test_nonpositive_delta_rejected(self):
        with pytest.raises(ValueError, match="delta"):
            gaussian_correlation(np.zeros(2), np.zeros(2), delta=0.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            gaussian_correlation(np.zeros(2), np.zeros(3), delta=1.0)

    def test_symmetry_exact(self, rng):
        v, w = rng.standard_normal(5), rng.standard_normal(5)
        np.testing.assert_array_equal(
            gaussian_correlation(v, w, 1.3), gaussian_correlation(w, v, 1.3)
        )

    @given(st.floats(0.0, 4.0), st.floats(0.05, 0.5))
    @settings(max_examples=60, deadline=None)
    def test_monotone_decreasing_in_distance(self, gap, extra):
        base = gaussian_correlation(np.array([gap]), np.zeros(1), 1.0)[0]
        further = gaussian_correlation(np.array([gap + extra]), np.zeros(1), 1.0)[0]
        assert further < base

    @given(st.floats(0.2, 3.0), st.floats(0.05, 2.0))
    @settings(max_examples=60, deadline=None)
    def test_larger_delta_never_decreases_output(self, delta, widen):
        diff = np.linspace(-2.0, 2.0, 9)
        small = gaussian_correlation(diff, np.zeros(9), delta)
        large = gaussian_correlation(diff, np.zeros(9), delta + widen)
        assert (large >= small).all()


class TestJointFeatures:
    def test_single_frame_identity(self, rng):
        data = rng.standard_normal((1, 4, 3))
        np.testing.assert_array_equal(joint_features(MotionSequence(data=data)), data[0])

    def test_opposite_frames_cancel(self, rng):
        frame = rng.standard_normal((1, 3, 2))
        data = np.concatenate([frame, -frame])
        np.testing.assert_allclose(joint_features(data), np.zeros((3, 2)), atol=1e-16)

    def test_matches_elementwise_mean_oracle(self, rng):
        data = rng.standard_normal((3, 4, 2))
        oracle = np.zeros((4, 2))
        for j in range(4):
            for c in range(2):
                oracle[j, c] = data[:, j, c].sum() / 3
        np.testing.assert_allclose(joint_features(data), oracle, atol=1e-15)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            joint_features(np.zeros((0, 3, 2)))


class TestDependencyTensor:
    def test_identical_joints_constant_result(self, rng):
        feats = np.tile(rng.standard_normal(2), (4, 1))
        params = random_dependency_params(rng, 2, 3)
        r = dependency_tensor(feats, 1.0, params)
        expected = params.phi_weights.T @ np.ones(2) + params.phi_bias
        np.testing.assert_allclose(r.values, np.broadcast_to(expected, (4, 4, 3)), atol=1e-12)

    def test_zero_weights_broadcast_bias(self, rng):
        params = DependencyParams(
            phi_weights=np.zeros((2, 3)),
            phi_bias=np.array([1.0, -2.0, 0.5]),
            channel_scale=np.zeros(3),
        )
        r = dependency_tensor(rng.standard_normal((3, 2)), 1.0, params)
        np.testing.assert_array_equal(r.values, np.broadcast_to([1.0, -2.0, 0.5], (3, 3, 3)))

    def test_matches_double_loop_oracle(self, rng):
        feats = rng.standard_normal((3, 2))
        params = random_dependency_params(rng, 2, 2)
        delta = 0.9
        r = dependency_tensor(feats, delta, params)
        for i in range(3):
            for j in range(3):
                corr = np.exp(-((feats[i] - feats[j]) ** 2) / (2 * delta**2))
                expected = params.phi_weights.T @ corr + params.phi_bias
                np.testing.assert_allclose(r.values[i, j], expected, atol=1e-12)

    def test_symmetric_in_joint_indices(self, rng):
        feats = rng.standard_normal((5, 3))
        r = dependency_tensor(feats, 1.1, random_dependency_params(rng, 3, 4))
        np.testing.assert_allclose(r.values, np.swapaxes(r.values, 0, 1), atol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="channels"):
            dependency_tensor(np.zeros((3, 4)), 1.0, random_dependency_params(rng, 2, 2))


class TestRefineAdjacency:
    def test_zero_scale_returns_static(self, rng):
        a = build_adjacency({(0, 1), (1, 2)}, 3)
        r = DependencyTensor(values=rng.standard_normal((3, 3, 2)))
        params = DependencyParams(np.zeros((2, 2)), np.zeros(2), np.zeros(2))
        refined = refine_adjacency(a, r, params)
        for c in range(2):
            np.testing.assert_array_equal(refined.values[:, :, c], a)

    def test_zero_adjacency_unit_scale_returns_dependencies(self, rng):
        r = DependencyTensor(values=rng.standard_normal((3, 3, 2)))
        params = DependencyParams(np.zeros((2, 2)), np.zeros(2), np.ones(2))
        refined = refine_adjacency(np.zeros((3, 3)), r, params)
        np.testing.assert_array_equal(refined.values, r.values)

    def test_matches_elementwise_oracle(self, rng):
        a = build_adjacency({(0, 1), (0, 2)}, 3)
        r = DependencyTensor(values=rng.standard_normal((3, 3, 2)))
        params = random_dependency_params(rng, 2, 2)
        refined = refine_adjacency(a, r, params)
        for i in range(3):
            for j in range(3):
                for c in range(2):
                    expected = a[i, j] + params.channel_scale[c] * r.values[i, j, c]
                    assert refined.values[i, j, c] == pytest.approx(expected, abs=1e-15)

    def test_shape_mismatch_rejected(self, rng):
        r = DependencyTensor(values=rng.standard_normal((4, 4, 2)))
        with pytest.raises(ValueError, match="joints"):
            refine_adjacency(np.zeros((3, 3)), r, random_dependency_params(rng, 2, 2))


def dense_conv_oracle(x, a_c, a_static, w, relu):
    """From-scratch composition: static-degree normalization per channel,
    frame-by-frame matrix products, then the activation."""
    t, n, _ = x.shape
    c_out = w.shape[1]
    d = (a_static + np.eye(n)).sum(axis=1)
    out = np.zeros((t, n, c_out))
    for c in range(c_out):
        norm = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                norm[i, j] = (a_c[i, j, c] + (i == j)) / np.sqrt(d[i] * d[j])
        for frame in range(t):
            out[frame, :, c] = norm @ (x[frame] @ w)[:, c]
    return np.maximum(out, 0.0) if relu else out


class TestRefinedGraphConv:
    def test_isolated_node_identity(self):
        # single node, identity weights and activation: propagation is 1
        a = np.zeros((1, 1))
        refined = refine_adjacency(
            a, DependencyTensor(values=np.zeros((1, 1, 1))),
            DependencyParams(np.zeros((1, 1)), np.zeros(1), np.zeros(1)),
        )
        x = np.array([[[2.5]], [[-3.5]]])
        out = refined_graph_conv(x, refined, np.eye(1), activation="identity")
        np.testing.assert_array_equal(out, x)

    def test_zero_input_maps_to_activation_of_zero(self, rng):
        a = build_adjacency({(0, 1)}, 2)
        r = DependencyTensor(values=rng.standard_normal((2, 2, 3)))
        refined = refine_adjacency(a, r, random_dependency_params(rng, 2, 3))
        out = refined_graph_conv(np.zeros((2, 2, 2)), refined, rng.standard_normal((2, 3)))
        np.testing.assert_array_equal(out, np.zeros((2, 2, 3)))

    @pytest.mark.parametrize("activation", ["relu", "identity"])
    def test_matches_dense_composition_oracle(self, rng, activation):
        a = build_adjacency({(0, 1), (1, 2)}, 3)
        r = DependencyTensor(values=rng.standard_normal((3, 3, 2)))
        params = random_dependency_params(rng, 2, 2)
        refined = refine_adjacency(a, r, params)
        x = rng.standard_normal((2, 3, 2))
        w = rng.standard_normal((2, 2))
        got = refined_graph_conv(x, refined, w, activation=activation)
        expected = dense_conv_oracle(x, refined.values, a, w, relu=(activation == "relu"))
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-13)

    def test_zero_scale_equals_plain_conv_bit_for_bit(self, rng):
        a = build_adjacency({(0, 1), (1, 2), (0, 3)}, 4)
        # any dependency tensor: the zero channel scale must erase it exactly
        r = DependencyTensor(values=rng.standard_normal((4, 4, 3)))
        params = DependencyParams(
            phi_weights=rng.standard_normal((2, 3)),
            phi_bias=rng.standard_normal(3),
            channel_scale=np.zeros(3),
        )
        refined = refine_adjacency(a, r, params)
        x = rng.standard_normal((5, 4, 2))
        w = rng.standard_normal((2, 3))
        lhs = refined_graph_conv(x, refined, w, activation="relu")
        rhs = graph_conv(x, a, w, activation="relu")
        assert np.array_equal(lhs, rhs)

    def test_plain_conv_matches_dense_oracle(self, rng):
        a = build_adjacency({(0, 1), (1, 2)}, 3)
        x = rng.standard_normal((2, 3, 2))
        w = rng.standard_normal((2, 4))
        stacked = np.repeat(a[:, :, None], 4, axis=2)
        expected = dense_conv_oracle(x, stacked, a, w, relu=True)
        np.testing.assert_allclose(graph_conv(x, a, w), expected, rtol=0, atol=1e-13)

    def test_joint_permutation_equivariance(self, rng):
        a = build_adjacency({(0, 1), (1, 2), (2, 3)}, 4)
        x = rng.standard_normal((3, 4, 2))
        w = rng.standard_normal((2, 3))
        params = random_dependency_params(rng, 2, 3)
        feats = joint_features(x)
        refined = refine_adjacency(a, dependency_tensor(feats, 1.0, params), params)
        out = refined_graph_conv(x, refined, w)

        perm = rng.permutation(4)
        p = np.eye(4)[perm]
        a_p = p @ a @ p.T
        x_p = x[:, perm, :]
        refined_p = refine_adjacency(
            a_p, dependency_tensor(joint_features(x_p), 1.0, params), params
        )
        out_p = refined_graph_conv(x_p, refined_p, w)
        np.testing.assert_allclose(out_p, out[:, perm, :], rtol=0, atol=1e-10)

    def test_weight_shape_mismatch_rejected(self, rng):
        a = build_adjacency({(0, 1)}, 2)
        r = DependencyTensor(values=np.zeros((2, 2, 2)))
        refined = refine_adjacency(a, r, random_dependency_params(rng, 3, 2))
        with pytest.raises(ValueError, match="weights"):
            refined_graph_conv(np.zeros((1, 2, 3)), refined, np.zeros((3, 5)))

import math

import numpy as np
import pytest

from skelact import (
    EncoderSpec,
    FrameworkParams,
    LossSettings,
    MaternParams,
    MotionSequence,
    augment,
    aux_predict,
    base_encode,
    chain_graph,
    classification_loss,
    distillation_loss,
    feature_bundle,
    framework_forward,
    hsic,
    hsic_objective,
    kernel_matrix,
    label_kernel,
    total_loss,
)
from skelact import autodiff as ad
from skelact.model import build_losses, init_model
from skelact.training import init_framework


def make_model(rng_seed, n=3, c_in=3, hidden=(4,), role="base", num_classes=3,
               use_refinement=True, activation="relu", temporal_pool="mean"):
    rng = np.random.default_rng(rng_seed)
    spec = EncoderSpec(
        num_blocks=len(hidden), hidden_channels=hidden, delta=1.0,
        use_refinement=use_refinement, activation=activation, temporal_pool=temporal_pool,
    )
    return init_model(spec, chain_graph(n).adjacency, c_in, num_classes, role, rng)


class TestBaseEncode:
    def test_zero_input_zero_biases_gives_zero_vector(self):
        params = make_model(0)
        z = base_encode(np.zeros((2, 3, 3)), params)
        np.testing.assert_array_equal(z, np.zeros(4))

    def test_frame_permutation_invariance_with_mean_pool(self, rng):
        params = make_model(1)
        data = rng.standard_normal((5, 3, 3))
        z = base_encode(data, params)
        z_perm = base_encode(data[rng.permutation(5)], params)
        np.testing.assert_allclose(z_perm, z, rtol=0, atol=1e-12)

    def test_matches_dense_forward_oracle(self, rng):
        # independent composition: loops + explicit formulas, L=1, N=3, T=2
        params = make_model(2, hidden=(4,))
        block = params.blocks[0]
        x = rng.standard_normal((2, 3, 3))
        a = params.adjacency
        d = (a + np.eye(3)).sum(axis=1)

        v = x.mean(axis=0)
        out = np.zeros((2, 3, 4))
        for c in range(4):
            a_c = np.zeros((3, 3))
            for i in range(3):
                for j in range(3):
                    corr = np.exp(-((v[i] - v[j]) ** 2) / 2.0)
                    r_ij = block.phi_weights[:, c] @ corr + block.phi_bias[c]
                    a_c[i, j] = a[i, j] + block.channel_scale[c] * r_ij
            norm = (a_c + np.eye(3)) / np.sqrt(np.outer(d, d))
            for t in range(2):
                out[t, :, c] = norm @ (x[t] @ block.conv_w)[:, c]
        out = np.maximum(out, 0.0)
        expected = out.mean(axis=0).mean(axis=0)

        np.testing.assert_allclose(base_encode(x, params), expected, rtol=0, atol=1e-12)

    def test_joint_permutation_leaves_z_unchanged(self, rng):
        # permuting joints of the sequence and the graph together must not
        # change the pooled feature (global mean over joints)
        params = make_model(3, n=4, hidden=(5,))
        x = rng.standard_normal((3, 4, 3))
        z = base_encode(x, params)

        perm = rng.permutation(4)
        p = np.eye(4)[perm]
        params_p = make_model(3, n=4, hidden=(5,))
        params_p.adjacency = p @ params.adjacency @ p.T
        z_p = base_encode(x[:, perm, :], params_p)
        np.testing.assert_allclose(z_p, z, rtol=0, atol=1e-10)

    def test_max_pool_variant_runs(self, rng):
        params = make_model(4, temporal_pool="max")
        z = base_encode(rng.standard_normal((4, 3, 3)), params)
        assert z.shape == (4,)


class TestAuxPredict:
    def test_uniform_logits_give_uniform_distribution(self):
        params = make_model(5, role="auxiliary", num_classes=4)
        params.classifier_w = np.zeros_like(params.classifier_w)
        params.classifier_b = np.zeros(4)
        _, y_tilde, logits = aux_predict(np.ones((2, 3, 3)), params)
        np.testing.assert_array_equal(logits, np.zeros(4))
        np.testing.assert_allclose(y_tilde, np.full(4, 0.25), atol=1e-15)

    def test_dominant_logit_saturates(self):
        params = make_model(6, role="auxiliary")
        params.classifier_w = np.zeros_like(params.classifier_w)
        params.classifier_b = np.array([1e3, 0.0, 0.0])
        _, y_tilde, _ = aux_predict(np.zeros((1, 3, 3)), params)
        np.testing.assert_allclose(y_tilde, [1.0, 0.0, 0.0], rtol=0, atol=1e-9)

    def test_softmax_matches_exp_sum_oracle(self, rng):
        params = make_model(7, role="auxiliary")
        x = rng.standard_normal((2, 3, 3))
        _, y_tilde, logits = aux_predict(x, params)
        exp = np.exp(logits - logits.max())
        np.testing.assert_allclose(y_tilde, exp / exp.sum(), rtol=0, atol=1e-12)
        assert y_tilde.sum() == pytest.approx(1.0, abs=1e-12)


class TestAugment:
    def test_concatenation_fixture(self):
        np.testing.assert_array_equal(
            augment(np.array([1.0, 2.0]), np.array([0.3, 0.7])), [1.0, 2.0, 0.3, 0.7]
        )

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="two classes"):
            augment(np.zeros(2), np.ones(1))

    def test_invalid_distribution_rejected(self):
        with pytest.raises(ValueError, match="probability"):
            augment(np.zeros(2), np.array([0.9, 0.3]))

    @pytest.mark.parametrize("dim,k", [(1, 2), (5, 3), (8, 7)])
    def test_dimension_bookkeeping(self, rng, dim, k):
        y = rng.random(k)
        y /= y.sum()
        assert augment(rng.standard_normal(dim), y).shape == (dim + k,)


class TestClassificationLoss:
    def test_huge_margin_loss_vanishes(self):
        logits = np.array([[50.0, 0.0, 0.0], [0.0, 50.0, 0.0]])
        assert classification_loss(logits, [0, 1]) < 1e-6

    def test_uniform_logits_give_log_k(self):
        for k in (2, 5, 9):
            loss = classification_loss(np.zeros((3, k)), [0] * 3)
            assert loss == pytest.approx(math.log(k), abs=1e-12)

    def test_matches_log_sum_exp_oracle(self, rng):
        logits = rng.standard_normal((6, 4))
        labels = rng.integers(0, 4, size=6)
        oracle = np.mean([
            np.log(np.exp(row).sum()) - row[label]
            for row, label in zip(logits, labels)
        ])
        assert classification_loss(logits, labels) == pytest.approx(oracle, abs=1e-10)

    def test_invariant_to_per_sample_logit_shift(self, rng):
        logits = rng.standard_normal((5, 3))
        labels = rng.integers(0, 3, size=5)
        shifted = logits + rng.standard_normal((5, 1))
        assert classification_loss(shifted, labels) == pytest.approx(
            classification_loss(logits, labels), abs=1e-10
        )

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="lie in"):
            classification_loss(np.zeros((2, 3)), [0, 3])


class TestHsicObjective:
    def test_identical_features_give_zero(self):
        z = np.ones((6, 4))
        for sign in (-1, 1):
            assert hsic_objective(z, [0, 1, 2] * 2, MaternParams(), sign=sign) == pytest.approx(
                0.0, abs=1e-12
            )

    def test_positive_sign_unit_weight_is_raw_hsic(self, rng):
        # the objective printed with "+" is exactly the bare estimator
        z = rng.standard_normal((8, 3))
        y = rng.integers(0, 3, size=8)
        raw = hsic(kernel_matrix(z, MaternParams()), label_kernel(y, 3))
        assert hsic_objective(z, y, MaternParams(), sign=1, weight=1.0) == pytest.approx(
            raw, abs=1e-15
        )

    def test_two_cluster_features_strictly_positive(self, rng):
        z = np.concatenate([
            rng.standard_normal((6, 2)) + 6.0, rng.standard_normal((6, 2)) - 6.0
        ])
        y = np.array([0] * 6 + [1] * 6)
        value = hsic_objective(z, y, MaternParams(), sign=1)
        oracle = hsic(kernel_matrix(z, MaternParams()), label_kernel(y, 2))
        assert value > 0.01
        assert value == pytest.approx(oracle, abs=1e-12)

    def test_joint_permutation_invariance(self, rng):
        z = rng.standard_normal((9, 2))
        y = rng.integers(0, 3, size=9)
        perm = rng.permutation(9)
        a = hsic_objective(z, y, MaternParams(), sign=-1, weight=2.0)
        b = hsic_objective(z[perm], y[perm], MaternParams(), sign=-1, weight=2.0)
        assert b == pytest.approx(a, abs=1e-10)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError, match="two samples"):
            hsic_objective(np.ones((1, 2)), [0], MaternParams())


def kl_oracle(p_logits, q_logits, temperature):
    out = 0.0
    for pr, qr in zip(p_logits, q_logits):
        p = np.exp(pr / temperature)
        p /= p.sum()
        q = np.exp(qr / temperature)
        q /= q.sum()
        out += float(np.sum(p * np.log(p / q)))
    return out / len(p_logits)


class TestDistillationLoss:
    def test_equal_logits_give_zero(self, rng):
        logits = rng.standard_normal((4, 3))
        for temperature in (0.5, 1.0, 7.0):
            assert distillation_loss(logits, logits, temperature) == 0.0

    def test_huge_temperature_flattens_both_sides(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        assert distillation_loss(a, b, temperature=1e4) < 1e-6

    def test_matches_kl_oracle_at_unit_temperature(self, rng):
        a, b = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        assert distillation_loss(a, b, 1.0) == pytest.approx(kl_oracle(a, b, 1.0), abs=1e-10)

    def test_matches_kl_oracle_at_other_temperatures(self, rng):
        a, b = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        for temperature in (0.5, 2.0):
            assert distillation_loss(a, b, temperature) == pytest.approx(
                kl_oracle(a, b, temperature), abs=1e-10
            )

    def test_nonnegative_on_random_pairs(self, rng):
        for _ in range(200):
            a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
            assert distillation_loss(a, b, 1.0) >= 0.0

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            distillation_loss(np.zeros((1, 2)), np.zeros((1, 2)), 0.0)


class TestForwardAndTotalLoss:
    def _forward(self, tiny_framework, tiny_batch):
        x, y = tiny_batch
        return framework_forward(x, tiny_framework), y

    def test_distill_logits_equal_live_logits_in_value(self, tiny_framework, tiny_batch):
        fwd, _ = self._forward(tiny_framework, tiny_batch)
        np.testing.assert_array_equal(
            ad.val(fwd.base_logits_distill), ad.val(fwd.base_logits)
        )

    def test_feature_bundle_invariants(self, tiny_framework, tiny_batch):
        x, _ = tiny_batch
        bundle = feature_bundle(x, tiny_framework)
        assert bundle.z_hat.shape[1] == bundle.z.shape[1] + 3
        np.testing.assert_allclose(bundle.y_tilde.sum(axis=1), 1.0, atol=1e-8)
        np.testing.assert_array_equal(bundle.z_hat[:, : bundle.z.shape[1]], bundle.z)

    def test_breakdown_invariant(self, tiny_framework, tiny_batch):
        fwd, y = self._forward(tiny_framework, tiny_batch)
        settings = LossSettings(hsic_sign=-1, hsic_weight=0.7)
        bd = total_loss(fwd, y, settings, num_classes=3)
        reconstructed = (
            bd.l_cls + bd.hsic_sign * bd.hsic_weight * bd.hsic_term + bd.l_ce_aux + bd.l_d
        )
        assert bd.total == pytest.approx(reconstructed, abs=1e-12)

    def test_components_match_standalone_ops(self, tiny_framework, tiny_batch):
        fwd, y = self._forward(tiny_framework, tiny_batch)
        settings = LossSettings()
        bd = total_loss(fwd, y, settings, num_classes=3)
        assert bd.l_cls == pytest.approx(
            classification_loss(ad.val(fwd.base_logits), y), abs=1e-12
        )
        assert bd.l_ce_aux == pytest.approx(
            classification_loss(ad.val(fwd.aux_logits), y), abs=1e-12
        )
        assert bd.hsic_term == pytest.approx(
            hsic(kernel_matrix(ad.val(fwd.z_hat), settings.matern), label_kernel(y, 3)),
            abs=1e-12,
        )
        assert bd.l_d == pytest.approx(
            distillation_loss(ad.val(fwd.base_logits), ad.val(fwd.aux_logits), 1.0),
            abs=1e-12,
        )

    def test_ablation_flags_zero_terms(self, tiny_framework, tiny_batch):
        fwd, y = self._forward(tiny_framework, tiny_batch)
        bd = total_loss(fwd, y, LossSettings(use_hsic=False, use_distill=False), num_classes=3)
        assert bd.hsic_term == 0.0
        assert bd.l_d == 0.0
        assert bd.total == pytest.approx(bd.l_cls + bd.l_ce_aux, abs=1e-12)

    def test_total_responds_linearly_to_hsic_weight(self, tiny_framework, tiny_batch):
        fwd, y = self._forward(tiny_framework, tiny_batch)
        bd1 = total_loss(fwd, y, LossSettings(hsic_weight=1.0), num_classes=3)
        bd3 = total_loss(fwd, y, LossSettings(hsic_weight=3.0), num_classes=3)
        slope = (bd3.total - bd1.total) / 2.0
        assert slope == pytest.approx(bd1.hsic_sign * bd1.hsic_term, rel=1e-12, abs=1e-15)

    def test_sign_flip_changes_total_by_twice_weighted_term(self, tiny_framework, tiny_batch):
        fwd, y = self._forward(tiny_framework, tiny_batch)
        minus = total_loss(fwd, y, LossSettings(hsic_sign=-1, hsic_weight=0.5), num_classes=3)
        plus = total_loss(fwd, y, LossSettings(hsic_sign=1, hsic_weight=0.5), num_classes=3)
        assert plus.total - minus.total == pytest.approx(minus.hsic_term, abs=1e-12)

    def test_without_aux_model_bundle_collapses(self, tiny_graph, tiny_batch, tiny_config):
        from dataclasses import replace

        x, y = tiny_batch
        fw = init_framework(tiny_graph, 3, 3, replace(tiny_config, use_aux=False))
        assert fw.aux is None
        fwd = framework_forward(x, fw)
        assert fwd.y_tilde is None
        np.testing.assert_array_equal(ad.val(fwd.z_hat), ad.val(fwd.z))
        bd = total_loss(fwd, y, LossSettings(), num_classes=3)
        assert bd.l_ce_aux == 0.0 and bd.l_d == 0.0

    def test_degenerate_perfect_batch_gives_zero_total(self):
        # constant features plus saturated correct logits: every term vanishes
        fw = FrameworkParams(base=make_model(11), aux=make_model(12, role="auxiliary"),
                             num_classes=3)
        for model in (fw.base, fw.aux):
            for block in model.blocks:
                block.conv_w = np.zeros_like(block.conv_w)
                block.phi_bias = np.zeros_like(block.phi_bias)
        fw.base.classifier_w = np.zeros_like(fw.base.classifier_w)
        fw.aux.classifier_w = np.zeros_like(fw.aux.classifier_w)
        fw.base.classifier_b = np.array([500.0, 0.0, 0.0])
        fw.aux.classifier_b = np.array([500.0, 0.0, 0.0])
        x = np.zeros((4, 2, 3, 3))
        y = np.zeros(4, dtype=int)
        bd = total_loss(framework_forward(x, fw), y, LossSettings(), num_classes=3)
        assert bd.total == pytest.approx(0.0, abs=1e-9)

    def test_unknown_loss_term_rejected(self, tiny_framework, tiny_batch):
        fwd, y = self._forward(tiny_framework, tiny_batch)
        with pytest.raises(ValueError, match="unknown loss terms"):
            build_losses(fwd, y, LossSettings(), 3, include={"bogus"})

import math

import numpy as np
import pytest

from attn_adapter.adapters import SupportSet
from attn_adapter.losses import (
    LossConfig,
    TipConfig,
    adapter_logits,
    cosine_logits_backward,
    cross_entropy,
    cross_entropy_backward,
    l2_anchor,
    tip_adapter_logits,
    total_loss,
    zero_shot_logits,
)

from conftest import unit_rows


class TestZeroShotLogits:
    def test_matching_row_scores_one(self, rng):
        w = unit_rows(rng, 4, 8)
        logits = zero_shot_logits(w[1], w)
        assert logits.argmax() == 1
        assert logits[1] == pytest.approx(1.0)

    def test_orthogonal_scores_zero(self):
        w = np.eye(3)[:2]
        np.testing.assert_allclose(zero_shot_logits([0.0, 0.0, 1.0], w), [0.0, 0.0])

    def test_hand_computed(self):
        logits = zero_shot_logits([3.0, 4.0], np.eye(2))
        np.testing.assert_allclose(logits, [0.6, 0.8])

    def test_zero_embedding_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            zero_shot_logits([0.0, 0.0], np.eye(2))

    def test_logits_bounded(self, rng):
        w = unit_rows(rng, 5, 8) * rng.uniform(0.5, 3.0, (5, 1))
        for _ in range(20):
            logits = zero_shot_logits(rng.standard_normal(8), w)
            assert np.all(logits >= -1.0 - 1e-12) and np.all(logits <= 1.0 + 1e-12)

    def test_scale_invariance(self, rng):
        w = unit_rows(rng, 5, 8)
        f = rng.standard_normal(8)
        base = zero_shot_logits(f, w)
        for c in (1e-3, 7.0, 1e4):
            np.testing.assert_allclose(zero_shot_logits(c * f, w), base, atol=1e-12)


def two_class_support(rng=None):
    features = np.eye(2)
    labels = np.eye(2)
    return SupportSet(features, labels, 2, 1)


class TestTipAdapterLogits:
    def test_alpha_zero_equals_zero_shot(self, rng):
        w = unit_rows(rng, 2, 8)
        sup = SupportSet(unit_rows(rng, 4, 8),
                         np.repeat(np.eye(2), 2, axis=0), 2, 2)
        f = rng.standard_normal(8)
        tip = tip_adapter_logits(f, w, sup, TipConfig(alpha=0.0, beta=5.0))
        np.testing.assert_array_equal(tip, zero_shot_logits(f, w))

    def test_beta_zero_adds_uniform_shift(self, rng):
        w = unit_rows(rng, 3, 8)
        sup = SupportSet(unit_rows(rng, 6, 8),
                         np.repeat(np.eye(3), 2, axis=0), 3, 2)
        f = rng.standard_normal(8)
        tip = tip_adapter_logits(f, w, sup, TipConfig(alpha=0.7, beta=0.0))
        zs = zero_shot_logits(f, w)
        np.testing.assert_allclose(tip - zs, 0.7 * 2.0)  # alpha * shots
        assert tip.argmax() == zs.argmax()

    def test_exact_match_cache_term(self):
        # query equals the class-0 support row and is orthogonal to class 1
        sup = two_class_support()
        w = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2)
        f = np.array([1.0, 0.0])
        tip = tip_adapter_logits(f, w, sup, TipConfig(alpha=1.0, beta=1.0))
        cache = tip - zero_shot_logits(f, w)
        np.testing.assert_allclose(cache, [1.0, math.exp(-1.0)])

    def test_monotone_in_alpha_for_matching_class(self):
        sup = two_class_support()
        w = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2)
        f = np.array([1.0, 0.0])
        prev = -np.inf
        for alpha in (0.0, 0.5, 1.0, 2.0, 4.0):
            val = tip_adapter_logits(f, w, sup, TipConfig(alpha, 2.0))[0]
            assert val >= prev
            prev = val


class TestAdapterLogits:
    def test_identity_at_init_inputs(self, rng):
        w = unit_rows(rng, 4, 8)
        f = rng.standard_normal(8)
        np.testing.assert_array_equal(adapter_logits(f, w), zero_shot_logits(f, w))

    def test_refined_row_equal_to_query(self, rng):
        f = rng.standard_normal(8)
        w_hat = unit_rows(rng, 3, 8)
        w_hat[2] = f
        assert adapter_logits(f, w_hat)[2] == pytest.approx(1.0)


class TestCrossEntropy:
    def test_uniform_logits_give_log_n(self):
        for n in (2, 5, 10):
            logits = np.zeros((3, n))
            assert cross_entropy(logits, [0, 1, 0][:3], tau=1.0) == pytest.approx(math.log(n))

    def test_sharp_temperature_limit(self):
        logits = np.array([[1.0, -1.0, -1.0]])
        assert cross_entropy(logits, [0], tau=1e-3) < 1e-10

    def test_hand_computed(self):
        loss = cross_entropy(np.array([[1.0, 0.0]]), [0], tau=1.0)
        assert loss == pytest.approx(-math.log(math.e / (math.e + 1.0)), abs=1e-6)
        assert loss == pytest.approx(0.3133, abs=1e-4)

    def test_nonnegative_and_log_n_iff_uniform(self, rng):
        for _ in range(20):
            logits = rng.standard_normal((4, 6))
            loss = cross_entropy(logits, rng.integers(0, 6, 4), tau=0.5)
            assert loss >= 0.0
        uniform = cross_entropy(np.zeros((4, 6)), [0, 1, 2, 3], tau=0.5)
        assert uniform == pytest.approx(math.log(6))

    def test_invalid_target_rejected(self):
        with pytest.raises(ValueError, match="target"):
            cross_entropy(np.zeros((2, 3)), [0, 3], tau=1.0)

    def test_backward_matches_finite_differences(self, rng):
        logits = rng.standard_normal((3, 4))
        targets = np.array([0, 2, 1])
        tau = 0.2
        grad = cross_entropy_backward(logits, targets, tau)
        eps = 1e-6
        for b in range(3):
            for i in range(4):
                bump = logits.copy()
                bump[b, i] += eps
                dip = logits.copy()
                dip[b, i] -= eps
                num = (cross_entropy(bump, targets, tau)
                       - cross_entropy(dip, targets, tau)) / (2 * eps)
                assert grad[b, i] == pytest.approx(num, abs=1e-7)


class TestCosineBackward:
    def test_matches_finite_differences(self, rng):
        w = unit_rows(rng, 4, 6) * rng.uniform(0.5, 2.0, (4, 1))
        f = rng.standard_normal(6)
        d_logits = rng.standard_normal(4)
        d_w, d_f = cosine_logits_backward(f, w, d_logits)
        eps = 1e-6

        def loss(w_, f_):
            return float(zero_shot_logits(f_, w_) @ d_logits)

        for i in range(4):
            for j in range(6):
                bump = w.copy(); bump[i, j] += eps
                dip = w.copy(); dip[i, j] -= eps
                num = (loss(bump, f) - loss(dip, f)) / (2 * eps)
                assert d_w[i, j] == pytest.approx(num, abs=1e-7)
        for j in range(6):
            bump = f.copy(); bump[j] += eps
            dip = f.copy(); dip[j] -= eps
            num = (loss(w, bump) - loss(w, dip)) / (2 * eps)
            assert d_f[j] == pytest.approx(num, abs=1e-7)


class TestAnchorAndTotal:
    def test_identical_vectors(self):
        assert l2_anchor([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_unit_offsets(self):
        assert l2_anchor([1.0, 1.0], [0.0, 0.0]) == pytest.approx(2.0)

    def test_three_four(self):
        assert l2_anchor([3.0, 4.0], [0.0, 0.0]) == pytest.approx(25.0)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            l2_anchor([1.0], [1.0, 2.0])

    def test_total_loss_cases(self):
        assert total_loss(1.0, 5.0, LossConfig(tau=1.0, lam=0.0)) == 1.0
        assert total_loss(1.0, 2.0, LossConfig(tau=1.0, lam=0.5)) == 2.0
        assert total_loss(0.0, 0.0, LossConfig()) == 0.0

    def test_configs_validated(self):
        with pytest.raises(ValueError):
            LossConfig(tau=0.0)
        with pytest.raises(ValueError):
            LossConfig(lam=-1.0)
        with pytest.raises(ValueError):
            TipConfig(alpha=float("inf"))
        with pytest.raises(ValueError):
            TipConfig(alpha=-0.5)

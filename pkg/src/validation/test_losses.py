"""
Closed-form values, per-pixel oracles and gradients of every objective.
"""

import math

import numpy as np
import pytest

from autograd.tensor import GradientTape, Tensor, backward
from autograd.ops import conv2d, leaky_relu, sigmoid, softmax_channel
from adaptation.losses import (
    EPS, d1_loss, d2_loss, full_loss, g_adv1, g_adv2, one_hot, self_training_loss, supervised_ce,
)
from models.training import LossWeights
from validation.gradcheck import gradcheck

LN2 = math.log(2.0)


def random_probs(rng, shape):
    return softmax_channel(Tensor(rng.normal(size=shape)))


def random_map(rng, shape):
    return Tensor(rng.uniform(0.05, 0.95, size=shape))


# ============================================================================
# Supervised cross-entropy
# ============================================================================

class TestSupervised:

    def test_uniform_probabilities(self):
        probs = Tensor(np.full((1, 6, 4, 4), 1.0 / 6.0))
        labels = np.zeros((1, 4, 4), dtype=np.int64)
        assert supervised_ce(probs, labels).item() == pytest.approx(math.log(6.0), abs=1e-9)

    def test_one_hot_probabilities(self, rng):
        labels = rng.integers(0, 3, size=(1, 4, 4))
        probs = Tensor(one_hot(labels, 3))
        loss = supervised_ce(probs, labels).item()
        assert loss == pytest.approx(-math.log(1.0 + EPS), abs=1e-15)

    def test_per_pixel_oracle(self, rng):
        probs = random_probs(rng, (1, 3, 2, 2))
        labels = rng.integers(0, 3, size=(1, 2, 2))
        expected = 0.0
        for y in range(2):
            for x in range(2):
                expected -= math.log(probs.data[0, labels[0, y, x], y, x] + EPS)
        assert abs(supervised_ce(probs, labels).item() - expected / 4.0) < 1e-12

    def test_ignored_pixels_are_excluded(self, rng):
        probs = random_probs(rng, (1, 3, 2, 2))
        labels = np.array([[[0, 255], [1, 255]]])
        expected = -(math.log(probs.data[0, 0, 0, 0] + EPS) + math.log(probs.data[0, 1, 1, 0] + EPS)) / 2
        assert abs(supervised_ce(probs, labels).item() - expected) < 1e-12

    def test_label_out_of_range(self):
        probs = Tensor(np.full((1, 3, 2, 2), 1.0 / 3.0))
        with pytest.raises(ValueError):
            supervised_ce(probs, np.full((1, 2, 2), 3))


# ============================================================================
# Adversarial terms
# ============================================================================

class TestAdversarial:

    def test_half_maps(self):
        half = Tensor(np.full((1, 1, 4, 4), 0.5))
        assert d1_loss(half, half).item() == pytest.approx(2 * LN2, abs=1e-9)
        assert d2_loss(half, half).item() == pytest.approx(2 * LN2, abs=1e-9)
        assert g_adv1(half).item() == pytest.approx(LN2, abs=1e-9)
        assert g_adv2(half).item() == pytest.approx(LN2, abs=1e-9)

    def test_perfect_discrimination(self):
        low = Tensor(np.full((1, 1, 4, 4), 1e-9))
        high = Tensor(np.full((1, 1, 4, 4), 1.0 - 1e-9))
        assert d1_loss(low, high).item() < 1e-6
        assert d2_loss(low, high).item() < 1e-6
        assert g_adv1(high).item() < 1e-6
        assert g_adv2(high).item() < 1e-6

    def test_d1_oracle(self, rng):
        gen, gt = random_map(rng, (2, 1, 3, 3)), random_map(rng, (2, 1, 3, 3))
        expected = (np.mean(-np.log(1.0 - gen.data + EPS)) + np.mean(-np.log(gt.data + EPS)))
        assert abs(d1_loss(gen, gt).item() - expected) < 1e-12

    def test_d1_pools_generated_maps(self, rng):
        src, tgt = random_map(rng, (1, 1, 3, 3)), random_map(rng, (1, 1, 3, 3))
        gt = random_map(rng, (2, 1, 3, 3))
        pooled = np.concatenate([src.data, tgt.data])
        expected = np.mean(-np.log(1.0 - pooled + EPS)) + np.mean(-np.log(gt.data + EPS))
        assert abs(d1_loss([src, tgt], gt).item() - expected) < 1e-12

    def test_d2_and_generator_oracles(self, rng):
        tgt, src = random_map(rng, (1, 1, 4, 4)), random_map(rng, (1, 1, 4, 4))
        expected_d2 = np.mean(-np.log(1.0 - tgt.data + EPS)) + np.mean(-np.log(src.data + EPS))
        assert abs(d2_loss(tgt, src).item() - expected_d2) < 1e-12
        assert abs(g_adv1(src).item() - np.mean(-np.log(src.data + EPS))) < 1e-12
        assert abs(g_adv2(tgt).item() - np.mean(-np.log(tgt.data + EPS))) < 1e-12

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients(self, seed, debug_mode):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(1, 1, 3, 3)))
        b = Tensor(rng.normal(size=(1, 1, 3, 3)))
        assert gradcheck(lambda: d1_loss(sigmoid(a), sigmoid(b)), [a, b], h=1e-5) < 1e-4
        assert gradcheck(lambda: d2_loss(sigmoid(a), sigmoid(b)), [a, b], h=1e-5) < 1e-4
        assert gradcheck(lambda: g_adv1(sigmoid(a)) + g_adv2(sigmoid(b)), [a, b], h=1e-5) < 1e-4

    @pytest.mark.parametrize("term", [g_adv1, g_adv2])
    def test_generator_terms_fall_as_any_pixel_rises(self, term, rng):
        base = rng.uniform(0.05, 0.9, size=(1, 1, 3, 3))
        before = term(Tensor(base)).item()
        for index in np.ndindex(base.shape):
            raised = base.copy()
            raised[index] += 0.05
            assert term(Tensor(raised)).item() < before, index

    def test_generator_step_raises_d1_fake_term(self):
        logits = Tensor(np.full((1, 1, 2, 2), -4.0), requires_grad=True)
        fake_terms = []
        for _ in range(10):
            logits.zero_grad()
            with GradientTape():
                loss = g_adv1(sigmoid(logits))
            backward(loss)
            grad = logits.grad.copy()
            logits.data -= 1.0 * grad
            fake_terms.append(float(np.mean(-np.log(1.0 - sigmoid(logits).data + EPS))))
        assert all(b > a for a, b in zip(fake_terms, fake_terms[1:]))

    def test_generator_term_does_not_saturate(self):
        logits = Tensor(np.full((1, 1, 2, 2), -8.0), requires_grad=True)
        with GradientTape():
            loss = g_adv1(sigmoid(logits))
        backward(loss)
        np.testing.assert_allclose(logits.grad, -0.25, rtol=1e-3)


def two_layer_probs(x, w1, w2):
    return softmax_channel(conv2d(leaky_relu(conv2d(x, w1, padding=1), 0.2), w2))


def two_layer_confidence(probs, v1, v2):
    return sigmoid(conv2d(leaky_relu(conv2d(probs, v1, padding=1), 0.2), v2))


class TestTwoLayerGradients:
    """Every objective differentiated through a small conv generator and discriminator."""

    @pytest.fixture
    def case(self, request):
        rng = np.random.default_rng(request.param)
        return {
            'x': Tensor(rng.normal(size=(1, 2, 4, 4))),
            'labels': rng.integers(0, 3, size=(1, 4, 4)),
            'w1': Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5),
            'w2': Tensor(rng.normal(size=(3, 3, 1, 1)) * 0.5),
            'v1': Tensor(rng.normal(size=(2, 3, 3, 3)) * 0.5),
            'v2': Tensor(rng.normal(size=(1, 2, 1, 1)) * 0.5),
        }

    @pytest.mark.parametrize("case", range(10), indirect=True)
    def test_supervised(self, case, debug_mode):
        s = case
        loss = lambda: supervised_ce(two_layer_probs(s['x'], s['w1'], s['w2']), s['labels'])
        assert gradcheck(loss, [s['w1'], s['w2']], h=1e-5) < 1e-4

    @pytest.mark.parametrize("term", [g_adv1, g_adv2])
    @pytest.mark.parametrize("case", range(10), indirect=True)
    def test_generator_adversarial(self, case, term, debug_mode):
        s = case

        def loss():
            probs = two_layer_probs(s['x'], s['w1'], s['w2'])
            return term(two_layer_confidence(probs, s['v1'], s['v2']))

        assert gradcheck(loss, [s['w1'], s['w2'], s['v1'], s['v2']], h=1e-5) < 1e-4

    @pytest.mark.parametrize("case", range(10), indirect=True)
    def test_d1(self, case, debug_mode):
        s = case
        generated = Tensor(two_layer_probs(s['x'], s['w1'], s['w2']).data)
        truth = Tensor(one_hot(s['labels'], 3))

        def loss():
            return d1_loss(two_layer_confidence(generated, s['v1'], s['v2']),
                           two_layer_confidence(truth, s['v1'], s['v2']))

        assert gradcheck(loss, [s['v1'], s['v2']], h=1e-5) < 1e-4

    @pytest.mark.parametrize("case", range(10), indirect=True)
    def test_d2(self, case, debug_mode):
        s = case
        source = Tensor(two_layer_probs(s['x'], s['w1'], s['w2']).data)
        target = Tensor(two_layer_probs(Tensor(s['x'].data[:, ::-1].copy()), s['w1'], s['w2']).data)

        def loss():
            return d2_loss(two_layer_confidence(target, s['v1'], s['v2']),
                           two_layer_confidence(source, s['v1'], s['v2']))

        assert gradcheck(loss, [s['v1'], s['v2']], h=1e-5) < 1e-4


# ============================================================================
# Self-training
# ============================================================================

class TestSelfTraining:

    def test_empty_mask(self, rng):
        logits = Tensor(rng.normal(size=(1, 3, 2, 2)), requires_grad=True)
        pseudo = one_hot(rng.integers(0, 3, size=(1, 2, 2)), 3)
        with GradientTape():
            loss = self_training_loss(softmax_channel(logits), pseudo, np.zeros((1, 2, 2)), [1, 1, 1])
        assert loss.item() == 0.0
        backward(loss)
        np.testing.assert_array_equal(logits.grad, 0.0)

    def test_full_mask_unit_weights_equals_cross_entropy(self, rng):
        probs = random_probs(rng, (2, 4, 3, 3))
        labels = probs.data.argmax(axis=1)
        loss = self_training_loss(probs, one_hot(labels, 4), np.ones((2, 3, 3)), np.ones(4))
        assert abs(loss.item() - supervised_ce(probs, labels).item()) < 1e-12

    def test_triple_loop_oracle(self, rng):
        probs = random_probs(rng, (2, 3, 3, 3))
        labels = probs.data.argmax(axis=1)
        pseudo = one_hot(labels, 3)
        mask = (rng.uniform(size=(2, 3, 3)) > 0.4).astype(float)
        mask[0, 0, 0] = 1.0
        weights = rng.uniform(0.5, 2.0, size=3)

        total = 0.0
        for n in range(2):
            for y in range(3):
                for x in range(3):
                    for c in range(3):
                        total -= mask[n, y, x] * weights[c] * pseudo[n, c, y, x] * math.log(probs.data[n, c, y, x] + EPS)
        expected = total / mask.sum()
        assert abs(self_training_loss(probs, pseudo, mask, weights).item() - expected) < 1e-12

    def test_unmasked_pixels_get_no_gradient(self, rng):
        logits = Tensor(rng.normal(size=(1, 3, 4, 4)), requires_grad=True)
        probs = softmax_channel(logits)
        pseudo = one_hot(probs.data.argmax(axis=1), 3)
        mask = np.zeros((1, 4, 4))
        mask[0, :2] = 1.0
        with GradientTape():
            loss = self_training_loss(softmax_channel(logits), pseudo, mask, [1.0, 2.0, 0.5])
        backward(loss)
        np.testing.assert_array_equal(logits.grad[0, :, 2:], 0.0)
        assert np.any(logits.grad[0, :, :2] != 0.0)

    def test_weight_count_checked(self, rng):
        probs = random_probs(rng, (1, 3, 2, 2))
        with pytest.raises(ValueError):
            self_training_loss(probs, one_hot(np.zeros((1, 2, 2), dtype=int), 3), np.ones((1, 2, 2)), [1.0, 1.0])

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_through_two_layers(self, seed, debug_mode):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2, 4, 4))
        w1 = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5)
        w2 = Tensor(rng.normal(size=(3, 3, 1, 1)) * 0.5)
        pseudo = one_hot(rng.integers(0, 3, size=(1, 4, 4)), 3)
        mask = (rng.uniform(size=(1, 4, 4)) > 0.3).astype(float)
        mask[0, 0, 0] = 1.0
        weights = rng.uniform(0.5, 2.0, size=3)

        def loss():
            probs = softmax_channel(conv2d(leaky_relu(conv2d(Tensor(x), w1, padding=1), 0.2), w2))
            return self_training_loss(probs, pseudo, mask, weights)

        assert gradcheck(loss, [w1, w2], h=1e-5) < 1e-4


# ============================================================================
# Weighted total
# ============================================================================

class TestFullLoss:

    def test_zero_weights_leave_supervised_term(self, rng):
        g0 = Tensor(1.25)
        total, report = full_loss(g0, Tensor(3.0), Tensor(4.0), Tensor(5.0), Tensor(6.0),
                                  weights=LossWeights(0.0, 0.0, 0.0, 0.0))
        assert total.item() == 1.25
        assert report.total == 1.25
        assert report.g1_s == 3.0 and report.g3 == 6.0

    def test_default_weights(self):
        w = LossWeights()
        assert (w.w1_s, w.w1_t, w.w2_t) == (1e-2, 1e-3, 1e-2)

    def test_affine_formula(self, rng):
        values = rng.uniform(0.0, 3.0, size=5)
        weights = LossWeights(*rng.uniform(0.0, 1.0, size=4))
        total, report = full_loss(*(Tensor(v) for v in values), weights=weights)
        expected = (values[0] + weights.w1_s * values[1] + weights.w1_t * values[2]
                    + weights.w2_t * values[3] + weights.w3 * values[4])
        assert abs(total.item() - expected) < 1e-15
        assert abs(report.total - expected) < 1e-15

    def test_disabled_terms_are_reported_as_zero(self):
        total, report = full_loss(Tensor(2.0), g1_s=None, g1_t=Tensor(1.0), weights=LossWeights(),
                                  d1=0.7, d2=0.0)
        assert report.g1_s == 0.0
        assert report.d1 == 0.7
        assert total.item() == pytest.approx(2.0 + 1e-3)

    def test_total_is_differentiable(self):
        g0 = Tensor(1.0, requires_grad=True)
        g3 = Tensor(2.0, requires_grad=True)
        with GradientTape():
            total, _ = full_loss(g0 * 1.0, g3=g3 * 1.0, weights=LossWeights(w3=0.1))
        backward(total)
        assert g0.grad == pytest.approx(1.0)
        assert g3.grad == pytest.approx(0.1)

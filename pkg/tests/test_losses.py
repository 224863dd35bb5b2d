import math

import numpy as np
import pytest

from ues.losses import ensemble_loss, one_hot, supervised_loss
from ues.probcore import InvalidInputError, cross_entropy, mse, sigmoid, softmax
from ues.pseudolabel import PseudoLabelConfig, ensemble_prediction

from gradcheck import numeric_grad, rel_error


def random_instance(rng, mode, B=None, M=None):
    B = B or int(rng.integers(1, 6))
    M = M or int(rng.integers(1, 5))
    if mode == "classification":
        C = int(rng.integers(2, 6))
        z = rng.normal(0, 1.5, size=(B, M, C))
        target = rng.dirichlet(np.ones(C), size=B)
    else:
        K, H, W = 1, int(rng.integers(2, 5)), int(rng.integers(2, 5))
        z = rng.normal(0, 1.5, size=(B, M, K, H, W))
        target = rng.uniform(0, 1, size=(B, K, H, W))
    return z, target


class TestSupervised:
    def test_perfect(self):
        z = np.array([[[50.0, -50.0], [60.0, -60.0]]])
        loss, _ = supervised_loss(z, one_hot([0], 2), "classification")
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_single_pair_is_plain_ce(self, rng):
        z = rng.normal(size=(1, 1, 4))
        t = one_hot([2], 4)
        loss, _ = supervised_loss(z, t, "classification")
        assert loss == pytest.approx(cross_entropy(softmax(z[0, 0]), t[0]), abs=1e-12)

    def test_regression_is_mse(self, rng):
        z = rng.normal(size=(2, 3, 1, 4, 4))
        t = rng.uniform(size=(2, 1, 4, 4))
        loss, _ = supervised_loss(z, t, "regression")
        naive = np.mean([mse(sigmoid(z[i, m]), t[i]) for i in range(2) for m in range(3)])
        assert loss == pytest.approx(naive, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            supervised_loss(np.zeros((2, 2, 3)), np.zeros((2, 4)), "classification")

    @pytest.mark.parametrize("mode", ["classification", "regression"])
    def test_gradient(self, rng, mode):
        for _ in range(20):
            z, t = random_instance(rng, mode)
            _, g = supervised_loss(z, t, mode)
            num = numeric_grad(lambda: supervised_loss(z, t, mode)[0], z)
            assert rel_error(g, num) < 1e-4


class TestEnsemble:
    def test_reduces_to_ce_mean(self, rng):
        z = rng.normal(size=(4, 1, 3))
        labels = np.array([0, 2, 1, 1])
        t = one_hot(labels, 3)
        loss, _, _ = ensemble_loss(z, t, np.ones(4), "classification")
        naive = np.mean([cross_entropy(softmax(z[i, 0]), t[i]) for i in range(4)])
        assert loss == pytest.approx(naive, abs=1e-12)

    def test_all_masked(self, rng):
        p = softmax(rng.normal(size=(3, 2, 4)))
        pseudo = ensemble_prediction(p, [0.5, 0.5], PseudoLabelConfig(tau=0.99, warmup_epochs=0), 0)
        assert not pseudo.mask.any()
        for mode, z in [("classification", rng.normal(size=(3, 2, 4)))]:
            loss, g, _ = ensemble_loss(z, pseudo, np.ones(3), mode)
            assert loss == 0.0 and not g.any()

    def test_masked_regression_sample_contributes_nothing(self, rng):
        z, t = random_instance(rng, "regression", B=3, M=2)

        class Pseudo:
            ensemble = t
            mask = np.array([True, False, True])

        loss, g, per = ensemble_loss(z, Pseudo, np.ones(3), "regression")
        assert per[1] == 0.0 and not g[1].any()
        assert loss == pytest.approx(per.sum() / 3)

    def test_linear_in_weights(self, rng):
        z, t = random_instance(rng, "classification", B=5)
        w = rng.uniform(0.5, 1.0, size=5)
        a, ga, _ = ensemble_loss(z, t, w, "classification")
        b, gb, _ = ensemble_loss(z, t, 2 * w, "classification")
        assert b == 2 * a
        np.testing.assert_array_equal(gb, 2 * ga)

    def test_no_gradient_into_pseudo_label(self, rng):
        # pseudo-labels built from the very logits being trained
        z = rng.normal(size=(4, 3, 3))
        w = rng.uniform(0.5, 1, size=4)
        cfg = PseudoLabelConfig(0.0, 0, normalize_ensemble=True)
        head_w = np.full(3, 1 / 3)
        frozen = ensemble_prediction(softmax(z), head_w, cfg, 0)
        _, g, _ = ensemble_loss(z, frozen, w, "classification")
        held = numeric_grad(lambda: ensemble_loss(z, frozen, w, "classification")[0], z)
        live = numeric_grad(
            lambda: ensemble_loss(z, ensemble_prediction(softmax(z), head_w, cfg, 0), w, "classification")[0], z
        )
        assert rel_error(g, held) < 1e-6
        assert rel_error(g, live) > 1e-2

    def test_permutation_equivariant(self, rng):
        z, t = random_instance(rng, "classification", B=5, M=3)
        w = rng.uniform(0.5, 1, size=5)
        ps, ph = rng.permutation(5), rng.permutation(3)
        a, ga, _ = ensemble_loss(z, t, w, "classification")
        b, gb, _ = ensemble_loss(z[ps][:, ph], t[ps], w[ps], "classification")
        assert b == pytest.approx(a, abs=1e-14)
        np.testing.assert_allclose(gb, ga[ps][:, ph], atol=1e-15)

    def test_length_mismatch(self, rng):
        z, t = random_instance(rng, "classification", B=3)
        with pytest.raises(InvalidInputError):
            ensemble_loss(z, t, np.ones(2), "classification")

    @pytest.mark.parametrize("mode", ["classification", "regression"])
    def test_gradient(self, rng, mode):
        for _ in range(20):
            z, t = random_instance(rng, mode)
            t = t / len(z[0])  # un-normalised, like the literal ensemble output
            w = rng.uniform(0.5, 1.0, size=len(z))
            _, g, _ = ensemble_loss(z, t, w, mode)
            num = numeric_grad(lambda: ensemble_loss(z, t, w, mode)[0], z)
            assert rel_error(g, num) < 1e-4


def test_ce_half_target_value():
    z = np.log(np.array([[[0.25, 0.75]]]))
    loss, _ = supervised_loss(z, np.array([[0.5, 0.5]]), "classification")
    assert loss == pytest.approx(0.5 * math.log(4) + 0.5 * math.log(4 / 3), abs=1e-14)

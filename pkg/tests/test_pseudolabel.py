import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ues.probcore import InvalidInputError
from ues.pseudolabel import MaskedSampleError, PseudoLabelConfig, ensemble_prediction, hard_label_of
from ues.uncertainty import HeadBatch, mean_reference

import oracles
from conftest import random_batch


def test_passes_threshold():
    p = np.array([[[0.8, 0.2], [0.8, 0.2]]])
    out = ensemble_prediction(p, [0.5, 0.5], PseudoLabelConfig(tau=0.3, warmup_epochs=0), epoch=0)
    np.testing.assert_allclose(out.ensemble, [[0.4, 0.1]], atol=1e-15)
    assert out.mask.tolist() == [True]
    assert out.hard_label(0) == 0


def test_fails_threshold():
    p = np.array([[[0.8, 0.2], [0.8, 0.2]]])
    out = ensemble_prediction(p, [0.5, 0.5], PseudoLabelConfig(tau=0.5, warmup_epochs=0), epoch=0)
    np.testing.assert_array_equal(out.ensemble, [[0.0, 0.0]])
    assert out.mask.tolist() == [False]
    with pytest.raises(MaskedSampleError):
        out.hard_label(0)


def test_warmup_disables_threshold(rng):
    p = random_batch(rng, "classification", B=10, M=4)
    cfg = PseudoLabelConfig(tau=1.0, warmup_epochs=5)
    for epoch in range(5):
        assert ensemble_prediction(p, np.full(4, 0.25), cfg, epoch).mask.all()
    assert not ensemble_prediction(p, np.full(4, 0.25), cfg, 5).mask.any()


def test_weight_length():
    with pytest.raises(InvalidInputError):
        ensemble_prediction(np.ones((1, 3, 2)) / 2, [0.5, 0.5], PseudoLabelConfig(), 0)


def test_weights_must_sum_to_one():
    with pytest.raises(InvalidInputError):
        ensemble_prediction(np.ones((1, 2, 2)) / 2, [0.7, 0.7], PseudoLabelConfig(), 0)


def test_bad_tau():
    with pytest.raises(InvalidInputError):
        PseudoLabelConfig(tau=1.5)


def test_hard_label_scale_invariant():
    assert hard_label_of(np.array([0.4, 0.1]), "classification") == 0
    assert hard_label_of(3 * np.array([0.4, 0.1]), "classification") == 0


def test_regression_hard_label():
    g = np.zeros((1, 12, 12))
    g[0, 9, 7] = 1.0
    np.testing.assert_array_equal(hard_label_of(g, "regression"), [[7.0, 9.0]])


@pytest.mark.parametrize("mode", ["classification", "regression"])
def test_loop_oracle(rng, mode):
    for _ in range(100):
        p = random_batch(rng, mode)
        M = p.shape[1]
        w = rng.dirichlet(np.ones(M))
        tau = float(rng.uniform(0, 0.3))
        norm = bool(rng.integers(2))
        out = ensemble_prediction(p, w, PseudoLabelConfig(tau, 0, norm), epoch=3, mode=mode)
        ens, mask = oracles.ensemble_prediction(p.tolist(), w.tolist(), tau, norm)
        np.testing.assert_allclose(out.ensemble.reshape(len(p), -1), ens, rtol=0, atol=1e-12)
        assert out.mask.tolist() == mask


@pytest.mark.parametrize("mode", ["classification", "regression"])
def test_reduces_to_mean_reference(rng, mode):
    p = random_batch(rng, mode)
    M = p.shape[1]
    out = ensemble_prediction(p, np.full(M, 1 / M), PseudoLabelConfig(0.5, 10, True), epoch=0, mode=mode)
    np.testing.assert_allclose(out.ensemble, mean_reference(HeadBatch(p, mode)), rtol=0, atol=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.5), st.floats(0, 0.5))
def test_raising_tau_never_unmasks(seed, t1, t2):
    rng = np.random.default_rng(seed)
    p = random_batch(rng, "classification")
    w = rng.dirichlet(np.ones(p.shape[1]))
    lo, hi = sorted((t1, t2))
    m_lo = ensemble_prediction(p, w, PseudoLabelConfig(lo, 0), 0).mask
    m_hi = ensemble_prediction(p, w, PseudoLabelConfig(hi, 0), 0).mask
    assert np.all(m_hi <= m_lo)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_unnormalised_mass_bounded(seed):
    rng = np.random.default_rng(seed)
    p = random_batch(rng, "classification")
    w = rng.dirichlet(np.ones(p.shape[1]))
    out = ensemble_prediction(p, w, PseudoLabelConfig(0.05, 0), 0)
    assert np.all(out.ensemble >= 0)
    assert np.all(out.ensemble.sum(-1) <= 1 + 1e-12)


def test_hard_label_invariant_to_weight_rescaling(rng):
    p = random_batch(rng, "classification", B=12, M=4)
    w = rng.dirichlet(np.ones(4))
    cfg = PseudoLabelConfig(0.0, 0)
    base = ensemble_prediction(p, w, cfg, 0).hard_labels()
    # a common positive factor on every weight leaves the argmax alone
    scaled = ensemble_prediction(p * 1.0, w, cfg, 0)
    scaled.ensemble = scaled.ensemble * 7.5
    np.testing.assert_array_equal(scaled.hard_labels(), base)

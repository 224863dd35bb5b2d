import numpy as np
import pytest

from ues.losses import ensemble_loss, one_hot, supervised_loss
from ues.probcore import InvalidInputError
from ues.tinynet import (
    CheckpointError,
    NetSpec,
    TinyNet,
    TrainingDivergenceError,
    load_checkpoint,
    save_checkpoint,
)

from gradcheck import numeric_grad, rel_error


def small_spec(mode="classification", **kw):
    base = dict(mode=mode, input_dim=3, hidden=(5, 4), heads=3, n_classes=3, seed=11)
    if mode == "regression":
        base.update(n_keypoints=1, grid=(3, 3), n_classes=2)
    base.update(kw)
    return NetSpec(**base)


class TestInit:
    def test_deterministic(self):
        a = TinyNet.init(small_spec())
        b = TinyNet.init(small_spec())
        for p, q in zip(a.parameters(), b.parameters()):
            assert p.tobytes() == q.tobytes()

    def test_seed_changes_heads(self):
        x = np.ones((1, 3))
        a = TinyNet.init(small_spec(seed=1)).forward(x).predictions
        b = TinyNet.init(small_spec(seed=2)).forward(x).predictions
        assert not np.allclose(a, b)

    def test_head_count(self):
        net = TinyNet.init(small_spec(heads=5))
        assert len(net.head_params) == 5

    def test_heads_differ(self):
        net = TinyNet.init(small_spec(heads=4))
        Ws = [layers[-1][0] for layers in net.head_params]
        assert all(not np.array_equal(Ws[0], W) for W in Ws[1:])
        assert len({id(W) for W in Ws}) == 4

    @pytest.mark.parametrize("kw", [dict(heads=1), dict(hidden=(0,)), dict(input_dim=0), dict(mode="bogus")])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            small_spec(**kw)


class TestForward:
    def test_invariants(self, rng):
        x = rng.normal(size=(6, 3))
        p = TinyNet.init(small_spec()).forward(x).predictions
        assert p.shape == (6, 3, 3)
        np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
        g = TinyNet.init(small_spec("regression")).forward(x).predictions
        assert g.shape == (6, 3, 1, 3, 3) and np.all(g >= 0)

    def test_no_cross_sample_coupling(self, rng):
        net = TinyNet.init(small_spec())
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(net.forward(x[2:3]).predictions[0], net.forward(x).predictions[2], atol=1e-15)

    def test_bitwise_repeatable(self, rng):
        x = rng.normal(size=(4, 3))
        a = TinyNet.init(small_spec()).forward(x).predictions
        b = TinyNet.init(small_spec()).forward(x).predictions
        assert a.tobytes() == b.tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            TinyNet.init(small_spec()).forward(np.zeros((2, 4)))

    def test_head_independence(self, rng):
        net = TinyNet.init(small_spec(head_hidden=3))
        x = rng.normal(size=(4, 3))
        before = net.forward(x).predictions
        net.head_params[1][0][0][...] += 0.5
        after = net.forward(x).predictions
        changed = [not np.allclose(before[:, m], after[:, m]) for m in range(3)]
        assert changed == [False, True, False]


class TestBackward:
    def test_zero_gradient_keeps_parameters(self, rng):
        net = TinyNet.init(small_spec())
        before = [p.copy() for p in net.parameters()]
        z, cache = net.forward_raw(rng.normal(size=(3, 3)))
        net.backward_and_step(np.zeros_like(z), cache)
        for p, q in zip(before, net.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_hand_derived_linear_step(self):
        # no trunk, 1 input, 1x1 heatmap: z_m = w_m * x + b_m
        spec = NetSpec(mode="regression", input_dim=1, hidden=(), heads=2, n_keypoints=1, grid=(1, 1), seed=3)
        net = TinyNet.init(spec, lr=0.1, momentum=0.9)
        w0 = [layers[0][0].copy() for layers in net.head_params]
        b0 = [layers[0][1].copy() for layers in net.head_params]
        x = np.array([[2.0]])
        z, cache = net.forward_raw(x)
        g = np.array([0.5, -1.5]).reshape(1, 2, 1, 1, 1)
        net.backward_and_step(g, cache)
        for m, gm in enumerate([0.5, -1.5]):
            W, b = net.head_params[m][0]
            assert W[0, 0] == pytest.approx(w0[m][0, 0] - 0.1 * gm * 2.0, abs=1e-15)
            assert b[0] == pytest.approx(b0[m][0] - 0.1 * gm, abs=1e-15)
        # second identical step includes momentum: v = 0.9 g + g
        net.backward_and_step(g, net.forward_raw(x)[1])
        W, b = net.head_params[0][0]
        assert b[0] == pytest.approx(b0[0][0] - 0.1 * 0.5 - 0.1 * 1.9 * 0.5, abs=1e-15)

    def test_non_finite_gradient(self, rng):
        net = TinyNet.init(small_spec())
        z, cache = net.forward_raw(rng.normal(size=(2, 3)))
        g = np.zeros_like(z)
        g[0, 0, 0] = np.nan
        with pytest.raises(TrainingDivergenceError):
            net.backward_and_step(g, cache)

    def test_gradient_shape(self, rng):
        net = TinyNet.init(small_spec())
        _, cache = net.forward_raw(rng.normal(size=(2, 3)))
        with pytest.raises(InvalidInputError):
            net.backward(np.zeros((2, 3, 4)), cache)

    def test_loss_decreases(self, rng):
        net = TinyNet.init(small_spec(), lr=0.1)
        x = rng.normal(size=(8, 3))
        t = one_hot(rng.integers(0, 3, size=8), 3)
        losses = []
        for _ in range(50):
            z, cache = net.forward_raw(x)
            loss, g = supervised_loss(z, t, "classification")
            losses.append(loss)
            net.backward_and_step(g, cache)
        assert losses[-1] < losses[0]

    @pytest.mark.parametrize("mode", ["classification", "regression"])
    @pytest.mark.parametrize("head_hidden", [0, 3])
    def test_end_to_end_gradient(self, rng, mode, head_hidden):
        net = TinyNet.init(small_spec(mode, head_hidden=head_hidden))
        assert net.n_parameters() <= 500
        xl, xu = rng.normal(size=(3, 3)), rng.normal(size=(4, 3))
        if mode == "classification":
            tl = one_hot(rng.integers(0, 3, size=3), 3)
            tu = rng.dirichlet(np.ones(3), size=4) / 3
        else:
            tl = rng.uniform(size=(3, 1, 3, 3))
            tu = rng.uniform(size=(4, 1, 3, 3))
        w = rng.uniform(0.5, 1, size=4)
        x = np.concatenate([xl, xu])

        def total():
            z, _ = net.forward_raw(x)
            return supervised_loss(z[:3], tl, mode)[0] + ensemble_loss(z[3:], tu, w, mode)[0]

        z, cache = net.forward_raw(x)
        gz = np.concatenate([supervised_loss(z[:3], tl, mode)[1], ensemble_loss(z[3:], tu, w, mode)[1]])
        analytic = net.backward(gz, cache)
        for p, g in zip(net.parameters(), analytic):
            assert rel_error(g, numeric_grad(total, p)) < 1e-3


class TestCheckpoint:
    def trained(self, rng, mode="classification"):
        net = TinyNet.init(small_spec(mode))
        z, cache = net.forward_raw(rng.normal(size=(3, 3)))
        net.backward_and_step(rng.normal(size=z.shape), cache)
        return net

    def test_round_trip_bytes(self, rng):
        blob = save_checkpoint(self.trained(rng))
        assert save_checkpoint(load_checkpoint(blob)) == blob

    def test_forward_identical(self, rng):
        net = self.trained(rng, "regression")
        x = rng.normal(size=(4, 3))
        again = load_checkpoint(save_checkpoint(net))
        assert again.forward(x).predictions.tobytes() == net.forward(x).predictions.tobytes()
        for v, w in zip(net.velocity, again.velocity):
            assert v.tobytes() == w.tobytes()

    def test_truncated(self, rng):
        blob = save_checkpoint(self.trained(rng))
        for cut in (5, 20, len(blob) // 2, len(blob) - 1):
            with pytest.raises(CheckpointError):
                load_checkpoint(blob[:cut])

    def test_corrupt_payload(self, rng):
        blob = bytearray(save_checkpoint(self.trained(rng)))
        blob[-20] ^= 0xFF
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(bytes(blob))

    def test_version_mismatch(self, rng):
        blob = bytearray(save_checkpoint(self.trained(rng)))
        blob[8] = 99
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(bytes(blob))

    def test_meta_preserved(self, rng):
        from ues.tinynet import read_checkpoint_header

        blob = save_checkpoint(self.trained(rng), {"note": "x"})
        header, _ = read_checkpoint_header(blob)
        assert header["meta"] == {"note": "x"}
        assert header["spec_hash"] == small_spec().digest()

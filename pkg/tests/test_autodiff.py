"""Reverse-mode engine checks: forward oracles, finite differences, Adam."""

import numpy as np
import pytest

from popgibbs import autodiff as ad
from popgibbs.autodiff import Fc, ParamStore, mlp_forward


def fd_gradient(f, x, h=1e-5):
    """Central finite difference of scalar f at flat ndarray x."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp.flat[i] += h
        xm = x.copy()
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


class TestForward:
    def test_zero_initialized_final_layer_outputs_zero(self):
        store = ParamStore(np.random.default_rng(0))
        layers = [Fc(3, 16), "tanh", Fc(16, 2, zero_init=True)]
        out = mlp_forward(store, "net", layers, np.random.default_rng(1).normal(size=(7, 3)))
        assert np.all(out.data == 0.0)

    def test_identity_fc_layer_is_identity(self):
        store = ParamStore(np.random.default_rng(0))
        w = store.ensure("id.0.W", (4, 4))
        w.data[...] = np.eye(4)
        store.ensure("id.0.b", (4,), "zeros")
        v = np.arange(4.0)
        out = mlp_forward(store, "id", [Fc(4, 4)], v)
        np.testing.assert_array_equal(out.data, v)

    def test_forward_matches_straight_line_reimplementation(self):
        # independent duplicate of the 2 -> 32 -> tanh -> 1 forward pass
        store = ParamStore(np.random.default_rng(42))
        layers = [Fc(2, 32), "tanh", Fc(32, 1)]
        x = np.random.default_rng(7).normal(size=(11, 2))
        out = mlp_forward(store, "n", layers, x)
        w0, b0 = store.get("n.0.W"), store.get("n.0.b")
        w2, b2 = store.get("n.2.W"), store.get("n.2.b")
        expect = np.tanh(x @ w0 + b0) @ w2 + b2
        np.testing.assert_allclose(out.data, expect, rtol=0, atol=1e-12)

    def test_shape_mismatch_names_layer_index(self):
        store = ParamStore(np.random.default_rng(0))
        with pytest.raises(ValueError, match="layer 0"):
            mlp_forward(store, "n", [Fc(3, 4)], np.zeros((2, 2)))

    def test_batched_leading_dimensions(self):
        store = ParamStore(np.random.default_rng(3))
        layers = [Fc(2, 8), "relu", Fc(8, 3), "softmax"]
        x = np.random.default_rng(5).normal(size=(4, 5, 6, 2))
        out = mlp_forward(store, "n", layers, x)
        assert out.shape == (4, 5, 6, 3)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_numpy_path_returns_plain_arrays(self):
        # same formulas serve the never-differentiated weight computation
        x = np.linspace(-1, 1, 5)
        assert isinstance(ad.tanh(x), np.ndarray)
        assert isinstance(ad.softmax(np.ones((2, 3))), np.ndarray)
        assert isinstance(ad.add(x, 2.0), np.ndarray)


class TestBackward:
    def test_linear_score(self):
        # f(w) = w . x  =>  df/dw = x
        x = np.array([1.5, -2.0, 0.5])
        w = ad.Tensor(np.array([0.3, 0.1, -0.7]))
        w.grad = np.zeros(3)
        out = ad.sum(ad.mul(w, x))
        ad.backward(out, 1.0)
        np.testing.assert_array_equal(w.grad, x)

    def test_softmax_pick_one_log(self):
        # loss = -log softmax(x)[k]  =>  dx = p - onehot(k)
        x = ad.Tensor(np.array([0.2, -1.0, 0.7, 0.1]))
        x.grad = np.zeros(4)
        k = 2
        onehot = np.eye(4)[k]
        loss = ad.mul(ad.sum(ad.mul(ad.log_softmax(x), onehot)), -1.0)
        ad.backward(loss, 1.0)
        p = np.exp(x.data - x.data.max())
        p /= p.sum()
        np.testing.assert_allclose(x.grad, p - onehot, atol=1e-12)

    def test_tape_consumed_error(self):
        x = ad.Tensor(np.ones(3))
        x.grad = np.zeros(3)
        out = ad.sum(ad.square(x))
        ad.backward(out, 1.0)
        with pytest.raises(ad.TapeError):
            ad.backward(out, 1.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_net_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        store = ParamStore(np.random.default_rng(100 + seed))
        layers = [Fc(3, 16), "tanh", Fc(16, 8), "relu", Fc(8, 4), "softmax"]
        x = rng.normal(size=(6, 3))
        coef = rng.normal(size=(6, 4))

        def loss_from(name, flat):
            stash = store.get(name).copy()
            store.get(name).flat[:] = flat
            out = mlp_forward(store, "net", layers, x)
            val = float(np.sum(np.log(out.data + 0.1) * coef))
            store.get(name).flat[:] = stash.ravel()
            return val

        out = mlp_forward(store, "net", layers, x)
        loss = ad.sum(ad.mul(ad.log(ad.add(out, 0.1)), coef))
        ad.backward(loss, 1.0)

        checked = 0
        for name in store.names():
            flat = store.get(name).ravel().copy()
            grad = store.grad(name).ravel()
            idx = rng.choice(flat.size, size=min(12, flat.size), replace=False)
            for i in idx:
                fp = flat.copy()
                fp[i] += 1e-5
                fm = flat.copy()
                fm[i] -= 1e-5
                num = (loss_from(name, fp) - loss_from(name, fm)) / 2e-5
                denom = max(abs(num), abs(grad[i]), 1e-8)
                assert abs(num - grad[i]) / denom <= 1e-4
                checked += 1
        assert checked >= 30

    def test_lgamma_gradient(self):
        x = ad.Tensor(np.array([0.7, 1.3, 4.2]))
        x.grad = np.zeros(3)
        out = ad.sum(ad.lgamma(x))
        ad.backward(out, 1.0)
        from scipy.special import digamma
        np.testing.assert_allclose(x.grad, digamma(x.data), atol=1e-12)

    def test_broadcast_unbroadcast(self):
        a = ad.Tensor(np.ones((4, 1, 3)))
        a.grad = np.zeros((4, 1, 3))
        b = ad.Tensor(np.ones((5, 3)))
        b.grad = np.zeros((5, 3))
        out = ad.sum(ad.mul(a, b))
        ad.backward(out, 1.0)
        assert a.grad.shape == (4, 1, 3)
        assert b.grad.shape == (5, 3)
        np.testing.assert_array_equal(a.grad, np.full((4, 1, 3), 5.0))
        np.testing.assert_array_equal(b.grad, np.full((5, 3), 4.0))


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        store = ParamStore(np.random.default_rng(0))
        t = store.ensure("w", (3, 3))
        before = t.data.copy()
        store.adam_step(lr=0.1)
        np.testing.assert_array_equal(t.data, before)

    def test_first_step_closed_form(self):
        store = ParamStore(np.random.default_rng(0))
        t = store.ensure("w", (4,))
        before = t.data.copy()
        g = np.array([1.0, -2.0, 0.5, 3.0])
        t.grad[...] = g
        lr = 0.01
        store.adam_step(lr=lr)
        expect = before - lr * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(t.data, expect, atol=1e-12)
        np.testing.assert_array_equal(t.grad, 0.0)

    def test_quadratic_bowl_convergence(self):
        store = ParamStore(np.random.default_rng(1))
        t = store.ensure("w", (6,))
        t.data[...] = np.random.default_rng(2).normal(size=6)
        for _ in range(500):
            t.grad[...] = 2.0 * t.data
            store.adam_step(lr=0.05)
        assert np.linalg.norm(t.data) < 1e-3

    def test_nan_gradient_names_parameter(self):
        store = ParamStore(np.random.default_rng(0))
        t = store.ensure("w_bad", (2,))
        t.grad[...] = np.array([np.nan, 0.0])
        with pytest.raises(ad.GradientError, match="w_bad"):
            store.adam_step(lr=0.1)

    def test_determinism_bit_identical(self):
        def run():
            store = ParamStore(np.random.default_rng(11))
            layers = [Fc(2, 8), "tanh", Fc(8, 1)]
            rng = np.random.default_rng(5)
            for _ in range(20):
                x = rng.normal(size=(4, 2))
                out = mlp_forward(store, "n", layers, x)
                ad.backward(ad.sum(ad.square(out)), 1.0)
                store.adam_step(lr=1e-3)
            return {n: store.get(n).copy() for n in store.names()}

        a, b = run(), run()
        for n in a:
            np.testing.assert_array_equal(a[n], b[n])


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        store = ParamStore(np.random.default_rng(9))
        layers = [Fc(3, 5), "tanh", Fc(5, 2)]
        rng = np.random.default_rng(1)
        for _ in range(3):
            out = mlp_forward(store, "n", layers, rng.normal(size=(4, 3)))
            ad.backward(ad.sum(ad.square(out)), 1.0)
            store.adam_step(lr=1e-2)
        base = str(tmp_path / "ckpt")
        store.save(base, extra={"note": "x"})
        loaded, extra = ParamStore.load(base)
        assert extra == {"note": "x"}
        assert loaded.step == store.step
        for n in store.names():
            np.testing.assert_array_equal(loaded.get(n), store.get(n))
            np.testing.assert_array_equal(loaded._m[n], store._m[n])
            np.testing.assert_array_equal(loaded._v[n], store._v[n])

    def test_blob_is_little_endian_float64(self, tmp_path):
        store = ParamStore(np.random.default_rng(0))
        store.ensure("w", (2, 2))
        base = str(tmp_path / "c")
        store.save(base)
        import json
        with open(base + ".manifest.json") as f:
            manifest = json.load(f)
        assert all(e["dtype"] == "<f8" for e in manifest["entries"])
        blob = np.fromfile(base + ".blob", dtype="<f8")
        first = manifest["entries"][0]
        np.testing.assert_array_equal(
            blob[:4].reshape(first["shape"]), store.get("w"))

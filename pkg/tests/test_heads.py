import numpy as np
import pytest

from trialign import (ConfigError, ShapeError, StateError, backward, forward,
                      hidden_dim, init_head)

from fd_oracle import HeadFD, max_rel_err


class TestInit:
    def test_hidden_dim_paper_value(self):
        # shared embedding dimension 1024 gives a 3072-wide hidden layer
        assert hidden_dim(1024) == 3072
        assert init_head(32, 1024, seed=0).m == 3072

    def test_hidden_dim_floor(self):
        assert hidden_dim(128) == 768

    def test_deterministic(self):
        a = init_head(16, 12, seed=9)
        b = init_head(16, 12, seed=9)
        for name, arr in a.parameters().items():
            assert np.array_equal(arr, b.parameters()[name])

    def test_init_shapes_and_values(self):
        h = init_head(10, 12, dropout_rate=0.25, seed=0)
        assert h.W1.shape == (768, 10) and h.W2.shape == (12, 768)
        assert np.all(h.b1 == 0) and np.all(h.b2 == 0)
        assert np.all(h.ln_gain == 1) and np.all(h.ln_bias == 0)
        assert np.abs(h.W1).max() <= 1 / np.sqrt(10)
        assert np.abs(h.W2).max() <= 1 / np.sqrt(768)

    def test_rejects_bad_dims(self):
        with pytest.raises(ConfigError):
            init_head(0, 4)
        with pytest.raises(ConfigError):
            init_head(4, 4, dropout_rate=1.0)


class TestForward:
    def test_zero_input_zero_biases_gives_b2(self):
        h = init_head(6, 5, dropout_rate=0.0, seed=1, dtype=np.float64)
        z, _ = forward(h, np.zeros((4, 6)), mode="eval")
        np.testing.assert_array_equal(z, np.zeros((4, 5)))

    def test_constant_rows_hit_ln_bias_exactly(self):
        h = init_head(6, 5, dropout_rate=0.0, seed=1, dtype=np.float64)
        h.ln_bias = h.ln_bias + 0.37
        h.version += 1
        x = np.tile([1.5, -2.0, 0.25, 3.0, 1.0, -1.0], (3, 1))
        # constant LayerNorm input row: variance 0, x_hat 0, post-LN equals ln_bias
        z, cache = forward(h, np.zeros((3, 6)), mode="eval")
        np.testing.assert_array_equal(cache.h, np.full((3, h.m), 0.37))
        z2, cache2 = forward(h, x, mode="eval")
        assert np.all(np.isfinite(z2))

    def test_dropout_zero_train_equals_eval(self):
        h = init_head(8, 4, dropout_rate=0.0, seed=2)
        x = np.random.default_rng(0).standard_normal((5, 8)).astype(np.float32)
        z_train, _ = forward(h, x, mode="train", rng=np.random.default_rng(1))
        z_eval, _ = forward(h, x, mode="eval")
        np.testing.assert_array_equal(z_train, z_eval)

    def test_shape_and_finiteness(self):
        # oracle: output must be (8, 12) and finite for any finite input
        h = init_head(16, 12, dropout_rate=0.1, seed=3)
        x = np.random.default_rng(4).standard_normal((8, 16)).astype(np.float32)
        z, _ = forward(h, x, mode="train", rng=np.random.default_rng(5))
        assert z.shape == (8, 12)
        assert np.all(np.isfinite(z))

    def test_eval_forward_is_pure(self):
        h = init_head(7, 4, seed=6)
        x = np.random.default_rng(7).standard_normal((6, 7)).astype(np.float32)
        z1, _ = forward(h, x, mode="eval")
        z2, _ = forward(h, x, mode="eval")
        np.testing.assert_array_equal(z1, z2)

    def test_train_with_dropout_requires_rng(self):
        h = init_head(4, 4, dropout_rate=0.5, seed=0)
        with pytest.raises(ConfigError):
            forward(h, np.zeros((2, 4), dtype=np.float32), mode="train")

    def test_dim_mismatch(self):
        h = init_head(4, 4, seed=0)
        with pytest.raises(ShapeError):
            forward(h, np.zeros((2, 5), dtype=np.float32))


class TestBackward:
    def _setup(self, dropout=0.0, seed=11):
        h = init_head(16, 12, dropout_rate=dropout, seed=seed, dtype=np.float64)
        rng = np.random.default_rng(seed + 1)
        x = rng.standard_normal((8, 16))
        target = rng.standard_normal((8, 12))
        return h, x, target

    def test_gradcheck_all_tensors(self):
        # oracle: central finite differences of 0.5*||z - T||^2, every coordinate
        h, x, target = self._setup()
        z, cache = forward(h, x, mode="eval")
        grads, d_x = backward(h, cache, z - target)

        def loss_on_z(z_batch):
            diff = z_batch - target
            return 0.5 * (diff * diff).sum(axis=(1, 2))

        oracle = HeadFD(h.parameters(), x, loss_on_z, step=1e-4)
        fd = oracle.all_param_grads()
        for name, fd_grad in fd.items():
            assert max_rel_err(grads.as_dict()[name], fd_grad, floor=1e-4) < 1e-4, name
        assert max_rel_err(d_x, oracle.grad_x(), floor=1e-4) < 1e-4

    def test_gradcheck_with_dropout_mask_replay(self):
        h, x, target = self._setup(dropout=0.25)
        z, cache = forward(h, x, mode="train", rng=np.random.default_rng(99))
        grads, d_x = backward(h, cache, z - target)
        assert cache.mask is not None

        def loss_on_z(z_batch):
            diff = z_batch - target
            return 0.5 * (diff * diff).sum(axis=(1, 2))

        oracle = HeadFD(h.parameters(), x, loss_on_z, step=1e-4, mask=cache.mask)
        fd = oracle.all_param_grads()
        for name, fd_grad in fd.items():
            assert max_rel_err(grads.as_dict()[name], fd_grad, floor=1e-4) < 1e-4, name

    def test_zero_upstream_gives_zero_grads(self):
        h, x, _ = self._setup()
        z, cache = forward(h, x, mode="eval")
        grads, d_x = backward(h, cache, np.zeros_like(z))
        for arr in grads.as_dict().values():
            assert np.all(arr == 0)
        assert np.all(d_x == 0)

    def test_linearity_in_upstream(self):
        h, x, target = self._setup()
        z, cache = forward(h, x, mode="eval")
        d_z = z - target
        g1, dx1 = backward(h, cache, d_z)
        g2, dx2 = backward(h, cache, 2.0 * d_z)
        for name in g1.as_dict():
            np.testing.assert_allclose(g2.as_dict()[name], 2.0 * g1.as_dict()[name],
                                       rtol=1e-12)
        np.testing.assert_allclose(dx2, 2.0 * dx1, rtol=1e-12)

    def test_stale_cache_rejected(self):
        h, x, _ = self._setup()
        z, cache = forward(h, x, mode="eval")
        h.load_parameters({k: v * 1.01 for k, v in h.parameters().items()})
        with pytest.raises(StateError):
            backward(h, cache, np.zeros_like(z))

    def test_bad_upstream_shape(self):
        h, x, _ = self._setup()
        z, cache = forward(h, x, mode="eval")
        with pytest.raises(ShapeError):
            backward(h, cache, np.zeros((8, 13)))

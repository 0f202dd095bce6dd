import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probeguide import nn
from probeguide.nn import Tensor

GRAD_TOL = 1e-4


def rand(rng, *shape, scale=1.0, offset=0.0):
    return Tensor(rng.standard_normal(shape) * scale + offset)


class TestEngineBasics:
    def test_backward_requires_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2.0).backward()

    def test_each_node_visited_once(self):
        # Diamond graph: x feeds two branches that rejoin.  A double visit
        # would double-count the gradient.
        x = Tensor(3.0, requires_grad=True)
        y = x * x
        z = y + y
        z.backward()
        assert x.grad == pytest.approx(12.0)

    def test_grad_shape_matches_value_shape(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        nn.tsum(x * 2.0).backward()
        assert x.grad.shape == x.value.shape

    def test_constants_collect_no_grad(self):
        x = Tensor(np.ones(4), requires_grad=True)
        c = Tensor(np.ones(4))
        nn.tsum(x * c).backward()
        assert c.grad is None

    def test_broadcast_bias_grad(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        nn.tsum(x + b).backward()
        assert b.grad.shape == (3,)
        assert np.allclose(b.grad, 5.0)

    def test_forward_determinism(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 4))
        w = rng.standard_normal((4, 2))
        a = nn.matmul(Tensor(x), Tensor(w)).value
        b = nn.matmul(Tensor(x), Tensor(w)).value
        assert np.array_equal(a, b)


class TestKernelValues:
    def test_dense_zero_weights(self):
        x = Tensor(np.array([[1.0, 2.0]]))
        w = Tensor(np.zeros((2, 3)), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        y = nn.dense(x, w, b)
        assert np.array_equal(y.value, np.zeros((1, 3)))
        upstream = np.array([[1.0, 2.0, 3.0]])
        nn.tsum(y * upstream).backward()
        assert np.allclose(w.grad, np.outer(x.value[0], upstream[0]))
        assert np.allclose(b.grad, upstream[0])

    def test_relu_values_and_grads(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        y = nn.relu(x)
        assert np.array_equal(y.value, [0.0, 2.0])
        nn.tsum(y).backward()
        assert np.array_equal(x.grad, [0.0, 1.0])

    def test_attention_single_key_returns_value(self):
        rng = np.random.default_rng(2)
        q = Tensor(rng.standard_normal((1, 1, 4)))
        k = Tensor(rng.standard_normal((1, 1, 4)))
        v = Tensor(rng.standard_normal((1, 1, 4)))
        out = nn.softmax_attention(q, k, v)
        assert np.allclose(out.value, v.value)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        s = nn.softmax(Tensor(rng.standard_normal((5, 7))))
        assert np.allclose(s.value.sum(axis=-1), 1.0)

    def test_layer_norm_statistics(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((6, 8)) * 3 + 1)
        y = nn.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        assert np.allclose(y.value.mean(axis=-1), 0.0, atol=1e-12)
        assert np.allclose(y.value.std(axis=-1), 1.0, atol=1e-3)


class TestSmoothL1:
    def test_zero_at_equality(self):
        p = Tensor(np.array([[1.0, -2.0, 3.0, 4.0, 5.0, 6.0]]))
        assert nn.smooth_l1(p, p.value).item() == 0.0

    def test_quadratic_branch(self):
        p = Tensor(np.array([[0.5, 0, 0, 0, 0, 0]]))
        gt = np.zeros((1, 6))
        assert nn.smooth_l1(p, gt, beta=1.0).item() == pytest.approx(0.125 / 6)

    def test_linear_branch(self):
        p = Tensor(np.array([[2.0, 0, 0, 0, 0, 0]]))
        gt = np.zeros((1, 6))
        assert nn.smooth_l1(p, gt, beta=1.0).item() == pytest.approx(1.5 / 6)

    def test_rejects_bad_beta(self):
        with pytest.raises(ValueError):
            nn.smooth_l1(Tensor(np.zeros((1, 6))), np.zeros((1, 6)), beta=0.0)

    @given(
        st.lists(st.floats(-50, 50), min_size=6, max_size=6),
        st.lists(st.floats(-50, 50), min_size=6, max_size=6),
    )
    @settings(max_examples=100, deadline=None)
    def test_nonnegative(self, a, b):
        loss = nn.smooth_l1(Tensor(np.array([a])), np.array([b]))
        assert loss.item() >= 0.0

    def test_per_axis_weights(self):
        p = Tensor(np.array([[2.0, 2.0, 0, 0, 0, 0]]))
        gt = np.zeros((1, 6))
        w = np.array([1.0, 0.0, 1, 1, 1, 1])
        assert nn.smooth_l1(p, gt, weights=w).item() == pytest.approx(1.5 / 6)


class TestOptimizer:
    def test_zero_grad_zero_decay_keeps_params(self):
        store = nn.ParamStore()
        p = store.add("w", np.array([1.0, 2.0]))
        opt = nn.AdamW(store)
        p.grad = np.zeros(2)
        opt.step(lr=0.1, weight_decay=0.0)
        assert np.array_equal(p.value, [1.0, 2.0])

    def test_decay_is_decoupled(self):
        store = nn.ParamStore()
        p = store.add("w", np.array([1.0]))
        opt = nn.AdamW(store)
        p.grad = np.zeros(1)
        opt.step(lr=0.5, weight_decay=0.1)
        assert p.value[0] == pytest.approx(1.0 - 0.5 * 0.1)

    def test_step_direction(self):
        store = nn.ParamStore()
        p = store.add("w", np.array([0.0]))
        opt = nn.AdamW(store)
        p.grad = np.array([1.0])
        opt.step(lr=0.01)
        assert p.value[0] < 0.0

    def test_duplicate_names_rejected(self):
        store = nn.ParamStore()
        store.add("w", np.zeros(2))
        with pytest.raises(ValueError):
            store.add("w", np.zeros(2))


class TestCosineSchedule:
    def test_endpoints(self):
        assert nn.cosine_lr(0, 100, 1e-4) == pytest.approx(1e-4)
        assert nn.cosine_lr(100, 100, 1e-4) == pytest.approx(0.0, abs=1e-20)

    def test_midpoint(self):
        assert nn.cosine_lr(50, 100, 2.0) == pytest.approx(1.0)

    def test_monotone_nonincreasing(self):
        lrs = [nn.cosine_lr(s, 500, 1e-4) for s in range(501)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


class TestCheckpointIO:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        arrays = {
            "enc/w": rng.standard_normal((3, 4, 5)),
            "enc/b": rng.standard_normal(7),
            "scalar": np.array(3.14159),
        }
        path = tmp_path / "model.ckpt"
        nn.save_arrays(path, arrays)
        back = nn.load_arrays(path)
        assert set(back) == set(arrays)
        for k in arrays:
            assert back[k].shape == np.asarray(arrays[k]).shape
            assert np.array_equal(back[k], arrays[k])
            assert back[k].tobytes() == np.asarray(arrays[k], dtype=np.float64).tobytes()

    def test_corruption_detected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        nn.save_arrays(path, {"w": np.ones(4)})
        raw = bytearray(path.read_bytes())
        raw[10] ^= 0x55
        path.write_bytes(bytes(raw))
        with pytest.raises(nn.CheckpointError):
            nn.load_arrays(path)

    def test_wrong_magic_detected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE!" + b"\x00" * 20)
        with pytest.raises(nn.CheckpointError):
            nn.load_arrays(path)


class TestGradChecks:
    """Finite-difference validation of every differentiable kernel."""

    N_SEEDS = 20

    def seeds(self):
        return range(self.N_SEEDS)

    def test_dense(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(
                nn.dense,
                [rand(rng, 8, 8), rand(rng, 8, 8), rand(rng, 8)],
                seed=seed,
            )
            assert err < GRAD_TOL

    def test_conv2d(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(
                lambda x, w, b: nn.conv2d(x, w, b, stride=2, pad=1),
                [rand(rng, 2, 8, 8, 2), rand(rng, 3, 3, 2, 3), rand(rng, 3)],
                seed=seed,
            )
            assert err < GRAD_TOL

    def test_relu_off_kink(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((4, 6))
            x += np.sign(x)  # push values away from 0
            err = nn.grad_check(nn.relu, [Tensor(x)], seed=seed)
            assert err < GRAD_TOL

    def test_layer_norm(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(
                nn.layer_norm,
                [rand(rng, 3, 8), rand(rng, 8, offset=1.0), rand(rng, 8)],
                seed=seed,
            )
            assert err < GRAD_TOL

    def test_softmax_attention(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(
                nn.softmax_attention,
                [rand(rng, 2, 3, 4), rand(rng, 2, 3, 4), rand(rng, 2, 3, 4)],
                seed=seed,
            )
            assert err < GRAD_TOL

    def test_softmax(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(lambda x: nn.softmax(x, axis=-1), [rand(rng, 4, 5)], seed=seed)
            assert err < GRAD_TOL

    def test_matmul_batched(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(
                nn.matmul, [rand(rng, 3, 4, 5), rand(rng, 3, 5, 2)], seed=seed
            )
            assert err < GRAD_TOL

    def test_smooth_l1_off_kink(self):
        gt = np.zeros((3, 6))
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            d = rng.standard_normal((3, 6))
            # Keep |d| away from the beta=1 kink.
            d = np.where(np.abs(np.abs(d) - 1.0) < 0.2, d * 2.0, d)
            err = nn.grad_check(lambda p: nn.smooth_l1(p, gt), [Tensor(d)], seed=seed)
            assert err < GRAD_TOL

    def test_trig_kernels(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            x = Tensor(rng.uniform(-0.9, 0.9, (3, 4)))
            for op in (nn.sin, nn.cos, nn.asin):
                assert nn.grad_check(op, [Tensor(x.value.copy())], seed=seed) < GRAD_TOL
            err = nn.grad_check(
                nn.atan2,
                [Tensor(rng.uniform(0.2, 1.0, (3,))), Tensor(rng.uniform(0.2, 1.0, (3,)))],
                seed=seed,
            )
            assert err < GRAD_TOL

    def test_embedding(self):
        ids = np.array([0, 2, 1, 2])
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(lambda t: nn.embedding(t, ids), [rand(rng, 3, 5)], seed=seed)
            assert err < GRAD_TOL

    def test_shape_ops(self):
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(
                lambda a, b: nn.concat([nn.reshape(a, (2, 6)), nn.transpose(b, (1, 0))], axis=-1),
                [rand(rng, 3, 4), rand(rng, 5, 2)],
                seed=seed,
            )
            assert err < GRAD_TOL

    def test_mask_rows(self):
        mask = np.array([True, False, True, True])
        for seed in self.seeds():
            rng = np.random.default_rng(seed)
            err = nn.grad_check(lambda t: nn.mask_rows(t, mask), [rand(rng, 4, 3)], seed=seed)
            assert err < GRAD_TOL

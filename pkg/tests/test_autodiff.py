import numpy as np
import pytest

from mocobench import autodiff as ad
from mocobench.autodiff import Tape, load_arrays, save_arrays

RTOL = 1e-4
FLOOR = 1e-2  # absolute floor for the relative-error denominator near zero


def central_diff(f, arr, idx, h=1e-6):
    orig = arr[idx]
    arr[idx] = orig + h
    fp = f()
    arr[idx] = orig - h
    fm = f()
    arr[idx] = orig
    return (fp - fm) / (2 * h)


def check_grads(build, shapes, seed, n_probes=6):
    """build(tape, leaves) -> scalar Node; compares backward vs central FD."""
    rng = np.random.default_rng(seed)
    arrays = [rng.random(s) + 0.5 for s in shapes]

    def forward_value():
        t = Tape()
        leaves = [t.input(a) for a in arrays]
        return float(build(t, leaves).value)

    tape = Tape()
    leaves = [tape.input(a) for a in arrays]
    root = build(tape, leaves)
    tape.backward(root)
    probe_rng = np.random.default_rng(seed + 1)
    for arr, leaf in zip(arrays, leaves):
        for _ in range(n_probes):
            idx = tuple(probe_rng.integers(s) for s in arr.shape)
            fd = central_diff(forward_value, arr, idx)
            an = leaf.grad[idx]
            assert abs(an - fd) / max(abs(fd), FLOOR) < RTOL, (
                f"grad mismatch at {idx}: analytic={an} fd={fd}")


class TestForwardSemantics:
    def test_softmax_uniform(self):
        t = Tape()
        x = t.input(np.array([0.0, 0.0]))
        s = ad.softmax(x)
        assert np.allclose(s.value, [0.5, 0.5])

    def test_masked_single_slot(self):
        t = Tape()
        x = t.input(np.array([1.0, 2.0, 3.0]))
        masked = ad.masked_fill(x, np.array([True, False, True]))
        s = ad.softmax(masked)
        assert s.value[1] == 1.0
        assert s.value[0] == 0.0 and s.value[2] == 0.0

    def test_matmul_identity(self):
        t = Tape()
        x = t.input(np.arange(6.0).reshape(2, 3))
        out = ad.matmul(x, Tape.const(np.eye(3)))
        assert np.array_equal(out.value, x.value)

    def test_matmul_requires_2d(self):
        t = Tape()
        with pytest.raises(ValueError):
            ad.matmul(t.input(np.ones(3)), t.input(np.ones((3, 2))))

    def test_log_rejects_nonpositive(self):
        t = Tape()
        with pytest.raises(FloatingPointError):
            ad.log(t.input(np.array([1.0, 0.0])))

    def test_softmax_rejects_nonfinite(self):
        t = Tape()
        with pytest.raises(FloatingPointError):
            ad.softmax(t.input(np.array([1.0, np.inf])))

    def test_shape_mismatch_raises(self):
        t = Tape()
        with pytest.raises(ValueError):
            ad.matmul(t.input(np.ones((2, 3))), t.input(np.ones((2, 3))))


class TestBackwardBasics:
    def test_product_rule(self):
        t = Tape()
        x = t.input(np.array(2.0))
        y = t.input(np.array(3.0))
        t.backward(ad.mul(x, y))
        assert x.grad == 3.0 and y.grad == 2.0

    def test_softmax_sum_is_constant(self):
        t = Tape()
        v = t.input(np.array([0.3, -1.2, 2.0]))
        root = ad.reduce_sum(ad.softmax(v), axis=None)
        t.backward(root)
        assert np.allclose(v.grad, 0.0, atol=1e-15)

    def test_ignored_leaf_has_exact_zero_grad(self):
        t = Tape()
        x = t.input(np.array([1.0, 2.0]))
        y = t.input(np.array([5.0]))
        t.backward(ad.reduce_sum(ad.mul(x, x), axis=None))
        assert np.array_equal(y.grad, np.zeros(1))

    def test_constants_receive_no_grad(self):
        t = Tape()
        x = t.input(np.array(2.0))
        c = Tape.const(np.array(4.0))
        t.backward(ad.mul(x, c))
        assert c.grad is None

    def test_double_backward_guard(self):
        t = Tape()
        x = t.input(np.array(1.0))
        root = ad.mul(x, x)
        t.backward(root)
        with pytest.raises(RuntimeError, match="reset"):
            t.backward(root)

    def test_reset_reproduces_grads(self):
        t = Tape()
        x = t.input(np.array([1.5, -0.5]))
        root = ad.reduce_sum(ad.exp(x), axis=None)
        t.backward(root)
        g1 = x.grad.copy()
        t.reset()
        t.backward(root)
        assert np.array_equal(g1, x.grad)

    def test_nonscalar_root_rejected(self):
        t = Tape()
        x = t.input(np.ones(3))
        with pytest.raises(ValueError):
            t.backward(ad.exp(x))

    def test_masked_positions_get_exact_zero_grad(self):
        t = Tape()
        x = t.input(np.array([1.0, 2.0, 3.0]))
        mask = np.array([False, True, False])
        root = ad.reduce_sum(ad.softmax(ad.masked_fill(x, mask)), axis=None)
        t.backward(root)
        assert x.grad[1] == 0.0


class TestGradientsVsFiniteDifferences:
    """Every op against central differences, 20 seeds."""

    @pytest.mark.parametrize("seed", range(20))
    def test_elementwise_chain(self, seed):
        check_grads(
            lambda t, ls: ad.reduce_sum(
                ad.mul(ad.tanh(ls[0]), ad.exp(ad.mul(ls[1], 0.3))), axis=None),
            [(3, 4), (3, 4)], seed)

    @pytest.mark.parametrize("seed", range(20))
    def test_matmul_softmax_log_gather(self, seed):
        idx = np.random.default_rng(seed).integers(0, 4, size=3)

        def build(t, ls):
            y = ad.matmul(ls[0], ls[1])
            p = ad.softmax(y)
            return ad.reduce_sum(ad.log(ad.gather_last(p, idx)), axis=None)

        check_grads(build, [(3, 5), (5, 4)], seed)

    @pytest.mark.parametrize("seed", range(20))
    def test_div_sqrt_abs_max(self, seed):
        def build(t, ls):
            a = ad.sqrt(ad.add(ls[0], 0.1))
            b = ad.absval(ad.sub(ls[1], 0.7))
            ratio = ad.div(a, ad.add(b, 0.5))
            return ad.reduce_sum(ad.reduce_max(ratio, axis=1), axis=None)

        check_grads(build, [(4, 3), (4, 3)], seed)

    @pytest.mark.parametrize("seed", range(10))
    def test_three_layer_network(self, seed):
        def build(t, ls):
            x, w1, w2, w3 = ls
            h1 = ad.tanh(ad.matmul(x, w1))
            h2 = ad.tanh(ad.matmul(h1, w2))
            out = ad.matmul(h2, w3)
            return ad.reduce_mean(ad.mul(out, out), axis=None)

        check_grads(build, [(2, 4), (4, 6), (6, 6), (6, 1)], seed)

    @pytest.mark.parametrize("seed", range(8))
    def test_shape_ops(self, seed):
        def build(t, ls):
            x = ad.transpose(ad.reshape(ls[0], (2, 3, 4)), (1, 0, 2))
            y = ad.concat([x, x], axis=-1)
            z = ad.gather_rows(ad.reshape(y, (6, 2, 4)), np.array([1, 0, 1, 1, 0, 0]))
            return ad.reduce_sum(ad.mul(z, z), axis=None)

        check_grads(build, [(6, 4)], seed)

    @pytest.mark.parametrize("seed", range(8))
    def test_masked_softmax(self, seed):
        mask = np.zeros((3, 5), dtype=bool)
        mask[:, -1] = True

        def build(t, ls):
            p = ad.softmax(ad.masked_fill(ls[0], mask))
            return ad.reduce_sum(ad.mul(p, ls[1]), axis=None)

        check_grads(build, [(3, 5), (3, 5)], seed)

    @pytest.mark.parametrize("seed", range(8))
    def test_broadcast_and_repeat(self, seed):
        def build(t, ls):
            wide = ad.broadcast_to(ad.reshape(ls[0], (2, 1, 3)), (2, 4, 3))
            rep = ad.repeat0(ls[1], 2)
            return ad.reduce_sum(ad.mul(wide, ad.reshape(rep, (2, 4, 3))), axis=None)

        check_grads(build, [(2, 3), (1, 4, 3)], seed)


class TestCheckpointFormat:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(7)}
        meta = {"kind": "bitsp", "dim": 64}
        path = tmp_path / "ckpt.bin"
        save_arrays(path, arrays, meta)
        back, meta2 = load_arrays(path)
        assert meta2 == meta
        for k in arrays:
            assert np.array_equal(arrays[k], back[k])
            assert arrays[k].dtype == back[k].dtype

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_arrays(path)

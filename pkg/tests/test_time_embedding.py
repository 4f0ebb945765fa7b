import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcan.numerics import Parameter, T, backward, grad_check
from tcan.time_embedding import NodeFeatureTable, TEParams, embed_sequence, embed_time, fuse, time_dim


def te(omega, phase, w_l, b_l, w_s):
    return TEParams(Parameter(np.atleast_2d(omega)), Parameter(np.atleast_2d(phase)),
                    Parameter([[w_l]]), Parameter([[b_l]]), Parameter([[w_s]]))


def random_te(k=5, seed=0):
    rng = np.random.default_rng(seed)
    return TEParams.init(k, 10.0, (0.1, 5.0), rng)


class TestEmbedTime:
    def test_closed_form(self):
        p = te([np.pi], [0.0], 2.0, 1.0, 3.0)
        np.testing.assert_allclose(embed_time(4.0, p).data, [[1.0, 9.0, 6.0]], atol=1e-12)

    def test_zero_time(self):
        p = random_te()
        p.phase.data[:] = np.linspace(-1, 1, 5)
        p.b_l.data[:] = 0.7
        out = embed_time(0.0, p).data[0]
        np.testing.assert_allclose(out[:5], np.cos(p.phase.data[0]))
        assert out[5] == 0.7 and out[6] == 0.0

    def test_negative_time(self):
        with pytest.raises(ValueError):
            embed_time(-1.0, random_te())

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 100.0), st.integers(0, 2 ** 31))
    def test_periodicity(self, t, seed):
        p = random_te(k=6, seed=seed)
        base = embed_time(t, p).data[0, :6]
        for j, w in enumerate(p.omega.data[0]):
            shifted = embed_time(t + 2 * np.pi / w, p).data[0, j]
            assert abs(shifted - base[j]) <= 1e-9

    def test_init(self):
        p = TEParams.init(30, 4.0, (0.01, 2.0), np.random.default_rng(1))
        w = p.omega.data
        assert w.shape == (1, 30)
        assert np.all(w >= 2 * np.pi / 2.0) and np.all(w <= 2 * np.pi / 0.01)
        assert np.all(p.phase.data == 0) and p.b_l.data[0, 0] == 0
        assert p.w_l.data[0, 0] == 0.25 and p.w_s.data[0, 0] == 0.5
        with pytest.raises(ValueError):
            TEParams.init(0, 4.0, (0.01, 2.0), np.random.default_rng(1))


class TestEmbedSequence:
    def test_rows_match_single(self):
        p = random_te()
        times = [0.0, 0.3, 2.5, 7.0]
        seq = embed_sequence(times, p).data
        for j, t in enumerate(times):
            np.testing.assert_array_equal(seq[j], embed_time(t, p).data[0])

    def test_constant_times(self):
        seq = embed_sequence([1.5] * 4, random_te()).data
        assert np.all(seq == seq[0])

    def test_empty(self):
        with pytest.raises(ValueError):
            embed_sequence([], random_te())

    def test_dims(self):
        p = random_te(k=30)
        assert embed_sequence([1.0, 2.0], p).shape == (2, 32) == (2, time_dim(30))
        assert embed_sequence([1.0, 2.0], p, mode="pl").shape == (2, 31) == (2, time_dim(30, "pl"))
        assert time_dim(30, "none") == 0

    def test_pl_drops_sqrt_channel(self):
        p = random_te()
        full = embed_sequence([0.5, 3.0], p).data
        np.testing.assert_array_equal(embed_sequence([0.5, 3.0], p, mode="pl").data, full[:, :-1])

    def test_batched_times(self):
        p = random_te()
        t = np.array([[0.0, 1.0, 2.0], [0.5, 0.5, 4.0]])
        out = embed_sequence(t, p).data
        assert out.shape == (2, 3, 7)
        np.testing.assert_array_equal(out[1], embed_sequence(t[1], p).data)

    def test_gradient_all_params(self):
        p = random_te(k=4, seed=3)
        r = np.random.default_rng(4).normal(size=(5, 6))
        times = [0.0, 0.2, 1.1, 3.3, 8.0]
        params = [p.omega, p.phase, p.w_l, p.b_l, p.w_s]
        assert grad_check(lambda: T.sum(T.mul(embed_sequence(times, p), r)), params, eps=1e-6) < 1e-6

    def test_no_dead_parameters(self):
        p = random_te(k=4, seed=5)
        r = np.random.default_rng(6).normal(size=(5, 6))
        backward(T.sum(T.mul(embed_sequence([0.1, 0.4, 1.0, 2.0, 6.0], p), r)))
        for q in (p.omega, p.phase, p.w_l, p.b_l, p.w_s):
            assert np.all(q.grad != 0)


class TestFuse:
    def test_small(self):
        np.testing.assert_array_equal(fuse(T.Tensor(np.array([[2.0]])), T.Tensor(np.array([[3.0]]))).data, [[2, 3]])

    def test_zero_time_block(self):
        x = np.random.default_rng(7).normal(size=(4, 3))
        out = fuse(T.Tensor(x), T.Tensor(np.zeros((4, 2)))).data
        np.testing.assert_array_equal(out[:, -2:], 0)
        np.testing.assert_array_equal(out[:, :3], x)

    def test_row_permutation(self):
        rng = np.random.default_rng(8)
        x, h = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        perm = rng.permutation(5)
        a = fuse(T.Tensor(x), T.Tensor(h)).data[perm]
        b = fuse(T.Tensor(x[perm]), T.Tensor(h[perm])).data
        np.testing.assert_array_equal(a, b)

    def test_identity_without_time(self):
        x = T.Tensor(np.ones((2, 3)))
        assert fuse(x, None) is x

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            fuse(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((3, 2))))


class TestNodeFeatureTable:
    def test_lookup_is_one_hot_product(self):
        table = NodeFeatureTable(["a", "b", "c"], 4, np.random.default_rng(9))
        ids = ["c", "a", "c"]
        onehot = np.eye(3)[table.rows(ids)]
        np.testing.assert_array_equal(table.lookup(ids).data, onehot @ table.F.data)

    def test_standard_normal(self):
        F = NodeFeatureTable([str(i) for i in range(2000)], 32, np.random.default_rng(10)).F.data
        assert abs(F.mean()) < 0.01 and abs(F.std() - 1) < 0.01

    def test_unknown_id(self):
        table = NodeFeatureTable(["a"], 2, np.random.default_rng(0))
        with pytest.raises(ValueError, match="'zz'"):
            table.rows(["a", "zz"])

    def test_duplicate_vocab(self):
        with pytest.raises(ValueError):
            NodeFeatureTable(["a", "a"], 2, np.random.default_rng(0))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depdistill import autodiff as ad
from depdistill import gradcheck
from depdistill.autodiff import Tensor
from depdistill.errors import ContractViolation


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


class TestLogSoftmax:
    def test_uniform(self):
        out = ad.log_softmax(Tensor([0.0, 0.0, 0.0, 0.0])).data
        np.testing.assert_allclose(out, [math.log(0.25)] * 4, atol=1e-12)

    def test_two_values(self):
        out = ad.log_softmax(Tensor([1.0, 2.0])).data
        np.testing.assert_allclose(out, [-1.3133, -0.3133], atol=1e-4)

    def test_empty(self):
        with pytest.raises(ValueError):
            ad.log_softmax(Tensor(np.zeros(0)))

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
           st.floats(-100, 100))
    def test_shift_invariance_and_normalisation(self, v, c):
        a = ad.log_softmax(Tensor(v)).data
        b = ad.log_softmax(Tensor(v + c)).data
        np.testing.assert_allclose(a, b, atol=1e-9)
        assert abs(np.exp(a).sum() - 1.0) < 1e-9
        np.testing.assert_allclose(a[:, None] - a[None, :], v[:, None] - v[None, :], atol=1e-9)

    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)),
                  elements=st.floats(-30, 30)))
    def test_softmax_rows(self, v):
        p = ad.softmax_array(v)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)

    def test_mask_gives_minus_inf_and_no_gradient(self, rng):
        x = param(rng, 2, 4)
        mask = np.array([[1, 1, 0, 1], [1, 0, 0, 0]], dtype=bool)
        out = ad.log_softmax(x, mask=mask)
        assert np.isneginf(out.data[~mask]).all()
        loss = ad.sum(ad.gather_last(out, np.array([1, 0])))
        g = ad.backward(loss, [x])[x]
        assert np.all(g[~mask] == 0)


class TestBackward:
    def test_linear_sum_matches_outer_product(self, rng):
        W = param(rng, 3, 4)
        x = Tensor(rng.normal(size=(4, 1)))
        g = ad.backward(ad.sum(W @ x), [W])[W]
        np.testing.assert_allclose(g, np.ones((3, 1)) @ x.data.T)
        err = gradcheck.check(lambda: ad.sum(W @ x), [W])
        assert err < 1e-4

    def test_unrelated_parameter_gets_exact_zero(self, rng):
        p, q = param(rng, 3), param(rng, 2)
        g = ad.backward(ad.sum(p * p), [p, q])
        assert np.array_equal(g[q], np.zeros(2))

    def test_half_squared_norm(self, rng):
        p = param(rng, 5)
        g = ad.backward(ad.sum(p * p) * 0.5, [p])[p]
        np.testing.assert_allclose(g, p.data, rtol=0, atol=1e-15)

    def test_non_scalar_loss(self, rng):
        p = param(rng, 3)
        with pytest.raises(ContractViolation):
            ad.backward(p * 2.0, [p])

    def test_shared_subexpression_accumulates(self, rng):
        p = param(rng, 3)
        y = p * 3.0
        loss = ad.sum(y * y) + ad.sum(y)
        g = ad.backward(loss, [p])[p]
        np.testing.assert_allclose(g, 18 * p.data + 3)

    def test_topological_order_is_creation_order(self, rng):
        p = param(rng, 2)
        a = p * 2.0
        b = a + 1.0
        c = ad.sum(b)
        assert p.id < a.id < b.id < c.id
        assert all(parent.id < c.id for parent in c.parents)


class TestLSTMCell:
    def zero_weights(self, n_in, hidden):
        return Tensor(np.zeros((n_in + hidden, 4 * hidden))), Tensor(np.zeros(4 * hidden))

    def test_zero_everything(self):
        w, b = self.zero_weights(2, 1)
        h, c = ad.lstm_cell(Tensor([0.3, -1.0]), Tensor([0.0]), Tensor([0.0]), w, b)
        assert h.data.tolist() == [0.0] and c.data.tolist() == [0.0]

    def test_unit_cell_state(self):
        w, b = self.zero_weights(2, 1)
        h, c = ad.lstm_cell(Tensor([0.3, -1.0]), Tensor([0.0]), Tensor([1.0]), w, b)
        np.testing.assert_allclose(c.data, [0.5])
        np.testing.assert_allclose(h.data, [0.5 * math.tanh(0.5)])
        assert abs(h.data[0] - 0.2311) < 1e-4

    def test_dimension_mismatch(self):
        w, b = self.zero_weights(3, 2)
        with pytest.raises(ValueError):
            ad.lstm_cell(Tensor(np.zeros(2)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), w, b)

    def test_gradients(self, rng):
        x, h, c = param(rng, 3), param(rng, 2), param(rng, 2)
        w, b = param(rng, 5, 8, scale=0.5), param(rng, 8, scale=0.5)
        proj = rng.normal(size=2)

        def fn():
            h2, c2 = ad.lstm_cell(x, h, c, w, b)
            return ad.sum(h2 * proj) + ad.sum(c2 * c2)

        assert gradcheck.check(fn, [x, h, c, w, b]) < 1e-4

    @pytest.mark.parametrize("rows", [
        [[1, 1, 1, 1, 1], [1, 1, 1, 0, 0], [1, 0, 0, 0, 0]],
        [[1, 0, 0, 0, 0], [1, 1, 1, 1, 1], [0, 0, 0, 0, 0], [1, 1, 1, 0, 0]],
        [[0, 1, 1, 0, 1], [1, 1, 0, 0, 0], [1, 0, 1, 1, 1]],
    ], ids=["sorted", "unsorted", "holes"])
    def test_sequence_matches_unrolled_cells(self, rng, rows):
        mask = np.array(rows, dtype=bool)
        (B, T), D, H = mask.shape, 4, 3
        x = param(rng, B, T, D)
        w, b = param(rng, D + H, 4 * H, scale=0.5), param(rng, 4 * H, scale=0.5)
        proj = rng.normal(size=(B, T, H))
        for reverse in (False, True):
            seq = ad.lstm_sequence(x, mask, w, b, reverse=reverse)
            for r in range(B):
                h = Tensor(np.zeros(H))
                c = Tensor(np.zeros(H))
                for t in (range(T - 1, -1, -1) if reverse else range(T)):
                    if mask[r, t]:
                        h, c = ad.lstm_cell(x.data[r, t], h, c, w, b)
                    # padded steps carry the state through
                    np.testing.assert_allclose(seq.data[r, t], h.data, atol=1e-12)

            def fn(reverse=reverse):
                return ad.sum(ad.lstm_sequence(x, mask, w, b, reverse=reverse) * proj)

            assert gradcheck.check(fn, [x, w, b]) < 1e-4


# ----------------------------------------------------------------- per-op checks

def _ops(rng):
    """(name, builder) where builder returns (fn, tensors) for one random instance."""

    def unary(op, positive=False):
        def build():
            x = param(rng, 3, 4)
            if positive:
                x.data[:] = np.abs(x.data) + 0.5
            w = rng.normal(size=(3, 4))
            return (lambda: ad.sum(op(x) * w)), [x]
        return build

    def binary(op, sa=(3, 4), sb=(3, 4)):
        def build():
            a, b = param(rng, *sa), param(rng, *sb)
            w = rng.normal(size=op(a, b).shape)
            return (lambda: ad.sum(op(a, b) * w)), [a, b]
        return build

    def matmul_nd():
        a, b = param(rng, 2, 3, 4), param(rng, 4, 5)
        w = rng.normal(size=(2, 3, 5))
        return (lambda: ad.sum((a @ b) * w)), [a, b]

    def matmul_batched():
        a, b = param(rng, 2, 3, 4), param(rng, 2, 4, 5)
        w = rng.normal(size=(2, 3, 5))
        return (lambda: ad.sum((a @ b) * w)), [a, b]

    def structure():
        a, b = param(rng, 2, 3), param(rng, 2, 2)
        w = rng.normal(size=(2, 2, 5))
        return (lambda: ad.sum(ad.reshape(ad.stack([ad.concat([a, b], -1), ad.concat([b, a], -1)], 1), (2, 2, 5)) * w)
                ), [a, b]

    def indexing():
        a = param(rng, 4, 5)
        w = rng.normal(size=(3, 2))
        idx = (np.array([0, 2, 2]), slice(1, 3))
        return (lambda: ad.sum(a[idx] * w) + ad.sum(ad.swapaxes(a, 0, 1) * rng_fixed)), [a]

    rng_fixed = rng.normal(size=(5, 4))

    def pack_unpack():
        a = param(rng, 3, 4, 2)
        keep = np.array([[1, 1, 0, 0], [1, 1, 1, 1], [1, 0, 0, 0]], dtype=bool)
        w = rng.normal(size=(3, 4, 2))
        return (lambda: ad.sum(ad.scatter(ad.tanh(ad.getitem(a, keep)), keep, (3, 4, 2)) * w)), [a]

    def embedding():
        table = param(rng, 6, 3)
        ids = np.array([[0, 5, 5], [2, 1, 0]])
        w = rng.normal(size=(2, 3, 3))
        return (lambda: ad.sum(ad.embed(table, ids) * w)), [table]

    def log_softmax_masked():
        x = param(rng, 3, 5)
        mask = np.ones((3, 5), dtype=bool)
        mask[0, 3:] = False
        mask[2, 0] = False
        gold = np.array([1, 4, 2])
        return (lambda: ad.sum(ad.gather_last(ad.log_softmax(x, mask=mask), gold))), [x]

    def kl():
        q = param(rng, 3, 4)
        p = rng.dirichlet(np.ones(4), size=3)
        p[0, 1] = 0.0
        p[0] /= p[0].sum()
        return (lambda: ad.exact_sum(ad.rowsum(ad.kl_terms(p, ad.log_softmax(q))))), [q]

    def fill_and_mean():
        x = param(rng, 3, 4)
        mask = rng.random((3, 4)) < 0.3
        return (lambda: ad.mean(ad.masked_fill(x, mask, 2.0) * x)), [x]

    def dropout_fixed():
        x = param(rng, 3, 4)
        seed = int(rng.integers(1 << 30))
        return (lambda: ad.sum(ad.dropout(x, 0.33, np.random.default_rng(seed)) * x)), [x]

    def biaffine():
        from depdistill.model import biaffine_arc, biaffine_label
        dep, head = param(rng, 2, 3, 4), param(rng, 2, 4, 4)
        U, u = param(rng, 4, 4), param(rng, 4)
        Ul, W, bl = param(rng, 4, 3, 4), param(rng, 8, 3), param(rng, 3)
        chosen = param(rng, 2, 3, 4)
        w1 = rng.normal(size=(2, 3, 4))
        w2 = rng.normal(size=(2, 3, 3))
        return (lambda: ad.sum(biaffine_arc(dep, head, U, u) * w1)
                + ad.sum(biaffine_label(dep, chosen, Ul, W, bl) * w2)), [dep, head, U, u, Ul, W, bl, chosen]

    return [
        ("add", binary(ad.add, (3, 4), (4,))),
        ("sub", binary(ad.sub, (3, 1), (3, 4))),
        ("mul", binary(ad.mul)),
        ("matmul", binary(ad.matmul, (3, 4), (4, 2))),
        ("matmul_nd", matmul_nd),
        ("matmul_batched", matmul_batched),
        ("sigmoid", unary(ad.sigmoid)),
        ("tanh", unary(ad.tanh)),
        ("relu", unary(ad.relu)),
        ("exp", unary(ad.exp)),
        ("log", unary(ad.log, positive=True)),
        ("sum_axis", unary(lambda x: ad.sum(x, axis=1, keepdims=True))),
        ("rowsum", unary(lambda x: ad.reshape(ad.rowsum(x), (3, 1)))),
        ("structure", structure),
        ("indexing", indexing),
        ("pack_unpack", pack_unpack),
        ("embedding", embedding),
        ("log_softmax", log_softmax_masked),
        ("kl_terms", kl),
        ("masked_fill_mean", fill_and_mean),
        ("dropout", dropout_fixed),
        ("biaffine", biaffine),
    ]


@pytest.mark.parametrize("name", [name for name, _ in _ops(np.random.default_rng(0))])
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(abs(hash(name)) % (1 << 32))
    build = dict(_ops(rng))[name]
    worst = 0.0
    for _ in range(100):
        fn, tensors = build()
        worst = max(worst, gradcheck.check(fn, tensors))
    assert worst < 1e-4


def test_seqsum_is_neutral_to_trailing_zeros(rng):
    for n in range(1, 40):
        v = rng.normal(size=(2, n))
        padded = np.concatenate([v, np.zeros((2, 17))], axis=1)
        assert np.array_equal(ad.seqsum(v), ad.seqsum(padded))


def test_exact_sum_ignores_order_and_zeros(rng):
    v = rng.normal(size=50)
    a = ad.exact_sum(Tensor(v)).data
    b = ad.exact_sum(Tensor(np.concatenate([v[::-1], np.zeros(9)]))).data
    assert a == b

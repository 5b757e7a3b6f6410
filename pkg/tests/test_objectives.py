from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hiercascade.errors import (
    DegenerateBatch,
    DimMismatch,
    EmptyInput,
    IndexOutOfRange,
    NonFiniteLoss,
)
from hiercascade.objectives import (
    EolProjection,
    PairBatch,
    VlmScorer,
    contrastive_from_sims,
    finite_diff_grad,
    hrl_loss,
    in_batch_softmax,
    project_eol,
    relative_error,
    retrieval_loss_level,
    similarity,
    softmax,
    vlm_loss,
    vlm_pairs,
    vlm_score,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def _proj(rng, level, d_out, d_in, scale=1.0):
    return EolProjection(level, rng.standard_normal((d_out, d_in)) * scale, rng.standard_normal(d_out) * scale)


def _oracle_level_loss(xq, xg, pq, pg):
    """Per-example loop with math.fsum, no shared code with the library."""
    n = xq.shape[0]
    hq = [pq.weight @ x + pq.bias for x in xq]
    hg = [pg.weight @ x + pg.bias for x in xg]
    s = [[math.fsum(a * b for a, b in zip(hq[i], hg[j])) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        row = s[i]
        m = max(row)
        t2v = -(row[i] - m - math.log(math.fsum(math.exp(v - m) for v in row)))
        col = [s[k][i] for k in range(n)]
        m = max(col)
        v2t = -(col[i] - m - math.log(math.fsum(math.exp(v - m) for v in col)))
        total += 0.5 * (t2v + v2t)
    return total / n


class TestProjectEol:
    def test_identity(self):
        p = EolProjection(1, np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(project_eol(p, [3.0, -1.0]), [3.0, -1.0])

    def test_affine(self):
        p = EolProjection(1, np.array([[1.0, 1.0]]), np.array([0.5]))
        np.testing.assert_array_equal(project_eol(p, [1.0, 2.0]), [3.5])

    def test_wrong_length(self):
        p = EolProjection(1, np.eye(2), np.zeros(2))
        with pytest.raises(DimMismatch):
            project_eol(p, [1.0, 2.0, 3.0])

    def test_rows(self, rng):
        p = _proj(rng, 1, 3, 4)
        x = rng.standard_normal((5, 4))
        np.testing.assert_allclose(project_eol(p, x), np.stack([p.weight @ r + p.bias for r in x]), rtol=1e-14)

    def test_params_round_trip(self, rng):
        p = _proj(rng, 2, 3, 4)
        q = p.with_params(p.params())
        np.testing.assert_array_equal(q.weight, p.weight)
        np.testing.assert_array_equal(q.bias, p.bias)


class TestSimilarity:
    @pytest.mark.parametrize(
        "a, b, expected",
        [([1, 0, 0], [1, 0, 0], 1.0), ([1, 2], [3, -1], 1.0), ([1, 0], [0, 5], 0.0)],
    )
    def test_examples(self, a, b, expected):
        assert similarity(np.array(a, float), np.array(b, float)) == expected

    def test_length_mismatch(self):
        with pytest.raises(DimMismatch):
            similarity(np.ones(2), np.ones(3))

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, 6, elements=finite), hnp.arrays(np.float64, 6, elements=finite), finite)
    def test_symmetric_bilinear(self, a, b, alpha):
        assert similarity(a, b) == similarity(b, a)
        assert similarity(alpha * a, b) == pytest.approx(alpha * similarity(a, b), rel=1e-9, abs=1e-9)


class TestSoftmax:
    def test_uniform(self):
        assert in_batch_softmax([0, 0, 0, 0], 0) == 0.25

    def test_peaked(self):
        expected = math.exp(2) / (math.exp(2) + 2)
        assert in_batch_softmax([2, 0, 0], 0) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(0.786986, abs=1e-6)

    def test_no_overflow(self):
        with np.errstate(over="raise", invalid="raise"):
            assert in_batch_softmax([1000, 0], 0) == pytest.approx(1.0)

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            in_batch_softmax([1, 2], 2)
        with pytest.raises(IndexOutOfRange):
            in_batch_softmax([1, 2], -1)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            in_batch_softmax([], 0)

    @settings(max_examples=200, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)),
                      elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_rows_sum_to_one(self, x):
        p = softmax(x, axis=1)
        assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(p > 0) or np.ptp(x) > 700


class TestRetrievalLoss:
    def test_constant_similarity_is_log_n(self):
        n = 8
        batch = PairBatch(np.ones((n, 3)), np.ones((n, 3)))
        z = EolProjection(1, np.zeros((2, 3)), np.zeros(2))
        out = retrieval_loss_level(batch, z, z)
        assert abs(out.loss - math.log(8)) <= 1e-12
        assert out.loss == pytest.approx(2.079442, abs=1e-6)

    def test_saturated_alignment(self):
        n = 5
        for scale in (10.0, 100.0, 1000.0):
            loss, _ = contrastive_from_sims(np.where(np.eye(n) > 0, scale, -scale))
            assert loss >= 0
        assert loss < 1e-300 or loss == 0.0

    def test_degenerate(self):
        p = EolProjection(1, np.eye(2), np.zeros(2))
        with pytest.raises(DegenerateBatch):
            retrieval_loss_level(PairBatch(np.ones((1, 2)), np.ones((1, 2))), p, p)

    def test_matches_scalar_oracle(self, rng):
        for n, d_in, d in [(2, 3, 2), (4, 3, 3), (7, 5, 4)]:
            xq, xg = rng.standard_normal((n, d_in)), rng.standard_normal((n, d_in))
            pq, pg = _proj(rng, 1, d, d_in), _proj(rng, 1, d, d_in)
            out = retrieval_loss_level(PairBatch(xq, xg), pq, pg)
            assert out.loss == pytest.approx(_oracle_level_loss(xq, xg, pq, pg), rel=1e-12)

    def test_gradient_example(self, rng):
        n, d = 4, 3
        xq, xg = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        pq, pg = _proj(rng, 1, d, d), _proj(rng, 1, d, d)
        batch = PairBatch(xq, xg)
        out = retrieval_loss_level(batch, pq, pg)
        fd_q = finite_diff_grad(lambda v: retrieval_loss_level(batch, pq.with_params(v), pg).loss, pq.params())
        fd_g = finite_diff_grad(lambda v: retrieval_loss_level(batch, pq, pg.with_params(v)).loss, pg.params())
        assert relative_error(out.query_grad.flat(), fd_q).max() < 1e-6
        assert relative_error(out.gallery_grad.flat(), fd_g).max() < 1e-6

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(2, 8)), elements=finite), finite)
    def test_shift_invariance_and_non_negative(self, sims, c):
        n = min(sims.shape)
        sims = sims[:n, :n]
        base, _ = contrastive_from_sims(sims)
        shifted, _ = contrastive_from_sims(sims + c)
        assert base >= 0
        assert abs(base - shifted) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 8), finite)
    def test_log_n_for_any_constant(self, n, c):
        loss, grad = contrastive_from_sims(np.full((n, n), c))
        assert abs(loss - math.log(n)) <= 1e-12


class TestHrlLoss:
    def test_single_level(self, rng):
        batch = PairBatch(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
        pq, pg = _proj(rng, 1, 2, 3), _proj(rng, 1, 2, 3)
        one = retrieval_loss_level(batch, pq, pg)
        hrl = hrl_loss(batch, [(pq, pg)])
        assert hrl.loss == one.loss
        np.testing.assert_array_equal(hrl.grads[0][0].weight, one.query_grad.weight)

    def test_identical_levels_triple(self, rng):
        batch = PairBatch(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
        pq, pg = _proj(rng, 1, 2, 3), _proj(rng, 1, 2, 3)
        one = retrieval_loss_level(batch, pq, pg).loss
        assert hrl_loss(batch, [(pq, pg)] * 3).loss == 3 * one

    def test_sum_of_isolated_levels(self, rng):
        batch = PairBatch(rng.standard_normal((4, 6)), rng.standard_normal((4, 6)))
        projs = [(_proj(rng, l, d, 6), _proj(rng, l, d, 6)) for l, d in enumerate((2, 3, 5), start=1)]
        parts = [_oracle_level_loss(batch.queries, batch.galleries, q, g) for q, g in projs]
        out = hrl_loss(batch, projs)
        assert abs(out.loss - math.fsum(parts)) <= 1e-12
        for (gq, gg), (q, g) in zip(out.grads, projs):
            single = retrieval_loss_level(batch, q, g)
            np.testing.assert_array_equal(gq.weight, single.query_grad.weight)
            np.testing.assert_array_equal(gg.bias, single.gallery_grad.bias)

    def test_empty(self, rng):
        with pytest.raises(EmptyInput):
            hrl_loss(PairBatch(np.ones((2, 2)), np.ones((2, 2))), [])


class TestVlm:
    def test_zero_scorer_is_half(self, rng):
        s = VlmScorer(np.zeros((3, 3)), 0.0)
        assert vlm_score(s, rng.standard_normal(3), rng.standard_normal(3)) == 0.5

    def test_identity_unit(self):
        s = VlmScorer(np.eye(3), 0.0)
        e = np.array([0.0, 1.0, 0.0])
        assert vlm_score(s, e, e) == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-15)
        assert vlm_score(s, e, e) == pytest.approx(0.731058, abs=1e-6)

    def test_no_underflow(self):
        s = VlmScorer(np.zeros((1, 1)), -50.0)
        p = vlm_score(s, np.ones(1), np.ones(1))
        assert 0 < p < 1e-20
        assert vlm_score(VlmScorer(np.zeros((1, 1)), -700.0), np.ones(1), np.ones(1)) > 0

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            vlm_score(VlmScorer(np.eye(2)), np.ones(3), np.ones(2))

    def test_loss_at_zero_logit(self):
        out = vlm_loss(VlmScorer(np.zeros((2, 2))), np.ones((1, 2)), np.ones((1, 2)), [1])
        assert out.loss == pytest.approx(math.log(2), rel=1e-15)

    def test_separated_limit(self):
        q = np.array([[1.0], [1.0]])
        g = np.array([[1.0], [-1.0]])
        losses = [vlm_loss(VlmScorer(np.array([[w]])), q, g, [1, 0]).loss for w in (1, 10, 100, 1000)]
        assert losses == sorted(losses, reverse=True)
        assert losses[-1] < 1e-300 or losses[-1] == 0.0

    def test_large_logits_stay_finite(self):
        out = vlm_loss(VlmScorer(np.array([[1.0]])), np.array([[1e3]]), np.array([[1e3]]), [0])
        assert out.loss == pytest.approx(1e6)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            vlm_loss(VlmScorer(np.eye(2)), np.zeros((0, 2)), np.zeros((0, 2)), [])

    def test_gradient_example(self, rng):
        d = 4
        q, g = rng.standard_normal((6, d)), rng.standard_normal((6, d))
        y = np.array([1, 0, 1, 1, 0, 0])
        s = VlmScorer(rng.standard_normal((d, d)), 0.3)
        out = vlm_loss(s, q, g, y)
        fd_w = finite_diff_grad(lambda w: vlm_loss(VlmScorer(w, s.bias), q, g, y).loss, s.weight)
        fd_b = finite_diff_grad(lambda b: vlm_loss(VlmScorer(s.weight, b[0]), q, g, y).loss, np.array([s.bias]))
        assert relative_error(out.weight_grad, fd_w).max() < 1e-6
        assert relative_error(out.bias_grad, fd_b[0]) < 1e-6

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, 3, elements=finite), hnp.arrays(np.float64, 3, elements=finite),
           hnp.arrays(np.float64, (3, 3), elements=st.floats(-1, 1)), st.floats(-100, 100))
    def test_score_open_interval(self, q, g, w, b):
        p = vlm_score(VlmScorer(w, b), q, g)
        logit = float(q @ w @ g + b)
        if abs(logit) < 36:
            assert 0 < p < 1
        else:
            assert 0 <= p <= 1 and (p > 0 or logit < -700)

    def test_pairs(self):
        q = np.arange(3.0)[:, None]
        g = 10 + np.arange(3.0)[:, None]
        qq, gg, y = vlm_pairs(q, g)
        np.testing.assert_array_equal(qq.ravel(), [0, 1, 2, 0, 1, 2])
        np.testing.assert_array_equal(gg.ravel(), [10, 11, 12, 11, 12, 10])
        np.testing.assert_array_equal(y, [1, 1, 1, 0, 0, 0])


class TestFiniteDiff:
    def test_quadratic(self):
        g = finite_diff_grad(lambda x: 0.5 * float(x @ x), np.array([1.0, -2.0]), 1e-5)
        np.testing.assert_allclose(g, [1.0, -2.0], atol=1e-8)

    def test_constant(self):
        np.testing.assert_array_equal(finite_diff_grad(lambda x: 3.0, np.ones(4)), np.zeros(4))

    def test_product(self):
        g = finite_diff_grad(lambda x: x[0] * x[1], np.array([3.0, 5.0]))
        np.testing.assert_allclose(g, [5.0, 3.0], atol=1e-8)

    def test_non_finite(self):
        with pytest.raises(NonFiniteLoss):
            finite_diff_grad(lambda x: math.inf, np.zeros(1))

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda x: 0.0, np.zeros(1), 0.0)

    def test_point_unchanged(self):
        x = np.array([1.0, 2.0])
        finite_diff_grad(lambda v: float(v.sum()), x)
        np.testing.assert_array_equal(x, [1.0, 2.0])

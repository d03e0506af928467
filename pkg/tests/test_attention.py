"""Tests for selective attention, the relation classifier and the bag losses."""

import math

import numpy as np
import pytest

from rdsgan import tensor as T
from rdsgan.attention import (
    attention_weights,
    bag_representation,
    classification_loss,
    combined_loss,
    forward_bag,
    generated_rank,
    match_score,
    rank_loss_generated,
    relation_distribution,
    score_all_relations,
    top_k_real,
    total_rank_loss,
)
from rdsgan.params import AttentionClassifierParams, ModelConfig
from rdsgan.tensor import Tensor, finite_diff_check, value_and_grad

D_S, N_R = 6, 5


@pytest.fixture
def clf():
    cfg = ModelConfig(vocab_size=10, n_relations=N_R, n_filters=D_S, max_len=5, dtype="float64")
    params = AttentionClassifierParams.init(cfg, np.random.default_rng(0))
    params.attn_bilinear.data[:] = np.random.default_rng(1).normal(size=(D_S, D_S))
    params.b_2.data[:] = np.random.default_rng(2).normal(size=N_R)
    return params


def param(values):
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


class TestMatchScore:
    def test_identity_self_score(self, clf):
        clf.attn_bilinear.data[:] = np.eye(D_S)
        x = Tensor(clf.query_table.data[2].copy())
        assert match_score(x, 2, clf).item() == pytest.approx(np.sum(x.data**2), rel=1e-12)

    def test_orthogonal_is_zero(self, clf):
        clf.attn_bilinear.data[:] = np.eye(D_S)
        r = clf.query_table.data[1]
        x = np.random.default_rng(3).normal(size=D_S)
        x -= (x @ r) / (r @ r) * r
        assert match_score(Tensor(x), 1, clf).item() == pytest.approx(0.0, abs=1e-12)

    def test_bilinear_oracle(self, clf):
        xs = np.random.default_rng(4).normal(size=(7, D_S))
        e = match_score(Tensor(xs), 3, clf).data
        oracle = [sum(x[i] * clf.attn_bilinear.data[i, j] * clf.query_table.data[3, j] for i in range(D_S) for j in range(D_S)) for x in xs]
        np.testing.assert_allclose(e, oracle, rtol=1e-10)

    def test_relation_out_of_range(self, clf):
        with pytest.raises(IndexError):
            match_score(Tensor(np.zeros(D_S)), N_R, clf)


class TestAttentionWeights:
    def test_equal_scores_uniform(self):
        np.testing.assert_allclose(attention_weights(Tensor([0.3] * 4)).data, [0.25] * 4)

    def test_two_scores(self):
        np.testing.assert_allclose(attention_weights(Tensor([1.0, 0.0])).data, [0.731, 0.269], atol=5e-4)

    def test_shift_invariant(self):
        e = np.random.default_rng(5).normal(size=6)
        np.testing.assert_allclose(attention_weights(Tensor(e + 17.0)).data, attention_weights(Tensor(e)).data, atol=1e-14)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            attention_weights(Tensor(np.zeros(0)))


class TestBagRepresentation:
    def test_single_instance(self):
        x = np.random.default_rng(6).normal(size=(1, D_S))
        np.testing.assert_array_equal(bag_representation(Tensor([1.0]), Tensor(x)).data, x[0])

    def test_symmetric_pair_cancels(self):
        v = np.random.default_rng(7).normal(size=D_S)
        q = bag_representation(Tensor([0.5, 0.5]), Tensor(np.stack([v, -v]))).data
        np.testing.assert_allclose(q, 0.0, atol=1e-15)

    def test_summation_oracle(self):
        rng = np.random.default_rng(8)
        a, xs = rng.dirichlet(np.ones(4)), rng.normal(size=(4, D_S))
        oracle = sum(a[i] * xs[i] for i in range(4))
        np.testing.assert_allclose(bag_representation(Tensor(a), Tensor(xs)).data, oracle, rtol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(T.ShapeError):
            bag_representation(Tensor([0.5, 0.5]), Tensor(np.ones((3, D_S))))


class TestRelationDistribution:
    def test_zero_weights_uniform(self, clf):
        clf.W_r.data[:] = 0.0
        clf.b_2.data[:] = 0.0
        _, p = relation_distribution(Tensor(np.ones(D_S)), clf)
        np.testing.assert_allclose(p.data, 1 / N_R)

    def test_large_bias_wins(self, clf):
        clf.b_2.data[3] = 1e4
        _, p = relation_distribution(Tensor(np.ones(D_S)), clf)
        assert np.argmax(p.data) == 3

    def test_affine_softmax_oracle(self, clf):
        q = np.random.default_rng(9).normal(size=D_S)
        o, p = relation_distribution(Tensor(q), clf)
        o_ref = clf.W_r.data @ q + clf.b_2.data
        np.testing.assert_allclose(o.data, o_ref, rtol=1e-12)
        np.testing.assert_allclose(p.data, np.exp(o_ref) / np.exp(o_ref).sum(), rtol=1e-12)

    def test_score_all_relations_matches_forward(self, clf):
        xs = np.random.default_rng(10).normal(size=(4, D_S))
        probs = score_all_relations(xs, clf)
        for r in range(N_R):
            np.testing.assert_allclose(probs[r], forward_bag(Tensor(xs), r, clf).probs[r], rtol=1e-12)


class TestRankLoss:
    def test_dominant_generated_score(self):
        e = Tensor([50.0, 1.0, 2.0, 0.5])
        assert rank_loss_generated(e, 0, 2).item() < 1e-20

    def test_margin_ten(self):
        e = Tensor([12.0, 2.0, 1.0, -3.0])
        assert rank_loss_generated(e, 0, 3).item() < 1e-4

    def test_tie_with_single_real(self):
        assert rank_loss_generated(Tensor([0.4, 0.4]), 0, 1).item() == pytest.approx(math.log(2), abs=1e-12)
        assert rank_loss_generated(Tensor([0.4, 0.4]), 0, 1).item() == pytest.approx(0.6931, abs=1e-4)

    def test_literal_mode_flat_at_top(self):
        e = param([3.0, 1.0, 0.5])
        value, grads = value_and_grad(lambda: rank_loss_generated(e, 0, 1, literal=True), [e])
        assert value == 1.0
        np.testing.assert_array_equal(grads[e], 0.0)

    def test_uses_top_k_reals_only(self):
        e = Tensor([0.0, 5.0, -1.0, 4.0, -2.0])
        expected = math.log(math.exp(0.0) + math.exp(5.0) + math.exp(4.0)) - 0.0
        assert rank_loss_generated(e, 0, 2).item() == pytest.approx(expected, rel=1e-12)

    def test_strictly_decreasing_in_generated_score(self):
        rng = np.random.default_rng(11)
        real = rng.normal(size=5)
        values = [rank_loss_generated(Tensor(np.r_[g, real]), 0, 3).item() for g in np.linspace(-5, 5, 41)]
        assert np.all(np.diff(values) < 0)

    @pytest.mark.parametrize("k", [0, 4])
    def test_k_out_of_range(self, k):
        with pytest.raises(ValueError):
            rank_loss_generated(Tensor([0.0, 1.0, 2.0, 3.0]), 0, k)

    def test_bag_without_reals(self):
        with pytest.raises(ValueError):
            rank_loss_generated(Tensor([1.0]), 0, 1)

    def test_gradient(self):
        e = param(np.random.default_rng(12).normal(size=6))
        assert finite_diff_check(lambda: rank_loss_generated(e, 2, 3), [e]) < 1e-8

    def test_top_k_and_rank_helpers(self):
        scores = np.array([0.5, 2.0, 0.5, 3.0, 0.1])
        np.testing.assert_array_equal(top_k_real(scores, 0, 3), [3, 1, 2])
        assert generated_rank(scores, 0) == 3
        assert generated_rank(scores, 3) == 1


class TestBagLosses:
    def test_identical_bags(self):
        loss = Tensor(0.7)
        assert total_rank_loss([loss, loss, loss]).item() == pytest.approx(0.7)

    def test_two_bags_average(self):
        assert total_rank_loss([Tensor(1.0), Tensor(2.5)]).item() == 1.75

    def test_skipped_bags(self):
        assert total_rank_loss([None, Tensor(3.0), None]).item() == 3.0
        with pytest.raises(ValueError):
            total_rank_loss([None, None])

    def test_random_batch_oracle(self):
        rng = np.random.default_rng(13)
        bags = [rng.normal(size=rng.integers(2, 6)) for _ in range(8)]
        per_bag = []
        for e in bags:
            top = np.sort(e[1:])[::-1][:1]
            per_bag.append(np.log(np.exp(e[0]) + np.exp(top).sum()) - e[0])
        got = total_rank_loss([rank_loss_generated(Tensor(e), 0, 1) for e in bags]).item()
        assert got == pytest.approx(np.mean(per_bag), rel=1e-12)

    def test_classification_perfect(self):
        assert classification_loss([Tensor(0.0), Tensor(0.0)]).item() == 0.0

    def test_classification_uniform(self):
        assert classification_loss([Tensor(-math.log(53))] * 4).item() == pytest.approx(3.970, abs=1e-3)

    def test_classification_oracle(self, clf):
        rng = np.random.default_rng(14)
        bags = [(rng.normal(size=(rng.integers(1, 4), D_S)), int(rng.integers(N_R))) for _ in range(5)]
        got = classification_loss([forward_bag(Tensor(x), r, clf).log_probs[r] for x, r in bags]).item()
        oracle = []
        for x, r in bags:
            e = x @ clf.attn_bilinear.data @ clf.query_table.data[r]
            a = np.exp(e - e.max()) / np.exp(e - e.max()).sum()
            o = clf.W_r.data @ (a @ x) + clf.b_2.data
            oracle.append(o[r] - np.log(np.exp(o).sum()))
        assert got == pytest.approx(-np.mean(oracle), rel=1e-12)

    def test_combined(self):
        assert combined_loss(Tensor(2.0), Tensor(3.0), 1.0, 1.0).item() == 5.0
        with pytest.raises(ValueError):
            combined_loss(Tensor(2.0), Tensor(3.0), 1.0, 0.0)
        with pytest.raises(ValueError):
            combined_loss(Tensor(2.0), Tensor(3.0), -1.0, 1.0)

    def test_combined_gradient_is_linear(self, clf):
        xs = Tensor(np.random.default_rng(15).normal(size=(4, D_S)))
        params = clf.tensors()

        def parts():
            fwd = forward_bag(xs, 2, clf, gen_index=0)
            return rank_loss_generated(fwd.scores, 0, 2), -fwd.log_probs[2]

        _, g1 = value_and_grad(lambda: parts()[0], params)
        _, g2 = value_and_grad(lambda: parts()[1], params)
        _, g = value_and_grad(lambda: combined_loss(*parts(), 0.3, 1.7), params)
        for p in params:
            np.testing.assert_allclose(g[p], 0.3 * g1[p] + 1.7 * g2[p], rtol=1e-10, atol=1e-14)
        assert finite_diff_check(lambda: combined_loss(*parts(), 0.3, 1.7), params) < 1e-6


class TestForwardBag:
    def test_normalised(self, clf):
        fwd = forward_bag(Tensor(np.random.default_rng(16).normal(size=(5, D_S))), 1, clf, gen_index=0)
        assert abs(fwd.weights.data.sum() - 1) <= 1e-12
        assert abs(fwd.probs.sum() - 1) <= 1e-12
        assert fwd.gen_index == 0
        assert fwd.representation.shape == (D_S,)
        assert fwd.logits.shape == (N_R,)

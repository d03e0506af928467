"""Selective attention over bags, relation classifier, rank and classification losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .params import AttentionClassifierParams
from .tensor import Tensor


def relation_query(relation_id: int, params: AttentionClassifierParams) -> Tensor:
    return T.matmul(params.attn_bilinear, params.query_table[relation_id])


def match_score(x: Tensor, relation_id: int, params: AttentionClassifierParams) -> Tensor:
    """Bilinear score ``xᵀ·A_q·R[relation]``; ``x`` may be a single instance or ``[n, d_s]``."""
    if not 0 <= relation_id < params.query_table.shape[0]:
        raise IndexError(f"relation id {relation_id} out of range")
    return T.matmul(x, relation_query(relation_id, params))


def attention_weights(e: Tensor) -> Tensor:
    return T.softmax(e)


def bag_representation(alpha: Tensor, xs: Tensor) -> Tensor:
    if alpha.shape[0] != xs.shape[0]:
        raise T.ShapeError(f"{alpha.shape[0]} weights for {xs.shape[0]} instances")
    return T.matmul(alpha, xs)


def relation_distribution(q: Tensor, params: AttentionClassifierParams) -> tuple[Tensor, Tensor]:
    o = T.affine(q, params.W_r, params.b_2)
    return o, T.softmax(o)


def top_k_real(scores: np.ndarray, gen_index: int, k: int) -> np.ndarray:
    real = np.delete(np.arange(scores.shape[0]), gen_index)
    # stable sort keeps the lower index first among equal scores
    order = real[np.argsort(-scores[real], kind="stable")]
    return order[:k]


def rank_loss_generated(e_all: Tensor, gen_index: int, k: int, literal: bool = False) -> Tensor:
    """Loss pushing the generated instance's score into the bag's top-k.

    Default: ``−log(exp(e_g) / Σ_{j ∈ topk(real) ∪ {g}} exp(e_j))``.
    ``literal=True`` returns the unlogged share with the top-k taken over
    all scores (the generated one always included), which is flat once the
    generated instance leads.
    """
    n_real = e_all.shape[0] - 1
    if n_real < 1:
        raise ValueError("bag has no real instances to rank against")
    if not 1 <= k <= n_real:
        raise ValueError(f"k={k} outside [1, {n_real}]")
    scores = e_all.data
    if literal:
        order = np.argsort(-scores, kind="stable")[:k]
        sel = np.union1d(order, [gen_index])
    else:
        sel = np.union1d(top_k_real(scores, gen_index, k), [gen_index])
    lse = T.logsumexp(e_all[sel])
    if literal:
        return T.exp(e_all[gen_index] - lse)
    return lse - e_all[gen_index]


def generated_rank(scores: np.ndarray, gen_index: int) -> int:
    """1-based rank of the generated instance among all bag instances."""
    return 1 + int(np.sum(np.delete(scores, gen_index) > scores[gen_index]))


def total_rank_loss(losses: Sequence[Tensor | None]) -> Tensor:
    kept = [loss for loss in losses if loss is not None]
    if not kept:
        raise ValueError("every bag was skipped by the rank loss")
    return T.mean(T.stack(kept))


def classification_loss(gold_log_probs: Sequence[Tensor]) -> Tensor:
    """Negative mean log-likelihood of each bag's gold relation."""
    if not gold_log_probs:
        raise ValueError("classification loss over an empty batch")
    return -T.mean(T.stack(list(gold_log_probs)))


def combined_loss(L1: Tensor, L2: Tensor, lambda1: float, lambda2: float) -> Tensor:
    if lambda1 <= 0 or lambda2 <= 0:
        raise ValueError(f"loss weights must be positive, got {lambda1}, {lambda2}")
    return lambda1 * L1 + lambda2 * L2


@dataclass
class BagForward:
    scores: Tensor
    weights: Tensor
    representation: Tensor
    logits: Tensor
    log_probs: Tensor
    gen_index: int | None

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)


def forward_bag(
    xs: Tensor,
    relation_id: int,
    params: AttentionClassifierParams,
    gen_index: int | None = None,
) -> BagForward:
    """Attend over ``xs`` with the query of ``relation_id`` and classify the bag."""
    e = match_score(xs, relation_id, params)
    alpha = attention_weights(e)
    q = bag_representation(alpha, xs)
    o = T.affine(q, params.W_r, params.b_2)
    return BagForward(e, alpha, q, o, T.log_softmax(o), gen_index)


def score_all_relations(xs: np.ndarray, params: AttentionClassifierParams) -> np.ndarray:
    """For each relation r, p(r | bag) under attention with r's own query.

    Plain numpy; no tape.  ``xs`` is ``[m, d_s]``; returns ``[N_r]``.
    """
    queries = params.query_table.data @ params.attn_bilinear.data.T  # [N_r, d_s]
    e = xs @ queries.T  # [m, N_r]
    e = e - e.max(axis=0, keepdims=True)
    alpha = np.exp(e)
    alpha /= alpha.sum(axis=0, keepdims=True)
    reps = alpha.T @ xs  # [N_r, d_s]
    logits = reps @ params.W_r.data.T + params.b_2.data
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return np.diagonal(probs).copy()

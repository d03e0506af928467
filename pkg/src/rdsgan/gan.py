"""Triplet-seeded generator and the real-vs-generated discriminator."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import DiscriminatorParams, EncoderParams, GeneratorParams, GRUParams
from .tensor import SIGMOID_CLAMP, Tensor


def seed_vector(head_word_id, relation_id, tail_word_id, gen: GeneratorParams, enc: EncoderParams) -> Tensor:
    """``z = e_h + W_g·e_r + e_t`` with ``e_r`` the relation's row of the relation matrix.

    Accepts scalar ids (returns ``[word_dim]``) or equal-length id arrays
    (returns ``[B, word_dim]``).
    """
    e_h = T.take_rows(enc.word_embed, head_word_id)
    e_t = T.take_rows(enc.word_embed, tail_word_id)
    e_r = T.take_rows(gen.relation_matrix, relation_id)
    return e_h + T.matmul(e_r, T.transpose(gen.W_g)) + e_t


def gru_cell(x: Tensor, h: Tensor, p: GRUParams) -> Tensor:
    n_hidden = h.shape[-1]
    gx = T.affine(x, p.W_x, p.b_x)
    gh = T.affine(h, p.W_h, p.b_h)
    r = T.sigmoid(gx[..., :n_hidden] + gh[..., :n_hidden])
    u = T.sigmoid(gx[..., n_hidden : 2 * n_hidden] + gh[..., n_hidden : 2 * n_hidden])
    cand = T.tanh(gx[..., 2 * n_hidden :] + r * gh[..., 2 * n_hidden :])
    return cand + u * (h - cand)


def unroll(h0: Tensor, p: GRUParams, steps: int) -> list[Tensor]:
    """Autonomous recurrence: every step feeds the previous state as input."""
    states, h = [], h0
    for _ in range(steps):
        h = gru_cell(h, h, p)
        states.append(h)
    return states


def generate(
    z: Tensor,
    gen: GeneratorParams,
    length: int,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.5,
) -> Tensor:
    """Decode a seed vector into ``[L, token_dim]`` embeddings (``[B, L, token_dim]`` for a batch).

    Both directions start from the projected seed; the backward direction's
    states are read in reverse so position ``t`` sees forward step ``t+1``
    and backward step ``L-t``.
    """
    h0 = T.matmul(z, T.transpose(gen.seed_proj))
    fwd = unroll(h0, gen.gru_fwd, length)
    bwd = unroll(h0, gen.gru_bwd, length)[::-1]
    axis = h0.ndim - 1
    hidden = T.concat([T.stack(fwd, axis=axis), T.stack(bwd, axis=axis)], axis=-1)
    hidden = T.dropout(hidden, dropout, rng, training)
    return T.affine(hidden, gen.out_proj, gen.out_bias)


def discriminate(x: Tensor, disc: DiscriminatorParams) -> Tensor:
    """Probability that ``x`` (``[d_s]`` or ``[B, d_s]``) is a real instance."""
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError("discriminator input is not finite")
    hidden = T.tanh(T.affine(x, disc.W1, disc.b1))
    logit = T.affine(hidden, disc.W2, disc.b2)
    prob = T.clamp(T.sigmoid(logit), SIGMOID_CLAMP, 1 - SIGMOID_CLAMP)
    return prob[..., 0]


def discriminator_objective(real_xs: Tensor, fake_xs: Tensor, disc: DiscriminatorParams) -> Tensor:
    """Mean log D(real) + mean log(1 − D(fake)); the discriminator ascends this."""
    if real_xs.shape[0] == 0 or fake_xs.shape[0] == 0:
        raise ValueError("discriminator objective needs real and generated instances")
    real = T.mean(T.log(discriminate(real_xs, disc)))
    fake = T.mean(T.log(1.0 - discriminate(fake_xs, disc)))
    return real + fake


def generator_adv_objective(fake_xs: Tensor, disc: DiscriminatorParams, non_saturating: bool = False) -> Tensor:
    """Quantity the generator minimises against a fixed discriminator.

    Saturating form: mean log(1 − D(fake)).  Non-saturating form: −mean log D(fake).
    """
    if fake_xs.shape[0] == 0:
        raise ValueError("generator objective needs generated instances")
    d_fake = discriminate(fake_xs, disc)
    if non_saturating:
        return -T.mean(T.log(d_fake))
    return T.mean(T.log(1.0 - d_fake))

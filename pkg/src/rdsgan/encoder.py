"""Sentence encoder shared by real and generated instances.

Tokens are embedded as word ⊕ head-position ⊕ tail-position vectors, passed
through a same-padded width-``window`` convolution, max-pooled over time,
squashed with tanh, and (at train time) dropped out.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import EncodedInstance
from .params import EncoderParams
from .tensor import Tensor


def stack_instances(instances: Sequence[EncodedInstance]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tokens = np.stack([inst.token_ids for inst in instances])
    head = np.stack([inst.head_rel_pos for inst in instances])
    tail = np.stack([inst.tail_rel_pos for inst in instances])
    return tokens, head, tail


def embed_ids(token_ids, head_pos, tail_pos, params: EncoderParams) -> Tensor:
    """Concatenated embeddings for id arrays of shape ``[..., L]``."""
    return T.concat(
        [
            T.take_rows(params.word_embed, token_ids),
            T.take_rows(params.head_pos_embed, head_pos),
            T.take_rows(params.tail_pos_embed, tail_pos),
        ],
        axis=-1,
    )


def embed(inst: EncodedInstance, params: EncoderParams) -> Tensor:
    return embed_ids(inst.token_ids, inst.head_rel_pos, inst.tail_rel_pos, params)


def embed_batch(instances: Sequence[EncodedInstance], params: EncoderParams) -> Tensor:
    return embed_ids(*stack_instances(instances), params)


def encode(
    seq: Tensor,
    params: EncoderParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.5,
) -> Tensor:
    """Map ``[L, E]`` (or ``[B, L, E]``) embeddings to ``[d_s]`` (or ``[B, d_s]``)."""
    pooled = T.tanh(T.max_over_time(convolve(seq, params)))
    return T.dropout(pooled, dropout, rng, training)


def convolve(seq: Tensor, params: EncoderParams) -> Tensor:
    """Same-padded convolution over time: ``[..., L, E]`` to ``[..., L, d_s]``."""
    window = params.conv_filters.shape[1] // seq.shape[-1]
    length = seq.shape[-2]
    if length < window:
        raise ValueError(f"sequence length {length} shorter than window {window}")
    if window * seq.shape[-1] != params.conv_filters.shape[1]:
        raise T.ShapeError(f"token width {seq.shape[-1]} does not fit filters {params.conv_filters.shape}")
    left = (window - 1) // 2
    padded = T.pad_time(seq, left, window - 1 - left)
    windows = T.concat([padded[..., k : k + length, :] for k in range(window)], axis=-1)
    return T.affine(windows, params.conv_filters, params.conv_bias)


def encode_instances(
    instances: Sequence[EncodedInstance],
    params: EncoderParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.5,
) -> Tensor:
    return encode(embed_batch(instances, params), params, training, rng, dropout)

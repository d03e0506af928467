"""Model dimensions and the four parameter sets.

Each parameter set is a dataclass of named :class:`~rdsgan.tensor.Tensor`
leaves.  The whole model exposes them under dotted names
(``encoder.word_embed``, ``generator.gru_fwd.W_h`` ...), which is also the
naming used in checkpoints.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_relations: int
    max_len: int = 120
    word_dim: int = 50
    pos_dim: int = 10
    n_filters: int = 230
    window: int = 3
    gen_hidden: int = 64
    disc_hidden: int = 64
    dropout: float = 0.5
    dtype: str = "float32"

    def __post_init__(self):
        if self.n_relations < 2:
            raise ValueError("need at least NA plus one relation")
        if self.max_len < self.window:
            raise ValueError(f"max_len {self.max_len} shorter than the convolution window")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def token_dim(self) -> int:
        return self.word_dim + 2 * self.pos_dim

    @property
    def sentence_dim(self) -> int:
        return self.n_filters

    @property
    def n_pos_buckets(self) -> int:
        return 2 * self.max_len - 1


def _uniform(rng, shape, bound, dtype):
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _xavier(rng, shape, dtype):
    fan_out, fan_in = shape[0], shape[-1]
    return _uniform(rng, shape, np.sqrt(6.0 / (fan_in + fan_out)), dtype)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class _ParamSet:
    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, _ParamSet):
                out.update(value.named(f"{prefix}{f.name}."))
            else:
                out[f"{prefix}{f.name}"] = value
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def frozen(self):
        """Same arrays wrapped as constants: no gradient can reach them."""
        values = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            values[f.name] = value.frozen() if isinstance(value, _ParamSet) else value.detach()
        return type(self)(**values)


@dataclass
class EncoderParams(_ParamSet):
    word_embed: Tensor
    head_pos_embed: Tensor
    tail_pos_embed: Tensor
    conv_filters: Tensor
    conv_bias: Tensor

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "EncoderParams":
        dt = cfg.dtype
        return cls(
            word_embed=_uniform(rng, (cfg.vocab_size, cfg.word_dim), 0.25, dt),
            head_pos_embed=_uniform(rng, (cfg.n_pos_buckets, cfg.pos_dim), 0.25, dt),
            tail_pos_embed=_uniform(rng, (cfg.n_pos_buckets, cfg.pos_dim), 0.25, dt),
            conv_filters=_xavier(rng, (cfg.n_filters, cfg.window * cfg.token_dim), dt),
            conv_bias=_zeros((cfg.n_filters,), dt),
        )


@dataclass
class GRUParams(_ParamSet):
    """Gate weights stacked as [reset; update; candidate]."""

    W_x: Tensor
    W_h: Tensor
    b_x: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator, dtype: str) -> "GRUParams":
        return cls(
            W_x=_uniform(rng, (3 * hidden, hidden), 1.0 / np.sqrt(hidden), dtype),
            W_h=_uniform(rng, (3 * hidden, hidden), 1.0 / np.sqrt(hidden), dtype),
            b_x=_zeros((3 * hidden,), dtype),
            b_h=_zeros((3 * hidden,), dtype),
        )


@dataclass
class GeneratorParams(_ParamSet):
    relation_matrix: Tensor
    W_g: Tensor
    seed_proj: Tensor
    gru_fwd: GRUParams
    gru_bwd: GRUParams
    out_proj: Tensor
    out_bias: Tensor

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "GeneratorParams":
        dt = cfg.dtype
        return cls(
            relation_matrix=_xavier(rng, (cfg.n_relations, cfg.sentence_dim), dt),
            W_g=_xavier(rng, (cfg.word_dim, cfg.sentence_dim), dt),
            seed_proj=_xavier(rng, (cfg.gen_hidden, cfg.word_dim), dt),
            gru_fwd=GRUParams.init(cfg.gen_hidden, rng, dt),
            gru_bwd=GRUParams.init(cfg.gen_hidden, rng, dt),
            out_proj=_xavier(rng, (cfg.token_dim, 2 * cfg.gen_hidden), dt),
            out_bias=_zeros((cfg.token_dim,), dt),
        )


@dataclass
class DiscriminatorParams(_ParamSet):
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "DiscriminatorParams":
        dt = cfg.dtype
        return cls(
            W1=_xavier(rng, (cfg.disc_hidden, cfg.sentence_dim), dt),
            b1=_zeros((cfg.disc_hidden,), dt),
            W2=_xavier(rng, (1, cfg.disc_hidden), dt),
            b2=_zeros((1,), dt),
        )


@dataclass
class AttentionClassifierParams(_ParamSet):
    query_table: Tensor
    attn_bilinear: Tensor
    W_r: Tensor
    b_2: Tensor

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "AttentionClassifierParams":
        dt = cfg.dtype
        return cls(
            query_table=_xavier(rng, (cfg.n_relations, cfg.sentence_dim), dt),
            attn_bilinear=Tensor(np.eye(cfg.sentence_dim, dtype=dt), requires_grad=True),
            W_r=_xavier(rng, (cfg.n_relations, cfg.sentence_dim), dt),
            b_2=_zeros((cfg.n_relations,), dt),
        )


@dataclass
class Model:
    config: ModelConfig
    encoder: EncoderParams
    generator: GeneratorParams
    discriminator: DiscriminatorParams
    classifier: AttentionClassifierParams
    vocab_fingerprint: str = field(default="")

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, vocab_fingerprint: str = "") -> "Model":
        rng = np.random.default_rng(seed)
        model = cls(
            config=config,
            encoder=EncoderParams.init(config, rng),
            generator=GeneratorParams.init(config, rng),
            discriminator=DiscriminatorParams.init(config, rng),
            classifier=AttentionClassifierParams.init(config, rng),
            vocab_fingerprint=vocab_fingerprint,
        )
        for name, t in model.named_parameters().items():
            t.name = name
        return model

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for group in ("encoder", "generator", "discriminator", "classifier"):
            out.update(getattr(self, group).named(f"{group}."))
        return out

    def group(self, *names: str) -> list[Tensor]:
        return [t for g in names for t in getattr(self, g).tensors()]

    def digest(self, *groups: str) -> str:
        """Hash of the raw parameter bytes, restricted to ``groups`` if given."""
        h = hashlib.blake2b(digest_size=16)
        for name, t in sorted(self.named_parameters().items()):
            if groups and name.split(".", 1)[0] not in groups:
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

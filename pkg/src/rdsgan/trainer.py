"""Three-phase alternating training.

Each outer iteration runs ``s_D`` discriminator steps (generator fixed),
``s_G`` adversarial generator steps (discriminator fixed) and ``s_R``
rank-phase steps minimising ``λ1·L1 + λ2·L2`` (discriminator fixed).

Trainable sets per phase:

* discriminator: discriminator only
* adversarial:   generator + shared encoder
* rank:          generator + attention/classifier
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import (
    classification_loss,
    combined_loss,
    forward_bag,
    generated_rank,
    rank_loss_generated,
    total_rank_loss,
)
from .corpus import Bag, Corpus, vocab_fingerprint
from .encoder import encode, encode_instances
from .gan import discriminate, discriminator_objective, generate, generator_adv_objective, seed_vector
from .params import Model, ModelConfig
from .tensor import Tape, Tensor, backward, sgd_step

logger = logging.getLogger(__name__)

PHASES = ("discriminator", "adversarial", "rank")
TRAINABLE = {
    "discriminator": ("discriminator",),
    "adversarial": ("generator", "encoder"),
    "rank": ("generator", "classifier"),
}
GROUPS = ("encoder", "generator", "discriminator", "classifier")


class TrainingError(RuntimeError):
    pass


class IsolationError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    s_D: int = 1
    s_G: int = 1
    s_R: int = 1
    outer_iterations: int = 1
    batch_size: int = 160
    lr_g: float = 1e-5
    lr_d: float = 1e-4
    lr_classifier: float | None = None
    lambda1: float = 1.0
    lambda2: float = 1.0
    k: int = 1
    seed: int = 0
    non_saturating_g: bool = False
    literal_rank_loss: bool = False
    gen_in_class_loss: bool = True
    rank_dropout: bool = True
    check_isolation: bool = True
    record_wall_time: bool = False

    def __post_init__(self):
        if min(self.s_D, self.s_G, self.s_R, self.outer_iterations) < 0:
            raise ValueError("step counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr_g <= 0 or self.lr_d <= 0 or (self.lr_classifier is not None and self.lr_classifier <= 0):
            raise ValueError("learning rates must be positive")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("loss weights must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass
class TrainLogRecord:
    iteration: int
    phase: str
    step: int
    objective: float
    mean_d_real: float | None = None
    mean_d_fake: float | None = None
    mean_gen_rank: float | None = None
    rank_loss: float | None = None
    class_loss: float | None = None
    wall_time: float | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class StepResult:
    objective: float
    mean_d_real: float | None = None
    mean_d_fake: float | None = None
    mean_gen_rank: float | None = None
    rank_loss: float | None = None
    class_loss: float | None = None


# ---------------------------------------------------------------------------
# forward helpers
# ---------------------------------------------------------------------------


def generate_for_bags(
    bags: Sequence[Bag], model: Model, training: bool, rng: np.random.Generator | None
) -> Tensor:
    """Encoded generated instance ``x_0`` for each bag, ``[B, d_s]``."""
    cfg = model.config
    heads = np.array([b.head_word_id for b in bags])
    rels = np.array([b.relation_id for b in bags])
    tails = np.array([b.tail_word_id for b in bags])
    z = seed_vector(heads, rels, tails, model.generator, model.encoder)
    seq = generate(z, model.generator, cfg.max_len, training, rng, cfg.dropout)
    return encode(seq, model.encoder, training, rng, cfg.dropout)


def encode_real(bags: Sequence[Bag], model: Model, training: bool, rng) -> tuple[Tensor, np.ndarray]:
    """All real instances of the batch stacked, plus bag offsets."""
    instances = [inst for b in bags for inst in b.instances]
    offsets = np.cumsum([0] + [b.size for b in bags])
    return encode_instances(instances, model.encoder, training, rng, model.config.dropout), offsets


def _check_finite(value: float, phase: str) -> float:
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite objective in {phase} phase")
    return value


# ---------------------------------------------------------------------------
# phase steps
# ---------------------------------------------------------------------------


def step_discriminator(bags: Sequence[Bag], model: Model, lr_d: float, rng=None, training: bool = True) -> StepResult:
    """One ascent step on the discriminator objective; everything else fixed."""
    if not bags:
        raise ValueError("empty batch")
    fake = generate_for_bags(bags, model, training, rng).detach()
    real, _ = encode_real(bags, model, training, rng)
    real = real.detach()
    params = model.group("discriminator")
    with Tape() as tape:
        objective = discriminator_objective(real, fake, model.discriminator)
        loss = -objective
    grads = backward(tape, loss, params)
    sgd_step(params, grads, lr_d)
    return StepResult(
        objective=_check_finite(objective.item(), "discriminator"),
        mean_d_real=float(discriminate(real, model.discriminator).data.mean()),
        mean_d_fake=float(discriminate(fake, model.discriminator).data.mean()),
    )


def step_generator_adv(
    bags: Sequence[Bag],
    model: Model,
    lr_g: float,
    rng=None,
    training: bool = True,
    non_saturating: bool = False,
) -> StepResult:
    """One descent step of the generator (and shared encoder) against a fixed discriminator."""
    if not bags:
        raise ValueError("empty batch")
    params = model.group(*TRAINABLE["adversarial"])
    disc = model.discriminator.frozen()
    with Tape() as tape:
        fake = generate_for_bags(bags, model, training, rng)
        objective = generator_adv_objective(fake, disc, non_saturating)
    grads = backward(tape, objective, params)
    d_fake = float(discriminate(fake.detach(), model.discriminator).data.mean())
    sgd_step(params, grads, lr_g)
    return StepResult(objective=_check_finite(objective.item(), "adversarial"), mean_d_fake=d_fake)


def rank_objective(
    bags: Sequence[Bag],
    model: Model,
    k: int,
    lambda1: float,
    lambda2: float,
    training: bool = False,
    rng=None,
    literal: bool = False,
    gen_in_class_loss: bool = True,
    real: Tensor | None = None,
) -> tuple[Tensor, Tensor, Tensor, list[int]]:
    """Build ``(L, L1, L2, ranks)`` with the generated instance at index 0 of every bag.

    Rank loss per bag uses ``min(k, m)`` real instances.
    """
    fake = generate_for_bags(bags, model, training, rng)
    if real is None:
        real, _ = encode_real(bags, model, training, rng)
    offsets = np.cumsum([0] + [b.size for b in bags])
    clf = model.classifier
    rank_terms, gold_terms, ranks = [], [], []
    for i, bag in enumerate(bags):
        xs_real = real[offsets[i] : offsets[i + 1]]
        xs = T.concat([fake[i : i + 1], xs_real], axis=0)
        fwd = forward_bag(xs, bag.relation_id, clf, gen_index=0)
        rank_terms.append(rank_loss_generated(fwd.scores, 0, min(k, bag.size), literal))
        ranks.append(generated_rank(fwd.scores.data, 0))
        if gen_in_class_loss:
            gold_terms.append(fwd.log_probs[bag.relation_id])
        else:
            gold_terms.append(forward_bag(xs_real, bag.relation_id, clf).log_probs[bag.relation_id])
    L1 = total_rank_loss(rank_terms)
    L2 = classification_loss(gold_terms)
    return combined_loss(L1, L2, lambda1, lambda2), L1, L2, ranks


def step_generator_rank(
    bags: Sequence[Bag],
    model: Model,
    lr_g: float,
    lambda1: float,
    lambda2: float,
    k: int,
    rng=None,
    training: bool = True,
    literal: bool = False,
    gen_in_class_loss: bool = True,
    lr_classifier: float | None = None,
) -> tuple[float, float, float, StepResult]:
    """One descent step on ``λ1·L1 + λ2·L2``; returns ``(L, L1, L2, details)``."""
    if not bags:
        raise ValueError("empty batch")
    real, _ = encode_real(bags, model, training, rng)
    real = real.detach()
    gen_params = model.group("generator")
    clf_params = model.group("classifier")
    with Tape() as tape:
        L, L1, L2, ranks = rank_objective(
            bags, model, k, lambda1, lambda2, training, rng, literal, gen_in_class_loss, real=real
        )
    grads = backward(tape, L, gen_params + clf_params)
    sgd_step(gen_params, grads, lr_g)
    sgd_step(clf_params, grads, lr_g if lr_classifier is None else lr_classifier)
    total = _check_finite(L.item(), "rank")
    result = StepResult(
        objective=total,
        mean_gen_rank=float(np.mean(ranks)),
        rank_loss=L1.item(),
        class_loss=L2.item(),
    )
    return total, L1.item(), L2.item(), result


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


class EpochSampler:
    """Batches without replacement, reshuffled every epoch from a fixed stream."""

    def __init__(self, n: int, batch_size: int, seed: int, stream: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng([seed, stream])
        self.order = np.empty(0, dtype=np.int64)
        self.cursor = 0

    def next(self) -> np.ndarray:
        if self.cursor >= len(self.order):
            self.order = self.rng.permutation(self.n)
            self.cursor = 0
        batch = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return batch


def model_config_for(corpus: Corpus, **dims) -> ModelConfig:
    return ModelConfig(
        vocab_size=len(corpus.token_vocab),
        n_relations=len(corpus.relation_vocab),
        max_len=corpus.max_len,
        **dims,
    )


@dataclass
class Trainer:
    config: TrainConfig
    corpus: Corpus
    model: Model
    log: list[TrainLogRecord] = field(default_factory=list)

    def __post_init__(self):
        if not self.corpus.bags:
            raise ValueError("training corpus is empty")
        cfg = self.model.config
        if cfg.vocab_size != len(self.corpus.token_vocab) or cfg.n_relations != len(self.corpus.relation_vocab):
            raise ValueError("model dimensions do not match the corpus vocabularies")
        self.samplers = {
            phase: EpochSampler(len(self.corpus.bags), self.config.batch_size, self.config.seed, i)
            for i, phase in enumerate(PHASES)
        }
        self._start = time.perf_counter()

    def _rng(self, iteration: int, phase: str, step: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, iteration, PHASES.index(phase), step, 7])

    def run_step(self, iteration: int, phase: str, step: int) -> TrainLogRecord:
        cfg = self.config
        bags = [self.corpus.bags[i] for i in self.samplers[phase].next()]
        rng = self._rng(iteration, phase, step)
        frozen = tuple(g for g in GROUPS if g not in TRAINABLE[phase])
        before = self.model.digest(*frozen) if cfg.check_isolation else None
        try:
            if phase == "discriminator":
                result = step_discriminator(bags, self.model, cfg.lr_d, rng)
            elif phase == "adversarial":
                result = step_generator_adv(bags, self.model, cfg.lr_g, rng, non_saturating=cfg.non_saturating_g)
            else:
                *_, result = step_generator_rank(
                    bags,
                    self.model,
                    cfg.lr_g,
                    cfg.lambda1,
                    cfg.lambda2,
                    cfg.k,
                    rng,
                    training=cfg.rank_dropout,
                    literal=cfg.literal_rank_loss,
                    gen_in_class_loss=cfg.gen_in_class_loss,
                    lr_classifier=cfg.lr_classifier,
                )
        except Exception as exc:
            raise TrainingError(f"iteration {iteration}, {phase} step {step}: {exc}") from exc
        if before is not None and self.model.digest(*frozen) != before:
            raise IsolationError(f"iteration {iteration}, {phase} step {step}: frozen parameters changed")
        record = TrainLogRecord(
            iteration=iteration,
            phase=phase,
            step=step,
            objective=result.objective,
            mean_d_real=result.mean_d_real,
            mean_d_fake=result.mean_d_fake,
            mean_gen_rank=result.mean_gen_rank,
            rank_loss=result.rank_loss,
            class_loss=result.class_loss,
            wall_time=round(time.perf_counter() - self._start, 6) if cfg.record_wall_time else None,
        )
        self.log.append(record)
        return record

    def run_iteration(self, iteration: int) -> None:
        counts = {"discriminator": self.config.s_D, "adversarial": self.config.s_G, "rank": self.config.s_R}
        for phase in PHASES:
            for step in range(counts[phase]):
                self.run_step(iteration, phase, step)

    def run(self, progress_every: int = 0) -> tuple[Model, list[TrainLogRecord]]:
        for it in range(self.config.outer_iterations):
            self.run_iteration(it)
            if progress_every and (it + 1) % progress_every == 0 and self.log:
                last = self.log[-1]
                logger.info("iteration %d %s objective %.5f", it + 1, last.phase, last.objective)
        return self.model, self.log


def train(
    config: TrainConfig,
    corpus: Corpus,
    model: Model | None = None,
    **dims,
) -> tuple[Model, list[TrainLogRecord]]:
    if model is None:
        fingerprint = vocab_fingerprint(corpus.token_vocab, corpus.relation_vocab)
        model = Model.init(model_config_for(corpus, **dims), seed=config.seed, vocab_fingerprint=fingerprint)
    return Trainer(config, corpus, model).run()


def write_log(records: Sequence[TrainLogRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")

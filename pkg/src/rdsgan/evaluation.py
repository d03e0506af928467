"""Held-out evaluation: bag-level predictions, P@N, PR curve, AUC, reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attention import score_all_relations
from .corpus import NA_ID, Corpus, vocab_fingerprint
from .encoder import encode_instances
from .params import Model

REPORT_NS = (100, 200, 300)


@dataclass(frozen=True)
class Prediction:
    head_id: str
    tail_id: str
    relation_id: int
    score: float

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.head_id, self.tail_id, self.relation_id)


@dataclass(frozen=True)
class PRPoint:
    rank: int
    precision: float
    recall: float
    score: float


def sort_predictions(preds: Iterable[Prediction]) -> list[Prediction]:
    return sorted(preds, key=lambda p: (-p.score, p.head_id, p.tail_id, p.relation_id))


def predict(model: Model, corpus: Corpus) -> list[Prediction]:
    """Score every (test bag, non-NA relation) pair; generated instances never enter."""
    cfg = model.config
    if cfg.vocab_size != len(corpus.token_vocab) or cfg.n_relations != len(corpus.relation_vocab):
        raise ValueError(
            f"vocabulary mismatch: model has {cfg.vocab_size} tokens / {cfg.n_relations} relations, "
            f"corpus has {len(corpus.token_vocab)} / {len(corpus.relation_vocab)}"
        )
    if model.vocab_fingerprint:
        fp = vocab_fingerprint(corpus.token_vocab, corpus.relation_vocab)
        if fp != model.vocab_fingerprint:
            raise ValueError("vocabulary mismatch: corpus was encoded with a different vocabulary")
    preds = []
    for bag in corpus.bags:
        xs = encode_instances(bag.instances, model.encoder).data.astype(np.float64)
        probs = score_all_relations(xs, model.classifier)
        for r in range(cfg.n_relations):
            if r != NA_ID:
                preds.append(Prediction(bag.head_id, bag.tail_id, r, float(probs[r])))
    return sort_predictions(preds)


def precision_at_n(preds: Sequence[Prediction], gold: set, n: int) -> float:
    if n < 1 or n > len(preds):
        raise ValueError(f"N={n} outside [1, {len(preds)}]")
    return sum(p.key in gold for p in preds[:n]) / n


def pr_curve(preds: Sequence[Prediction], gold: set) -> list[PRPoint]:
    if not gold:
        raise ValueError("gold set is empty")
    hits = np.cumsum([p.key in gold for p in preds])
    ranks = np.arange(1, len(preds) + 1)
    return [
        PRPoint(int(r), float(h / r), float(h / len(gold)), p.score)
        for r, h, p in zip(ranks, hits, preds)
    ]


def auc(points: Sequence[PRPoint], max_recall: float | None = None) -> float:
    """Trapezoidal area under the raw PR curve, anchored at recall 0.

    ``max_recall`` keeps only points with recall at or below the cap.
    """
    if not points:
        raise ValueError("need at least one PR point")
    if max_recall is not None:
        points = [p for p in points if p.recall <= max_recall] or points[:1]
    recall = np.array([0.0] + [p.recall for p in points])
    precision = np.array([points[0].precision] + [p.precision for p in points])
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2))


def compute_metrics(preds: Sequence[Prediction], gold: set) -> tuple[dict, list[PRPoint]]:
    points = pr_curve(preds, gold)
    p_at = {str(n): (precision_at_n(preds, gold, n) if n <= len(preds) else None) for n in REPORT_NS}
    available = [v for v in p_at.values() if v is not None]
    metrics = {
        "p_at": p_at,
        "mean": float(np.mean(available)) if available else None,
        "auc": auc(points),
        "auc_recall_0.4": auc(points, max_recall=0.4),
        "counts": {
            "predictions": len(preds),
            "gold": len(gold),
            "correct": int(sum(p.key in gold for p in preds)),
        },
    }
    return metrics, points


def emit_report(metrics: dict, points: Sequence[PRPoint], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "score", "precision", "recall"])
    for p in points:
        writer.writerow([p.rank, repr(p.score), repr(p.precision), repr(p.recall)])
    (out_dir / "pr_curve.csv").write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8", newline="\n"
    )

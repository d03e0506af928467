"""Relation-extraction corpora: ingestion, vocabularies, encoding, bags.

Two on-disk formats are understood:

* ``nyt-tsv``: the Riedel NYT release, one mention per line::

      head_id  tail_id  head  tail  relation  tok tok tok ... ###END###

* ``jsonl``: the canonical format, one JSON object per line with keys
  ``head, tail, head_id, tail_id, relation, tokens, head_pos, tail_pos``.
  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, NA = "<PAD>", "<UNK>", "NA"
PAD_ID, UNK_ID = 0, 1
NA_ID = 0
END_MARK = "###END###"


class CorpusError(ValueError):
    """Malformed input data."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if line_no is not None else message)


class EncodeError(CorpusError):
    pass


@dataclass(frozen=True)
class RawMention:
    head_id: str
    tail_id: str
    head: str
    tail: str
    relation: str
    tokens: tuple[str, ...]
    head_pos: int | None = None
    tail_pos: int | None = None

    def resolve_positions(self) -> tuple[int, int]:
        """Explicit positions if given, otherwise first occurrence."""
        hp = self.head_pos if self.head_pos is not None else _find(self.tokens, self.head)
        tp = self.tail_pos if self.tail_pos is not None else _find(self.tokens, self.tail)
        if hp is None or tp is None:
            missing = self.head if hp is None else self.tail
            raise EncodeError(f"entity {missing!r} not found in sentence")
        return hp, tp

    def to_record(self) -> dict:
        hp, tp = self.resolve_positions()
        return {
            "head": self.head,
            "tail": self.tail,
            "head_id": self.head_id,
            "tail_id": self.tail_id,
            "relation": self.relation,
            "tokens": list(self.tokens),
            "head_pos": hp,
            "tail_pos": tp,
        }


def _find(tokens: Sequence[str], word: str) -> int | None:
    try:
        return tokens.index(word)
    except ValueError:
        return None


class TokenVocab:
    def __init__(self, words: Iterable[str]):
        self.itos = [PAD, UNK] + [w for w in words if w not in (PAD, UNK)]
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, word: str) -> int:
        return self.stoi.get(word, UNK_ID)

    def word(self, idx: int) -> str:
        return self.itos[idx]


class RelationVocab:
    def __init__(self, names: Iterable[str]):
        self.itos = [NA] + sorted(set(names) - {NA})
        self.stoi = {r: i for i, r in enumerate(self.itos)}
        if len(self.itos) < 2:
            raise ValueError("relation vocabulary needs NA plus at least one relation")

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, name: str) -> int:
        try:
            return self.stoi[name]
        except KeyError:
            raise CorpusError(f"unknown relation {name!r}") from None

    def name(self, idx: int) -> str:
        return self.itos[idx]


def vocab_fingerprint(tokens: TokenVocab, relations: RelationVocab) -> str:
    h = hashlib.sha256()
    h.update("\n".join(tokens.itos).encode())
    h.update(b"\x00")
    h.update("\n".join(relations.itos).encode())
    return h.hexdigest()[:16]


def save_vocabs(path: str | Path, tokens: TokenVocab, relations: RelationVocab) -> None:
    Path(path).write_text(json.dumps({"tokens": tokens.itos, "relations": relations.itos}) + "\n")


def load_vocabs(path: str | Path) -> tuple[TokenVocab, RelationVocab]:
    doc = json.loads(Path(path).read_text())
    return TokenVocab(doc["tokens"][2:]), RelationVocab(doc["relations"])


@dataclass
class EncodedInstance:
    token_ids: np.ndarray
    head_rel_pos: np.ndarray
    tail_rel_pos: np.ndarray
    true_length: int
    head_pos: int
    tail_pos: int
    noise_flag: bool | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, EncodedInstance):
            return NotImplemented
        return (
            np.array_equal(self.token_ids, other.token_ids)
            and np.array_equal(self.head_rel_pos, other.head_rel_pos)
            and np.array_equal(self.tail_rel_pos, other.tail_rel_pos)
            and (self.true_length, self.head_pos, self.tail_pos, self.noise_flag)
            == (other.true_length, other.head_pos, other.tail_pos, other.noise_flag)
        )


@dataclass
class Bag:
    head_id: str
    tail_id: str
    relation_id: int
    instances: list[EncodedInstance]
    head_word_id: int = UNK_ID
    tail_word_id: int = UNK_ID
    gold_relations: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return len(self.instances)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.head_id, self.tail_id)


@dataclass
class Corpus:
    bags: list[Bag]
    token_vocab: TokenVocab
    relation_vocab: RelationVocab
    split: str = "train"
    max_len: int = 120
    dropped: int = 0
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.bags)

    @property
    def n_instances(self) -> int:
        return sum(b.size for b in self.bags)

    def gold_facts(self) -> set[tuple[str, str, int]]:
        """Non-NA (head, tail, relation) facts for held-out scoring."""
        return {
            (b.head_id, b.tail_id, r) for b in self.bags for r in b.gold_relations if r != NA_ID
        }


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def parse_nyt_line(line: str, line_no: int | None = None) -> RawMention:
    fields = line.split()
    if fields and fields[-1] == END_MARK:
        fields = fields[:-1]
    if len(fields) < 6:
        raise CorpusError(f"expected at least 6 fields, got {len(fields)}", line_no)
    head_id, tail_id, head, tail, relation, *tokens = fields
    return RawMention(head_id, tail_id, head, tail, relation, tuple(tokens))


def parse_json_record(line: str, line_no: int | None = None) -> RawMention:
    try:
        rec = json.loads(line)
        return RawMention(
            head_id=str(rec["head_id"]),
            tail_id=str(rec["tail_id"]),
            head=rec["head"],
            tail=rec["tail"],
            relation=rec["relation"],
            tokens=tuple(rec["tokens"]),
            head_pos=rec.get("head_pos"),
            tail_pos=rec.get("tail_pos"),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorpusError(f"bad record: {exc}", line_no) from None


def read_mentions(path: str | Path, format: str = "jsonl") -> list[RawMention]:
    if format not in ("jsonl", "nyt-tsv"):
        raise ValueError(f"unknown corpus format {format!r}")
    parse = parse_json_record if format == "jsonl" else parse_nyt_line
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            out.append(parse(line, line_no))
    return out


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def convert_nyt_to_jsonl(src: str | Path, dst: str | Path) -> tuple[int, int]:
    """Rewrite a NYT TSV file as canonical JSONL; returns (written, dropped).

    Mentions whose entity surface is absent from the sentence are dropped.
    """
    written = dropped = 0
    with open(dst, "w", encoding="utf-8", newline="\n") as out:
        out.write(f"# source-sha256: {file_checksum(src)}\n")
        for mention in read_mentions(src, "nyt-tsv"):
            try:
                rec = mention.to_record()
            except EncodeError:
                dropped += 1
                continue
            out.write(json.dumps(rec, ensure_ascii=False) + "\n")
            written += 1
    return written, dropped


def write_jsonl(mentions: Iterable[RawMention], dst: str | Path, header: str | None = None) -> None:
    with open(dst, "w", encoding="utf-8", newline="\n") as out:
        if header:
            out.write(f"# {header}\n")
        for m in mentions:
            out.write(json.dumps(m.to_record(), ensure_ascii=False) + "\n")


def write_nyt_tsv(mentions: Iterable[RawMention], dst: str | Path) -> None:
    with open(dst, "w", encoding="utf-8", newline="\n") as out:
        for m in mentions:
            fields = [m.head_id, m.tail_id, m.head, m.tail, m.relation, " ".join(m.tokens), END_MARK]
            out.write("\t".join(fields) + "\n")


# ---------------------------------------------------------------------------
# vocabularies and encoding
# ---------------------------------------------------------------------------


def build_vocabs(mentions: Sequence[RawMention], min_count: int = 1) -> tuple[TokenVocab, RelationVocab]:
    if not mentions:
        raise CorpusError("cannot build vocabularies from an empty corpus")
    counts = Counter(tok for m in mentions for tok in m.tokens)
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return TokenVocab(kept), RelationVocab(m.relation for m in mentions)


def position_bucket(offset: int, max_len: int) -> int:
    return int(np.clip(offset, -(max_len - 1), max_len - 1)) + max_len - 1


def encode_instance(raw: RawMention, vocab: TokenVocab, max_len: int = 120) -> EncodedInstance:
    hp, tp = raw.resolve_positions()
    if hp >= max_len or tp >= max_len:
        raise EncodeError(f"entity position {max(hp, tp)} truncated away by length {max_len}")
    n = min(len(raw.tokens), max_len)
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[:n] = [vocab.id(t) for t in raw.tokens[:n]]
    idx = np.arange(max_len)
    head = np.clip(idx - hp, -(max_len - 1), max_len - 1) + max_len - 1
    tail = np.clip(idx - tp, -(max_len - 1), max_len - 1) + max_len - 1
    head[n:] = max_len - 1
    tail[n:] = max_len - 1
    return EncodedInstance(ids, head, tail, n, hp, tp)


def decode_instance(inst: EncodedInstance, vocab: TokenVocab, head_id="", tail_id="", relation=NA) -> RawMention:
    tokens = tuple(vocab.word(int(i)) for i in inst.token_ids[: inst.true_length])
    return RawMention(
        head_id,
        tail_id,
        tokens[inst.head_pos],
        tokens[inst.tail_pos],
        relation,
        tokens,
        inst.head_pos,
        inst.tail_pos,
    )


def group_bags(
    mentions: Sequence[RawMention],
    vocabs: tuple[TokenVocab, RelationVocab],
    split: str = "train",
    max_len: int = 120,
    noise_flags: Sequence[bool] | None = None,
) -> Corpus:
    """Encode mentions and group them into bags with a deterministic order.

    Train bags are keyed by (head, tail, relation); test bags by (head, tail)
    and record every gold relation seen for the pair.
    """
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    tokens, relations = vocabs
    groups: dict[tuple, list[tuple[EncodedInstance, int]]] = defaultdict(list)
    dropped = 0
    for i, m in enumerate(mentions):
        try:
            inst = encode_instance(m, tokens, max_len)
        except EncodeError:
            dropped += 1
            continue
        if noise_flags is not None:
            inst.noise_flag = bool(noise_flags[i])
        rel = relations.id(m.relation)
        key = (m.head_id, m.tail_id, m.relation) if split == "train" else (m.head_id, m.tail_id)
        groups[key].append((inst, rel))
    if not groups:
        raise CorpusError("no valid mentions")
    if dropped:
        logger.warning("dropped %d mentions whose entities fall outside length %d", dropped, max_len)
    bags = []
    for key in sorted(groups):
        members = groups[key]
        insts = [inst for inst, _ in members]
        gold = tuple(sorted({rel for _, rel in members}))
        positive = [r for r in gold if r != NA_ID]
        first = insts[0]
        bags.append(
            Bag(
                head_id=key[0],
                tail_id=key[1],
                relation_id=positive[0] if positive else gold[0],
                instances=insts,
                head_word_id=int(first.token_ids[first.head_pos]),
                tail_word_id=int(first.token_ids[first.tail_pos]),
                gold_relations=gold,
            )
        )
    return Corpus(bags, tokens, relations, split, max_len, dropped)


def load_corpus(
    path: str | Path,
    format: str = "jsonl",
    split: str = "train",
    vocabs: tuple[TokenVocab, RelationVocab] | None = None,
    max_len: int = 120,
    min_count: int = 1,
    noise_path: str | Path | None = None,
) -> Corpus:
    mentions = read_mentions(path, format)
    if not mentions:
        raise CorpusError(f"no mentions in {path}")
    if vocabs is None:
        vocabs = build_vocabs(mentions, min_count)
    flags = None
    if noise_path is not None:
        flags = json.loads(Path(noise_path).read_text())["noise_flags"]
        if len(flags) != len(mentions):
            raise CorpusError(f"noise sidecar has {len(flags)} flags for {len(mentions)} mentions")
    return group_bags(mentions, vocabs, split, max_len, flags)


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Planted-pattern corpus.

    Every relation (NA included) owns a distinct trigram.  A clean instance
    places its bag relation's trigram between the two entities; with
    probability ``noise_rate`` an instance carries another relation's
    trigram instead and is flagged as noise.
    """

    n_relations: int = 5
    n_pairs: int = 200
    min_instances: int = 1
    max_instances: int = 4
    vocab_size: int = 40
    noise_rate: float = 0.0
    na_fraction: float = 0.2
    min_sentence: int = 6
    max_sentence: int = 12
    split: str = "train"

    def __post_init__(self):
        if not 0 <= self.noise_rate < 1:
            raise ValueError(f"noise rate must be in [0, 1), got {self.noise_rate}")
        if self.n_relations < 2:
            raise ValueError("need NA plus at least one relation")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValueError("instance counts must satisfy 1 <= min <= max")
        if self.min_sentence < 5 or self.max_sentence < self.min_sentence:
            raise ValueError("sentences need room for two entities and a trigram")


def relation_names(n_relations: int) -> list[str]:
    return [NA] + [f"/synthetic/rel_{j:02d}" for j in range(1, n_relations)]


def trigram(relation: int) -> tuple[str, str, str]:
    return (f"r{relation}_a", f"r{relation}_b", f"r{relation}_c")


def synthesize_mentions(cfg: SynthConfig, seed: int) -> list[tuple[RawMention, bool]]:
    rng = np.random.default_rng(seed)
    names = relation_names(cfg.n_relations)
    fillers = [f"w{i}" for i in range(cfg.vocab_size)]
    tag = "" if cfg.split == "train" else f"{cfg.split}_"
    out = []
    for p in range(cfg.n_pairs):
        head, tail = f"{tag}h{p}", f"{tag}t{p}"
        rel = 0 if rng.random() < cfg.na_fraction else int(rng.integers(1, cfg.n_relations))
        m = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
        for _ in range(m):
            noisy = bool(rng.random() < cfg.noise_rate)
            pattern = rel
            if noisy:
                pattern = int(rng.integers(0, cfg.n_relations - 1))
                pattern += pattern >= rel
            length = int(rng.integers(cfg.min_sentence, cfg.max_sentence + 1))
            n_fill = length - 5
            before = int(rng.integers(0, n_fill + 1))
            filler = [fillers[i] for i in rng.integers(0, len(fillers), size=n_fill)]
            if rng.random() < 0.5:
                core = [head, *trigram(pattern), tail]
                hp, tp = before, before + 4
            else:
                core = [tail, *trigram(pattern), head]
                hp, tp = before + 4, before
            tokens = tuple(filler[:before] + core + filler[before:])
            mention = RawMention(f"/m/{head}", f"/m/{tail}", head, tail, names[rel], tokens, hp, tp)
            out.append((mention, noisy))
    return out


def make_synthetic(
    cfg: SynthConfig,
    seed: int,
    vocabs: tuple[TokenVocab, RelationVocab] | None = None,
    max_len: int = 120,
) -> Corpus:
    pairs = synthesize_mentions(cfg, seed)
    mentions = [m for m, _ in pairs]
    if vocabs is None:
        tokens, _ = build_vocabs(mentions)
        vocabs = (tokens, RelationVocab(relation_names(cfg.n_relations)))
    return group_bags(mentions, vocabs, cfg.split, max_len, [f for _, f in pairs])

"""Labeled paraphrase corpora: loading, tokenization, filtering, vocabulary, splits.

Encoded records are written as JSON lines, one object per pair::

    {"example_id": "q17", "label": 1,
     "original_tokens": [...], "paraphrase_tokens": [...],
     "original_ids": [...],        # base vocabulary ids, OOV -> <unk>
     "copy_map": [...],            # per source position: base id, or
                                   # base_size + first position for OOV tokens
     "paraphrase_ids": [...]}      # <bos> ... <eos>, OOV tokens present in the
                                   # source use their extended copy id
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)

DEFAULT_SPLIT_RATIOS = (0.70, 0.15, 0.15)


class DataError(Exception):
    """Unreadable or unusable input data."""


@dataclass(frozen=True)
class RawPair:
    example_id: str
    original: str
    paraphrase: str
    label: int


@dataclass(frozen=True)
class ParaphrasePair:
    example_id: str
    original: tuple
    paraphrase: tuple
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not self.original or not self.paraphrase:
            raise ValueError(f"pair {self.example_id} has an empty side")


@dataclass
class CorpusSplit:
    train: list
    dev: list
    test: list


def _read_rows(path) -> list[list[str]]:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            return [line.rstrip("\r\n").split("\t") for line in f if line.strip()]
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def _parse_label(value: str) -> Optional[int]:
    value = value.strip()
    return int(value) if value in ("0", "1") else None


def load_quora_tsv(path) -> tuple[list[RawPair], int]:
    """Read a Quora question-pairs TSV.

    Rows need six tab-separated fields ``id, qid1, qid2, question1,
    question2, is_duplicate``; a leading header row is skipped. Returns the
    pairs and the number of malformed rows that were dropped.
    """
    pairs, skipped = [], 0
    for i, row in enumerate(_read_rows(path)):
        if i == 0 and row and row[0].strip() == "id":
            continue
        label = _parse_label(row[5]) if len(row) == 6 else None
        if label is None or not row[3].strip() or not row[4].strip():
            skipped += 1
            continue
        pairs.append(RawPair(f"quora-{row[0].strip()}", row[3], row[4], label))
    return pairs, skipped


def load_msrp_tsv(path) -> tuple[list[RawPair], int]:
    """Read an MSRP TSV (``Quality, #1 ID, #2 ID, #1 String, #2 String``) with a header row."""
    rows = _read_rows(path)
    pairs, skipped = [], 0
    for i, row in enumerate(rows[1:], 1):
        label = _parse_label(row[0]) if len(row) == 5 else None
        if label is None or not row[3].strip() or not row[4].strip():
            skipped += 1
            continue
        pairs.append(RawPair(f"msrp-{i}-{row[1].strip()}-{row[2].strip()}", row[3], row[4], label))
    return pairs, skipped


def write_skip_report(path, counts: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for name, n in counts.items():
            f.write(f"{name}\t{n}\n")


_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class Tokenizer:
    """Whitespace+punctuation tokenizer, or WordPiece when ``vocab_file`` is given."""

    def __init__(self, lowercase: bool = True, vocab_file=None):
        self.lowercase = lowercase
        self.vocab_file = vocab_file
        self._wordpiece = None
        if vocab_file is not None:
            from tokenizers import Tokenizer as WordPieceTokenizer
            from tokenizers import normalizers, pre_tokenizers
            from tokenizers.models import WordPiece

            self._wordpiece = WordPieceTokenizer(WordPiece.from_file(str(vocab_file), unk_token="[UNK]"))
            self._wordpiece.normalizer = normalizers.BertNormalizer(lowercase=lowercase)
            self._wordpiece.pre_tokenizer = pre_tokenizers.BertPreTokenizer()

    def __call__(self, text: str) -> list[str]:
        if not text or not text.strip():
            raise ValueError("cannot tokenize empty text")
        if self._wordpiece is not None:
            return self._wordpiece.encode(text, add_special_tokens=False).tokens
        if self.lowercase:
            text = text.lower()
        return _WORD_OR_PUNCT.findall(text)


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    return Tokenizer(lowercase)(text)


def tokenize_pairs(raw: Iterable[RawPair], tokenizer: Tokenizer) -> tuple[list[ParaphrasePair], int]:
    """Tokenize raw pairs; pairs with a side that tokenizes to nothing are dropped."""
    out, unusable = [], 0
    for r in raw:
        try:
            src, tgt = tokenizer(r.original), tokenizer(r.paraphrase)
        except ValueError:
            unusable += 1
            continue
        if not src or not tgt:
            unusable += 1
            continue
        out.append(ParaphrasePair(r.example_id, tuple(src), tuple(tgt), r.label))
    return out, unusable


def filter_by_length(pairs: Sequence[ParaphrasePair], max_source_length: int) -> list[ParaphrasePair]:
    """Keep pairs whose two sides are both strictly shorter than ``max_source_length``."""
    return [p for p in pairs if len(p.original) < max_source_length and len(p.paraphrase) < max_source_length]


def deduplicate(pairs: Sequence[ParaphrasePair]) -> list[ParaphrasePair]:
    seen, out = set(), []
    for p in pairs:
        key = (p.original, p.paraphrase, p.label)
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def split_corpus(pairs: Sequence[ParaphrasePair], ratios=DEFAULT_SPLIT_RATIOS, seed: int = 0) -> CorpusSplit:
    """Seeded uniform random train/dev/test split (sizes rounded from ``ratios``)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-6):
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    pairs = deduplicate(pairs)
    order = np.random.default_rng(seed).permutation(len(pairs))
    n_train = round(len(pairs) * ratios[0])
    n_dev = min(round(len(pairs) * ratios[1]), len(pairs) - n_train)
    shuffled = [pairs[i] for i in order]
    return CorpusSplit(shuffled[:n_train], shuffled[n_train:n_train + n_dev], shuffled[n_train + n_dev:])


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        """``tokens`` excludes the special tokens, which always take ids 0-3."""
        self.id_to_token = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    pad_id, bos_id, eos_id, unk_id = PAD_ID, BOS_ID, EOS_ID, UNK_ID

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def size(self) -> int:
        return len(self)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def to_dict(self) -> dict:
        return {"tokens": self.id_to_token[len(SPECIAL_TOKENS):]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["tokens"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=0), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocabulary(pairs: Iterable[ParaphrasePair], prune_limit: int) -> Vocabulary:
    """Most frequent ``prune_limit`` tokens over both sides; ties broken lexicographically."""
    if prune_limit < 1:
        raise ValueError(f"prune_limit must be >= 1, got {prune_limit}")
    counts = Counter()
    for p in pairs:
        counts.update(p.original)
        counts.update(p.paraphrase)
    for t in SPECIAL_TOKENS:
        counts.pop(t, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in ranked[:prune_limit]])


@dataclass
class EncodedPair:
    example_id: str
    label: int
    original_tokens: list
    paraphrase_tokens: list
    original_ids: list
    copy_map: list
    paraphrase_ids: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "EncodedPair":
        return cls(**json.loads(line))


def source_copy_map(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    first = {}
    out = []
    for pos, tok in enumerate(tokens):
        if tok in vocab:
            out.append(vocab.token_to_id[tok])
        else:
            first.setdefault(tok, pos)
            out.append(len(vocab) + first[tok])
    return out


def encode_pair(pair: ParaphrasePair, vocab: Vocabulary) -> EncodedPair:
    """Encode a tokenized pair for the copy decoder.

    OOV source tokens map to ``<unk>`` in ``original_ids`` and to the extended
    id ``len(vocab) + p`` in ``copy_map``, where ``p`` is the first source
    position holding that token. Target tokens use the extended id when they
    are copiable OOV words and ``<unk>`` when they are not.
    """
    copy_map = source_copy_map(pair.original, vocab)
    oov_ext = {tok: e for tok, e in zip(pair.original, copy_map) if e >= len(vocab)}
    target = [BOS_ID]
    for tok in pair.paraphrase:
        target.append(vocab.token_to_id[tok] if tok in vocab else oov_ext.get(tok, UNK_ID))
    target.append(EOS_ID)
    return EncodedPair(
        example_id=pair.example_id,
        label=pair.label,
        original_tokens=list(pair.original),
        paraphrase_tokens=list(pair.paraphrase),
        original_ids=[vocab.id_of(t) for t in pair.original],
        copy_map=copy_map,
        paraphrase_ids=target,
    )


def extended_positions(copy_map: Sequence[int], base_size: int) -> dict:
    """Each extended id in a copy map and the source position it decodes to."""
    return {e: e - base_size for e in copy_map if e >= base_size}


def decode_ids(ids: Sequence[int], vocab: Vocabulary, source_tokens: Sequence[str], strip_special: bool = True) -> list[str]:
    """Map (extended) ids back to tokens, stopping at ``<eos>``."""
    out = []
    for i in ids:
        i = int(i)
        if strip_special and i == EOS_ID:
            break
        if strip_special and i in (PAD_ID, BOS_ID):
            continue
        if i >= len(vocab):
            pos = i - len(vocab)
            if not 0 <= pos < len(source_tokens):
                raise ValueError(f"extended id {i} points outside a {len(source_tokens)}-token source")
            out.append(source_tokens[pos])
        else:
            out.append(vocab.id_to_token[i])
    return out


def write_encoded(path, records: Iterable[EncodedPair]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def read_encoded(path) -> list[EncodedPair]:
    try:
        with open(path, encoding="utf-8") as f:
            return [EncodedPair.from_json(line) for line in f if line.strip()]
    except (OSError, json.JSONDecodeError, TypeError) as e:
        raise DataError(f"cannot read encoded corpus {path}: {e}") from e


LOADERS = {"quora": load_quora_tsv, "msrp": load_msrp_tsv}


@dataclass
class PreparedCorpus:
    vocab: Vocabulary
    train: list
    dev: list
    test: list


def prepare_corpus(
    paths: Sequence,
    out_dir,
    dataset_format: str = "quora",
    max_source_length: int = 14,
    vocab_size: int = 5000,
    split_ratios=DEFAULT_SPLIT_RATIOS,
    split_seed: int = 0,
    max_pairs: Optional[int] = None,
    lowercase: bool = True,
    wordpiece_vocab=None,
) -> PreparedCorpus:
    """Load, tokenize, filter, split and encode; writes vocab, splits and a skip report."""
    if dataset_format not in LOADERS:
        raise ValueError(f"unknown dataset format {dataset_format!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokenizer = Tokenizer(lowercase, wordpiece_vocab)
    raw, skips = [], {}
    for path in paths:
        rows, skipped = LOADERS[dataset_format](path)
        raw.extend(rows)
        skips[str(path)] = skipped
        if skipped:
            logger.warning("%s: skipped %d malformed rows", path, skipped)
    write_skip_report(out_dir / "skip_report.txt", skips)
    pairs, unusable = tokenize_pairs(raw, tokenizer)
    if unusable:
        logger.warning("dropped %d pairs that tokenized to nothing", unusable)
    pairs = deduplicate(filter_by_length(pairs, max_source_length))
    if max_pairs is not None and len(pairs) > max_pairs:
        keep = np.sort(np.random.default_rng(split_seed).choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[i] for i in keep]
    if not pairs:
        raise DataError("no usable pairs after filtering")
    split = split_corpus(pairs, split_ratios, split_seed)
    vocab = build_vocabulary(split.train, vocab_size)
    vocab.save(out_dir / "vocab.json")
    encoded = {}
    for name in ("train", "dev", "test"):
        encoded[name] = [encode_pair(p, vocab) for p in getattr(split, name)]
        write_encoded(out_dir / f"{name}.jsonl", encoded[name])
    logger.info("prepared %d/%d/%d pairs, vocab %d", *(len(encoded[k]) for k in ("train", "dev", "test")), len(vocab))
    return PreparedCorpus(vocab, encoded["train"], encoded["dev"], encoded["test"])


def load_prepared(data_dir) -> PreparedCorpus:
    data_dir = Path(data_dir)
    if not (data_dir / "vocab.json").exists():
        raise DataError(f"{data_dir} has no vocab.json; run prepare-data first")
    vocab = Vocabulary.load(data_dir / "vocab.json")
    return PreparedCorpus(vocab, *(read_encoded(data_dir / f"{n}.jsonl") for n in ("train", "dev", "test")))

"""Sentence-level BLEU-4, TER and ROUGE-N with oracle (best-of-K) aggregation.

All scores are on the 0-100 scale and operate on token sequences as produced
by the training tokenizer; there is no detokenization step, so scores are only
comparable within this toolkit.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

Tokens = Sequence[str]

METRIC_NAMES = ("BLEU", "TER", "ROUGE-1", "ROUGE-2", "ROUGE-3")

# Numerator substituted for n-gram orders with zero matches.
BLEU_SMOOTH_EPSILON = 0.005
BLEU_MAX_ORDER = 4
# Longest block considered by the TER shift search.
TER_MAX_SHIFT_SPAN = 10


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    degenerate: bool = False

    @property
    def direction(self) -> str:
        return direction_of(self.name)


def direction_of(name: str) -> str:
    if name not in METRIC_NAMES:
        raise ValueError(f"unknown metric {name!r}")
    return "minimize" if name == "TER" else "maximize"


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: Tokens, reference: Tokens) -> MetricValue:
    """Smoothed sentence BLEU-4.

    Orders for which the candidate has no n-grams at all (shorter than n) are
    left out of the geometric mean ("effective order"); orders with n-grams
    but zero matches use ``BLEU_SMOOTH_EPSILON`` as the match count.
    """
    if not candidate or not reference:
        raise ValueError("BLEU needs non-empty candidate and reference")
    log_precisions = []
    for n in range(1, BLEU_MAX_ORDER + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        if total == 0:
            break
        ref = _ngrams(reference, n)
        matches = sum(min(c, ref[g]) for g, c in cand.items())
        log_precisions.append(math.log((matches or BLEU_SMOOTH_EPSILON) / total))
    c, r = len(candidate), len(reference)
    log_bp = 0.0 if c >= r else 1.0 - r / c
    score = math.exp(log_bp + sum(log_precisions) / len(log_precisions))
    return MetricValue("BLEU", 100.0 * score)


def _edit_distance(a: Tokens, b: Tokens) -> int:
    """Word-level Levenshtein distance (bit-parallel, Hyyro's formulation)."""
    m = len(a)
    if m == 0:
        return len(b)
    peq = {}
    for i, x in enumerate(a):
        peq[x] = peq.get(x, 0) | (1 << i)
    full, top = (1 << m) - 1, 1 << (m - 1)
    pv, mv, dist = full, 0, m
    for y in b:
        eq = peq.get(y, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | ~(xh | pv)
        mh = pv & xh
        if ph & top:
            dist += 1
        elif mh & top:
            dist -= 1
        ph = (ph << 1) | 1
        mh <<= 1
        pv = (mh | ~(xv | ph)) & full
        mv = ph & xv & full
    return dist


def _best_shift(hyp: list, reference: Tokens) -> tuple[int, Optional[list]]:
    """Find the single block move of ``hyp`` that lowers edit distance most."""
    base = _edit_distance(hyp, reference)
    ref_blocks = set()
    for n in range(1, min(TER_MAX_SHIFT_SPAN, len(reference)) + 1):
        ref_blocks.update(_ngrams(reference, n))
    best_gain, best_hyp = 0, None
    for span in range(min(TER_MAX_SHIFT_SPAN, len(hyp)), 0, -1):
        for start in range(len(hyp) - span + 1):
            block = hyp[start:start + span]
            if tuple(block) not in ref_blocks:
                continue
            rest = hyp[:start] + hyp[start + span:]
            for pos in range(len(rest) + 1):
                if pos == start:
                    continue
                moved = rest[:pos] + block + rest[pos:]
                gain = base - _edit_distance(moved, reference)
                if gain > best_gain:
                    best_gain, best_hyp = gain, moved
    return best_gain, best_hyp


def ter(candidate: Tokens, reference: Tokens, shifts: bool = True) -> MetricValue:
    """Translation edit rate: (edits + block shifts) / reference length * 100.

    Shifts are searched greedily: while some move of an exact-match block
    reduces the word edit distance, apply the best one at a cost of 1.
    ``shifts=False`` gives plain length-normalized Levenshtein distance.
    """
    if not reference:
        raise ValueError("TER needs a non-empty reference")
    edits, n_shifts = _ter_counts(tuple(candidate), tuple(reference), shifts)
    return MetricValue("TER", 100.0 * (edits + n_shifts) / len(reference))


@lru_cache(maxsize=1 << 16)
def _ter_counts(candidate: tuple, reference: tuple, shifts: bool) -> tuple[int, int]:
    hyp = list(candidate)
    n_shifts = 0
    while shifts:
        _, moved = _best_shift(hyp, reference)
        if moved is None:
            break
        hyp = moved
        n_shifts += 1
    return _edit_distance(hyp, reference), n_shifts


def rouge_n(candidate: Tokens, reference: Tokens, n: int, recall_only: bool = False) -> MetricValue:
    if n < 1:
        raise ValueError("ROUGE order must be >= 1")
    name = f"ROUGE-{n}"
    if len(reference) < n:
        return MetricValue(name, 0.0, degenerate=True)
    ref = _ngrams(reference, n)
    cand = _ngrams(candidate, n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    recall = overlap / sum(ref.values())
    if recall_only:
        return MetricValue(name, 100.0 * recall)
    if overlap == 0:
        return MetricValue(name, 0.0)
    precision = overlap / sum(cand.values())
    return MetricValue(name, 100.0 * 2 * precision * recall / (precision + recall))


def score(name: str, candidate: Tokens, reference: Tokens) -> float:
    """Compute metric ``name`` for one candidate, returning the bare value.

    An empty generated candidate (EOS as the first token) scores BLEU 0; TER
    and ROUGE handle it directly (100 and 0).
    """
    if name == "BLEU":
        return bleu4(candidate, reference).value if candidate else 0.0
    if name == "TER":
        return ter(candidate, reference).value
    if name.startswith("ROUGE-"):
        return rouge_n(candidate, reference, int(name.split("-")[1])).value
    raise ValueError(f"unknown metric {name!r}")


def oracle_aggregate(
    candidates: Sequence[Tokens],
    reference: Tokens,
    metric: str | Callable[[Tokens, Tokens], float],
    direction: Optional[str] = None,
) -> tuple[float, float]:
    """Return ``(avg, best)`` of a metric over K candidates.

    ``best`` is the maximum for maximize metrics and the minimum for TER.
    A callable metric needs an explicit ``direction``.
    """
    if len(candidates) == 0:
        raise ValueError("oracle aggregation needs at least one candidate")
    if callable(metric):
        fn = metric
        if direction is None:
            raise ValueError("direction is required for a callable metric")
    else:
        fn = lambda c, r: score(metric, c, r)  # noqa: E731
        direction = direction or direction_of(metric)
    values = [fn(c, reference) for c in candidates]
    avg = math.fsum(values) / len(values)
    best = min(values) if direction == "minimize" else max(values)
    return avg, best


def aggregate_seeds(values: Sequence[float]) -> tuple[float, Optional[float]]:
    """Mean and sample standard deviation (n-1); std is None for one seed."""
    if len(values) == 0:
        raise ValueError("need at least one seed")
    mean = math.fsum(values) / len(values)
    std = statistics.stdev(values) if len(values) >= 2 else None
    return mean, std


@dataclass
class ExampleScores:
    example_id: str
    avg: dict[str, float]
    best: dict[str, float]


@dataclass
class MetricReport:
    """Avg/Best per example and their corpus means for one (run, split)."""

    examples: list[ExampleScores]

    @classmethod
    def from_candidates(
        cls,
        records: Sequence[tuple[str, Tokens, Sequence[Tokens]]],
        metrics: Sequence[str] = METRIC_NAMES,
    ) -> "MetricReport":
        examples = []
        for example_id, reference, candidates in records:
            avg, best = {}, {}
            for m in metrics:
                avg[m], best[m] = oracle_aggregate(candidates, reference, m)
            examples.append(ExampleScores(example_id, avg, best))
        return cls(examples)

    @property
    def metrics(self) -> list[str]:
        return list(self.examples[0].avg) if self.examples else []

    def corpus_means(self) -> dict[str, tuple[float, float]]:
        """Metric -> (mean Avg, mean Best); summation order is example order."""
        n = len(self.examples)
        out = {}
        for m in self.metrics:
            out[m] = (
                math.fsum(e.avg[m] for e in self.examples) / n,
                math.fsum(e.best[m] for e in self.examples) / n,
            )
        return out

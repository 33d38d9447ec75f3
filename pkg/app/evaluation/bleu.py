"""
Single-reference BLEU over token-id sequences.

N-gram matches are counted here; the brevity penalty and the (smoothed)
geometric mean come from sacrebleu's BLEU.compute_bleu. Scores are reported
in [0, 1] rather than sacrebleu's 0-100 scale.

Sentence level: an order with zero matches contributes precision
0.5 / candidate_ngram_count ("floor" smoothing with value 0.5).
Corpus level: counts are summed over the corpus before the geometric mean,
without smoothing.
"""

from collections import Counter
from typing import NamedTuple, Sequence

from sacrebleu.metrics import BLEU

from app.errors import ConfigError, ContractViolation

SENTENCE_FLOOR = 0.5


class NgramStats(NamedTuple):
    correct: list[int]
    total: list[int]
    candidate_length: int
    reference_length: int

    def __add__(self, other: "NgramStats") -> "NgramStats":
        return NgramStats(
            [a + b for a, b in zip(self.correct, other.correct)],
            [a + b for a, b in zip(self.total, other.total)],
            self.candidate_length + other.candidate_length,
            self.reference_length + other.reference_length,
        )


def ngram_counts(tokens: Sequence[int], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def ngram_stats(candidate: Sequence[int], reference: Sequence[int], max_order: int) -> NgramStats:
    if max_order < 1:
        raise ConfigError(f"BLEU order must be at least 1, got {max_order}")
    candidate, reference = list(candidate), list(reference)
    correct, total = [], []
    for n in range(1, max_order + 1):
        hyp, ref = ngram_counts(candidate, n), ngram_counts(reference, n)
        correct.append(sum(min(count, ref[gram]) for gram, count in hyp.items()))
        total.append(max(len(candidate) - n + 1, 0))
    return NgramStats(correct, total, len(candidate), len(reference))


def _score(stats: NgramStats, max_order: int, smooth_method: str, smooth_value=None) -> float:
    result = BLEU.compute_bleu(
        correct=stats.correct,
        total=stats.total,
        sys_len=stats.candidate_length,
        ref_len=stats.reference_length,
        smooth_method=smooth_method,
        smooth_value=smooth_value,
        max_ngram_order=max_order,
    )
    return result.score / 100.0


def bleu_n(candidate: Sequence[int], reference: Sequence[int], n: int) -> float:
    """Sentence BLEU-n in [0, 1]; an empty candidate scores 0."""
    if n < 1:
        raise ConfigError(f"BLEU order must be at least 1, got {n}")
    if len(candidate) == 0:
        return 0.0
    return _score(ngram_stats(candidate, reference, n), n, "floor", SENTENCE_FLOOR)


def corpus_bleu(candidates: Sequence[Sequence[int]], references: Sequence[Sequence[int]], n: int) -> float:
    if len(candidates) != len(references):
        raise ContractViolation(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        return 0.0
    stats = ngram_stats(candidates[0], references[0], n)
    for candidate, reference in zip(candidates[1:], references[1:]):
        stats = stats + ngram_stats(candidate, reference, n)
    if stats.candidate_length == 0:
        return 0.0
    return _score(stats, n, "none")

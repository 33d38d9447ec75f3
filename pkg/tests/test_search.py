import itertools
import math

import numpy as np
import pytest

from app.errors import ConfigError
from app.model import Hypothesis, beam_search, caption_tokens, greedy_search

EOS, A, B, SOS = 0, 1, 2, 3


def table_step(table):
    def step(prefix):
        return np.asarray(table[tuple(prefix)], dtype=np.float64)

    return step


# both searches agree: the likeliest first word is also followed by eos
AGREEING = {
    (SOS,): (0.1, 0.6, 0.3),
    (SOS, A): (0.7, 0.2, 0.1),
    (SOS, B): (0.9, 0.05, 0.05),
}

# greedy commits to "a" and never reaches eos; beam keeps "b" alive and finishes it
DIVERGING = {
    (SOS,): (0.05, 0.5, 0.45),
    (SOS, A): (0.3, 0.4, 0.3),
    (SOS, B): (0.8, 0.1, 0.1),
}


def exhaustive_best(table, max_len):
    """Best length-normalised terminated sequence by brute-force enumeration."""
    best, best_tokens = -math.inf, None
    for length in range(1, max_len + 1):
        for body in itertools.product((A, B), repeat=length - 1):
            tokens = [*body, EOS]
            prefix, total = [SOS], 0.0
            for token in tokens:
                total += math.log(table[tuple(prefix)][token])
                prefix.append(token)
            if total / len(tokens) > best:
                best, best_tokens = total / len(tokens), list(body)
    return best_tokens, best


class TestGreedy:
    def test_stops_at_eos(self):
        assert greedy_search(table_step(AGREEING), SOS, EOS, max_len=2) == [A]

    def test_stops_at_max_len(self):
        assert greedy_search(table_step(DIVERGING), SOS, EOS, max_len=2) == [A, A]

    def test_immediate_eos_gives_empty_caption(self):
        assert greedy_search(lambda prefix: np.array([0.9, 0.05, 0.05]), SOS, EOS, max_len=5) == []


class TestBeam:
    def test_agrees_with_greedy_when_greedy_is_optimal(self):
        best = beam_search(table_step(AGREEING), 2, SOS, EOS, max_len=2)
        assert caption_tokens(best, EOS) == [A]
        assert best.finished
        assert best.score == pytest.approx(math.log(0.6) + math.log(0.7), abs=1e-12)

    def test_finds_sequence_greedy_misses(self):
        best = beam_search(table_step(DIVERGING), 2, SOS, EOS, max_len=2)
        assert caption_tokens(best, EOS) == [B]
        assert best.normalized_score == pytest.approx((math.log(0.45) + math.log(0.8)) / 2, abs=1e-12)

    @pytest.mark.parametrize("table", [AGREEING, DIVERGING])
    def test_matches_exhaustive_search(self, table):
        tokens, score = exhaustive_best(table, max_len=2)
        best = beam_search(table_step(table), 2, SOS, EOS, max_len=2)
        assert caption_tokens(best, EOS) == tokens
        assert best.normalized_score == pytest.approx(score, abs=1e-9)

    @pytest.mark.parametrize("table", [AGREEING, DIVERGING])
    def test_width_one_equals_greedy(self, table):
        best = beam_search(table_step(table), 1, SOS, EOS, max_len=2)
        assert caption_tokens(best, EOS) == greedy_search(table_step(table), SOS, EOS, max_len=2)

    def test_width_must_be_positive(self):
        with pytest.raises(ConfigError):
            beam_search(table_step(AGREEING), 0, SOS, EOS, max_len=2)

    def test_impossible_continuations_are_dropped(self):
        step = lambda prefix: np.array([0.0, 1.0, 0.0]) if len(prefix) == 1 else np.array([1.0, 0.0, 0.0])
        best = beam_search(step, 3, SOS, EOS, max_len=3)
        assert caption_tokens(best, EOS) == [A]


class TestScoring:
    @pytest.mark.parametrize("table", [AGREEING, DIVERGING])
    def test_beam_never_scores_below_greedy(self, table):
        greedy = greedy_search(table_step(table), SOS, EOS, max_len=2)
        finished = len(greedy) < 2
        tokens = [*greedy, EOS] if finished else greedy
        total, prefix = 0.0, [SOS]
        for token in tokens:
            total += math.log(table[tuple(prefix)][token])
            prefix.append(token)
        best = beam_search(table_step(table), 2, SOS, EOS, max_len=2)
        assert best.normalized_score >= total / len(tokens) - 1e-12

    def test_caption_tokens_strips_markers(self):
        assert caption_tokens(Hypothesis(0.0, [SOS, A, B, EOS], True), EOS) == [A, B]
        assert caption_tokens(Hypothesis(0.0, [SOS, A]), EOS) == [A]

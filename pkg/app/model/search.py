"""
Caption search over a next-word distribution function.

A step function maps a prefix (starting with the start token) to a
probability vector over the vocabulary. Both searches are independent of the
model, which keeps them testable on hand-written tables.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from app.errors import ConfigError

StepFunction = Callable[[Sequence[int]], np.ndarray]


@dataclass(order=True)
class Hypothesis:
    score: float
    tokens: list[int] = field(compare=False)
    finished: bool = field(default=False, compare=False)

    @property
    def generated(self) -> int:
        return len(self.tokens) - 1

    @property
    def normalized_score(self) -> float:
        return self.score / max(self.generated, 1)


def _log(distribution: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(distribution, dtype=np.float64))


def greedy_search(step: StepFunction, sos: int, eos: int, max_len: int) -> list[int]:
    tokens = [sos]
    for _ in range(max_len):
        best = int(np.argmax(step(tokens)))
        if best == eos:
            break
        tokens.append(best)
    return tokens[1:]


def beam_search(step: StepFunction, width: int, sos: int, eos: int, max_len: int) -> Hypothesis:
    """
    Length-normalised beam search.

    Each step expands the live hypotheses and keeps the best `width - retired`
    candidates; candidates ending in eos retire. The best retired hypothesis
    wins, or the best live one when nothing retired before max_len.
    """
    if width < 1:
        raise ConfigError(f"beam width must be at least 1, got {width}")
    alive = [Hypothesis(0.0, [sos])]
    retired: list[Hypothesis] = []

    for _ in range(max_len):
        slots = width - len(retired)
        if slots <= 0 or not alive:
            break
        totals = np.stack([h.score + _log(step(h.tokens)) for h in alive])
        vocab = totals.shape[1]
        flat = totals.reshape(-1)
        next_alive = []
        for index in np.argsort(-flat, kind="stable")[:slots]:
            score = float(flat[index])
            if not np.isfinite(score):
                break
            parent, token = divmod(int(index), vocab)
            tokens = alive[parent].tokens + [token]
            if token == eos:
                retired.append(Hypothesis(score, tokens, finished=True))
            else:
                next_alive.append(Hypothesis(score, tokens))
        alive = next_alive

    pool = retired or alive
    return max(pool, key=lambda h: h.normalized_score)


def caption_tokens(hypothesis: Hypothesis, eos: int) -> list[int]:
    tokens = hypothesis.tokens[1:]
    return tokens[:-1] if tokens and tokens[-1] == eos else tokens


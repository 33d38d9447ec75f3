from .bleu import NgramStats, bleu_n, corpus_bleu, ngram_counts, ngram_stats
from .report import (
    HISTORY_COLUMNS,
    NAIVE_COLUMNS,
    TRADEOFF_COLUMNS,
    EventOutcome,
    LearningCurve,
    TradeoffReport,
    TradeoffRow,
    corpus_eval,
    learning_curve,
    least_squares_slope,
    naive_eval,
    threshold_sweep,
)

__all__ = [
    # BLEU
    "NgramStats",
    "bleu_n",
    "corpus_bleu",
    "ngram_counts",
    "ngram_stats",
    # Reports
    "HISTORY_COLUMNS",
    "NAIVE_COLUMNS",
    "TRADEOFF_COLUMNS",
    "EventOutcome",
    "LearningCurve",
    "TradeoffReport",
    "TradeoffRow",
    "corpus_eval",
    "learning_curve",
    "least_squares_slope",
    "naive_eval",
    "threshold_sweep",
]

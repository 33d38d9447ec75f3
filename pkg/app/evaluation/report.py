"""
Latency/quality evaluation: streaming corpus runs, threshold sweeps, the
naive fixed-ratio truncation baseline and learning-curve analysis.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from app.data.features import FramePeriods, load_event
from app.errors import CaptionError, ConfigError, ContractViolation, DataError, FeatureIOError
from app.evaluation.bleu import corpus_bleu
from app.streaming.session import stream_event

TRADEOFF_COLUMNS = ["F", "latency_ratio", "bleu3", "bleu4", "word_acc", "fired_frac"]
NAIVE_COLUMNS = ["ratio", "latency_ratio", "bleu3", "bleu4", "word_acc", "fired_frac"]
HISTORY_COLUMNS = ["epoch", "latency_ratio", "bleu3", "bleu4", "word_acc", "loss_ce", "loss_kl", "loss_d"]

logger = logging.getLogger(__name__)


@dataclass
class EventOutcome:
    event_id: str
    caption: list[int]
    fire_time: float
    latency_ratio: float
    fired: bool
    word_acc: float


@dataclass
class TradeoffRow:
    key: float
    latency_ratio: float
    bleu3: float
    bleu4: float
    word_acc: float
    fired_frac: float
    outcomes: list[EventOutcome] = field(default_factory=list, repr=False)
    failures: list[str] = field(default_factory=list, repr=False)

    def values(self) -> list[float]:
        return [self.key, self.latency_ratio, self.bleu3, self.bleu4, self.word_acc, self.fired_frac]


@dataclass
class TradeoffReport:
    rows: list[TradeoffRow]
    naive_rows: list[TradeoffRow] = field(default_factory=list)

    @property
    def failures(self) -> list[str]:
        return [f for row in (*self.rows, *self.naive_rows) for f in row.failures]

    def write(self, out_dir: Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"tradeoff": out_dir / "tradeoff.csv"}
        pd.DataFrame([r.values() for r in self.rows], columns=TRADEOFF_COLUMNS).to_csv(
            paths["tradeoff"], index=False, lineterminator="\n"
        )
        if self.naive_rows:
            paths["naive"] = out_dir / "naive.csv"
            pd.DataFrame([r.values() for r in self.naive_rows], columns=NAIVE_COLUMNS).to_csv(
                paths["naive"], index=False, lineterminator="\n"
            )
        return paths


def _aggregate(key: float, outcomes: list[EventOutcome], references: list[list[int]], failures: list[str]) -> TradeoffRow:
    if not outcomes:
        return TradeoffRow(key, float("nan"), 0.0, 0.0, 0.0, 0.0, outcomes, failures)
    candidates = [o.caption for o in outcomes]
    return TradeoffRow(
        key=key,
        latency_ratio=float(np.mean([o.latency_ratio for o in outcomes])),
        bleu3=corpus_bleu(candidates, references, 3),
        bleu4=corpus_bleu(candidates, references, 4),
        word_acc=float(np.mean([o.word_acc for o in outcomes])),
        fired_frac=float(np.mean([o.fired for o in outcomes])),
        outcomes=outcomes,
        failures=failures,
    )


def corpus_eval(
    captioner,
    records: Sequence,
    threshold: float,
    periods: FramePeriods = FramePeriods(),
    beam_width: int = 1,
    log=None,
) -> TradeoffRow:
    """Stream every event at threshold F and aggregate corpus BLEU, latency and firing statistics."""
    if not records:
        raise ContractViolation("cannot evaluate an empty split")
    log = log or logger
    outcomes, references, failures = [], [], []
    for record in records:
        try:
            emission, session = stream_event(captioner, record, threshold, periods, beam_width)
            accuracy = captioner.word_accuracy(record.caption, session.encodings)
        except (CaptionError, OSError) as exc:
            failures.append(f"{record.event_id}: {exc}")
            log.warning(f"event {record.event_id} failed at F={threshold}: {exc}")
            continue
        outcomes.append(EventOutcome(
            record.event_id, list(emission.caption), emission.fire_time, emission.latency_ratio, emission.fired, accuracy,
        ))
        references.append(list(record.caption))
    return _aggregate(threshold, outcomes, references, failures)


def naive_eval(
    captioner,
    records: Sequence,
    ratio: float,
    periods: FramePeriods = FramePeriods(),
    beam_width: int = 1,
    log=None,
) -> TradeoffRow:
    """Caption every event from a fixed fraction of its window (at least one visual frame)."""
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"truncation ratio must lie in (0, 1], got {ratio}")
    log = log or logger
    outcomes, references, failures = [], [], []
    for record in records:
        until = min(record.t_start + max(ratio * record.duration, periods.visual), record.t_end)
        try:
            stream = load_event(record, until, periods)
            enc = captioner.encode(stream.audio, stream.visual)
            caption = captioner.caption(enc, beam_width)
            accuracy = captioner.word_accuracy(record.caption, enc)
        except (CaptionError, OSError) as exc:
            failures.append(f"{record.event_id}: {exc}")
            log.warning(f"event {record.event_id} failed at ratio {ratio}: {exc}")
            continue
        used = (until - record.t_start) / record.duration
        outcomes.append(EventOutcome(record.event_id, list(caption), until, used, False, accuracy))
        references.append(list(record.caption))
    return _aggregate(ratio, outcomes, references, failures)


def threshold_sweep(
    captioner,
    records: Sequence,
    thresholds: Sequence[float],
    periods: FramePeriods = FramePeriods(),
    beam_width: int = 1,
    baseline=None,
    log=None,
) -> TradeoffReport:
    """
    One corpus_eval row per threshold, plus naive rows at the same mean
    latencies and the offline baseline at ratio 1.0.

    baseline is the captioner used for naive rows; defaults to `captioner`.
    """
    thresholds = list(thresholds)
    if any(not 0.0 < f < 1.0 for f in thresholds) or len(set(thresholds)) != len(thresholds):
        raise ConfigError(f"thresholds must be distinct values in (0, 1), got {thresholds}")
    baseline = baseline or captioner
    rows = [corpus_eval(captioner, records, f, periods, beam_width, log) for f in sorted(thresholds)]

    ratios = sorted({round(r.latency_ratio, 6) for r in rows if np.isfinite(r.latency_ratio)} | {1.0})
    naive_rows = [naive_eval(baseline, records, ratio, periods, beam_width, log) for ratio in ratios]
    return TradeoffReport(rows, naive_rows)


@dataclass
class LearningCurve:
    epochs: np.ndarray
    latency_ratio: np.ndarray
    bleu3: np.ndarray
    bleu4: np.ndarray
    word_acc: np.ndarray
    latency_slope: float

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": self.epochs,
            "latency_ratio": self.latency_ratio,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "word_acc": self.word_acc,
        })


def least_squares_slope(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    return float(np.polyfit(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64), 1)[0])


def learning_curve(path: Path) -> LearningCurve:
    """Parse a metric history CSV and fit the per-epoch latency trend."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as exc:
        raise FeatureIOError(f"history file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path}: line 1: empty history") from exc
    except pd.errors.ParserError as exc:
        # the C parser reports "Expected N fields in line L, saw M"
        found = re.search(r"in line (\d+)", str(exc))
        line = found.group(1) if found else "1"
        raise DataError(f"{path}: line {line}: malformed history: {exc}") from exc
    if list(frame.columns) != HISTORY_COLUMNS:
        raise DataError(f"{path}: line 1: expected header {','.join(HISTORY_COLUMNS)}")

    values = np.zeros((len(frame), len(HISTORY_COLUMNS)), dtype=np.float64)
    for index, row in enumerate(frame.itertuples(index=False)):
        try:
            values[index] = [float(cell) for cell in row]
        except ValueError as exc:
            raise DataError(f"{path}: line {index + 2}: non-numeric value") from exc
    epochs, latency = values[:, 0], values[:, 1]
    return LearningCurve(
        epochs=epochs,
        latency_ratio=latency,
        bleu3=values[:, 2],
        bleu4=values[:, 3],
        word_acc=values[:, 4],
        latency_slope=least_squares_slope(epochs, latency),
    )

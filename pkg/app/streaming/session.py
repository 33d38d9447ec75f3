"""
Online caption emission.

A session accumulates frames of one event, re-encodes the whole prefix at
every visual-frame arrival, evaluates the end detector and fires on the first
probability strictly above the threshold. Events whose detector never fires
fall back to captioning the full window at T_e.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from app.data.features import FramePeriods, frame_ends, read_features, window_indices
from app.errors import ConfigError, ContractViolation

TRACE_COLUMNS = ["t_sec", "probability", "fired"]


class SessionState(str, Enum):
    COLLECTING = "collecting"
    FIRED = "fired"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class TracePoint:
    t_sec: float
    probability: float
    fired: bool


@dataclass(frozen=True)
class Emission:
    caption: list[int]
    fire_time: float
    latency_ratio: float
    fired: bool


def latency_ratio(t_start: float, t_end: float, t_fire: float) -> float:
    if not t_start < t_fire <= t_end:
        raise ContractViolation(f"emission time {t_fire} outside ({t_start}, {t_end}]")
    return (t_fire - t_start) / (t_end - t_start)


@dataclass
class StreamSession:
    captioner: object
    t_start: float
    threshold: float
    beam_width: int = 1
    state: SessionState = SessionState.COLLECTING
    trace: list[TracePoint] = field(default_factory=list)
    fire_time: Optional[float] = None
    encodings: object = None
    _audio: list[np.ndarray] = field(default_factory=list)
    _visual: list[np.ndarray] = field(default_factory=list)

    @property
    def audio(self) -> np.ndarray:
        return np.concatenate(self._audio, axis=0)

    @property
    def visual(self) -> np.ndarray:
        return np.concatenate(self._visual, axis=0)

    def push_frames(self, audio: np.ndarray, visual: np.ndarray, t_now: float) -> float:
        """Add newly arrived frames, evaluate the detector on the whole prefix, and fire if it crosses."""
        if self.state is not SessionState.COLLECTING:
            raise ContractViolation(f"cannot push frames into a {self.state.value} session")
        if self.trace and t_now < self.trace[-1].t_sec:
            raise ContractViolation(f"frames arrived out of order ({t_now} after {self.trace[-1].t_sec})")
        self._audio.append(np.asarray(audio))
        self._visual.append(np.asarray(visual))

        self.encodings = self.captioner.encode(self.audio, self.visual)
        probability = float(self.captioner.detect_end(self.encodings))
        fired = probability > self.threshold
        self.trace.append(TracePoint(t_now, probability, fired))
        if fired:
            self.state = SessionState.FIRED
            self.fire_time = t_now
        return probability

    def mark_exhausted(self, t_end: float) -> None:
        if self.state is not SessionState.COLLECTING:
            raise ContractViolation(f"cannot exhaust a {self.state.value} session")
        self.state = SessionState.EXHAUSTED
        self.fire_time = t_end

    def finalize(self, t_end: float) -> Emission:
        if self.state is SessionState.COLLECTING:
            raise ContractViolation("session is still collecting frames")
        if self.encodings is None:
            raise ContractViolation("session received no frames")
        caption = self.captioner.caption(self.encodings, self.beam_width)
        if self.state is SessionState.EXHAUSTED:
            return Emission(caption, t_end, 1.0, False)
        return Emission(caption, self.fire_time, latency_ratio(self.t_start, t_end, self.fire_time), True)


def open_session(t_start: float, threshold: float, captioner, beam_width: int = 1) -> StreamSession:
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"firing threshold must lie in (0, 1), got {threshold}")
    if beam_width < 1:
        raise ConfigError(f"beam width must be at least 1, got {beam_width}")
    return StreamSession(captioner=captioner, t_start=t_start, threshold=threshold, beam_width=beam_width)


def stream_event(
    captioner, record, threshold: float, periods: FramePeriods = FramePeriods(), beam_width: int = 1
) -> tuple[Emission, StreamSession]:
    """
    Replay one event on the visual-frame clock.

    At the arrival of visual frame k the clock reads min((k+1)*p_v, T_e);
    every audio frame that started before that instant is pushed with it.
    """
    audio = read_features(record.audio_path)
    visual = read_features(record.visual_path)
    visual_index = window_indices(len(visual), periods.visual, record.t_start, record.t_end)
    if visual_index.size == 0:
        raise ContractViolation(f"{record.event_id}: no visual frame starts inside the event window")
    arrivals = np.minimum(frame_ends(len(visual), periods.visual)[visual_index], record.t_end)

    session = open_session(record.t_start, threshold, captioner, beam_width)
    sent_audio = 0
    for k, t_now in zip(visual_index, arrivals):
        due = window_indices(len(audio), periods.audio, record.t_start, float(t_now))
        session.push_frames(audio[due[sent_audio:]], visual[k:k + 1], float(t_now))
        sent_audio = len(due)
        if session.state is SessionState.FIRED:
            break
    else:
        session.mark_exhausted(record.t_end)
    return session.finalize(record.t_end), session


def write_trace(session: StreamSession, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [[p.t_sec, p.probability, int(p.fired)] for p in session.trace], columns=TRACE_COLUMNS
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    return path

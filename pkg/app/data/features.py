"""
Feature files and time-windowed event loading.

A feature file holds one [T x D] float32 matrix:
    b"AVCF", rank (=2), T, D as u32 LE, then T*D float32 LE values row-major.

Frame k of a stream with period p starts at k*p seconds (absolute clip time)
and belongs to a window when its start lies in [T_s, until).
"""

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from app.errors import ContractViolation, FeatureIOError

MAGIC = b"AVCF"
_HEADER = len(MAGIC) + 12


class FramePeriods(NamedTuple):
    audio: float = 0.96
    visual: float = 2.56


@dataclass
class FeatureStream:
    audio: np.ndarray
    visual: np.ndarray
    # (k+1)*p for visual frame k, the time at which that frame has fully arrived
    visual_ends: np.ndarray
    periods: FramePeriods

    @property
    def end_time(self) -> float:
        return float(self.visual_ends[-1])


def frame_starts(count: int, period: float) -> np.ndarray:
    return np.arange(count, dtype=np.float64) * period


def frame_ends(count: int, period: float) -> np.ndarray:
    return (np.arange(count, dtype=np.float64) + 1) * period


def encode_features(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ContractViolation(f"feature matrices are rank 2, got dims {list(array.shape)}")
    header = MAGIC + np.array([2, *array.shape], dtype="<u4").tobytes()
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def write_features(path: Path, array: np.ndarray) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_features(array))
    except OSError as exc:
        raise FeatureIOError(f"cannot write features {path}: {exc}") from exc
    return path


def decode_features(payload: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(payload) < _HEADER or payload[: len(MAGIC)] != MAGIC:
        raise FeatureIOError(f"{source}: not an AVCF feature file")
    rank, steps, width = (int(v) for v in np.frombuffer(payload[len(MAGIC):_HEADER], dtype="<u4"))
    if rank != 2:
        raise FeatureIOError(f"{source}: expected rank 2, header says {rank}")
    if len(payload) - _HEADER != 4 * steps * width:
        raise FeatureIOError(f"{source}: header promises {steps}x{width} values, payload has {len(payload) - _HEADER} bytes")
    return np.frombuffer(payload, dtype="<f4", offset=_HEADER).reshape(steps, width).astype(np.float32)


@lru_cache(maxsize=4096)
def _cached_features(path: str) -> np.ndarray:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise FeatureIOError(f"cannot read features {path}: {exc}") from exc
    array = decode_features(payload, source=path)
    array.setflags(write=False)
    return array


def read_features(path: Path) -> np.ndarray:
    """Decoded matrix for a feature file; repeated reads share one read-only array."""
    return _cached_features(str(Path(path).resolve()))


def clear_feature_cache() -> None:
    _cached_features.cache_clear()


def window_indices(count: int, period: float, t_start: float, until: float) -> np.ndarray:
    starts = frame_starts(count, period)
    return np.flatnonzero((starts >= t_start) & (starts < until))


def load_event(record, until: Optional[float] = None, periods: FramePeriods = FramePeriods()) -> FeatureStream:
    """
    Frames of both modalities whose start lies in [T_s, until).

    until=None selects the full event window [T_s, T_e).
    """
    if until is None:
        until = record.t_end
    elif not record.t_start <= until <= record.t_end:
        raise ContractViolation(
            f"{record.event_id}: until={until} outside the event window [{record.t_start}, {record.t_end}]"
        )
    audio = read_features(record.audio_path)
    visual = read_features(record.visual_path)
    audio_index = window_indices(len(audio), periods.audio, record.t_start, until)
    visual_index = window_indices(len(visual), periods.visual, record.t_start, until)
    if visual_index.size == 0 or audio_index.size == 0:
        raise ContractViolation(
            f"{record.event_id}: window [{record.t_start}, {until}) is shorter than one frame of each modality"
        )
    return FeatureStream(
        audio=audio[audio_index[0]:audio_index[-1] + 1],
        visual=visual[visual_index[0]:visual_index[-1] + 1],
        visual_ends=frame_ends(len(visual), periods.visual)[visual_index],
        periods=periods,
    )

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.data.features import FeatureStream, FramePeriods, load_event
from app.data.vocab import PAD
from app.errors import ContractViolation


@dataclass
class Batch:
    """Zero-padded features and captions with boolean masks marking real positions."""

    audio: np.ndarray
    visual: np.ndarray
    audio_mask: np.ndarray
    visual_mask: np.ndarray
    captions: np.ndarray
    caption_mask: np.ndarray
    records: list
    untils: list[float]

    def __len__(self) -> int:
        return len(self.records)

    def item(self, index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.audio[index], self.visual[index], self.audio_mask[index], self.visual_mask[index]

    def caption(self, index: int) -> list[int]:
        return [int(t) for t in self.captions[index][self.caption_mask[index]]]


def _pad(arrays: Sequence[np.ndarray], width: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    longest = max(len(a) for a in arrays)
    padded = np.zeros((len(arrays), longest, width), dtype=dtype)
    mask = np.zeros((len(arrays), longest), dtype=bool)
    for row, array in enumerate(arrays):
        padded[row, : len(array)] = array
        mask[row, : len(array)] = True
    return padded, mask


def make_batch(
    records: Sequence,
    untils: Optional[Sequence[Optional[float]]] = None,
    periods: FramePeriods = FramePeriods(),
) -> Batch:
    """Load each event truncated at its own `until` (None = full window) and pad to the batch maxima."""
    if not records:
        raise ContractViolation("cannot build an empty batch")
    untils = list(untils) if untils is not None else [None] * len(records)
    if len(untils) != len(records):
        raise ContractViolation(f"{len(records)} events but {len(untils)} truncation times")
    for record in records:
        if not record.caption:
            raise ContractViolation(f"event {record.event_id} has not been tokenized")

    streams: list[FeatureStream] = [load_event(r, until, periods) for r, until in zip(records, untils)]
    audio, audio_mask = _pad([s.audio for s in streams], streams[0].audio.shape[1], np.float32)
    visual, visual_mask = _pad([s.visual for s in streams], streams[0].visual.shape[1], np.float32)

    longest = max(len(r.caption) for r in records)
    captions = np.full((len(records), longest), PAD, dtype=np.int64)
    caption_mask = np.zeros((len(records), longest), dtype=bool)
    for row, record in enumerate(records):
        captions[row, : len(record.caption)] = record.caption
        caption_mask[row, : len(record.caption)] = True

    return Batch(
        audio=audio,
        visual=visual,
        audio_mask=audio_mask,
        visual_mask=visual_mask,
        captions=captions,
        caption_mask=caption_mask,
        records=list(records),
        untils=[r.t_end if u is None else u for r, u in zip(records, untils)],
    )

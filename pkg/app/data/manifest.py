"""
Event manifests, datasets and the cached teacher captions.

A manifest is UTF-8 tab-separated text, one event per line:
    event_id  audio_path  visual_path  t_start_sec  t_end_sec  caption_text
Lines starting with '#' are comments. Relative feature paths resolve against
the manifest's directory.
"""

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from app.data.features import FramePeriods
from app.data.vocab import Vocabulary, build_vocab
from app.errors import DataError, FeatureIOError, PreconditionError

MANIFEST_COLUMNS = ["event_id", "audio_path", "visual_path", "t_start_sec", "t_end_sec", "caption_text"]
TEACHER_CAPTION_COLUMNS = ["event_id", "token_ids", "caption_text"]
SPLITS = ("train", "val")


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    audio_path: Path
    visual_path: Path
    t_start: float
    t_end: float
    caption_text: str
    caption: tuple[int, ...] = ()
    teacher_caption: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not 0 <= self.t_start < self.t_end:
            raise DataError(f"event {self.event_id}: needs 0 <= t_start < t_end, got [{self.t_start}, {self.t_end}]")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def tokenized(self, vocab: Vocabulary) -> "EventRecord":
        caption = tuple(vocab.encode(self.caption_text))
        if not caption:
            raise DataError(f"event {self.event_id}: caption is empty after tokenization")
        return replace(self, caption=caption)


def _read_table(path: Path, columns: list[str]) -> pd.DataFrame:
    try:
        with open(path, encoding="utf-8") as handle:
            # only whole lines are comments; '#' inside a caption is text
            text = "".join(line for line in handle if not line.startswith("#"))
    except FileNotFoundError as exc:
        raise FeatureIOError(f"file not found: {path}") from exc
    try:
        frame = pd.read_csv(
            io.StringIO(text), sep="\t", header=None, dtype=str,
            quoting=csv.QUOTE_NONE, keep_default_na=False, skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=columns)
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed table: {exc}") from exc
    if frame.shape[1] != len(columns):
        raise DataError(f"{path}: expected {len(columns)} tab-separated columns, found {frame.shape[1]}")
    frame.columns = columns
    return frame


def read_manifest(path: Path) -> list[EventRecord]:
    path = Path(path)
    frame = _read_table(path, MANIFEST_COLUMNS)
    records = []
    for row in frame.itertuples(index=False):
        try:
            t_start, t_end = float(row.t_start_sec), float(row.t_end_sec)
        except ValueError as exc:
            raise DataError(f"{path}: event {row.event_id}: bad time value") from exc
        records.append(EventRecord(
            event_id=row.event_id,
            audio_path=(path.parent / row.audio_path),
            visual_path=(path.parent / row.visual_path),
            t_start=t_start,
            t_end=t_end,
            caption_text=row.caption_text,
        ))
    ids = [record.event_id for record in records]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate event ids")
    return records


def write_manifest(records: Sequence[EventRecord], path: Path, root: Optional[Path] = None) -> Path:
    path = Path(path)
    root = Path(root) if root is not None else path.parent

    def relative(p: Path) -> str:
        try:
            return Path(p).relative_to(root).as_posix()
        except ValueError:
            return Path(p).as_posix()

    frame = pd.DataFrame([
        [r.event_id, relative(r.audio_path), relative(r.visual_path), repr(float(r.t_start)), repr(float(r.t_end)), r.caption_text]
        for r in records
    ], columns=MANIFEST_COLUMNS)
    frame.to_csv(path, sep="\t", header=False, index=False, quoting=csv.QUOTE_NONE, lineterminator="\n")
    return path


def write_teacher_captions(path: Path, captions: dict[str, Sequence[int]], vocab: Vocabulary) -> Path:
    frame = pd.DataFrame(
        [[event_id, " ".join(str(t) for t in ids), vocab.decode(ids)] for event_id, ids in captions.items()],
        columns=TEACHER_CAPTION_COLUMNS,
    )
    frame.to_csv(path, sep="\t", header=False, index=False, quoting=csv.QUOTE_NONE, lineterminator="\n")
    return Path(path)


def read_teacher_captions(path: Path) -> dict[str, tuple[int, ...]]:
    frame = _read_table(Path(path), TEACHER_CAPTION_COLUMNS)
    captions = {}
    for index, row in enumerate(frame.itertuples(index=False)):
        try:
            captions[row.event_id] = tuple(int(t) for t in row.token_ids.split())
        except ValueError as exc:
            raise DataError(f"{path}: row {index + 1}: token ids must be integers") from exc
    return captions


def attach_teacher_captions(records: Sequence[EventRecord], captions: dict[str, Sequence[int]]) -> list[EventRecord]:
    missing = [r.event_id for r in records if r.event_id not in captions]
    if missing:
        raise PreconditionError(f"no cached teacher caption for {len(missing)} events (first: {missing[0]})")
    return [replace(r, teacher_caption=tuple(captions[r.event_id])) for r in records]


@dataclass
class Dataset:
    root: Path
    train: list[EventRecord]
    val: list[EventRecord]
    vocab: Vocabulary
    periods: FramePeriods

    def split(self, name: str) -> list[EventRecord]:
        if name not in SPLITS:
            raise DataError(f"unknown split '{name}' (expected one of {SPLITS})")
        return getattr(self, name)

    def find(self, event_id: str) -> EventRecord:
        for record in (*self.val, *self.train):
            if record.event_id == event_id:
                return record
        raise DataError(f"event '{event_id}' is not in {self.root}")

    def with_teacher_captions(self, captions: dict[str, Sequence[int]]) -> "Dataset":
        return replace(
            self,
            train=attach_teacher_captions(self.train, captions),
            val=attach_teacher_captions(self.val, captions),
        )


def manifest_path(root: Path, split: str) -> Path:
    return Path(root) / f"manifest_{split}.tsv"


def load_dataset(root: Path, periods: FramePeriods = FramePeriods(), vocab: Optional[Vocabulary] = None) -> Dataset:
    """Read both split manifests and tokenize captions with vocab (built from train when omitted)."""
    root = Path(root)
    train = read_manifest(manifest_path(root, "train"))
    val = read_manifest(manifest_path(root, "val"))
    if vocab is None:
        vocab = build_vocab(train)
    return Dataset(
        root=root,
        train=[r.tokenized(vocab) for r in train],
        val=[r.tokenized(vocab) for r in val],
        vocab=vocab,
        periods=periods,
    )

"""
Synthetic audio-visual events with a controllable cue time.

Each event belongs to one class. Both streams are Gaussian noise; from the
cue time onward a class-specific constant pattern is added to the cue
modality (audio, visual or both). Before the cue no frame carries any class
information, so the earliest correct caption is possible only after it.
Captions are a fixed per-class template whose one free slot names the cue
modality.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from app.config import SyntheticSpec
from app.data.features import frame_starts, write_features
from app.data.manifest import EventRecord, manifest_path, write_manifest
from app.data.vocab import RESERVED
from app.errors import ConfigError

CUE_MODALITIES = ("audio", "visual", "both")
SLOT_WORDS = {"audio": "sounding", "visual": "appearing", "both": "everywhere"}

WORD_POOL = (
    "a", "the", "man", "woman", "child", "dog", "cat", "bird", "car", "train",
    "ball", "guitar", "piano", "drum", "door", "window", "kitchen", "street", "field", "river",
    "plays", "throws", "opens", "closes", "rides", "sings", "dances", "runs", "walks", "jumps",
    "cooks", "cuts", "paints", "reads", "writes", "swims", "climbs", "kicks", "catches", "pours",
    "water", "bread", "paper", "wood", "stone", "rope", "bike", "boat", "horse", "table",
    "slowly", "quickly", "loudly", "softly", "again", "together", "outside", "inside", "near", "far",
    "red", "blue", "green", "small", "large", "old", "young", "bright", "dark", "wet",
)


@dataclass
class SyntheticEvent:
    record: EventRecord
    label: int
    cue_modality: str
    cue_time: float


def _templates(spec: SyntheticSpec, rng: np.random.Generator) -> list[list[str]]:
    pool_size = spec.vocab_size - len(RESERVED) - len(SLOT_WORDS)
    if pool_size < 5 or pool_size > len(WORD_POOL):
        raise ConfigError(
            f"data.vocab_size={spec.vocab_size} needs between {len(RESERVED) + len(SLOT_WORDS) + 5} "
            f"and {len(RESERVED) + len(SLOT_WORDS) + len(WORD_POOL)}"
        )
    pool = WORD_POOL[:pool_size]
    templates = []
    for _ in range(spec.num_classes):
        length = int(rng.integers(3, 7))
        words = [pool[i] for i in rng.choice(pool_size, size=length - 1, replace=False)]
        slot = int(rng.integers(0, length))
        templates.append(words[:slot] + ["{slot}"] + words[slot:])
    return templates


def _stream(rng, count: int, width: int, period: float, noise: float, pattern: Optional[np.ndarray], cue_time: float):
    frames = rng.normal(0.0, noise, size=(count, width))
    if pattern is not None:
        frames[frame_starts(count, period) >= cue_time] += pattern
    return frames.astype(np.float32)


def generate_events(spec: SyntheticSpec, out_dir: Path) -> dict[str, list[SyntheticEvent]]:
    """Write feature files for both splits under out_dir/features and return the events."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    templates = _templates(spec, rng)
    audio_patterns = rng.normal(0.0, 1.0, size=(spec.num_classes, spec.audio_dim))
    visual_patterns = rng.normal(0.0, 1.0, size=(spec.num_classes, spec.visual_dim))
    mix = np.asarray(spec.cue_mix, dtype=np.float64)

    splits: dict[str, list[SyntheticEvent]] = {}
    for split, count in (("train", spec.num_train), ("val", spec.num_val)):
        events = []
        for index in range(count):
            event_id = f"{split}_{index:05d}"
            label = int(rng.integers(spec.num_classes))
            duration = float(rng.uniform(spec.clip_min, spec.clip_max))
            t_start = float(rng.uniform(0.0, spec.lead_max))
            t_end = t_start + duration
            cue_time = t_start + float(rng.uniform(spec.cue_min, spec.cue_max)) * duration
            modality = CUE_MODALITIES[int(rng.choice(len(CUE_MODALITIES), p=mix))]

            audio = _stream(
                rng, math.ceil(t_end / spec.audio_period), spec.audio_dim, spec.audio_period, spec.noise,
                audio_patterns[label] if modality in ("audio", "both") else None, cue_time,
            )
            visual = _stream(
                rng, math.ceil(t_end / spec.visual_period), spec.visual_dim, spec.visual_period, spec.noise,
                visual_patterns[label] if modality in ("visual", "both") else None, cue_time,
            )
            audio_path = write_features(out_dir / "features" / f"{event_id}.audio.avcf", audio)
            visual_path = write_features(out_dir / "features" / f"{event_id}.visual.avcf", visual)

            caption = " ".join(SLOT_WORDS[modality] if w == "{slot}" else w for w in templates[label])
            record = EventRecord(event_id, audio_path, visual_path, t_start, t_end, caption)
            events.append(SyntheticEvent(record, label, modality, cue_time))
        splits[split] = events
    return splits


def generate_synthetic(spec: SyntheticSpec, out_dir: Path) -> dict[str, Path]:
    """Generate both splits and write manifest_train.tsv / manifest_val.tsv into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = generate_events(spec, out_dir)
    return {
        split: write_manifest([e.record for e in events], manifest_path(out_dir, split), root=out_dir)
        for split, events in splits.items()
    }

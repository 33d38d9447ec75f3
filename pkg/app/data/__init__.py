from .vocab import EOS, PAD, RESERVED, SOS, UNK, Vocabulary, build_vocab, normalize_caption
from .features import (
    FeatureStream,
    FramePeriods,
    clear_feature_cache,
    decode_features,
    encode_features,
    frame_ends,
    frame_starts,
    load_event,
    read_features,
    window_indices,
    write_features,
)
from .manifest import (
    Dataset,
    EventRecord,
    attach_teacher_captions,
    load_dataset,
    manifest_path,
    read_manifest,
    read_teacher_captions,
    write_manifest,
    write_teacher_captions,
)
from .batching import Batch, make_batch
from .synthetic import SyntheticEvent, generate_events, generate_synthetic

__all__ = [
    # Vocabulary
    "EOS",
    "PAD",
    "RESERVED",
    "SOS",
    "UNK",
    "Vocabulary",
    "build_vocab",
    "normalize_caption",
    # Feature files
    "FeatureStream",
    "FramePeriods",
    "clear_feature_cache",
    "decode_features",
    "encode_features",
    "frame_ends",
    "frame_starts",
    "load_event",
    "read_features",
    "window_indices",
    "write_features",
    # Manifests
    "Dataset",
    "EventRecord",
    "attach_teacher_captions",
    "load_dataset",
    "manifest_path",
    "read_manifest",
    "read_teacher_captions",
    "write_manifest",
    "write_teacher_captions",
    "Batch",
    "make_batch",
    "SyntheticEvent",
    "generate_events",
    "generate_synthetic",
]

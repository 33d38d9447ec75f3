from .params import DETECTOR_PREFIX, MODALITIES, ModelParams, parameter_shapes
from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .transformer import Encodings, decode, detect_end, encode
from .search import Hypothesis, beam_search, caption_tokens, greedy_search
from .captioner import AVCaptioner, teacher_forced_logits, word_accuracy

__all__ = [
    "DETECTOR_PREFIX",
    "MODALITIES",
    "ModelParams",
    "parameter_shapes",
    # Checkpoints
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    # Forward passes
    "Encodings",
    "decode",
    "detect_end",
    "encode",
    "teacher_forced_logits",
    # Search
    "Hypothesis",
    "beam_search",
    "caption_tokens",
    "greedy_search",
    "AVCaptioner",
    "word_accuracy",
]

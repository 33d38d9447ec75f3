from .losses import (
    caption_ce_loss,
    combined_loss,
    detection_label,
    detection_loss,
    distill_kl_loss,
)
from .optimizer import AdamState, clip_by_global_norm, learning_rate, optimizer_step
from .trainer import (
    TEACHER_CAPTIONS_FILE,
    VOCAB_FILE,
    EpochRecord,
    TrainResult,
    cache_teacher_captions,
    offline_scores,
    resolve_model_config,
    sample_emission_time,
    teacher_distributions,
    train_student,
    train_teacher,
    write_history,
)

__all__ = [
    # Losses
    "caption_ce_loss",
    "combined_loss",
    "detection_label",
    "detection_loss",
    "distill_kl_loss",
    # Optimisation
    "AdamState",
    "clip_by_global_norm",
    "learning_rate",
    "optimizer_step",
    # Loops
    "TEACHER_CAPTIONS_FILE",
    "VOCAB_FILE",
    "EpochRecord",
    "TrainResult",
    "cache_teacher_captions",
    "offline_scores",
    "resolve_model_config",
    "sample_emission_time",
    "teacher_distributions",
    "train_student",
    "train_teacher",
    "write_history",
]

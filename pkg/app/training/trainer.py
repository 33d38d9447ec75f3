"""
Teacher pretraining on full event windows and joint student training of the
captioner and the end detector on randomly truncated windows.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app import compute as C
from app.compute import Graph, Tensor
from app.config import ModelConfig, RunConfig
from app.data.batching import make_batch
from app.data.features import FramePeriods, load_event
from app.data.manifest import Dataset, EventRecord, write_teacher_captions
from app.data.vocab import EOS, Vocabulary
from app.errors import ConfigError, PreconditionError, TrainingError
from app.evaluation.bleu import corpus_bleu
from app.evaluation.report import HISTORY_COLUMNS, corpus_eval
from app.model.captioner import AVCaptioner, teacher_forced_logits
from app.model.checkpoint import load_checkpoint, save_checkpoint
from app.model.params import ModelParams
from app.model.transformer import detect_end, encode
from app.training.losses import (
    caption_ce_loss,
    combined_loss,
    detection_label,
    detection_loss,
    distill_kl_loss,
)
from app.training.optimizer import AdamState, optimizer_step

logger = logging.getLogger(__name__)

TEACHER_CAPTIONS_FILE = "teacher_captions.tsv"
VOCAB_FILE = "vocab.txt"


@dataclass
class EpochRecord:
    epoch: int
    latency_ratio: float
    bleu3: float
    bleu4: float
    word_acc: float
    loss_ce: float
    loss_kl: float
    loss_d: float

    def values(self) -> list[float]:
        return [getattr(self, column) for column in HISTORY_COLUMNS]


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    paths: dict[str, Path] = field(default_factory=dict)


def resolve_model_config(config: ModelConfig, vocab: Vocabulary) -> ModelConfig:
    """Fill vocab_size from the vocabulary, or check an explicit value against it."""
    if config.vocab_size == 0:
        return config.model_copy(update={"vocab_size": len(vocab)})
    if config.vocab_size != len(vocab):
        raise ConfigError(f"model.vocab_size={config.vocab_size} but the vocabulary has {len(vocab)} entries")
    return config


def sample_emission_time(
    t_start: float, t_end: float, rng: np.random.Generator, visual_period: float = FramePeriods().visual
) -> Optional[float]:
    """Uniform draw from [T_s + p_v, T_e]; None when the window holds less than one visual frame."""
    low = t_start + visual_period
    if low > t_end:
        return None
    if low == t_end:
        return t_end
    return float(rng.uniform(low, t_end))


def _batches(count: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(count)
    return [order[i:i + batch_size] for i in range(0, count, batch_size)]


def _graph_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def _check_finite(value: float, stage: str, epoch: int, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"{stage}: loss became non-finite at epoch {epoch}, step {step}")


def write_history(history: Sequence[EpochRecord], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.values() for r in history], columns=HISTORY_COLUMNS).to_csv(
        path, index=False, lineterminator="\n"
    )
    return path


def write_checkpoint_manifest(out_dir: Path, best: str, last: str) -> Path:
    path = Path(out_dir) / "MANIFEST"
    path.write_text(f"best {best}\nlast {last}\n", encoding="utf-8")
    return path


def full_window_encodings(captioner: AVCaptioner, record: EventRecord, periods: FramePeriods):
    stream = load_event(record, None, periods)
    return captioner.encode(stream.audio, stream.visual)


def offline_scores(captioner: AVCaptioner, records: Sequence[EventRecord], periods: FramePeriods) -> tuple[float, float, float]:
    """Corpus BLEU-3, BLEU-4 and mean teacher-forced accuracy of full-window greedy captions."""
    candidates, references, accuracies = [], [], []
    for record in records:
        enc = full_window_encodings(captioner, record, periods)
        candidates.append(captioner.greedy_decode(enc))
        references.append(list(record.caption))
        accuracies.append(captioner.word_accuracy(record.caption, enc))
    return (
        corpus_bleu(candidates, references, 3),
        corpus_bleu(candidates, references, 4),
        float(np.mean(accuracies)),
    )


def cache_teacher_captions(captioner: AVCaptioner, records: Sequence[EventRecord], periods: FramePeriods) -> dict[str, list[int]]:
    return {r.event_id: captioner.greedy_decode(full_window_encodings(captioner, r, periods)) for r in records}


def train_teacher(dataset: Dataset, config: RunConfig, out_dir: Path, log=None) -> TrainResult:
    """Minimise label-smoothed CE on full windows; keep the best validation checkpoint and cache its captions."""
    log = log or logger
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = config.train
    model_cfg = resolve_model_config(config.model, dataset.vocab)
    rng = np.random.default_rng(train_cfg.seed)
    params = ModelParams.initialize(model_cfg, seed=train_cfg.seed)
    captioner = AVCaptioner(params)
    trainable = params.names(detector=False)
    state = AdamState()
    log.info(f"teacher: {params.num_values} parameter values, {len(dataset.train)} training events")

    history: list[EpochRecord] = []
    best_accuracy, best_epoch = -1.0, 0
    paths = {"best": out_dir / "teacher_best.avck", "last": out_dir / "teacher_last.avck"}
    for epoch in range(1, train_cfg.epochs + 1):
        losses = []
        for step, indices in enumerate(_batches(len(dataset.train), train_cfg.batch_size, rng), start=1):
            batch = make_batch([dataset.train[i] for i in indices], None, dataset.periods)
            for item in range(len(batch)):
                caption = batch.caption(item)
                with Graph(seed=_graph_seed(rng), training=True) as graph:
                    enc = encode(params, *batch.item(item))
                    log_probs = C.log_softmax(teacher_forced_logits(params, caption, enc))
                    loss = caption_ce_loss(log_probs, [*caption, EOS], train_cfg.label_smoothing)
                    _check_finite(loss.item(), "teacher", epoch, step)
                    graph.backward(C.mul(loss, 1.0 / len(batch)))
                losses.append(loss.item())
            optimizer_step(params, state, train_cfg, trainable)
            params.zero_grad()

        bleu3, bleu4, accuracy = offline_scores(captioner, dataset.val, dataset.periods)
        record = EpochRecord(epoch, 1.0, bleu3, bleu4, accuracy, float(np.mean(losses)), 0.0, 0.0)
        history.append(record)
        log.info(f"[teacher] epoch {epoch}: loss_ce={record.loss_ce:.4f} word_acc={accuracy:.4f} bleu4={bleu4:.4f}")

        if accuracy > best_accuracy:
            best_accuracy, best_epoch = accuracy, epoch
            save_checkpoint(params, paths["best"])
        if epoch % train_cfg.checkpoint_every == 0:
            save_checkpoint(params, out_dir / f"teacher_epoch{epoch:03d}.avck")

    save_checkpoint(params, paths["last"])
    write_checkpoint_manifest(out_dir, paths["best"].name, paths["last"].name)
    paths["history"] = write_history(history, out_dir / "teacher_history.csv")
    paths["vocab"] = dataset.vocab.save(out_dir / VOCAB_FILE)

    best = load_checkpoint(paths["best"], requires_grad=False)
    best_captioner = AVCaptioner(best)
    captions = cache_teacher_captions(best_captioner, [*dataset.train, *dataset.val], dataset.periods)
    paths["captions"] = write_teacher_captions(out_dir / TEACHER_CAPTIONS_FILE, captions, dataset.vocab)
    log.info(f"teacher: best epoch {best_epoch} with validation word accuracy {best_accuracy:.4f}")
    return TrainResult(best, history, best_epoch, paths)


def teacher_distributions(captioner: AVCaptioner, records: Sequence[EventRecord], periods: FramePeriods) -> dict[str, np.ndarray]:
    """Full-window teacher-forced distributions per event, computed once because the teacher is frozen."""
    return {
        r.event_id: captioner.teacher_forced_predictions(r.caption, full_window_encodings(captioner, r, periods))[1]
        for r in records
    }


def _similarities(student: AVCaptioner, record: EventRecord, enc) -> tuple[float, float]:
    sim_gt = student.word_accuracy(record.caption, enc)
    if not record.teacher_caption:
        return sim_gt, 0.0
    return sim_gt, student.word_accuracy(record.teacher_caption, enc)


def _selection_key(record: EpochRecord, teacher_bleu4: float) -> tuple:
    qualified = record.bleu4 >= 0.9 * teacher_bleu4
    return (qualified, -record.latency_ratio if qualified else record.bleu4)


def train_student(
    dataset: Dataset,
    teacher: ModelParams,
    config: RunConfig,
    out_dir: Path,
    log=None,
) -> TrainResult:
    """
    Jointly train captioner and end detector on truncated windows.

    The student's captioner starts as a copy of the teacher's; the detector
    starts from random weights. The teacher itself is never updated.
    """
    log = log or logger
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = config.train
    periods = dataset.periods
    missing = [r.event_id for r in (*dataset.train, *dataset.val) if r.teacher_caption is None]
    if missing:
        raise PreconditionError(f"teacher captions are not cached for {len(missing)} events (first: {missing[0]})")
    model_cfg = resolve_model_config(config.model, dataset.vocab)
    if teacher.config.model_dump() != model_cfg.model_dump():
        log.warning("teacher checkpoint config differs from the run config; using the teacher's")
        model_cfg = teacher.config

    rng = np.random.default_rng(train_cfg.seed)
    teacher_captioner = AVCaptioner(teacher.frozen())
    student = ModelParams.initialize(model_cfg, seed=train_cfg.seed + 1)
    student.copy_captioner_from(teacher)
    student_captioner = AVCaptioner(student)
    state = AdamState()

    _, teacher_bleu4, _ = offline_scores(teacher_captioner, dataset.val, periods)
    distributions = teacher_distributions(teacher_captioner, dataset.train, periods) if train_cfg.distill else {}
    beta = train_cfg.beta if train_cfg.distill else 0.0
    log.info(f"student: teacher validation BLEU-4 {teacher_bleu4:.4f}, distillation {'on' if train_cfg.distill else 'off'}")

    history: list[EpochRecord] = []
    best_key, best_epoch = None, 0
    paths = {"best": out_dir / "student_best.avck", "last": out_dir / "student_last.avck"}
    for epoch in range(1, train_cfg.epochs + 1):
        sums = {"ce": [], "kl": [], "d": []}
        for step, indices in enumerate(_batches(len(dataset.train), train_cfg.batch_size, rng), start=1):
            chosen = [dataset.train[i] for i in indices]
            untils = [sample_emission_time(r.t_start, r.t_end, rng, periods.visual) for r in chosen]
            kept = [(r, u) for r, u in zip(chosen, untils) if u is not None]
            if not kept:
                continue
            batch = make_batch([r for r, _ in kept], [u for _, u in kept], periods)
            for item in range(len(batch)):
                record = batch.records[item]
                caption = batch.caption(item)
                inputs = batch.item(item)
                label_enc = student_captioner.encode(*inputs)
                label = detection_label(*_similarities(student_captioner, record, label_enc), train_cfg.similarity_threshold)

                with Graph(seed=_graph_seed(rng), training=True) as graph:
                    enc = encode(student, *inputs)
                    log_probs = C.log_softmax(teacher_forced_logits(student, caption, enc))
                    loss_ce = caption_ce_loss(log_probs, [*caption, EOS], train_cfg.label_smoothing)
                    if train_cfg.distill:
                        loss_kl = distill_kl_loss(distributions[record.event_id], log_probs)
                    else:
                        loss_kl = Tensor(np.zeros((), dtype=log_probs.dtype))
                    loss_d = detection_loss(detect_end(student, enc), label)
                    total = combined_loss(loss_ce, loss_kl, loss_d, train_cfg.alpha, beta, train_cfg.gamma)
                    _check_finite(total.item(), "student", epoch, step)
                    graph.backward(C.mul(total, 1.0 / len(batch)))
                sums["ce"].append(loss_ce.item())
                sums["kl"].append(loss_kl.item())
                sums["d"].append(loss_d.item())
            optimizer_step(student, state, train_cfg)
            student.zero_grad()

        row = corpus_eval(student_captioner, dataset.val, train_cfg.validation_threshold, periods, log=log)
        record = EpochRecord(
            epoch, row.latency_ratio, row.bleu3, row.bleu4, row.word_acc,
            float(np.mean(sums["ce"])) if sums["ce"] else 0.0,
            float(np.mean(sums["kl"])) if sums["kl"] else 0.0,
            float(np.mean(sums["d"])) if sums["d"] else 0.0,
        )
        history.append(record)
        log.info(
            f"[student] epoch {epoch}: latency={record.latency_ratio:.4f} bleu4={record.bleu4:.4f} "
            f"word_acc={record.word_acc:.4f} loss_ce={record.loss_ce:.4f} loss_kl={record.loss_kl:.4f} "
            f"loss_d={record.loss_d:.4f}"
        )

        key = _selection_key(record, teacher_bleu4)
        if best_key is None or key > best_key:
            best_key, best_epoch = key, epoch
            save_checkpoint(student, paths["best"])
        if epoch % train_cfg.checkpoint_every == 0:
            save_checkpoint(student, out_dir / f"student_epoch{epoch:03d}.avck")

    save_checkpoint(student, paths["last"])
    write_checkpoint_manifest(out_dir, paths["best"].name, paths["last"].name)
    paths["history"] = write_history(history, out_dir / "student_history.csv")
    paths["vocab"] = dataset.vocab.save(out_dir / VOCAB_FILE)
    log.info(f"student: best epoch {best_epoch}")
    return TrainResult(student, history, best_epoch, paths)

from typing import Sequence, Union

import numpy as np

from app import compute as C
from app.compute import Tensor
from app.errors import ContractViolation

PROB_FLOOR = 1e-7


def _as_log_probs(log_probs: Union[Tensor, np.ndarray]) -> Tensor:
    return log_probs if isinstance(log_probs, Tensor) else Tensor(np.asarray(log_probs, dtype=np.float64))


def caption_ce_loss(log_probs: Union[Tensor, np.ndarray], targets: Sequence[int], epsilon: float, pad_id: int = 0) -> Tensor:
    """
    Label-smoothed negative log-likelihood averaged over non-pad positions.

    log_probs is [positions x vocab]; the target keeps 1 - epsilon of the
    mass and epsilon is spread uniformly over the other vocab entries.
    """
    log_probs = _as_log_probs(log_probs)
    targets = np.asarray(targets, dtype=np.int64)
    positions, vocab = log_probs.shape
    if targets.shape != (positions,):
        raise ContractViolation(f"{positions} predicted positions but {targets.size} targets")
    keep = np.flatnonzero(targets != pad_id)
    if keep.size == 0:
        raise ContractViolation("every target position is padding")

    picked = C.getitem(log_probs, (keep, targets[keep]))
    loss = C.mul(C.sum(picked), -(1.0 - epsilon))
    if epsilon > 0:
        others = C.sub(C.sum(C.getitem(log_probs, keep)), C.sum(picked))
        loss = C.sub(loss, C.mul(others, epsilon / (vocab - 1)))
    return C.mul(loss, 1.0 / keep.size)


def distill_kl_loss(teacher_probs: np.ndarray, student_log_probs: Union[Tensor, np.ndarray]) -> Tensor:
    """Cross-entropy of student log-probabilities under teacher distributions, averaged over positions."""
    student_log_probs = _as_log_probs(student_log_probs)
    teacher_probs = np.asarray(teacher_probs)
    if teacher_probs.shape != student_log_probs.shape:
        raise ContractViolation(
            f"teacher distributions {list(teacher_probs.shape)} do not match student {student_log_probs.dims}"
        )
    weighted = C.mul(student_log_probs, teacher_probs.astype(student_log_probs.dtype))
    return C.mul(C.sum(weighted), -1.0 / teacher_probs.shape[0])


def detection_loss(prob: Union[Tensor, float], label: int) -> Tensor:
    """Binary cross-entropy of the end-detector probability, clamped to [1e-7, 1 - 1e-7]."""
    if label not in (0, 1):
        raise ContractViolation(f"detection label must be 0 or 1, got {label}")
    prob = prob if isinstance(prob, Tensor) else Tensor(float(prob))
    clamped = C.clip(prob, PROB_FLOOR, 1.0 - PROB_FLOOR)
    if label == 1:
        return C.mul(C.log(clamped), -1.0)
    return C.mul(C.log(C.sub(1.0, clamped)), -1.0)


def combined_loss(ce: Tensor, kl: Tensor, detection: Tensor, alpha: float, beta: float, gamma: float) -> Tensor:
    return C.add(C.add(C.mul(ce, alpha), C.mul(kl, beta)), C.mul(detection, gamma))


def detection_label(sim_gt: float, sim_teacher: float, threshold: float) -> int:
    """1 when the early prediction is similar enough to either the ground truth or the teacher caption."""
    return int(max(sim_gt, sim_teacher) >= threshold)

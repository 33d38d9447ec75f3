from typing import Sequence

import numpy as np

from app import compute as C
from app.compute import inference
from app.data.vocab import EOS, SOS
from app.errors import ContractViolation
from app.model.params import ModelParams
from app.model.search import beam_search, caption_tokens, greedy_search
from app.model.transformer import Encodings, decode, detect_end, encode


def teacher_forced_logits(params: ModelParams, reference: Sequence[int], enc: Encodings) -> C.Tensor:
    """Decoder logits for the reference shifted right by the start token: one row per word plus eos."""
    if len(reference) == 0:
        raise ContractViolation("teacher forcing needs a non-empty reference")
    if len(reference) > params.config.max_decode_len:
        raise ContractViolation(
            f"reference of {len(reference)} tokens exceeds max_decode_len={params.config.max_decode_len}"
        )
    return decode(params, [SOS, *reference], enc)


def word_accuracy(predicted: Sequence[int], target: Sequence[int]) -> float:
    if len(predicted) != len(target):
        raise ContractViolation(f"compared sequences differ in length ({len(predicted)} vs {len(target)})")
    if not target:
        return 0.0
    return float(np.mean(np.asarray(predicted) == np.asarray(target)))


class AVCaptioner:
    """
    Inference facade over one parameter set.

    All methods run without recording gradients or applying dropout, so any
    number of sessions may share one captioner.
    """

    def __init__(self, params: ModelParams):
        self.params = params

    @property
    def config(self):
        return self.params.config

    def encode(self, audio, visual, audio_mask=None, visual_mask=None) -> Encodings:
        with inference():
            return encode(self.params, audio, visual, audio_mask, visual_mask)

    def detect_end(self, enc: Encodings) -> float:
        with inference():
            return detect_end(self.params, enc).item()

    def decode_step(self, prefix: Sequence[int], enc: Encodings) -> np.ndarray:
        if not prefix or prefix[0] != SOS:
            raise ContractViolation("decoder prefix must begin with the start token")
        if len(prefix) > self.config.max_decode_len:
            raise ContractViolation(f"prefix of {len(prefix)} tokens exceeds max_decode_len")
        with inference():
            logits = decode(self.params, prefix, enc)
            return C.softmax(logits[-1]).data

    def greedy_decode(self, enc: Encodings) -> list[int]:
        return greedy_search(lambda prefix: self.decode_step(prefix, enc), SOS, EOS, self.config.max_decode_len)

    def beam_decode(self, enc: Encodings, width: int) -> list[int]:
        best = beam_search(lambda prefix: self.decode_step(prefix, enc), width, SOS, EOS, self.config.max_decode_len)
        return caption_tokens(best, EOS)

    def caption(self, enc: Encodings, beam_width: int = 1) -> list[int]:
        if beam_width == 1:
            return self.greedy_decode(enc)
        return self.beam_decode(enc, beam_width)

    def teacher_forced_predictions(self, reference: Sequence[int], enc: Encodings) -> tuple[np.ndarray, np.ndarray]:
        with inference():
            distributions = C.softmax(teacher_forced_logits(self.params, reference, enc)).data
        return distributions.argmax(axis=-1), distributions

    def word_accuracy(self, reference: Sequence[int], enc: Encodings) -> float:
        """Teacher-forced word accuracy against reference + eos."""
        predicted, _ = self.teacher_forced_predictions(reference, enc)
        return word_accuracy(list(predicted), [*reference, EOS])

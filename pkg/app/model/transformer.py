"""
Forward passes of the audio-visual encoder, the end detector and the caption
decoder. Each function works on one event (2-D feature arrays plus boolean
frame masks) and builds its result from compute primitives, so the same code
serves training (inside a Graph) and inference (outside one).

Every attention and feed-forward sublayer is pre-norm with a residual add and
dropout on its output.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from app import compute as C
from app.compute import Tensor
from app.errors import ContractViolation, ShapeError
from app.model.params import MODALITIES, ModelParams


@dataclass
class Encodings:
    audio: Tensor
    visual: Tensor
    audio_mask: np.ndarray
    visual_mask: np.ndarray

    def of(self, modality: str) -> tuple[Tensor, np.ndarray]:
        if modality == "audio":
            return self.audio, self.audio_mask
        return self.visual, self.visual_mask


def _prepare(features, width: int, mask: Optional[np.ndarray], modality: str, dtype) -> tuple[Tensor, np.ndarray]:
    data = features.data if isinstance(features, Tensor) else np.asarray(features)
    if data.ndim != 2 or data.shape[1] != width:
        raise ShapeError(f"{modality} features must be [T x {width}], got {list(data.shape)}")
    if data.shape[0] == 0:
        raise ContractViolation(f"{modality} stream is empty; both modalities are required")
    mask = np.ones(data.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (data.shape[0],):
        raise ShapeError(f"{modality} mask dims {list(mask.shape)} do not match {data.shape[0]} frames")
    if not mask.any():
        raise ContractViolation(f"{modality} stream has no unmasked frames")
    if isinstance(features, Tensor) and features.dtype == dtype:
        tensor = features
    else:
        tensor = Tensor(data.astype(dtype, copy=False))
    return C.add(tensor, C.positional_encoding(data.shape[0], width, dtype)), mask


def _residual(x: Tensor, norm: tuple[Tensor, Tensor], sublayer: Callable[[Tensor], Tensor], rate: float) -> Tensor:
    return C.add(x, C.dropout(sublayer(C.layer_norm(x, *norm)), rate))


def _key_mask(query_steps: int, key_mask: np.ndarray) -> np.ndarray:
    return np.broadcast_to(key_mask[None, :], (query_steps, key_mask.shape[0]))


def encode(
    params: ModelParams,
    audio,
    visual,
    audio_mask: Optional[np.ndarray] = None,
    visual_mask: Optional[np.ndarray] = None,
) -> Encodings:
    config = params.config
    dtype = params["dec.embed"].dtype
    a, audio_mask = _prepare(audio, config.d_audio, audio_mask, "audio", dtype)
    v, visual_mask = _prepare(visual, config.d_visual, visual_mask, "visual", dtype)
    masks = {"audio": audio_mask, "visual": visual_mask}
    rate, heads = config.dropout, config.heads

    for block in range(config.encoder_blocks):
        states = {"audio": a, "visual": v}
        for modality in MODALITIES:
            prefix = f"enc.{block}.{modality}"
            x = states[modality]
            self_mask = _key_mask(x.shape[0], masks[modality])
            states[modality] = _residual(
                x, params.norm(f"{prefix}.self_norm"),
                lambda h, p=prefix, m=self_mask: C.mha(h, h, h, params.attention(f"{p}.self_attn"), heads, m),
                rate,
            )

        # each modality queries itself against keys/values from the other one
        normed = {m: C.layer_norm(states[m], *params.norm(f"enc.{block}.{m}.cross_norm")) for m in MODALITIES}
        crossed = {}
        for modality, other in (("audio", "visual"), ("visual", "audio")):
            prefix = f"enc.{block}.{modality}"
            cross_mask = _key_mask(states[modality].shape[0], masks[other])
            attended = C.mha(
                normed[modality], normed[other], normed[other],
                params.attention(f"{prefix}.cross_attn"), heads, cross_mask,
            )
            crossed[modality] = C.add(states[modality], C.dropout(attended, rate))

        for modality in MODALITIES:
            prefix = f"enc.{block}.{modality}"
            crossed[modality] = _residual(
                crossed[modality], params.norm(f"{prefix}.ffn_norm"),
                lambda h, p=prefix: C.ffn_block(h, params.ffn(f"{p}.ffn")),
                rate,
            )
        a, v = crossed["audio"], crossed["visual"]

    a = C.layer_norm(a, *params.norm("enc.final_norm.audio"))
    v = C.layer_norm(v, *params.norm("enc.final_norm.visual"))
    return Encodings(a, v, audio_mask, visual_mask)


def _pooled_conv_features(params: ModelParams, modality: str, states: Tensor, mask: np.ndarray) -> Tensor:
    prefix = f"det.{modality}"
    keep = mask[:, None].astype(states.dtype)
    hidden = C.conv1d(C.mul(states, keep), params[f"{prefix}.conv1.kernel"])
    hidden = C.relu(C.add(hidden, params[f"{prefix}.conv1.bias"]))
    hidden = C.conv1d(C.mul(hidden, keep), params[f"{prefix}.conv2.kernel"])
    hidden = C.add(hidden, params[f"{prefix}.conv2.bias"])
    return C.mean_pool(hidden, mask)


def detect_end(params: ModelParams, enc: Encodings) -> Tensor:
    """Probability (scalar Tensor) that a suitable caption can already be emitted."""
    pooled = [_pooled_conv_features(params, m, *enc.of(m)) for m in MODALITIES]
    joint = C.reshape(C.concat(pooled, axis=0), (1, -1))
    head = params.ffn("det.ffn")
    logit = C.linear(C.relu(C.linear(joint, head.w1, head.b1)), head.w2, head.b2)
    return C.reshape(C.sigmoid(logit), ())


def decode(params: ModelParams, tokens: Sequence[int], enc: Encodings) -> Tensor:
    """Next-word logits [L x vocab] for every position of a decoder input prefix."""
    config = params.config
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ContractViolation("decoder input must be a non-empty token sequence")
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise ContractViolation(f"token id outside vocabulary of size {config.vocab_size}")

    steps = tokens.size
    table = params["dec.embed"]
    y = C.add(C.embedding(table, tokens), C.positional_encoding(steps, config.d_embed, table.dtype))
    causal = np.tril(np.ones((steps, steps), dtype=bool))
    audio_mask = _key_mask(steps, enc.audio_mask)
    visual_mask = _key_mask(steps, enc.visual_mask)
    rate, heads = config.dropout, config.heads

    for block in range(config.decoder_blocks):
        prefix = f"dec.{block}"
        y = _residual(
            y, params.norm(f"{prefix}.self_norm"),
            lambda h: C.mha(h, h, h, params.attention(f"{prefix}.self_attn"), heads, causal),
            rate,
        )
        query = C.layer_norm(y, *params.norm(f"{prefix}.src_norm"))
        from_audio = C.mha(query, enc.audio, enc.audio, params.attention(f"{prefix}.audio_attn"), heads, audio_mask)
        from_visual = C.mha(query, enc.visual, enc.visual, params.attention(f"{prefix}.visual_attn"), heads, visual_mask)
        merged = C.concat([C.add(y, C.dropout(from_audio, rate)), C.add(y, C.dropout(from_visual, rate))], axis=1)
        y = C.linear(merged, params[f"{prefix}.merge.w"], params[f"{prefix}.merge.b"])
        y = _residual(y, params.norm(f"{prefix}.ffn_norm"), lambda h: C.ffn_block(h, params.ffn(f"{prefix}.ffn")), rate)

    y = C.layer_norm(y, *params.norm("dec.final_norm"))
    return C.linear(y, params["out.w"], params["out.b"])

"""
Named parameter sets for the captioner and the end detector.

Names are dotted paths: "enc.<block>.<modality>.<sublayer>.<weight>",
"det.<modality>.conv<k>.<weight>", "dec.<block>.<sublayer>.<weight>",
"out.<weight>". Everything under "det." is the detector; the rest is the
captioner (encoder, decoder and output projection).
"""

from typing import Iterator, Optional

import numpy as np

from app.compute import AttentionWeights, FFNWeights, Tensor
from app.config import ModelConfig
from app.errors import ConfigError, PreconditionError, ShapeError

MODALITIES = ("audio", "visual")
DETECTOR_PREFIX = "det."


def _widths(config: ModelConfig) -> dict[str, int]:
    return {"audio": config.d_audio, "visual": config.d_visual}


def _ffn_widths(config: ModelConfig) -> dict[str, int]:
    return {"audio": config.ffn_audio, "visual": config.ffn_visual}


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name with its shape, in canonical order."""
    if config.vocab_size < 5:
        raise ConfigError(f"vocab_size must cover the reserved tokens plus one word, got {config.vocab_size}")
    shapes: dict[str, tuple[int, ...]] = {}
    widths, ffn_widths = _widths(config), _ffn_widths(config)

    def norm(prefix: str, width: int):
        shapes[f"{prefix}.gain"] = (width,)
        shapes[f"{prefix}.bias"] = (width,)

    def attention(prefix: str, q_width: int, kv_width: int):
        shapes.update({
            f"{prefix}.wq": (q_width, q_width), f"{prefix}.bq": (q_width,),
            f"{prefix}.wk": (kv_width, q_width), f"{prefix}.bk": (q_width,),
            f"{prefix}.wv": (kv_width, q_width), f"{prefix}.bv": (q_width,),
            f"{prefix}.wo": (q_width, q_width), f"{prefix}.bo": (q_width,),
        })

    def ffn(prefix: str, width: int, hidden: int, out: Optional[int] = None):
        shapes.update({
            f"{prefix}.w1": (width, hidden), f"{prefix}.b1": (hidden,),
            f"{prefix}.w2": (hidden, out or width), f"{prefix}.b2": (out or width,),
        })

    for block in range(config.encoder_blocks):
        for modality in MODALITIES:
            other = "visual" if modality == "audio" else "audio"
            width = widths[modality]
            prefix = f"enc.{block}.{modality}"
            norm(f"{prefix}.self_norm", width)
            attention(f"{prefix}.self_attn", width, width)
            norm(f"{prefix}.cross_norm", width)
            attention(f"{prefix}.cross_attn", width, widths[other])
            norm(f"{prefix}.ffn_norm", width)
            ffn(f"{prefix}.ffn", width, ffn_widths[modality])
    for modality in MODALITIES:
        norm(f"enc.final_norm.{modality}", widths[modality])

    channels, kernel = config.detector_channels, config.detector_kernel
    for modality in MODALITIES:
        shapes[f"det.{modality}.conv1.kernel"] = (kernel, widths[modality], channels)
        shapes[f"det.{modality}.conv1.bias"] = (channels,)
        shapes[f"det.{modality}.conv2.kernel"] = (kernel, channels, channels)
        shapes[f"det.{modality}.conv2.bias"] = (channels,)
    ffn("det.ffn", 2 * channels, config.detector_hidden, out=1)

    d_embed = config.d_embed
    shapes["dec.embed"] = (config.vocab_size, d_embed)
    for block in range(config.decoder_blocks):
        prefix = f"dec.{block}"
        norm(f"{prefix}.self_norm", d_embed)
        attention(f"{prefix}.self_attn", d_embed, d_embed)
        norm(f"{prefix}.src_norm", d_embed)
        attention(f"{prefix}.audio_attn", d_embed, config.d_audio)
        attention(f"{prefix}.visual_attn", d_embed, config.d_visual)
        shapes[f"{prefix}.merge.w"] = (2 * d_embed, d_embed)
        shapes[f"{prefix}.merge.b"] = (d_embed,)
        norm(f"{prefix}.ffn_norm", d_embed)
        ffn(f"{prefix}.ffn", d_embed, config.ffn_decoder)
    norm("dec.final_norm", d_embed)
    shapes["out.w"] = (d_embed, config.vocab_size)
    shapes["out.b"] = (config.vocab_size,)
    return shapes


def _initial_value(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gain":
        return np.ones(shape)
    if len(shape) == 1:
        return np.zeros(shape)
    if name == "dec.embed":
        return rng.normal(0.0, shape[1] ** -0.5, size=shape)
    if len(shape) == 3:
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelParams:
    """Ordered mapping from parameter name to Tensor, tied to one ModelConfig."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        expected = parameter_shapes(config)
        if list(tensors) != list(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise PreconditionError(f"parameter names do not match the config (missing {missing[:5]}, extra {extra[:5]})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"parameter {name} has dims {tensors[name].dims}, expected {list(shape)}")
        self.config = config
        self.tensors = tensors

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = {
            name: Tensor(_initial_value(name, shape, rng).astype(dtype), requires_grad=True)
            for name, shape in parameter_shapes(config).items()
        }
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def num_values(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def names(self, detector: Optional[bool] = None) -> list[str]:
        """All names, or only detector (True) / captioner (False) names."""
        if detector is None:
            return list(self.tensors)
        return [name for name in self.tensors if name.startswith(DETECTOR_PREFIX) == detector]

    def attention(self, prefix: str) -> AttentionWeights:
        return AttentionWeights(*(self.tensors[f"{prefix}.{leaf}"] for leaf in AttentionWeights._fields))

    def ffn(self, prefix: str) -> FFNWeights:
        return FFNWeights(*(self.tensors[f"{prefix}.{leaf}"] for leaf in FFNWeights._fields))

    def norm(self, prefix: str) -> tuple[Tensor, Tensor]:
        return self.tensors[f"{prefix}.gain"], self.tensors[f"{prefix}.bias"]

    def astype(self, dtype, requires_grad: bool = True) -> "ModelParams":
        tensors = {
            name: Tensor(t.data.astype(dtype, copy=True), requires_grad=requires_grad)
            for name, t in self.tensors.items()
        }
        return ModelParams(self.config, tensors)

    def frozen(self) -> "ModelParams":
        return self.astype(np.float32, requires_grad=False)

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def copy_captioner_from(self, other: "ModelParams") -> None:
        """Overwrite every encoder/decoder value with the other set's, leaving the detector as is."""
        for name in self.names(detector=False):
            source = other.tensors.get(name)
            if source is None or source.shape != self.tensors[name].shape:
                raise PreconditionError(f"cannot warm-start {name}: source parameter missing or mis-shaped")
            self.tensors[name].data = source.data.astype(self.tensors[name].dtype, copy=True)

"""
Binary checkpoint codec.

Layout, all integers unsigned 32-bit little-endian:
    b"AVCK1"
    config length, UTF-8 key=value lines
    parameter count
    per parameter: name length, UTF-8 name, rank, dims..., float32 LE values
"""

from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.compute import Tensor
from app.config import ModelConfig
from app.errors import FeatureIOError
from app.model.params import ModelParams

MAGIC = b"AVCK1"


def _u32(value: int) -> bytes:
    return np.array([value], dtype="<u4").tobytes()


def encode_checkpoint(params: ModelParams) -> bytes:
    config_text = "\n".join(f"{key}={value}" for key, value in params.config.model_dump().items())
    config_bytes = config_text.encode("utf-8")
    chunks = [MAGIC, _u32(len(config_bytes)), config_bytes, _u32(len(params))]
    for name, tensor in params.items():
        name_bytes = name.encode("utf-8")
        chunks += [
            _u32(len(name_bytes)),
            name_bytes,
            _u32(tensor.data.ndim),
            np.asarray(tensor.shape, dtype="<u4").tobytes(),
            np.ascontiguousarray(tensor.data, dtype="<f4").tobytes(),
        ]
    return b"".join(chunks)


def save_checkpoint(params: ModelParams, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(path.name + ".tmp")
    staging.write_bytes(encode_checkpoint(params))
    staging.replace(path)
    return path


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise FeatureIOError(f"{self.source}: truncated checkpoint at byte {self.offset}")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return int(np.frombuffer(self.take(4), dtype="<u4")[0])

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FeatureIOError(f"{self.source}: invalid UTF-8 in checkpoint") from exc


def decode_checkpoint(payload: bytes, source: str = "<bytes>", requires_grad: bool = True) -> ModelParams:
    reader = _Reader(payload, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise FeatureIOError(f"{source}: not an AVCK1 checkpoint")

    fields = dict(line.split("=", 1) for line in reader.text().splitlines() if line)
    try:
        config = ModelConfig(**fields)
    except ValidationError as exc:
        raise FeatureIOError(f"{source}: invalid config block: {exc}") from exc

    tensors: dict[str, Tensor] = {}
    for _ in range(reader.u32()):
        name = reader.text()
        rank = reader.u32()
        dims = tuple(int(d) for d in np.frombuffer(reader.take(4 * rank), dtype="<u4"))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = Tensor(values.astype(np.float32), requires_grad=requires_grad)
    if reader.offset != len(payload):
        raise FeatureIOError(f"{source}: {len(payload) - reader.offset} trailing bytes after parameters")
    return ModelParams(config, tensors)


def load_checkpoint(path: Path, requires_grad: bool = True) -> ModelParams:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise FeatureIOError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(payload, source=str(path), requires_grad=requires_grad)

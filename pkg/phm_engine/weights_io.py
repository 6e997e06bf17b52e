"""PHMW weight container.

Layout (little-endian): b"PHMW", u32 version, u32 tensor count, then per
tensor u32 name length, UTF-8 name, u32 rank, rank x u32 dims and the
row-major float32 payload.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from phm_engine.exceptions import WeightFileError
from phm_engine.schemas import UNetConfig
from phm_engine.unet import WeightSet

logger = logging.getLogger(__name__)

MAGIC = b"PHMW"
VERSION = 1
_U32 = struct.Struct("<I")
_PAYLOAD_DTYPE = np.dtype("<f4")


def save_weights(path: Union[str, Path], weights: WeightSet) -> None:
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(weights.tensors))]
    for name, tensor in weights.tensors.items():
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(tensor.ndim))
        chunks.extend(_U32.pack(dim) for dim in tensor.shape)
        chunks.append(np.ascontiguousarray(tensor, dtype=_PAYLOAD_DTYPE).tobytes())
    Path(path).write_bytes(b"".join(chunks))
    logger.info("wrote %d tensors to %s", len(weights.tensors), path)


class _Reader:
    def __init__(self, data: bytes, source: str) -> None:
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise WeightFileError(
                f"{self.source}: truncated while reading {what} "
                f"(need {size} bytes at offset {self.offset}, file has {len(self.data)})"
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(_U32.size, what))[0]


def load_weights(path: Union[str, Path], cfg: Optional[UNetConfig] = None) -> WeightSet:
    """Read a PHMW file; with `cfg`, tensor names and shapes are checked against the network."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise WeightFileError(f"{path}: bad magic, not a PHMW weight file")
    version = reader.u32("version")
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported version {version} (expected {VERSION})")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32("tensor count")):
        name_bytes = reader.take(reader.u32("name length"), "tensor name")
        try:
            name = name_bytes.decode("utf-8")
        except UnicodeDecodeError as raised_exception:
            raise WeightFileError(f"{path}: tensor name is not UTF-8") from raised_exception
        rank = reader.u32(f"rank of {name}")
        shape = tuple(reader.u32(f"dims of {name}") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(count * _PAYLOAD_DTYPE.itemsize, f"data of {name}")
        values = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(shape).astype(np.float32)
        if not np.all(np.isfinite(values)):
            raise WeightFileError(f"{path}: tensor {name} holds non-finite values")
        tensors[name] = values
    if reader.offset != len(reader.data):
        raise WeightFileError(f"{path}: {len(reader.data) - reader.offset} trailing bytes")

    weights = WeightSet(tensors=tensors, provenance=f"file:{path}")
    if cfg is not None:
        weights.check_against(cfg)
    logger.debug("loaded %d tensors from %s", len(tensors), path)
    return weights

"""
Model checkpoint containers.

Layout: 8-byte magic, u32 version, u32 parameter count, then per parameter
u32 rows, u32 cols and little-endian f64 data. Vectors are stored as one row.
Parameters are written in the model's declaration order.
"""

import struct
from pathlib import Path
from typing import Dict, Sequence

import numpy as np

from hcft.models.encoder import PARAM_NAMES as ENCODER_PARAMS
from hcft.models.encoder import EncoderModel
from hcft.models.mil import PARAM_NAMES as MIL_PARAMS
from hcft.models.mil import MILModel
from hcft.utils.exceptions import FormatException

MIL_MAGIC = b"HCFTMIL1"
ENCODER_MAGIC = b"HCFTENC1"
CHECKPOINT_VERSION = 1

_HEAD = struct.Struct("<8sII")
_SHAPE = struct.Struct("<II")


def write_parameters(path: Path, magic: bytes, names: Sequence[str], params: Dict[str, np.ndarray]) -> None:
    """
    Write parameters in ``names`` order.

    Args:
        path: Destination file
        magic: 8-byte container magic
        names: Parameter order
        params: Arrays keyed by name (1-D or 2-D)
    """
    chunks = [_HEAD.pack(magic, CHECKPOINT_VERSION, len(names))]
    for name in names:
        arr = np.asarray(params[name], dtype=np.float64)
        rows, cols = (1, arr.shape[0]) if arr.ndim == 1 else arr.shape
        chunks.append(_SHAPE.pack(rows, cols))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_parameters(
    path: Path, magic: bytes, names: Sequence[str], vectors: Sequence[str] = ()
) -> Dict[str, np.ndarray]:
    """
    Read parameters written by :func:`write_parameters`.

    Args:
        path: Checkpoint file
        magic: Expected magic
        names: Expected parameter order
        vectors: Names restored as 1-D arrays

    Raises:
        FormatException: On a bad header or truncated data
    """
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise FormatException("truncated header", offset=len(data), path=str(path))
    got_magic, version, count = _HEAD.unpack_from(data, 0)
    if got_magic != magic:
        raise FormatException(f"bad magic {got_magic!r}, expected {magic!r}", offset=0, path=str(path))
    if version != CHECKPOINT_VERSION:
        raise FormatException(f"unsupported version {version}", offset=8, path=str(path))
    if count != len(names):
        raise FormatException(f"expected {len(names)} parameters, found {count}", offset=12, path=str(path))

    offset = _HEAD.size
    params: Dict[str, np.ndarray] = {}
    for name in names:
        if offset + _SHAPE.size > len(data):
            raise FormatException(f"truncated shape of {name}", offset=offset, path=str(path))
        rows, cols = _SHAPE.unpack_from(data, offset)
        offset += _SHAPE.size
        size = 8 * rows * cols
        if offset + size > len(data):
            raise FormatException(f"truncated data of {name}", offset=offset, path=str(path))
        arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).astype(np.float64)
        offset += size
        params[name] = arr.reshape(-1) if name in vectors else arr.reshape(rows, cols)
    if offset != len(data):
        raise FormatException("trailing bytes after parameters", offset=offset, path=str(path))
    return params


class CheckpointRepository:
    """Repository for MIL and encoder checkpoints."""

    def save_mil(self, model: MILModel, path: Path) -> None:
        write_parameters(path, MIL_MAGIC, MIL_PARAMS, model.parameters())

    def load_mil(self, path: Path) -> MILModel:
        params = read_parameters(path, MIL_MAGIC, MIL_PARAMS, vectors=("w", "b1", "b2"))
        return MILModel.from_parameters(params)

    def save_encoder(self, model: EncoderModel, path: Path) -> None:
        write_parameters(path, ENCODER_MAGIC, ENCODER_PARAMS, model.parameters())

    def load_encoder(self, path: Path) -> EncoderModel:
        params = read_parameters(path, ENCODER_MAGIC, ENCODER_PARAMS, vectors=("b", "bh"))
        return EncoderModel.from_parameters(params)

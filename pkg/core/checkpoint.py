"""
Checkpoint files for split models and protocol messages
Flat binary records: name length, name, rank, dims, little-endian float32 payload
"""
import hashlib
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from core.errors import IngestionError
from core.split_model import SplitModel

HASH_ALGORITHM = "sha256"


def write_records(path, records: Mapping[str, np.ndarray]) -> Path:
    """Write named arrays in insertion order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        for name, array in records.items():
            array = np.asarray(array)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(array.astype("<f4").tobytes())
    return path


def read_records(path) -> Dict[str, np.ndarray]:
    """Read every record back as float32 arrays"""
    path = Path(path)
    data = path.read_bytes()
    records: Dict[str, np.ndarray] = {}
    offset = 0

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(data):
            raise IngestionError(f"truncated record, needed {size} bytes", str(path), offset)
        chunk = data[offset:offset + size]
        offset += size
        return chunk

    while offset < len(data):
        (name_length,) = struct.unpack("<I", take(4))
        name = take(name_length).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        payload = take(4 * count)
        if count == 0:
            records[name] = np.zeros(shape, dtype=np.float32)
            continue
        records[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    return records


def save_checkpoint(model: SplitModel, path) -> Path:
    """Write every parameter of a model"""
    records = {}
    for params in model.parameter_groups().values():
        for name, param in params.items():
            records[name] = param.values
    return write_records(path, records)


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    return read_records(path)


def load_into(model: SplitModel, path):
    """Restore a model from a checkpoint written by save_checkpoint"""
    records = read_records(path)
    arrays = {
        group: {name: records[name] for name in params if name in records}
        for group, params in model.parameter_groups().items()
    }
    model.load_arrays(arrays)


def checkpoint_digest(path, algorithm: str = HASH_ALGORITHM) -> str:
    """Hash of a checkpoint file, read in chunks"""
    hash_obj = hashlib.new(algorithm)
    with open(path, "rb") as f:
        while chunk := f.read(8192):
            hash_obj.update(chunk)
    return hash_obj.hexdigest()


def verify_checkpoint(path, expected_digest: str) -> bool:
    """Check a checkpoint against a previously recorded digest"""
    return Path(path).exists() and checkpoint_digest(path) == expected_digest

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from Denoiser.tiny_denoiser import DenoiserConfig, TinyDenoiser
from Orchestrator.persistence import atomic_write_bytes
from SafeGrammar.token_table import TokenTable

MAGIC = b"FDCK"
FORMAT_VERSION = 1
# magic, format version, header length
PREAMBLE = struct.Struct("<4sHI")


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    table: TokenTable
    hyperparams: dict
    weights: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: TinyDenoiser, metadata: dict = None) -> "Checkpoint":
        return cls(model.table, model.config.to_dict(), model.flat().astype("<f4"), dict(metadata or {}))

    def to_model(self) -> TinyDenoiser:
        config = DenoiserConfig(**self.hyperparams)
        return TinyDenoiser.from_flat(config, self.weights.astype(np.float64), self.table)

    def to_bytes(self) -> bytes:
        header = json.dumps({"tokens": self.table.to_list(), "hyperparams": self.hyperparams,
                             "metadata": self.metadata, "n_weights": int(self.weights.size)},
                            sort_keys=True).encode("utf-8")
        return PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)) + header + self.weights.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < PREAMBLE.size:
            raise CheckpointFormatError("file too short for a checkpoint preamble")
        magic, version, header_len = PREAMBLE.unpack_from(data)
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        start = PREAMBLE.size
        try:
            header = json.loads(data[start:start + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointFormatError(f"unreadable header: {e}")
        payload = data[start + header_len:]
        if len(payload) != 4 * header["n_weights"]:
            raise CheckpointFormatError(f"payload holds {len(payload)} bytes, header promises "
                                        f"{header['n_weights']} float32 values")
        weights = np.frombuffer(payload, dtype="<f4").copy()
        return cls(TokenTable.from_list(header["tokens"]), header["hyperparams"], weights, header["metadata"])


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    return atomic_write_bytes(path, ckpt.to_bytes())


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def content_hash(path: Union[str, Path]) -> str:
    """Git blob hash of a file's bytes."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

from dataclasses import dataclass

import numpy as np


def row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def row_log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class SeqState:
    ids: np.ndarray
    t: float

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.t = float(self.t)

    @property
    def L(self) -> int:
        return int(self.ids.shape[0])

    def masked(self, mask_id: int) -> np.ndarray:
        return self.ids == mask_id

    def with_ids(self, ids, t=None) -> "SeqState":
        return SeqState(np.array(ids, dtype=np.int64), self.t if t is None else t)


@dataclass
class DenoiserOutput:
    probs: np.ndarray
    logits: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "DenoiserOutput":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(probs=row_softmax(logits), logits=logits)

    @property
    def log_probs(self) -> np.ndarray:
        return row_log_softmax(self.logits)

    @property
    def shape(self):
        return self.probs.shape

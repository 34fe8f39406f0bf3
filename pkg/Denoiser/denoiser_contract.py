import threading
from typing import Protocol, runtime_checkable

import numpy as np

from Diffusion.diffusion_dataclass import DenoiserOutput, SeqState
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

# finite stand-in for -inf on categories a denoiser must never emit
NEG_LOGIT = -1e4


@runtime_checkable
class Denoiser(Protocol):
    table: TokenTable

    def predict(self, state: SeqState) -> DenoiserOutput:
        ...


def suppress_special(logits: np.ndarray, table: TokenTable) -> np.ndarray:
    logits[..., table.mask_id] = NEG_LOGIT
    logits[..., table.pad_id] = NEG_LOGIT
    return logits


class UniformDenoiser:
    """Uniform over every real token; the no-information baseline."""

    def __init__(self, table: TokenTable = DEFAULT_TABLE):
        self.table = table

    def predict(self, state: SeqState) -> DenoiserOutput:
        logits = suppress_special(np.zeros((state.L, self.table.K)), self.table)
        return DenoiserOutput.from_logits(logits)


class CountingDenoiser:
    """Wraps another denoiser and counts predict calls."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.table = inner.table
        self.calls = 0
        self._lock = threading.Lock()

    def predict(self, state: SeqState) -> DenoiserOutput:
        with self._lock:
            self.calls += 1
        return self.inner.predict(state)

    def reset(self):
        with self._lock:
            self.calls = 0

"""Context guidance: extrapolate from a further-masked input's prediction towards the real one."""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from Denoiser.denoiser_contract import Denoiser, suppress_special
from Diffusion.diffusion_core import rate_matrix_step, reverse_step_dist
from Diffusion.diffusion_dataclass import DenoiserOutput, SeqState, row_softmax
from Diffusion.noise_schedule import NoiseSchedule
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

LOG_FLOOR = 1e-300


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceParams:
    w: float = 1.0
    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"guidance gamma={self.gamma} outside [0, 1]")
        if not math.isfinite(self.w):
            raise ValueError(f"guidance scale w={self.w} must be finite")

    @property
    def active(self) -> bool:
        return self.w != 1.0 and self.gamma > 0.0


def corrupt(z_t: SeqState, gamma: float, rng: np.random.Generator, table: TokenTable = DEFAULT_TABLE) -> SeqState:
    """Mask ceil(gamma * U) of the U unmasked, non-pad positions."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma={gamma} outside [0, 1]")
    visible = np.flatnonzero((z_t.ids != table.mask_id) & (z_t.ids != table.pad_id))
    # round first so 0.3 * 10 stays 3
    count = math.ceil(round(gamma * visible.size, 9))
    if count == 0:
        return z_t
    ids = z_t.ids.copy()
    ids[rng.choice(visible, size=count, replace=False)] = table.mask_id
    return z_t.with_ids(ids)


def guided_logits(l_good: np.ndarray, l_poor: np.ndarray, w: float) -> np.ndarray:
    l_good, l_poor = np.asarray(l_good, dtype=np.float64), np.asarray(l_poor, dtype=np.float64)
    if l_good.shape != l_poor.shape:
        raise ShapeMismatch(f"good logits {l_good.shape} vs poor logits {l_poor.shape}")
    if w == 1.0:
        return l_good.copy()
    return w * l_good + (1.0 - w) * l_poor


def guided_probs(good: DenoiserOutput, poor: DenoiserOutput, w: float) -> np.ndarray:
    return row_softmax(guided_logits(good.log_probs, poor.log_probs, w))


def guided_prediction(denoiser: Denoiser, state: SeqState, params: Optional[GuidanceParams],
                      rng: np.random.Generator) -> DenoiserOutput:
    """Prediction for ``state``, guided when ``params`` is active; draws corruption from ``rng`` only then."""
    good = denoiser.predict(state)
    if params is None or not params.active:
        return good
    poor = denoiser.predict(corrupt(state, params.gamma, rng, denoiser.table))
    logits = guided_logits(good.log_probs, poor.log_probs, params.w)
    return DenoiserOutput.from_logits(suppress_special(logits, denoiser.table))


def hadamard_probs(probs_good: np.ndarray, probs_poor: np.ndarray, w: float) -> np.ndarray:
    """Row-normalized p_good^w * p_poor^(1-w); categories absent from p_good get zero."""
    probs_good, probs_poor = np.asarray(probs_good, dtype=np.float64), np.asarray(probs_poor, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        h = np.where(probs_good > 0, probs_good ** w * probs_poor ** (1.0 - w), 0.0)
    return h / h.sum(axis=-1, keepdims=True)


def rate_guidance_check(probs_good: np.ndarray, probs_poor: np.ndarray, w: float, t: float, dt: float,
                        sched: NoiseSchedule, table: TokenTable = DEFAULT_TABLE) -> float:
    """Largest per-row total-variation gap between the guided CTMC step and the guided exact step.

    The CTMC side uses the product-of-rates form; the exact side takes the softmax of
    ``guided_logits`` and applies the one-step reverse transition to ``t - dt``.
    """
    L = probs_good.shape[0]
    if probs_poor.shape != probs_good.shape:
        raise ShapeMismatch(f"good probs {probs_good.shape} vs poor probs {probs_poor.shape}")
    z_t = SeqState(np.full(L, table.mask_id), t)
    ctmc = rate_matrix_step(z_t, hadamard_probs(probs_good, probs_poor, w), t, dt, sched, table)

    log_good = np.log(np.maximum(probs_good, LOG_FLOOR))
    log_poor = np.log(np.maximum(probs_poor, LOG_FLOOR))
    exact = reverse_step_dist(z_t, row_softmax(guided_logits(log_good, log_poor, w)), t - dt, sched, table)
    return float(0.5 * np.abs(ctmc - exact).sum(axis=-1).max())

"""Forward masking, the reverse unmasking step, the training bound and the CTMC view."""
from typing import Optional, Union

import numpy as np

from Diffusion.diffusion_dataclass import DenoiserOutput, SeqState
from Diffusion.noise_schedule import InvalidTime, NoiseSchedule, check_time
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

MIN_TIME = 1e-6
MAX_CTMC_STEP = 1e-3

ProbsLike = Union[DenoiserOutput, np.ndarray]


def _probs(probs: ProbsLike) -> np.ndarray:
    return probs.probs if isinstance(probs, DenoiserOutput) else np.asarray(probs, dtype=np.float64)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row by inverse CDF; consumes exactly one uniform per row."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cdf[..., -1:]
    return np.minimum((cdf <= u).sum(axis=-1), probs.shape[-1] - 1)


def forward_mask(x, t: float, sched: NoiseSchedule, rng: np.random.Generator,
                 table: TokenTable = DEFAULT_TABLE) -> SeqState:
    check_time(t)
    x = np.asarray(x, dtype=np.int64)
    if np.any(x == table.mask_id):
        raise ValueError("clean sequence already contains the mask token")
    keep = rng.random(x.shape[0]) < float(sched.alpha(t))
    keep |= x == table.pad_id
    return SeqState(np.where(keep, x, table.mask_id), t)


def reverse_step_dist(z_t: SeqState, probs: ProbsLike, s: float, sched: NoiseSchedule,
                      table: TokenTable = DEFAULT_TABLE) -> np.ndarray:
    """Per-position distribution of z_s given z_t; column mask_id is "stays masked"."""
    check_time(s, "s")
    check_time(z_t.t)
    if not s < z_t.t:
        raise InvalidTime(f"reverse step needs s < t, got s={s}, t={z_t.t}")
    p = _probs(probs)
    a_s, a_t = float(sched.alpha(s)), float(sched.alpha(z_t.t))
    masked = z_t.masked(table.mask_id)

    out = np.zeros_like(p)
    out[masked] = (a_s - a_t) / (1.0 - a_t) * p[masked]
    out[masked, table.mask_id] += (1.0 - a_s) / (1.0 - a_t)
    keep = np.flatnonzero(~masked)
    out[keep, z_t.ids[keep]] = 1.0
    return out


def reverse_step(z_t: SeqState, probs: ProbsLike, s: float, sched: NoiseSchedule, rng: np.random.Generator,
                 table: TokenTable = DEFAULT_TABLE) -> SeqState:
    dist = reverse_step_dist(z_t, probs, s, sched, table)
    return SeqState(sample_categorical(dist, rng), s)


def rate_matrix_step(z_t: SeqState, probs: ProbsLike, t: float, dt: float, sched: NoiseSchedule,
                     table: TokenTable = DEFAULT_TABLE) -> np.ndarray:
    """First-order CTMC transition over [t - dt, t], same layout as reverse_step_dist."""
    if t > 1.0 or t - dt < 0.0 or not 0.0 < dt <= MAX_CTMC_STEP:
        raise InvalidTime(f"CTMC step needs 0 < dt <= {MAX_CTMC_STEP} and 0 <= t - dt, t <= 1 (t={t}, dt={dt})")
    p = _probs(probs)
    rate = -dt * float(sched.weight(t))
    masked = z_t.masked(table.mask_id)

    out = np.zeros_like(p)
    out[masked] = rate * p[masked]
    out[masked, table.mask_id] += 1.0 - rate * p[masked].sum(axis=-1)
    keep = np.flatnonzero(~masked)
    out[keep, z_t.ids[keep]] = 1.0
    return out


def stratified_times(n: int, rng: np.random.Generator) -> np.ndarray:
    """Low-discrepancy times (u + i) / n in shuffled order, clipped away from 0."""
    u = rng.random()
    times = (u + np.arange(n)) / n
    return np.clip(rng.permutation(times), MIN_TIME, 1.0)


def masked_log_likelihood(x: np.ndarray, z_t: SeqState, out: DenoiserOutput, table: TokenTable) -> float:
    masked = np.flatnonzero(z_t.masked(table.mask_id))
    if masked.size == 0:
        return 0.0
    return float(np.log(np.maximum(out.probs[masked, x[masked]], 1e-300)).sum())


def nelbo(x, denoiser, sched: NoiseSchedule, n_mc: int, rng: np.random.Generator,
          times: Optional[np.ndarray] = None, table: TokenTable = DEFAULT_TABLE) -> float:
    """Monte-Carlo estimate of the (positive) negative evidence lower bound.

    ``x`` is one clean sequence or a (B, L) batch; each draw picks a time and masks
    independently. ``times`` overrides the stratified time draws.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    batch = np.atleast_2d(np.asarray(x, dtype=np.int64))
    n_draws = n_mc * batch.shape[0]
    times = stratified_times(n_draws, rng) if times is None else np.asarray(times, dtype=np.float64)
    total = 0.0
    for k, t in enumerate(times):
        seq = batch[k % batch.shape[0]]
        z_t = forward_mask(seq, t, sched, rng, table)
        out = denoiser.predict(z_t)
        total += float(sched.weight(t)) * masked_log_likelihood(seq, z_t, out, table)
    return total / len(times)

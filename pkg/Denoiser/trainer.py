from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from Denoiser.checkpoint import Checkpoint
from Denoiser.tiny_denoiser import DenoiserConfig, TinyDenoiser, round_to_float32
from Diffusion.diffusion_core import forward_mask, stratified_times
from Diffusion.diffusion_dataclass import SeqState, row_log_softmax, row_softmax
from Diffusion.noise_schedule import LogLinearSchedule, NoiseSchedule
from SafeGrammar.fragment_algebra import safe_views
from SafeGrammar.safe_parser import check_sequence
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

GRAD_CHECK_FLOOR = 1e-4
GRAD_CHECK_MIN_TIME = 0.05


class DivergedLoss(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 16
    lr: float = 3e-3
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    log_every: int = 200
    # fraction of rows moved to a random offset so every position embedding sees tokens
    shift: float = 0.0


@dataclass
class TrainBatch:
    x: np.ndarray
    z: np.ndarray
    t: np.ndarray


def pad_corpus(corpus: Sequence[Sequence[int]], table: TokenTable, max_len: int, fill: bool = False) -> np.ndarray:
    """Right-pad (and truncate) every sequence to the longest one, or to ``max_len`` with ``fill``."""
    if not corpus:
        raise ValueError("training corpus is empty")
    L = max_len if fill else min(max(len(ids) for ids in corpus), max_len)
    out = np.full((len(corpus), L), table.pad_id, dtype=np.int64)
    for row, ids in enumerate(corpus):
        ids = list(ids)[:L]
        out[row, :len(ids)] = ids
    return out


def safe_corpus(texts: Sequence[str], views: int = 4, seed: int = 0,
                table: TokenTable = DEFAULT_TABLE) -> List[List[int]]:
    """Token ids of ``views`` fragment-per-block renderings of every valid molecule in ``texts``."""
    rng = np.random.default_rng(seed)
    out = []
    for text in texts:
        g, report = check_sequence(text, table)
        if report.valid:
            out.extend(table.tokenize(view) for view in safe_views(g, views, rng))
    if not out:
        raise ValueError("no valid molecule to render for training")
    return out


def shift_rows(x: np.ndarray, fraction: float, rng: np.random.Generator, table: TokenTable) -> np.ndarray:
    """Move a random ``fraction`` of rows right by a uniform offset that keeps them inside the width."""
    x = x.copy()
    L = x.shape[1]
    for row in np.flatnonzero(rng.random(len(x)) < fraction):
        n = int((x[row] != table.pad_id).sum())
        offset = int(rng.integers(L - n + 1))
        tokens = x[row, :n].copy()
        x[row] = table.pad_id
        x[row, offset:offset + n] = tokens
    return x


def draw_batch(corpus: np.ndarray, size: int, sched: NoiseSchedule, rng: np.random.Generator,
               table: TokenTable = DEFAULT_TABLE, min_time: float = 0.0, shift: float = 0.0) -> TrainBatch:
    rows = rng.integers(len(corpus), size=size)
    times = stratified_times(size, rng)
    if min_time > 0:
        times = min_time + (1.0 - min_time) * times
    x = corpus[rows]
    if shift > 0:
        x = shift_rows(x, shift, rng, table)
    z = np.stack([forward_mask(seq, t, sched, rng, table).ids for seq, t in zip(x, times)])
    return TrainBatch(x=x, z=z, t=times)


def loss_and_grads(model: TinyDenoiser, batch: TrainBatch, sched: NoiseSchedule,
                   need_grads: bool = True) -> Tuple[float, Optional[Dict[str, np.ndarray]]]:
    """Batch-mean weighted masked cross-entropy and its parameter gradients."""
    table = model.table
    logits, cache = model.forward(batch.z, batch.t)
    B = batch.x.shape[0]
    masked = batch.z == table.mask_id
    coef = -np.asarray(sched.weight(batch.t), dtype=np.float64) / B
    logp = row_log_softmax(logits)
    target_logp = np.take_along_axis(logp, batch.x[..., None], axis=-1)[..., 0]
    loss = float(-(coef[:, None] * target_logp * masked).sum())
    if not need_grads:
        return loss, None

    dlogits = row_softmax(logits)
    np.put_along_axis(dlogits, batch.x[..., None], np.take_along_axis(dlogits, batch.x[..., None], axis=-1) - 1.0,
                      axis=-1)
    dlogits *= (coef[:, None] * masked)[..., None]
    return loss, model.backward(cache, dlogits)


class AdamW:
    def __init__(self, params: Dict[str, np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.weight_decay = lr, beta1, beta2, eps, weight_decay
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            if name.startswith("W"):
                params[name] -= self.lr * self.weight_decay * params[name]
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grads(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def smoothed(trace: Sequence[float], window: int = 50) -> np.ndarray:
    trace = np.asarray(trace, dtype=np.float64)
    window = max(1, min(window, len(trace)))
    return np.convolve(trace, np.ones(window) / window, mode="valid")


class Trainer:
    def __init__(self, corpus: Sequence[Sequence[int]], train_config: Optional[TrainConfig] = None,
                 model_config: Optional[DenoiserConfig] = None, sched: Optional[NoiseSchedule] = None,
                 table: TokenTable = DEFAULT_TABLE, verbose=False, silent=False):
        self.config = train_config or TrainConfig()
        self.table = table
        self.sched = sched or LogLinearSchedule()
        model_config = model_config or DenoiserConfig(K=table.K)
        self.corpus = pad_corpus(corpus, table, model_config.max_len, fill=self.config.shift > 0)
        self.model = TinyDenoiser(model_config, table=table, seed=self.config.seed)
        self.optimizer = AdamW(self.model.params, self.config.lr, self.config.beta1, self.config.beta2,
                               self.config.adam_eps, self.config.weight_decay)
        self.rng = np.random.default_rng(self.config.seed)
        self.loss_trace: List[float] = []

        self.verbose = verbose
        self.silent = silent

    def step(self) -> float:
        batch = draw_batch(self.corpus, self.config.batch, self.sched, self.rng, self.table, shift=self.config.shift)
        loss, grads = loss_and_grads(self.model, batch, self.sched)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergedLoss(f"loss became non-finite at step {len(self.loss_trace)}")
        norm = clip_grads(grads, self.config.clip_norm)
        self.optimizer.step(self.model.params, grads)
        self.loss_trace.append(loss)
        if self.verbose and len(self.loss_trace) % self.config.log_every == 0:
            print(f"Trainer: step {len(self.loss_trace)} loss {loss:.4f} grad norm {norm:.3f}")
        return loss

    def run(self, steps: Optional[int] = None) -> List[float]:
        steps = self.config.steps if steps is None else steps
        for _ in tqdm(range(steps), desc="train", disable=self.silent):
            self.step()
        if not self.silent and self.loss_trace:
            print(f"Trainer: {len(self.loss_trace)} steps, smoothed loss {smoothed(self.loss_trace)[-1]:.4f}")
        return self.loss_trace

    def checkpoint(self) -> Checkpoint:
        self.model.params = round_to_float32(self.model.params)
        final = float(smoothed(self.loss_trace)[-1]) if self.loss_trace else None
        metadata = {"seed": self.config.seed, "steps": len(self.loss_trace), "final_loss": final,
                    "train_config": asdict(self.config), "schedule": self.sched.to_dict()}
        return Checkpoint.from_model(self.model, metadata)


def train(corpus: Sequence[Sequence[int]], config: Optional[TrainConfig] = None,
          model_config: Optional[DenoiserConfig] = None, sched: Optional[NoiseSchedule] = None,
          table: TokenTable = DEFAULT_TABLE, verbose=False, silent=False) -> Tuple[Checkpoint, List[float]]:
    trainer = Trainer(corpus, config, model_config, sched, table, verbose=verbose, silent=silent)
    trace = trainer.run()
    return trainer.checkpoint(), trace


def grad_check(model: TinyDenoiser, batch: TrainBatch, eps: float = 1e-5, n_params: int = 50, seed: int = 0,
               sched: Optional[NoiseSchedule] = None) -> float:
    """Max relative error between the analytic gradient and central differences.

    Relative error is |a - n| / max(|a|, |n|, 1e-4) over ``n_params`` random entries.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"grad_check eps={eps} outside [1e-6, 1e-3]")
    sched = sched or LogLinearSchedule()
    _, analytic = loss_and_grads(model, batch, sched)
    rng = np.random.default_rng(seed)
    names = list(model.params)
    sizes = np.array([model.params[name].size for name in names])
    picks = rng.choice(int(sizes.sum()), size=min(n_params, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for flat_idx in picks:
        k = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name, idx = names[k], int(flat_idx - offsets[k])
        param = model.params[name]
        orig = param.flat[idx]
        param.flat[idx] = orig + eps
        up, _ = loss_and_grads(model, batch, sched, need_grads=False)
        param.flat[idx] = orig - eps
        down, _ = loss_and_grads(model, batch, sched, need_grads=False)
        param.flat[idx] = orig
        numeric = (up - down) / (2 * eps)
        a = float(analytic[name].flat[idx])
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), GRAD_CHECK_FLOOR))
    return worst


def check_batch(model: TinyDenoiser, corpus: Sequence[Sequence[int]], size: int = 4, seed: int = 0,
                sched: Optional[NoiseSchedule] = None) -> TrainBatch:
    """Fixed batch for grad_check, with times kept away from the 1/t blow-up."""
    sched = sched or LogLinearSchedule()
    padded = pad_corpus(corpus, model.table, model.config.max_len)
    return draw_batch(padded, size, sched, np.random.default_rng(seed), model.table, GRAD_CHECK_MIN_TIME)


def kl_to_oracle(model, oracle, states: Sequence[SeqState]) -> float:
    """Mean KL(oracle row || model row) over the masked positions of ``states``."""
    total, count = 0.0, 0
    for state in states:
        masked = state.masked(model.table.mask_id)
        if not masked.any():
            continue
        p = oracle.predict(state).probs[masked]
        logq = model.predict(state).log_probs[masked]
        safe_p = np.where(p > 0, p, 1.0)
        total += float((p * (np.log(safe_p) - logq)).sum())
        count += int(masked.sum())
    return total / max(count, 1)

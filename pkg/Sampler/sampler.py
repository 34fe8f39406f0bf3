"""Generation loops: confidence-ordered parallel decoding and plain ancestral unmasking."""
import math
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from Denoiser.denoiser_contract import Denoiser
from Diffusion.diffusion_core import reverse_step, sample_categorical
from Diffusion.diffusion_dataclass import SeqState, row_softmax
from Diffusion.noise_schedule import LogLinearSchedule, NoiseSchedule
from Guidance.guidance import GuidanceParams, guided_prediction
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class SamplerParams:
    N: int = 1
    tau: float = 1.0
    r: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N={self.N} must be at least 1")
        if not self.tau > 0:
            raise ValueError(f"tau={self.tau} must be positive")
        if self.r < 0:
            raise ValueError(f"r={self.r} must be non-negative")


@dataclass
class Template:
    """Token ids where mask_id marks a position to generate; every other position is frozen."""
    ids: np.ndarray
    table: TokenTable = DEFAULT_TABLE

    def __post_init__(self):
        self.ids = np.array(self.ids, dtype=np.int64)

    @classmethod
    def of(cls, template: Union["Template", Sequence[int]], table: TokenTable = DEFAULT_TABLE) -> "Template":
        return template if isinstance(template, Template) else cls(template, table)

    @classmethod
    def fully_masked(cls, length: int, table: TokenTable = DEFAULT_TABLE) -> "Template":
        return cls(np.full(length, table.mask_id), table)

    @classmethod
    def from_text(cls, text: str, table: TokenTable = DEFAULT_TABLE) -> "Template":
        return cls(table.tokenize(text), table)

    @property
    def masked(self) -> np.ndarray:
        return self.ids == self.table.mask_id

    @property
    def n_masked(self) -> int:
        return int(self.masked.sum())

    def text(self) -> str:
        return self.table.detokenize(self.ids)


@dataclass
class GenerationTrace:
    ids: np.ndarray
    calls: int = 0
    times: List[float] = field(default_factory=list)
    confirmed: List[List[int]] = field(default_factory=list)


def temperature_probs(logits: np.ndarray, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError(f"tau={tau} must be positive")
    return row_softmax(np.asarray(logits, dtype=np.float64) / tau)


def confidence_scores(sampled_ids: np.ndarray, probs: np.ndarray, t: float, r: float,
                      rng: np.random.Generator) -> np.ndarray:
    """log p of each sampled token plus Gumbel noise scaled by r * t; one draw per row."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    chosen = probs[np.arange(len(sampled_ids)), sampled_ids]
    noise = rng.gumbel(size=len(sampled_ids))
    return np.log(np.maximum(chosen, LOG_FLOOR)) + r * t * noise


def generate(denoiser: Denoiser, template, params: SamplerParams, guidance: Optional[GuidanceParams] = None,
             rng: Optional[np.random.Generator] = None, guide_rng: Optional[np.random.Generator] = None,
             return_trace: bool = False) -> Union[np.ndarray, GenerationTrace]:
    """Confidence sampling: predict every masked slot, keep the N most confident, repeat.

    Runs exactly ceil(M / N) steps on the linear grid t_k = 1 - k / steps. Candidates that
    are not confirmed are discarded and predicted afresh next step.
    """
    template = Template.of(template, denoiser.table)
    mask_id = denoiser.table.mask_id
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    if guide_rng is None and guidance is not None:
        guide_rng = np.random.default_rng(guidance.seed)
    ids = template.ids.copy()
    trace = GenerationTrace(ids=ids)

    steps = math.ceil(template.n_masked / params.N)
    for k in range(steps):
        t = 1.0 - k / steps
        masked = np.flatnonzero(ids == mask_id)
        out = guided_prediction(denoiser, SeqState(ids, t), guidance, guide_rng)
        trace.calls += 2 if guidance is not None and guidance.active else 1
        probs = temperature_probs(out.logits[masked], params.tau)
        sampled = sample_categorical(probs, rng)
        scores = confidence_scores(sampled, probs, t, params.r, rng)
        # highest score first, ties to the lower position
        chosen = np.lexsort((masked, -scores))[:min(params.N, masked.size)]
        ids[masked[chosen]] = sampled[chosen]
        trace.times.append(t)
        trace.confirmed.append(sorted(int(p) for p in masked[chosen]))
    return trace if return_trace else ids


def generate_standard(denoiser: Denoiser, template, sched: Optional[NoiseSchedule] = None, steps: int = 32,
                      rng: Optional[np.random.Generator] = None, return_trace: bool = False):
    """Ancestral sampling on a uniform grid from t = 1 down to 0, unmasking by the reverse transition."""
    if steps < 1:
        raise ValueError(f"steps={steps} must be at least 1")
    template = Template.of(template, denoiser.table)
    sched = sched or LogLinearSchedule()
    rng = rng if rng is not None else np.random.default_rng()
    mask_id = denoiser.table.mask_id
    z = SeqState(template.ids.copy(), 1.0)
    trace = GenerationTrace(ids=z.ids)

    for k in range(steps):
        if not np.any(z.ids == mask_id):
            break
        before = z.ids == mask_id
        s = 1.0 - (k + 1) / steps
        out = denoiser.predict(z)
        trace.calls += 1
        z = reverse_step(z, out, s, sched, rng, denoiser.table)
        trace.times.append(z.t)
        trace.confirmed.append([int(p) for p in np.flatnonzero(before & (z.ids != mask_id))])
    trace.ids = z.ids
    return trace if return_trace else z.ids


class BatchGenerator:
    """Generates many templates on worker threads, one rng stream per template.

    Streams are spawned from the sampler seed (and the guidance seed), so results do not
    depend on the number of workers.
    """

    def __init__(self, denoiser: Denoiser, params: SamplerParams, guidance: Optional[GuidanceParams] = None,
                 workers: int = 4, verbose=False, silent=False):
        self.denoiser = denoiser
        self.params = params
        self.guidance = guidance
        self.workers = max(1, workers)
        self.results_lock = threading.Lock()

        self.verbose = verbose
        self.silent = silent

    def run(self, templates: Sequence) -> List[np.ndarray]:
        n = len(templates)
        seeds = np.random.SeedSequence(self.params.seed).spawn(n)
        guide_seeds = np.random.SeedSequence(self.guidance.seed if self.guidance else 0).spawn(n)
        results: List[Optional[np.ndarray]] = [None] * n
        errors: List[BaseException] = []
        progress = tqdm(total=n, desc="generate", disable=self.silent)

        def worker(offset: int):
            try:
                for i in range(offset, n, self.workers):
                    ids = generate(self.denoiser, templates[i], self.params, self.guidance,
                                   rng=np.random.default_rng(seeds[i]),
                                   guide_rng=np.random.default_rng(guide_seeds[i]))
                    with self.results_lock:
                        results[i] = ids
                        progress.update(1)
            except Exception as exc:
                with self.results_lock:
                    errors.append(exc)

        threads = []
        for offset in range(min(self.workers, n)):
            thread = threading.Thread(target=worker, args=(offset,))
            thread.daemon = True
            threads.append(thread)
            thread.start()

        for thread in threads:
            thread.join()
        progress.close()
        if errors:
            raise errors[0]

        if self.verbose:
            print(f"BatchGenerator: {n} templates on {len(threads)} workers")
        return results


def generate_batch(denoiser: Denoiser, templates: Sequence, params: SamplerParams,
                   guidance: Optional[GuidanceParams] = None, workers: int = 4, silent=True) -> List[np.ndarray]:
    return BatchGenerator(denoiser, params, guidance, workers, silent=silent).run(templates)

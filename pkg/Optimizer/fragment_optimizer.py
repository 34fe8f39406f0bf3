"""Goal-directed fragment optimization: attach vocabulary fragments, remask one, regenerate, rescore."""
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from Denoiser.denoiser_contract import Denoiser
from Denoiser.oracle_denoiser import LengthMismatch
from Denoiser.tiny_denoiser import LengthExceeded
from Guidance.guidance import GuidanceParams
from Metrics.fingerprint import fingerprint, tanimoto_similarity
from Metrics.pseudo_properties import pseudo_qed, pseudo_sa
from Optimizer.auc import auc_topk
from Optimizer.fragment_vocab import EmptyVocabulary, FragmentVocab
from Optimizer.property_oracle import BudgetExhausted, PropertyOracle
from Optimizer.remasking import remask_and_regenerate, remask_view, token_remask
from Optimizer.run_record import RunRecord
from Sampler.length_model import LengthModel
from Sampler.sampler import SamplerParams, generate
from SafeGrammar.canonical import canonicalize
from SafeGrammar.fragment_algebra import CutRule, attach, decompose
from SafeGrammar.mol_dataclass import Fragment, MolGraph
from SafeGrammar.safe_parser import check_sequence
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

AUC_KS = (1, 10, 100)
LEAD_SEED_DECOMPOSITIONS = 10
ATTEMPTS_PER_GENERATION = 10


class OptimizerMode(str, Enum):
    ATTACH_ONLY = "attach_only"
    TOKEN_REMASK = "token_remask"
    GPT_STYLE_REMASK_EXCLUDED = "gpt_style_remask_excluded"
    FRAGMENT_REMASK = "fragment_remask"
    FRAGMENT_REMASK_MCG = "fragment_remask_mcg"


@dataclass(frozen=True)
class LeadConstraints:
    delta: float = 0.4
    qed_min: Optional[float] = None
    sa_max: Optional[float] = None


@dataclass
class OptimizerConfig:
    V: Optional[int] = 100
    G: int = 1000
    warmup: int = -1
    mode: OptimizerMode = OptimizerMode.FRAGMENT_REMASK
    sampler: SamplerParams = field(default_factory=lambda: SamplerParams(N=1, tau=1.2, r=2.0))
    guidance: GuidanceParams = field(default_factory=lambda: GuidanceParams(w=2.0, gamma=0.0))
    vocab_max_attachments: Optional[int] = 1
    lead: Optional[LeadConstraints] = None
    iterations: int = 1
    seed: int = 0
    max_attempts: Optional[int] = None
    fit_mask_digits: bool = True

    def __post_init__(self):
        self.mode = OptimizerMode(self.mode)
        if self.mode is OptimizerMode.GPT_STYLE_REMASK_EXCLUDED:
            raise ValueError("autoregressive remasking is not supported")
        if self.mode is OptimizerMode.FRAGMENT_REMASK_MCG and not self.guidance.active:
            raise ValueError("fragment_remask_mcg needs guidance with w != 1 and gamma > 0")
        if self.G < 1:
            raise ValueError(f"G={self.G} must be at least 1")
        if self.warmup_count > self.G:
            raise ValueError(f"warmup {self.warmup} exceeds G={self.G}")
        if self.iterations < 1 or self.G % self.iterations:
            raise ValueError(f"G={self.G} does not split into {self.iterations} iterations")
        if self.max_attempts is not None and self.max_attempts < self.G:
            raise ValueError(f"max_attempts={self.max_attempts} is below G={self.G}")

    @property
    def warmup_count(self) -> int:
        # default: a tenth of the generations
        return self.G // 10 if self.warmup < 0 else self.warmup

    @property
    def attempt_limit(self) -> int:
        """Candidates tried before giving up on reaching G distinct molecules."""
        return ATTEMPTS_PER_GENERATION * self.G if self.max_attempts is None else self.max_attempts

    @property
    def capacity(self) -> Optional[int]:
        return None if self.lead is not None else self.V

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        return out


@dataclass
class OptimizationResult:
    records: List[RunRecord]
    summary: Dict[str, object]
    vocab: List[dict]
    budget_exhausted: bool = False

    def history(self) -> List[float]:
        return [record.score for record in self.records if record.scored]


class FragmentOptimizer:
    def __init__(self, oracle: PropertyOracle, config: OptimizerConfig, denoiser: Optional[Denoiser] = None,
                 length_model: Optional[LengthModel] = None, table: TokenTable = DEFAULT_TABLE,
                 verbose=False, silent=False):
        if config.mode is not OptimizerMode.ATTACH_ONLY and (denoiser is None or length_model is None):
            raise ValueError(f"mode {config.mode.value} needs a denoiser and a length model")
        self.oracle = oracle
        self.config = config
        self.denoiser = denoiser
        self.length_model = length_model
        self.table = table
        self.vocab = FragmentVocab(config.capacity, config.vocab_max_attachments)
        self.rng = np.random.default_rng(config.seed)
        self.guide_rng = np.random.default_rng(config.guidance.seed)
        self.records: List[RunRecord] = []
        self.generated: Dict[str, RunRecord] = {}
        self.budget_exhausted = False

        self.seed_graph: Optional[MolGraph] = None
        self.seed_score: Optional[float] = None
        self._seed_fp = None

        self.verbose = verbose
        self.silent = silent

    # seeding

    def seed_from_corpus(self, corpus: Sequence[str]):
        for text in corpus:
            self.evaluate(text, -1, [], None, "seed")
        if not self.vocab.entries:
            raise EmptyVocabulary("no seed molecule decomposed into an admissible fragment")
        if self.verbose:
            print(f"FragmentOptimizer: vocabulary seeded with {len(self.vocab)} fragments")

    def seed_from_molecule(self, text: str):
        g, report = check_sequence(text, self.table)
        if not report.valid:
            raise ValueError(f"seed molecule {text!r} is invalid: {report.failure.value}")
        self.seed_graph = g
        self._seed_fp = fingerprint(g)
        key = canonicalize(g)
        self.seed_score = self.oracle.score(g, key)
        self.records.append(RunRecord(iter=-1, sequence=text, canonical=key, valid=True, score=self.seed_score,
                                      oracle_calls_used=self.oracle.calls, phase="seed", scored=True, lead=True))
        fragments: Dict[str, Fragment] = {}
        for _ in range(LEAD_SEED_DECOMPOSITIONS):
            for fragment in decompose(g, CutRule.R_VOCAB, self.rng, self.table):
                fragments.setdefault(fragment.canonical_key, fragment)
        self.vocab.update(fragments.values(), self.seed_score)
        if not self.vocab.entries:
            raise EmptyVocabulary(f"seed molecule {text!r} has no admissible fragment")

    # one candidate

    def is_lead(self, g: MolGraph) -> bool:
        lead = self.config.lead
        if lead is None or self._seed_fp is None:
            return False
        if tanimoto_similarity(fingerprint(g), self._seed_fp) < lead.delta:
            return False
        if lead.qed_min is not None and pseudo_qed(g) < lead.qed_min:
            return False
        return lead.sa_max is None or pseudo_sa(g) <= lead.sa_max

    def evaluate(self, text: Optional[str], iteration: int, parents: List[str], span: Optional[List[int]],
                 phase: str) -> RunRecord:
        """Score one candidate and fold it into the vocabulary; raises BudgetExhausted before recording.

        ``text=None`` marks a generation that never produced a sequence.
        """
        g, report = check_sequence(text, self.table) if text is not None else (None, None)
        if report is None or not report.valid:
            record = RunRecord(iter=iteration, sequence=text or "", canonical="", valid=False, score=0.0,
                               parents=parents, remasked_span=span, oracle_calls_used=self.oracle.calls, phase=phase)
            self.records.append(record)
            return record

        key = canonicalize(g)
        cached = self.oracle.cached(key)
        score = cached if cached is not None else self.oracle.score(g, key)
        lead = self.is_lead(g) if self.config.lead is not None else None
        if cached is None and lead is not False:
            self.vocab.update(decompose(g, CutRule.R_VOCAB, self.rng, self.table), score)
        record = RunRecord(iter=iteration, sequence=text, canonical=key, valid=True, score=score, parents=parents,
                           remasked_span=span, oracle_calls_used=self.oracle.calls, phase=phase,
                           scored=cached is None, lead=lead)
        self.records.append(record)
        return record

    def regenerate(self, x_init: str) -> Tuple[Optional[str], Optional[List[int]]]:
        mode = self.config.mode
        try:
            if mode is OptimizerMode.TOKEN_REMASK:
                ids = remask_view(x_init, self.table)
                k = min(self.length_model.sample(self.rng), len(ids))
                remasked = token_remask(ids, k, self.rng, self.table)
                out = generate(self.denoiser, remasked.template, self.config.sampler, rng=self.rng)
            else:
                guidance = self.config.guidance if mode is OptimizerMode.FRAGMENT_REMASK_MCG else None
                out, remasked = remask_and_regenerate(self.denoiser, x_init, self.length_model, self.config.sampler,
                                                      self.rng, guidance, self.guide_rng,
                                                      self.config.fit_mask_digits)
        except (LengthExceeded, LengthMismatch) as e:
            if self.verbose:
                print(f"FragmentOptimizer: generation skipped ({e})")
            return None, None
        span = list(remasked.span) if remasked.span is not None else None
        return self.table.detokenize(out), span

    def step(self, attempt: int) -> RunRecord:
        f1, f2 = self.vocab.sample_pair(self.rng)
        x_init = attach(f1, f2, self.rng)
        parents = [f1.canonical_key, f2.canonical_key]
        warmup = len(self.generated) < self.config.warmup_count
        if warmup or self.config.mode is OptimizerMode.ATTACH_ONLY:
            record = self.evaluate(x_init, attempt, parents, None, "warmup" if warmup else "attach")
        else:
            candidate, span = self.regenerate(x_init)
            record = self.evaluate(candidate, attempt, parents, span, "generate")
        if record.valid:
            self.generated.setdefault(record.canonical, record)
        return record

    def run(self) -> OptimizationResult:
        """Generate until G distinct valid molecules, the oracle budget or the attempt limit runs out."""
        if not self.vocab.entries:
            raise EmptyVocabulary("seed the vocabulary before running")
        G = self.config.G
        bar = tqdm(total=G, desc=f"optimize {self.oracle.name}", disable=self.silent)
        attempt = 0
        try:
            while len(self.generated) < G and attempt < self.config.attempt_limit:
                before = len(self.generated)
                record = self.step(attempt)
                attempt += 1
                bar.update(len(self.generated) - before)
                if self.verbose:
                    print(f"FragmentOptimizer: attempt {attempt} score {record.score:.3f} valid {record.valid} "
                          f"generated {len(self.generated)} vocab {len(self.vocab)}")
        except BudgetExhausted:
            self.budget_exhausted = True
            if not self.silent:
                print(f"FragmentOptimizer: oracle budget of {self.oracle.budget} calls exhausted")
        finally:
            bar.close()
        if len(self.generated) < G and not self.budget_exhausted and not self.silent:
            print(f"FragmentOptimizer: stopped after {attempt} attempts with {len(self.generated)} of {G} molecules")
        return OptimizationResult(self.records, self.summary(), self.vocab.to_rows(), self.budget_exhausted)

    # reporting

    def summary(self) -> Dict[str, object]:
        scores = self.oracle.scores()
        attempts = [r for r in self.records if r.phase != "seed"]
        summary: Dict[str, object] = {
            "oracle": self.oracle.name,
            "mode": self.config.mode.value,
            "generations": len(self.generated),
            "attempts": len(attempts),
            "validity": sum(r.valid for r in attempts) / len(attempts) if attempts else 0.0,
            "oracle_calls_used": self.oracle.calls,
            "budget": self.oracle.budget,
            "budget_exhausted": self.budget_exhausted,
            "vocab_size": len(self.vocab),
        }
        for k in AUC_KS:
            summary[f"auc_top{k}"] = auc_topk(scores, k, self.oracle.budget) if scores else 0.0
        valid = [r for r in self.records if r.valid]
        if valid:
            best = max(valid, key=lambda r: (r.score, -r.oracle_calls_used))
            summary["best"] = {"sequence": best.sequence, "canonical": best.canonical, "score": best.score}
        if self.config.lead is not None:
            summary.update(self._lead_summary(attempts))
        if self.config.iterations > 1:
            # generations in order of first appearance, G / iterations per chunk
            per_iteration = self.config.G // self.config.iterations
            firsts = list(self.generated.values())
            summary["best_per_iteration"] = [
                max((r.score for r in firsts[it * per_iteration:(it + 1) * per_iteration]), default=0.0)
                for it in range(self.config.iterations)]
        return summary

    def _lead_summary(self, generated: List[RunRecord]) -> Dict[str, object]:
        leads = [r for r in generated if r.valid and r.lead and r.canonical != canonicalize(self.seed_graph)]
        out: Dict[str, object] = {"seed_score": self.seed_score, "n_leads": len(leads)}
        if leads:
            best = max(leads, key=lambda r: r.score)
            out["best_lead"] = {"sequence": best.sequence, "canonical": best.canonical, "score": best.score}
            out["improvement"] = best.score - self.seed_score
            out["success"] = best.score > self.seed_score
        else:
            out["improvement"] = 0.0
            out["success"] = False
        return out


def optimize(oracle: PropertyOracle, config: OptimizerConfig, denoiser: Optional[Denoiser] = None,
             length_model: Optional[LengthModel] = None, seed_corpus: Optional[Sequence[str]] = None,
             seed_molecule: Optional[str] = None, table: TokenTable = DEFAULT_TABLE,
             verbose=False, silent=False) -> OptimizationResult:
    """Hit generation from ``seed_corpus`` or, with ``config.lead``, lead optimization from ``seed_molecule``."""
    if (seed_corpus is None) == (seed_molecule is None):
        raise ValueError("pass exactly one of seed_corpus and seed_molecule")
    if seed_molecule is not None and config.lead is None:
        raise ValueError("a seed molecule needs lead constraints in the config")
    optimizer = FragmentOptimizer(oracle, config, denoiser, length_model, table, verbose=verbose, silent=silent)
    try:
        if seed_corpus is not None:
            optimizer.seed_from_corpus(seed_corpus)
        else:
            optimizer.seed_from_molecule(seed_molecule)
    except BudgetExhausted:
        optimizer.budget_exhausted = True
        return OptimizationResult(optimizer.records, optimizer.summary(), optimizer.vocab.to_rows(), True)
    return optimizer.run()

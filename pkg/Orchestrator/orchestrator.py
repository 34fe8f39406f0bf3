"""Binds grammar, diffusion, sampler, optimizer and metrics into the five run commands."""
import time
from collections import Counter
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from Denoiser.checkpoint import content_hash, load_checkpoint, save_checkpoint
from Denoiser.denoiser_contract import CountingDenoiser, UniformDenoiser
from Denoiser.oracle_denoiser import OracleDenoiser
from Denoiser.tiny_denoiser import DenoiserConfig, TinyDenoiser
from Denoiser.trainer import Trainer, check_batch, grad_check, safe_corpus, smoothed
from Diffusion.diffusion_core import rate_matrix_step, reverse_step_dist
from Diffusion.diffusion_dataclass import SeqState
from Diffusion.noise_schedule import CosineSchedule, LogLinearSchedule, make_schedule
from Guidance.guidance import rate_guidance_check
from Metrics.set_metrics import distance, per_molecule_rows, set_metrics
from Metrics.pseudo_properties import pseudo_qed
from Optimizer.fragment_optimizer import optimize
from Optimizer.property_oracle import make_oracle
from Optimizer.run_record import RunRecord
from Orchestrator.persistence import read_jsonl, write_csv, write_json, write_jsonl
from Orchestrator.run_config import ConfigError, RunConfig, schema_rows
from Orchestrator.task_templates import TEMPLATE_TASKS, build_templates, split_fragments
from Sampler.length_model import LengthModel
from Sampler.sampler import SamplerParams, Template, generate, generate_batch, generate_standard
from SafeGrammar.canonical import canonicalize
from SafeGrammar.safe_parser import check_sequence, parse, read_corpus
from SafeGrammar.token_table import DEFAULT_TABLE

SELFTEST_CORPUS = {"CN": 0.5, "NC": 0.5}
SELFTEST_MOLECULES = ["CCO", "C1CC1O", "CC(=O)N", "OCC1CCC(N)CC1CCO", "N#CC", "FC(F)C"]


class Orchestrator:
    def __init__(self, config: RunConfig, verbose: Optional[bool] = None, silent: Optional[bool] = None):
        self.config = config
        self.table = DEFAULT_TABLE
        self.out_dir = Path(config.out_dir)
        self.outputs: List[str] = []

        self.verbose = config.verbose if verbose is None else verbose
        self.silent = config.silent if silent is None else silent

    # inputs

    def read_corpus(self, path: Optional[str] = None) -> List[str]:
        path = Path(path or self.config.corpus)
        if not path.is_file():
            raise FileNotFoundError(f"corpus file {path} not found")
        corpus = read_corpus(path)
        if not corpus:
            raise ConfigError(f"corpus file {path} holds no sequences")
        return corpus

    def load_denoiser(self):
        if self.config.oracle_corpus:
            counts = Counter(self.read_corpus(self.config.oracle_corpus))
            return OracleDenoiser.from_strings(counts, self.table)
        path = Path(self.config.checkpoint)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint {path} not found; run train first or set oracle_corpus")
        return load_checkpoint(path).to_model()

    def valid_graphs(self, corpus: List[str]):
        graphs = []
        for seq in corpus:
            g, report = check_sequence(seq, self.table)
            if report.valid:
                graphs.append(g)
        return graphs

    def fragment_length_model(self, corpus: List[str]) -> LengthModel:
        graphs = self.valid_graphs(corpus)
        if not graphs:
            raise ConfigError("no valid molecule in the corpus to fit a fragment length model")
        return LengthModel.from_fragment_spans(graphs, self.table)

    # outputs

    def output(self, name: str) -> Path:
        path = self.out_dir / name
        self.outputs.append(str(path))
        return path

    def write_manifest(self, command: str, extra: Optional[dict] = None) -> Path:
        checkpoint = Path(self.config.checkpoint)
        manifest = {
            "command": command,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "schema": schema_rows(self.config.schema),
            "checkpoint": str(checkpoint) if checkpoint.is_file() else None,
            "checkpoint_hash": content_hash(checkpoint) if checkpoint.is_file() else None,
            "outputs": sorted(self.outputs),
        }
        manifest.update(extra or {})
        return write_json(self.out_dir / "manifest.json", manifest)

    def log(self, message: str):
        if not self.silent:
            print(f"Orchestrator: {message}")

    # commands

    def cmd_train(self) -> Path:
        config = self.config
        texts = self.read_corpus()
        if config.safe_views:
            corpus = safe_corpus(texts, config.safe_views, config.seed, self.table)
        else:
            corpus = [self.table.tokenize(seq) for seq in texts]
        trainer = Trainer(corpus, config.train_config(), config.model_config(self.table.K),
                          make_schedule(config.schedule), self.table, verbose=self.verbose, silent=self.silent)
        started = time.time()
        trace = trainer.run()
        ckpt = trainer.checkpoint()
        path = save_checkpoint(ckpt, config.checkpoint)
        self.outputs.append(str(path))

        smooth = smoothed(trace)
        offset = len(trace) - len(smooth)
        rows = [(step + 1, loss, smooth[step - offset] if step >= offset else "") for step, loss in enumerate(trace)]
        write_csv(self.output("loss_trace.csv"), ("step", "loss", "smoothed"), rows)
        if config.plot:
            from Orchestrator.plotting import plot_loss_trace
            plot_loss_trace(trace, self.output("loss_trace.png"))
        self.log(f"trained {len(trace)} steps in {time.time() - started:.1f}s, checkpoint {path}")
        self.write_manifest("train", {"final_loss": ckpt.metadata.get("final_loss")})
        return path

    def cmd_generate(self) -> Path:
        config = self.config
        if config.task not in TEMPLATE_TASKS:
            raise ConfigError(f"generate runs one of {list(TEMPLATE_TASKS)}, not {config.task!r}")
        denoiser = self.load_denoiser()
        corpus = self.read_corpus(config.oracle_corpus or config.corpus)
        if config.task == "denovo":
            lengths = LengthModel.from_corpus([self.table.tokenize(s) for s in corpus], self.table)
        else:
            lengths = self.fragment_length_model(corpus)
        rng = np.random.default_rng(config.seed)
        templates = build_templates(config.task, split_fragments(config.fragments), config.n_samples, lengths, rng,
                                    config.mask_length, self.table)

        if config.sampler == "confidence":
            guidance = config.guidance_params()
            outputs = generate_batch(denoiser, templates, config.sampler_params(),
                                     guidance if guidance.active else None, config.workers, silent=self.silent)
        else:
            seeds = np.random.SeedSequence(config.seed).spawn(len(templates))
            outputs = [generate_standard(denoiser, template, steps=config.standard_steps,
                                         rng=np.random.default_rng(seed))
                       for template, seed in zip(templates, seeds)]

        sequences = [self.table.detokenize(ids) for ids in outputs]
        records = []
        for i, (template, seq) in enumerate(zip(templates, sequences)):
            g, report = check_sequence(seq, self.table)
            records.append(RunRecord(iter=i, sequence=seq, canonical=canonicalize(g) if report.valid else "",
                                     valid=report.valid, score=pseudo_qed(g) if report.valid else 0.0,
                                     phase=config.task).to_dict() | {"template": template.text()})
        path = write_jsonl(self.output("results.jsonl"), records)

        metrics = set_metrics(sequences).to_dict()
        if config.reference:
            metrics["distance"] = distance(config.reference, sequences)
        write_json(self.output("metrics.json"), metrics)
        rows = per_molecule_rows(sequences)
        write_csv(self.output("molecules.csv"), list(rows[0]), [list(row.values()) for row in rows])
        self.log(f"{config.task}: {len(sequences)} samples, validity {metrics['validity']:.3f}, "
                 f"uniqueness {metrics['uniqueness']:.3f}, diversity {metrics['diversity']:.3f}")
        self.write_manifest("generate", {"metrics": metrics})
        return path

    def cmd_optimize(self) -> Path:
        config = self.config
        if config.task not in ("hit", "lead"):
            raise ConfigError(f"optimize runs task hit or lead, not {config.task!r}")
        opt_config = config.optimizer_config()
        corpus = self.read_corpus()
        lengths = self.fragment_length_model(corpus)
        denoiser = None if opt_config.mode.value == "attach_only" else self.load_denoiser()
        oracle = make_oracle(config.oracle, config.budget)
        if config.task == "lead":
            if not config.seed_molecule:
                raise ConfigError("task lead needs seed_molecule")
            result = optimize(oracle, opt_config, denoiser, lengths, seed_molecule=config.seed_molecule,
                              table=self.table, verbose=self.verbose, silent=self.silent)
        else:
            result = optimize(oracle, opt_config, denoiser, lengths, seed_corpus=corpus, table=self.table,
                              verbose=self.verbose, silent=self.silent)

        path = write_jsonl(self.output("results.jsonl"), [record.to_dict() for record in result.records])
        write_json(self.output("summary.json"), result.summary)
        write_json(self.output("vocab.json"), result.vocab)
        if config.plot and result.history():
            from Orchestrator.plotting import plot_topk_curves
            plot_topk_curves(result.history(), oracle.budget, self.output("topk_curve.png"))
        self.log(f"{config.oracle}/{opt_config.mode.value}: auc top-10 {result.summary['auc_top10']:.4f}, "
                 f"{oracle.calls}/{oracle.budget} oracle calls")
        self.write_manifest("optimize", {"summary": result.summary, "optimizer_config": opt_config.to_dict()})
        return path

    def cmd_eval(self) -> Path:
        config = self.config
        path = Path(config.molecules)
        if not config.molecules or not path.is_file():
            raise FileNotFoundError(f"molecules file {path} not found")
        if path.suffix == ".jsonl":
            sequences = [row["sequence"] for row in read_jsonl(path)]
        else:
            sequences = read_corpus(path)
        if not sequences:
            raise ConfigError(f"molecules file {path} holds no sequences")
        metrics = set_metrics(sequences).to_dict()
        if config.reference:
            metrics["distance"] = distance(config.reference, sequences)
        out = write_json(self.output("eval.json"), metrics)
        rows = per_molecule_rows(sequences)
        write_csv(self.output("eval_molecules.csv"), list(rows[0]), [list(row.values()) for row in rows])
        self.log(f"evaluated {len(sequences)} molecules from {path}")
        self.write_manifest("eval", {"metrics": metrics, "molecules": str(path)})
        return out

    def cmd_selftest(self) -> bool:
        checks: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
            ("oracle_faithfulness", self._check_oracle_faithfulness),
            ("discretization", self._check_discretization),
            ("guidance_derivation", self._check_guidance),
            ("call_count_law", self._check_call_count),
            ("grammar_round_trip", self._check_round_trip),
            ("grad_check", self._check_gradients),
        ]
        results: Dict[str, dict] = {}
        for name, check in checks:
            try:
                ok, detail = check()
            except Exception as e:
                ok, detail = False, f"{type(e).__name__}: {e}"
            results[name] = {"passed": ok, "detail": detail}
            self.log(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
        passed = all(r["passed"] for r in results.values())
        write_json(self.output("selftest.json"), results)
        self.write_manifest("selftest", {"passed": passed})
        return passed

    # selftest battery

    def _check_oracle_faithfulness(self) -> Tuple[bool, str]:
        oracle = OracleDenoiser.from_strings(SELFTEST_CORPUS, self.table)
        params = SamplerParams(N=1, tau=1.0, r=0.0, seed=self.config.seed)
        templates = [Template.fully_masked(2, self.table)] * 2000
        counts = Counter(self.table.detokenize(ids) for ids in generate_batch(oracle, templates, params,
                                                                               workers=self.config.workers))
        tv = 0.5 * sum(abs(counts.get(s, 0) / len(templates) - p) for s, p in SELFTEST_CORPUS.items())
        tv += 0.5 * sum(c for s, c in counts.items() if s not in SELFTEST_CORPUS) / len(templates)
        return tv <= 0.05, f"tv {tv:.4f}"

    def _check_discretization(self) -> Tuple[bool, str]:
        rng = np.random.default_rng(self.config.seed)
        worst = 0.0
        for sched in (LogLinearSchedule(), CosineSchedule()):
            for dt in (1e-3, 1e-4):
                for _ in range(20):
                    ids = rng.integers(0, 4, size=6)
                    ids[rng.random(6) < 0.5] = self.table.mask_id
                    probs = rng.dirichlet(np.ones(self.table.K), size=6)
                    t = rng.uniform(0.5, 1.0)
                    z = SeqState(ids, t)
                    gap = np.max(np.abs(rate_matrix_step(z, probs, t, dt, sched, self.table)
                                        - reverse_step_dist(z, probs, t - dt, sched, self.table)))
                    worst = max(worst, float(gap / (10 * dt ** 2)))
        return worst <= 1.0, f"worst gap {worst:.3f} of the 10 dt^2 bound"

    def _check_guidance(self) -> Tuple[bool, str]:
        rng = np.random.default_rng(self.config.seed)
        special = [self.table.mask_id, self.table.pad_id]
        worst = 0.0
        for _ in range(20):
            good, poor = rng.dirichlet(np.ones(self.table.K), size=(2, 6))
            good[:, special] = 0.0
            poor[:, special] = 0.0
            good /= good.sum(axis=1, keepdims=True)
            poor /= poor.sum(axis=1, keepdims=True)
            worst = max(worst, rate_guidance_check(good, poor, 2.0, rng.uniform(0.5, 1.0), 1e-4,
                                                   LogLinearSchedule(), self.table))
        return worst <= 1e-6, f"max gap {worst:.2e}"

    def _check_call_count(self) -> Tuple[bool, str]:
        details = []
        ok = True
        for N in (1, 2, 3):
            counting = CountingDenoiser(UniformDenoiser(self.table))
            generate(counting, Template.fully_masked(7, self.table), SamplerParams(N=N),
                     rng=np.random.default_rng(0))
            expected = -(-7 // N)
            ok = ok and counting.calls == expected
            details.append(f"N={N}: {counting.calls}/{expected}")
        return ok, ", ".join(details)

    def _check_round_trip(self) -> Tuple[bool, str]:
        bad = []
        for seq in SELFTEST_MOLECULES:
            key = canonicalize(parse(seq, table=self.table))
            if canonicalize(parse(key, table=self.table)) != key:
                bad.append(seq)
        return not bad, f"{len(SELFTEST_MOLECULES) - len(bad)}/{len(SELFTEST_MOLECULES)} stable"

    def _check_gradients(self) -> Tuple[bool, str]:
        corpus = [self.table.tokenize(s) for s in SELFTEST_MOLECULES]
        model = TinyDenoiser(DenoiserConfig(K=self.table.K, max_len=16, d=8, heads=2, ffn=16, time_bins=8),
                             table=self.table, seed=self.config.seed)
        error = grad_check(model, check_batch(model, corpus))
        return error <= 1e-4, f"max relative error {error:.2e}"

    def run(self, command: str):
        match command:
            case "train":
                return self.cmd_train()
            case "generate":
                return self.cmd_generate()
            case "optimize":
                return self.cmd_optimize()
            case "eval":
                return self.cmd_eval()
            case "selftest":
                return self.cmd_selftest()
            case _:
                raise ConfigError(f"unknown command {command!r}")


def cmd_train(config: RunConfig) -> Path:
    return Orchestrator(config).cmd_train()


def cmd_generate(config: RunConfig) -> Path:
    return Orchestrator(config).cmd_generate()


def cmd_optimize(config: RunConfig) -> Path:
    return Orchestrator(config).cmd_optimize()


def cmd_eval(config: RunConfig) -> Path:
    return Orchestrator(config).cmd_eval()


def cmd_selftest(config: RunConfig) -> bool:
    return Orchestrator(config).cmd_selftest()


if __name__ == "__main__":
    from Orchestrator.cli import main
    raise SystemExit(main())

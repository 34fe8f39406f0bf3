import math
from collections import Counter

import numpy as np
import pytest

from Denoiser.denoiser_contract import CountingDenoiser, UniformDenoiser
from Denoiser.oracle_denoiser import OracleDenoiser
from Guidance.guidance import GuidanceParams
from Metrics.fingerprint import fingerprint_of, tanimoto_similarity
from Optimizer.auc import auc_topk, topk_curve
from Optimizer.fragment_optimizer import (FragmentOptimizer, LeadConstraints, OptimizerConfig, OptimizerMode,
                                          optimize)
from Optimizer.fragment_vocab import EmptyVocabulary, FragmentVocab, build_vocab
from Optimizer.property_oracle import BudgetExhausted, PropertyOracle, composition, make_oracle
from Optimizer.remasking import fragment_remask, remask_and_regenerate, remask_view, token_remask
from Optimizer.run_record import RunRecord
from Sampler.length_model import LengthModel
from Sampler.sampler import SamplerParams
from SafeGrammar.fragment_algebra import attach, fragment_from_text, fragment_sequence, fragment_spans
from SafeGrammar.safe_parser import parse
from SafeGrammar.token_table import DEFAULT_TABLE, DIGIT_SYMBOLS
from tests.conftest import TOY_MOLECULES

T = DEFAULT_TABLE
DIATOMIC_SEEDS = ["CN", "CO", "NO"]
LONG_CHAINS = ["CCCCCO", "CCCCCN", "OCCCCCO"]


def _tv(counts: Counter, target: dict) -> float:
    n = sum(counts.values())
    keys = set(counts) | set(target)
    return 0.5 * sum(abs(counts.get(k, 0) / n - target.get(k, 0.0)) for k in keys)


# vocabulary

def test_vocab_score_is_mean_of_containing_molecules():
    vocab = FragmentVocab(capacity=None)
    c, o = fragment_from_text("C1"), fragment_from_text("O1")
    vocab.update([c, o], 0.2)
    vocab.update([c], 0.6)
    vocab.update([c, c], 1.0)
    assert vocab.entries["C*"].count == 3
    assert vocab.score_of("C*") == pytest.approx(0.6)
    assert vocab.score_of("O*") == pytest.approx(0.2)


def test_vocab_mean_is_independent_of_update_order():
    rng = np.random.default_rng(0)
    c = fragment_from_text("C1")
    for _ in range(100):
        scores = rng.random(int(rng.integers(1, 20)))
        forward, backward = FragmentVocab(), FragmentVocab()
        for s in scores:
            forward.update([c], s)
        for s in scores[::-1]:
            backward.update([c], s)
        assert forward.score_of("C*") == backward.score_of("C*") == math.fsum(scores) / len(scores)


def test_vocab_rejects_closed_and_multi_attachment_fragments():
    vocab = FragmentVocab(max_attachments=1)
    vocab.update([fragment_from_text("CC"), fragment_from_text("C1C2"), fragment_from_text("N1")], 0.5)
    assert list(vocab.entries) == ["N*"]
    assert FragmentVocab(max_attachments=None).admits(fragment_from_text("C1C2"))


def test_vocab_capacity_evicts_lowest_scores():
    vocab = FragmentVocab(capacity=2)
    vocab.update([fragment_from_text("C1")], 0.9)
    vocab.update([fragment_from_text("N1")], 0.5)
    vocab.update([fragment_from_text("O1")], 0.1)
    assert set(vocab.entries) == {"C*", "N*"}
    vocab.update([fragment_from_text("O1")], 0.95)
    assert set(vocab.entries) == {"C*", "O*"}
    # evicted entries start over
    assert vocab.entries["O*"].count == 1


def test_vocab_ties_break_on_count_then_key():
    vocab = FragmentVocab(capacity=2)
    vocab.update([fragment_from_text("O1")], 0.5)
    vocab.update([fragment_from_text("O1")], 0.5)
    vocab.update([fragment_from_text("N1")], 0.5)
    vocab.update([fragment_from_text("C1")], 0.5)
    assert [key for key, _ in vocab.ranked()] == ["O*", "C*"]


def test_sample_pair_from_empty_vocab_raises(rng):
    with pytest.raises(EmptyVocabulary):
        FragmentVocab().sample_pair(rng)


def test_build_vocab_pools_corpus_fragments(rng):
    vocab = build_vocab([(s, 0.5) for s in DIATOMIC_SEEDS], V=10, rng=rng)
    assert set(vocab.entries) == {"C*", "N*", "O*"}
    assert vocab.entries["C*"].count == 2
    with pytest.raises(EmptyVocabulary):
        build_vocab([("C1CC1", 1.0)], V=10, rng=rng)


# remasking

def test_fragment_remask_picks_spans_uniformly(rng):
    ids = T.tokenize(fragment_sequence(parse("C1CC1O")))
    spans = fragment_spans(ids)
    assert len(spans) == 2
    counts = Counter(fragment_remask("C1CC1O", LengthModel.from_histogram({3: 1.0}), rng).span
                     for _ in range(2000))
    assert set(counts) == set(spans)
    for span in spans:
        assert abs(counts[span] / 2000 - 0.5) < 0.05


def test_fragment_remask_inserts_sampled_mask_count(rng):
    remasked = fragment_remask("C1CC1O", LengthModel.from_histogram({3: 1.0}), rng)
    assert remasked.template.n_masked == 3
    start, end = remasked.span
    ids = T.tokenize(fragment_sequence(parse("C1CC1O")))
    assert len(remasked.template.ids) == len(ids) - (end - start) + 3


def test_fragment_remask_keeps_length_when_m_matches_span():
    ids = T.tokenize(fragment_sequence(parse("C1CC1O")))
    for start, end in fragment_spans(ids):
        model = LengthModel.from_histogram({end - start: 1.0})
        for seed in range(20):
            remasked = fragment_remask("C1CC1O", model, np.random.default_rng(seed))
            assert len(remasked.template.ids) == len(ids)


def test_remask_view_writes_one_fragment_per_block():
    assert T.detokenize(remask_view("CCO")) == fragment_sequence(parse("CCO"))
    assert remask_view(T.tokenize("CCO") + [T.pad_id] * 3) == remask_view("CCO")


def test_fragment_remask_leaves_room_for_pairing_digits():
    model = LengthModel.from_histogram({1: 0.6, 2: 0.3, 5: 0.1})
    ids = remask_view("CC(C)O")
    for seed in range(50):
        remasked = fragment_remask("CC(C)O", model, np.random.default_rng(seed), fit_digits=True)
        start, end = remasked.span
        digits = sum(T.token(tok) in DIGIT_SYMBOLS for tok in ids[start:end])
        assert remasked.template.n_masked >= digits + 1


def test_length_model_minimum_conditions_the_draw(rng):
    model = LengthModel.from_histogram({1: 0.5, 3: 0.25, 4: 0.25})
    draws = Counter(model.sample(rng, minimum=3) for _ in range(4000))
    assert set(draws) == {3, 4}
    assert abs(draws[3] / 4000 - 0.5) < 0.05
    assert model.sample(rng, minimum=7) == 7


def test_token_remask_edges(rng):
    ids = T.tokenize("CCO")
    assert token_remask(ids, 0, rng).template.n_masked == 0
    assert token_remask(ids, 3, rng).template.n_masked == 3
    with pytest.raises(ValueError):
        token_remask(ids, 4, rng)


def test_token_remask_positions_are_uniform(rng):
    ids = T.tokenize("CC(C)O")
    n, k = 6000, 2
    hits = np.zeros(len(ids))
    for _ in range(n):
        remasked = token_remask(ids, k, rng)
        assert remasked.template.n_masked == k
        hits += remasked.template.masked
    expected = n * k / len(ids)
    chi2 = float(((hits - expected) ** 2 / expected).sum())
    assert chi2 < 20.5


GIBBS_CORPUS = {"C1.C1": 0.1, "C1.N1": 0.3, "C1.O1": 0.2, "N1.O1": 0.25, "N1.N1": 0.15}


def test_fragment_resampling_preserves_corpus_distribution():
    denoiser = OracleDenoiser.from_strings(GIBBS_CORPUS)
    model = LengthModel.from_histogram({2: 1.0})
    params = SamplerParams(N=1, tau=1.0, r=1e6)
    rng = np.random.default_rng(7)
    finals = Counter()
    for start in ("C1.C1", "N1.O1", "C1.O1"):
        for _ in range(300):
            state = start
            for _ in range(15):
                ids, _ = remask_and_regenerate(denoiser, state, model, params, rng)
                state = T.detokenize(ids)
            finals[state] += 1
    assert set(finals) <= set(GIBBS_CORPUS)
    assert _tv(finals, GIBBS_CORPUS) <= 0.07


@pytest.mark.slow
def test_fragment_resampling_converges_from_every_start():
    # a sweep resamples as many fragments as the molecule has
    denoiser = OracleDenoiser.from_strings(GIBBS_CORPUS)
    model = LengthModel.from_histogram({2: 1.0})
    params = SamplerParams(N=1, tau=1.0, r=1e6)
    rng = np.random.default_rng(17)
    sweeps, burn_in, chains = 1000, 50, 10
    pooled = Counter()
    for start in ("C1.C1", "N1.O1", "C1.O1"):
        visits = Counter()
        for _ in range(chains):
            state = start
            for sweep in range(sweeps):
                for _ in range(2):
                    ids, _ = remask_and_regenerate(denoiser, state, model, params, rng)
                    state = T.detokenize(ids)
                if sweep >= burn_in:
                    visits[state] += 1
        assert set(visits) <= set(GIBBS_CORPUS)
        assert _tv(visits, GIBBS_CORPUS) <= 0.05
        pooled.update(visits)
    assert _tv(pooled, GIBBS_CORPUS) <= 0.05


# oracle and auc

def test_oracle_caches_repeats_and_enforces_budget():
    oracle = make_oracle("constant", budget=2, value=0.7)
    assert oracle.score(parse("CCO")) == 0.7
    assert oracle.score(parse("OCC")) == 0.7
    assert oracle.calls == 1
    oracle.score(parse("CCN"))
    with pytest.raises(BudgetExhausted) as exc:
        oracle.score(parse("CCCC"))
    assert exc.value.history == [(1, 0.7), (2, 0.7)]


def test_oracle_clips_into_unit_interval():
    oracle = PropertyOracle("loud", lambda g: 3.0, budget=5)
    assert oracle.score(parse("C")) == 1.0
    with pytest.raises(ValueError):
        make_oracle("no_such_oracle", budget=5)


def test_composition_oracle_peaks_at_target():
    scorer = composition({"C": 2, "O": 1})
    assert scorer(parse("CCO")) == 1.0
    assert scorer(parse("CCCO")) == pytest.approx(math.exp(-0.5))


@pytest.mark.parametrize("value", [0.0, 0.3, 1.0])
def test_auc_of_constant_history(value):
    assert auc_topk([value] * 10, 1, 10) == pytest.approx(value)
    assert auc_topk([value] * 10, 10, 10) == pytest.approx(value)


def test_auc_late_hit():
    assert auc_topk([0.0] * 9 + [1.0], 1, 10) == pytest.approx(0.05)


def test_auc_with_short_history():
    assert topk_curve([0.2, 0.4], 10, 2).tolist() == pytest.approx([0.2, 0.3])
    assert auc_topk([0.2, 0.4], 10, 2) == pytest.approx(0.225)
    assert auc_topk([1.0], 1, 4) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        auc_topk([], 1, 4)


def test_run_record_round_trip():
    record = RunRecord(iter=3, sequence="CCO", canonical="CCO", valid=True, score=0.5, parents=["C*", "O*"],
                       remasked_span=[0, 2], oracle_calls_used=4, phase="generate", scored=True)
    assert RunRecord.from_dict(record.to_dict()) == record


# optimizer

def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(mode=OptimizerMode.GPT_STYLE_REMASK_EXCLUDED)
    with pytest.raises(ValueError):
        OptimizerConfig(mode=OptimizerMode.FRAGMENT_REMASK_MCG, guidance=GuidanceParams(w=2.0, gamma=0.0))
    with pytest.raises(ValueError):
        OptimizerConfig(G=10, warmup=11)
    with pytest.raises(ValueError):
        OptimizerConfig(G=10, iterations=3)
    assert OptimizerConfig(G=50).warmup_count == 5
    assert OptimizerConfig(lead=LeadConstraints()).capacity is None


def test_regenerating_modes_need_a_denoiser():
    with pytest.raises(ValueError):
        FragmentOptimizer(make_oracle("constant", 10), OptimizerConfig(G=10))


def test_attach_only_reaches_best_attachable_pair():
    oracle = PropertyOracle("two_carbons", composition({"C": 2}), budget=50)
    config = OptimizerConfig(V=10, G=200, mode=OptimizerMode.ATTACH_ONLY, seed=3)
    result = optimize(oracle, config, seed_corpus=DIATOMIC_SEEDS, silent=True)

    fragments = [fragment_from_text(s) for s in ("C1", "N1", "O1")]
    rng = np.random.default_rng(0)
    brute = max(oracle.scorer(parse(attach(a, b, rng))) for a in fragments for b in fragments)
    assert brute == 1.0
    assert result.summary["best"]["score"] == brute
    assert result.summary["vocab_size"] == 3


def test_attach_only_never_calls_the_denoiser():
    counting = CountingDenoiser(UniformDenoiser())
    config = OptimizerConfig(V=10, G=30, mode=OptimizerMode.ATTACH_ONLY)
    optimize(make_oracle("hetero_ring", 100), config, counting, LengthModel.from_histogram({2: 1.0}),
             seed_corpus=DIATOMIC_SEEDS, silent=True)
    assert counting.calls == 0


def test_constant_oracle_scores_full_auc():
    config = OptimizerConfig(V=10, G=20, mode=OptimizerMode.ATTACH_ONLY)
    result = optimize(make_oracle("constant", 10), config, seed_corpus=DIATOMIC_SEEDS, silent=True)
    assert result.summary["auc_top1"] == pytest.approx(1.0)
    assert result.summary["auc_top10"] == pytest.approx(1.0)


@pytest.mark.parametrize("mode, guidance", [
    (OptimizerMode.FRAGMENT_REMASK, GuidanceParams(w=2.0, gamma=0.0)),
    (OptimizerMode.FRAGMENT_REMASK_MCG, GuidanceParams(w=2.0, gamma=0.3, seed=5)),
    (OptimizerMode.TOKEN_REMASK, GuidanceParams(w=2.0, gamma=0.0)),
])
def test_runs_are_reproducible(mode, guidance):
    def run():
        config = OptimizerConfig(V=20, G=30, mode=mode, guidance=guidance, seed=11)
        return optimize(make_oracle("hetero_ring", 200), config, UniformDenoiser(),
                        LengthModel.from_histogram({1: 0.5, 3: 0.5}), seed_corpus=TOY_MOLECULES, silent=True)
    first, second = run(), run()
    assert [r.to_dict() for r in first.records] == [r.to_dict() for r in second.records]
    assert first.summary == second.summary


def test_records_account_for_every_oracle_call():
    oracle = make_oracle("hetero_ring", 300)
    config = OptimizerConfig(V=20, G=40, mode=OptimizerMode.FRAGMENT_REMASK, seed=2)
    result = optimize(oracle, config, UniformDenoiser(), LengthModel.from_histogram({1: 0.5, 3: 0.5}),
                      seed_corpus=TOY_MOLECULES, silent=True)
    assert sum(r.scored for r in result.records) == oracle.calls
    assert result.history() == oracle.scores()
    assert result.summary["auc_top10"] == pytest.approx(auc_topk(result.history(), 10, oracle.budget))
    attempts = [r for r in result.records if r.phase != "seed"]
    generated = {r.canonical for r in attempts if r.valid}
    assert result.summary["attempts"] == len(attempts)
    assert result.summary["generations"] == len(generated)
    assert len(generated) == config.G or len(attempts) == config.attempt_limit
    for record in result.records:
        if not record.valid:
            assert record.score == 0.0 and not record.scored
    warmup = [r for r in result.records if r.phase == "warmup"]
    assert len({r.canonical for r in warmup}) == config.warmup_count
    assert all(r.remasked_span is not None for r in result.records if r.phase == "generate")


def test_run_continues_until_g_distinct_molecules():
    oracle = make_oracle("hetero_ring", 500)
    config = OptimizerConfig(V=50, G=30, mode=OptimizerMode.ATTACH_ONLY, seed=6)
    result = optimize(oracle, config, seed_corpus=TOY_MOLECULES, silent=True)
    attempts = [r for r in result.records if r.phase != "seed"]
    assert len({r.canonical for r in attempts if r.valid}) == 30
    # the last attempt is the one that completed the set
    assert attempts[-1].canonical not in {r.canonical for r in attempts[:-1]}
    assert not result.budget_exhausted


def test_run_stops_at_attempt_limit():
    # three fragments attach into only six distinct molecules
    config = OptimizerConfig(V=10, G=20, mode=OptimizerMode.ATTACH_ONLY, max_attempts=100)
    result = optimize(make_oracle("hetero_ring", 100), config, seed_corpus=DIATOMIC_SEEDS, silent=True)
    assert result.summary["attempts"] == 100
    assert result.summary["generations"] == 6
    assert not result.budget_exhausted
    with pytest.raises(ValueError):
        OptimizerConfig(G=20, max_attempts=19)
    assert OptimizerConfig(G=20).attempt_limit == 200


def test_budget_exhaustion_during_seeding_is_graceful():
    oracle = make_oracle("hetero_ring", 3)
    result = optimize(oracle, OptimizerConfig(G=10, mode=OptimizerMode.ATTACH_ONLY),
                      seed_corpus=TOY_MOLECULES[:5], silent=True)
    assert result.budget_exhausted
    assert oracle.calls == 3


def test_budget_exhaustion_during_run_is_graceful():
    oracle = make_oracle("hetero_ring", len(LONG_CHAINS))
    result = optimize(oracle, OptimizerConfig(V=20, G=50, mode=OptimizerMode.ATTACH_ONLY),
                      seed_corpus=LONG_CHAINS, silent=True)
    assert result.budget_exhausted
    assert result.summary["budget_exhausted"]
    assert oracle.calls == len(LONG_CHAINS)
    assert sum(r.scored for r in result.records) == oracle.calls


def test_lead_optimization_respects_similarity_constraint():
    seed = "OCC1CCC(N)CC1CCO"
    config = OptimizerConfig(G=60, mode=OptimizerMode.ATTACH_ONLY, lead=LeadConstraints(delta=0.4), seed=4)
    result = optimize(make_oracle("composition", 500), config, seed_molecule=seed, silent=True)
    seed_fp = fingerprint_of(seed)
    for record in result.records:
        if record.valid and record.phase != "seed":
            similar = tanimoto_similarity(fingerprint_of(record.sequence), seed_fp) >= 0.4
            assert record.lead == similar
    summary = result.summary
    assert summary["seed_score"] == result.records[0].score
    assert summary["success"] == (summary["improvement"] > 0)


def test_seed_molecule_needs_lead_constraints():
    with pytest.raises(ValueError):
        optimize(make_oracle("constant", 10), OptimizerConfig(mode=OptimizerMode.ATTACH_ONLY),
                 seed_molecule="CCO", silent=True)
    with pytest.raises(ValueError):
        optimize(make_oracle("constant", 10), OptimizerConfig(mode=OptimizerMode.ATTACH_ONLY), silent=True)


def test_lead_seed_must_be_valid():
    config = OptimizerConfig(mode=OptimizerMode.ATTACH_ONLY, lead=LeadConstraints())
    with pytest.raises(ValueError):
        optimize(make_oracle("constant", 10), config, seed_molecule="C1CC", silent=True)


def test_best_per_iteration_is_reported():
    config = OptimizerConfig(V=10, G=20, iterations=4, mode=OptimizerMode.ATTACH_ONLY)
    result = optimize(make_oracle("hetero_ring", 100), config, seed_corpus=TOY_MOLECULES, silent=True)
    assert len(result.summary["best_per_iteration"]) == 4
    assert max(result.summary["best_per_iteration"]) <= result.summary["best"]["score"]


@pytest.mark.slow
def test_fragment_remasking_leads_the_ablation(remask_denoiser, toy_corpus):
    lengths = LengthModel.from_fragment_spans(parse(s) for s in toy_corpus)
    arms = (OptimizerMode.ATTACH_ONLY, OptimizerMode.TOKEN_REMASK, OptimizerMode.FRAGMENT_REMASK)
    mean_auc = {}
    for mode in arms:
        aucs = []
        for seed in range(5):
            config = OptimizerConfig(V=100, G=2000, mode=mode, seed=seed)
            result = optimize(make_oracle("composition", 2000), config, remask_denoiser, lengths,
                              seed_corpus=toy_corpus, silent=True)
            aucs.append(result.summary["auc_top10"])
        mean_auc[mode] = float(np.mean(aucs))
    assert mean_auc[OptimizerMode.ATTACH_ONLY] < mean_auc[OptimizerMode.FRAGMENT_REMASK]
    assert mean_auc[OptimizerMode.FRAGMENT_REMASK] >= mean_auc[OptimizerMode.TOKEN_REMASK]

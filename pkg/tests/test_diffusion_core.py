import numpy as np
import pytest

from Denoiser.denoiser_contract import UniformDenoiser
from Denoiser.oracle_denoiser import OracleDenoiser
from Diffusion.diffusion_core import (forward_mask, nelbo, rate_matrix_step, reverse_step, reverse_step_dist,
                                      sample_categorical, stratified_times)
from Diffusion.diffusion_dataclass import DenoiserOutput, SeqState
from Diffusion.noise_schedule import CosineSchedule, InvalidTime, LogLinearSchedule
from SafeGrammar.token_table import DEFAULT_TABLE
from tests.conftest import SMALL_CORPUS

T = DEFAULT_TABLE
C, N, O = T.id_of("C"), T.id_of("N"), T.id_of("O")


def _random_case(rng, L=6, mask_frac=0.5):
    probs = rng.dirichlet(np.ones(T.K), size=L)
    clean = rng.integers(0, T.pad_id, size=L)
    ids = np.where(rng.random(L) < mask_frac, T.mask_id, clean)
    return ids, probs


def test_schedules_hit_endpoints():
    for sched in (LogLinearSchedule(0.0), CosineSchedule()):
        assert sched.alpha(0.0) == 1.0
        assert sched.alpha(1.0) <= 1e-6
        ts = np.linspace(0, 1, 101)
        assert np.all(np.diff(sched.alpha(ts)) < 0)
    assert LogLinearSchedule().alpha(1.0) == pytest.approx(1e-4)
    assert LogLinearSchedule().weight(0.25) == pytest.approx(-4.0)


def test_forward_mask_endpoints(rng):
    x = np.array([C, N, O, C, T.pad_id])
    sched = LogLinearSchedule(eps=0.0)
    assert np.array_equal(forward_mask(x, 0.0, sched, rng).ids, x)
    z = forward_mask(x, 1.0, sched, rng)
    assert np.all(z.ids[:4] == T.mask_id)
    assert z.ids[4] == T.pad_id


def test_forward_mask_keep_rate(rng):
    sched = LogLinearSchedule(eps=0.0)
    x = np.full(10, C)
    kept = np.stack([forward_mask(x, 0.3, sched, rng).ids != T.mask_id for _ in range(10_000)])
    assert kept.mean() == pytest.approx(0.7, abs=0.01)
    assert np.all(np.abs(kept.mean(axis=0) - 0.7) < 0.02)


@pytest.mark.parametrize("t", [-0.1, 1.5])
def test_forward_mask_rejects_bad_time(rng, t):
    with pytest.raises(InvalidTime):
        forward_mask([C], t, LogLinearSchedule(), rng)


def test_reverse_step_hand_example():
    sched = LogLinearSchedule(eps=0.0)
    probs = np.zeros((2, T.K))
    probs[:, C] = 1.0
    z = SeqState([T.mask_id, O], t=0.75)
    dist = reverse_step_dist(z, probs, 0.5, sched)
    assert dist[0, C] == pytest.approx(1 / 3)
    assert dist[0, T.mask_id] == pytest.approx(2 / 3)
    assert dist[1, O] == 1.0
    assert dist[1].sum() == 1.0


def test_reverse_step_rows_normalized(rng):
    sched = LogLinearSchedule()
    for _ in range(50):
        ids, probs = _random_case(rng)
        t = rng.uniform(0.01, 1.0)
        s = rng.uniform(0.0, t)
        dist = reverse_step_dist(SeqState(ids, t), probs, s, sched)
        assert np.allclose(dist.sum(axis=1), 1.0, atol=1e-12)


def test_reverse_step_requires_s_before_t():
    with pytest.raises(InvalidTime):
        reverse_step_dist(SeqState([T.mask_id], 0.5), np.full((1, T.K), 1 / T.K), 0.5, LogLinearSchedule())


def test_reverse_step_to_zero_unmasks_everything(rng):
    sched = LogLinearSchedule(eps=0.0)
    probs = np.full((4, T.K), 1.0 / (T.K - 2))
    probs[:, [T.mask_id, T.pad_id]] = 0.0
    z = reverse_step(SeqState([T.mask_id] * 4, 1.0), probs, 0.0, sched, rng)
    assert not np.any(z.ids == T.mask_id)


def test_sample_categorical_skips_zero_mass(rng):
    probs = np.zeros((1000, 4))
    probs[:, 2] = 1.0
    assert np.all(sample_categorical(probs, rng) == 2)


def test_stratified_times_cover_strata(rng):
    times = np.sort(stratified_times(8, rng))
    assert np.all((times >= np.arange(8) / 8 - 1e-12) & (times <= (np.arange(8) + 1) / 8))


def test_nelbo_zero_for_perfect_denoiser(rng):
    x = T.tokenize("CCO")
    perfect = OracleDenoiser([(x, 1.0)])
    assert nelbo(x, perfect, LogLinearSchedule(), 200, rng) == pytest.approx(0.0, abs=1e-12)


def test_nelbo_uniform_single_token_is_log_k():
    sched = LogLinearSchedule(eps=0.0)
    uniform = UniformDenoiser()
    log_k = np.log(T.K - 2)
    # at t = 1 the single position is always masked and weighted by 1
    assert nelbo([C], uniform, sched, 1, np.random.default_rng(0), times=np.ones(10)) == pytest.approx(log_k)
    # masking probability t cancels the 1/t weight at every time
    times = np.linspace(0.5, 1.0, 20_000)
    estimate = nelbo([C], uniform, sched, 1, np.random.default_rng(0), times=times)
    assert estimate == pytest.approx(log_k, rel=0.03)


@pytest.mark.parametrize("seed", range(10))
def test_oracle_beats_uniform(seed, small_oracle):
    corpus = np.array([T.tokenize(s) for s in SMALL_CORPUS])
    sched = LogLinearSchedule()
    oracle_loss = nelbo(corpus, small_oracle, sched, 20, np.random.default_rng(seed))
    uniform_loss = nelbo(corpus, UniformDenoiser(), sched, 20, np.random.default_rng(seed))
    assert oracle_loss <= uniform_loss


def test_nelbo_deterministic_per_seed(small_oracle):
    x = T.tokenize("CCO")
    a = nelbo(x, small_oracle, LogLinearSchedule(), 50, np.random.default_rng(3))
    b = nelbo(x, small_oracle, LogLinearSchedule(), 50, np.random.default_rng(3))
    assert a == b


def test_rate_step_identity_on_unmasked():
    probs = np.full((2, T.K), 1.0 / T.K)
    out = rate_matrix_step(SeqState([C, T.mask_id], 0.5), probs, 0.5, 1e-3, LogLinearSchedule())
    assert out[0, C] == 1.0 and out[0].sum() == 1.0


@pytest.mark.parametrize("dt", [1e-3, 1e-4])
def test_rate_step_matches_reverse_step_linear(rng, dt):
    sched = LogLinearSchedule()
    for _ in range(100):
        ids, probs = _random_case(rng)
        t = rng.uniform(dt, 1.0)
        z = SeqState(ids, t)
        ctmc = rate_matrix_step(z, probs, t, dt, sched)
        exact = reverse_step_dist(z, probs, t - dt, sched)
        assert np.max(np.abs(ctmc - exact)) <= 10 * dt ** 2


@pytest.mark.parametrize("dt", [1e-3, 1e-4])
def test_rate_step_matches_reverse_step_cosine(rng, dt):
    sched = CosineSchedule()
    for _ in range(100):
        ids, probs = _random_case(rng)
        t = rng.uniform(0.5, 1.0)
        z = SeqState(ids, t)
        gap = np.max(np.abs(rate_matrix_step(z, probs, t, dt, sched) - reverse_step_dist(z, probs, t - dt, sched)))
        assert gap <= 10 * dt ** 2


def test_rate_step_unmask_mass(rng):
    sched = CosineSchedule()
    ids, probs = _random_case(rng, L=8, mask_frac=1.0)
    probs[:, T.mask_id] = 0.0
    probs /= probs.sum(axis=1, keepdims=True)
    t, dt = 0.7, 5e-4
    out = rate_matrix_step(SeqState(ids, t), DenoiserOutput(probs, np.log(probs + 1e-300)), t, dt, sched)
    expected = dt * -float(sched.alpha_prime(t)) / (1 - float(sched.alpha(t)))
    moved = out[:, :T.mask_id].sum(axis=1)
    assert np.allclose(moved, expected, rtol=1e-12, atol=0.0)


@pytest.mark.parametrize("t, dt", [(0.5, 2e-3), (1e-4, 1e-3), (1.2, 1e-4), (0.5, 0.0)])
def test_rate_step_rejects_bad_steps(t, dt):
    with pytest.raises(InvalidTime):
        rate_matrix_step(SeqState([T.mask_id], min(t, 1.0)), np.full((1, T.K), 1 / T.K), t, dt, LogLinearSchedule())

from pathlib import Path

import numpy as np
import pytest

from Denoiser.oracle_denoiser import OracleDenoiser
from Denoiser.trainer import TrainConfig, safe_corpus, train
from SafeGrammar.safe_parser import read_corpus
from SafeGrammar.token_table import DEFAULT_TABLE

TOY_CORPUS_PATH = Path(__file__).resolve().parent.parent / "data" / "toy_corpus.txt"
TOY_TRAIN_STEPS = 2000

# two-token exchangeable corpus used throughout: {AB, BA}
AB_CORPUS = {"CN": 0.5, "NC": 0.5}

SMALL_CORPUS = {"CCO": 0.3, "CNC": 0.2, "OCC": 0.1, "C#N": 0.25, "NCO": 0.15}

TOY_MOLECULES = [
    "CCO", "CCN", "CCCO", "CC(C)O", "CC(=O)O", "CNC", "COC", "CC=O", "C1CC1", "C1CC1O",
    "C1CCC1", "CC(C)N", "NCCO", "OCCO", "CCOC", "CCNC", "FCC", "FC(F)C", "CC#N", "C=CC",
    "C1CC1N", "CC(N)O", "CCCN", "OC1CC1", "NC(=O)C", "CN(C)C", "C1COC1", "CCC(=O)O", "OCC(O)C", "C1CNC1",
    "CC(F)(F)F", "C=CCO", "N#CCO", "CC1CC1", "CCCC", "CC(C)(C)C", "OC(=O)CN", "C1CCOC1", "FCCO", "CCOCC",
    "CNCCO", "CC(=O)N", "C1CC(O)C1", "NCCN", "OCCN", "CC=CC", "CC(O)C(=O)O", "COCCO", "CN", "CO",
]


@pytest.fixture
def table():
    return DEFAULT_TABLE


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ab_oracle():
    return OracleDenoiser.from_strings(AB_CORPUS)


@pytest.fixture
def small_oracle():
    return OracleDenoiser.from_strings(SMALL_CORPUS)


@pytest.fixture
def toy_corpus_ids():
    return [DEFAULT_TABLE.tokenize(s) for s in TOY_MOLECULES]


@pytest.fixture(scope="session")
def toy_corpus():
    return read_corpus(TOY_CORPUS_PATH)


@pytest.fixture(scope="session")
def trained_denoiser(toy_corpus):
    """TinyDenoiser trained on the toy corpus as written."""
    ckpt, _ = train([DEFAULT_TABLE.tokenize(s) for s in toy_corpus], TrainConfig(steps=TOY_TRAIN_STEPS),
                    silent=True)
    return ckpt.to_model()


@pytest.fixture(scope="session")
def remask_denoiser(toy_corpus):
    """TinyDenoiser trained on fragment-per-block renderings of the toy corpus, rows shifted."""
    ckpt, _ = train(safe_corpus(toy_corpus, views=4), TrainConfig(steps=TOY_TRAIN_STEPS, shift=0.5), silent=True)
    return ckpt.to_model()

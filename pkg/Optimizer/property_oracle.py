"""Budgeted property oracles and the toy objectives used for desk-scale optimization."""
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from Metrics.fingerprint import fingerprint, fingerprint_of, tanimoto_similarity
from Metrics.pseudo_properties import heteroatom_fraction, hump
from SafeGrammar.canonical import canonicalize
from SafeGrammar.mol_dataclass import MAX_VALENCE, MolGraph

DEFAULT_REFERENCE = "OCC1CCC(N)CC1CCO"
DEFAULT_COMPOSITION = {"C": 7, "N": 1, "O": 2}

Scorer = Callable[[MolGraph], float]


class BudgetExhausted(RuntimeError):
    def __init__(self, message: str, history: Optional[List[Tuple[int, float]]] = None):
        super().__init__(message)
        self.history = list(history or [])


class PropertyOracle:
    """Scores molecules in [0, 1] under a call budget.

    Repeat molecules (same canonical key) are answered from the cache and do not count
    against the budget.
    """

    def __init__(self, name: str, scorer: Scorer, budget: int):
        if budget < 1:
            raise ValueError(f"oracle budget {budget} must be at least 1")
        self.name = name
        self.scorer = scorer
        self.budget = budget
        self.calls = 0
        self.history: List[Tuple[int, float]] = []
        self._cache: Dict[str, float] = {}

    @property
    def remaining(self) -> int:
        return self.budget - self.calls

    def cached(self, key: str) -> Optional[float]:
        return self._cache.get(key)

    def score(self, g: MolGraph, key: Optional[str] = None) -> float:
        key = key or canonicalize(g)
        if key in self._cache:
            return self._cache[key]
        if self.calls >= self.budget:
            raise BudgetExhausted(f"oracle {self.name} used all {self.budget} calls", self.history)
        value = float(np.clip(self.scorer(g), 0.0, 1.0))
        self.calls += 1
        self.history.append((self.calls, value))
        self._cache[key] = value
        return value

    def scores(self) -> List[float]:
        return [value for _, value in self.history]


def target_similarity(reference: str = DEFAULT_REFERENCE) -> Scorer:
    ref = fingerprint_of(reference)

    def scorer(g: MolGraph) -> float:
        return tanimoto_similarity(fingerprint(g), ref)
    return scorer


def composition(target: Mapping[str, int] = DEFAULT_COMPOSITION, scale: float = 2.0) -> Scorer:
    """exp(-|counts - target|_1 / scale) over the element alphabet."""
    unknown = set(target) - set(MAX_VALENCE)
    if unknown:
        raise ValueError(f"unknown elements in composition target: {sorted(unknown)}")

    def scorer(g: MolGraph) -> float:
        counts = g.element_counts()
        gap = sum(abs(counts.get(element, 0) - target.get(element, 0)) for element in MAX_VALENCE)
        return float(np.exp(-gap / scale))
    return scorer


def hetero_ring(center: float = 0.3, width: float = 0.15) -> Scorer:
    def scorer(g: MolGraph) -> float:
        return 0.7 * hump(heteroatom_fraction(g), center, width) + 0.15 * min(g.ring_count(), 2)
    return scorer


def constant(value: float = 1.0) -> Scorer:
    def scorer(g: MolGraph) -> float:
        return value
    return scorer


ORACLES: Dict[str, Callable[..., Scorer]] = {
    "target_similarity": target_similarity,
    "composition": composition,
    "hetero_ring": hetero_ring,
    "constant": constant,
}


def make_oracle(name: str, budget: int, **kwargs) -> PropertyOracle:
    if name not in ORACLES:
        raise ValueError(f"unknown oracle {name!r}; choose from {sorted(ORACLES)}")
    return PropertyOracle(name, ORACLES[name](**kwargs), budget)

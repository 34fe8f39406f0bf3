from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np

from SafeGrammar.fragment_algebra import CutRule, fragment_sequence, fragment_spans
from SafeGrammar.mol_dataclass import MolGraph
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable


@dataclass(frozen=True)
class LengthModel:
    """Empirical length histogram; ``lengths`` ascending, ``probs`` summing to one."""
    lengths: tuple
    probs: tuple

    def __post_init__(self):
        if not self.lengths:
            raise ValueError("length histogram is empty")
        if len(self.lengths) != len(self.probs):
            raise ValueError("lengths and probabilities differ in size")
        if min(self.lengths) < 1:
            raise ValueError("lengths must be at least 1")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"length probabilities sum to {sum(self.probs)}")

    @classmethod
    def from_histogram(cls, histogram: Mapping[int, float]) -> "LengthModel":
        items = sorted((int(k), float(v)) for k, v in histogram.items() if v > 0)
        if not items:
            raise ValueError("length histogram is empty")
        total = sum(v for _, v in items)
        return cls(tuple(k for k, _ in items), tuple(v / total for _, v in items))

    @classmethod
    def from_lengths(cls, lengths: Iterable[int]) -> "LengthModel":
        return cls.from_histogram(Counter(int(n) for n in lengths))

    @classmethod
    def from_corpus(cls, sequences: Iterable[Sequence[int]], table: TokenTable = DEFAULT_TABLE) -> "LengthModel":
        """Token lengths of the corpus sequences, pads excluded."""
        return cls.from_lengths(sum(1 for tok in seq if tok != table.pad_id) for seq in sequences)

    @classmethod
    def from_fragment_spans(cls, graphs: Iterable[MolGraph], table: TokenTable = DEFAULT_TABLE) -> "LengthModel":
        """Token-span lengths of every fragment when each molecule is cut at all non-ring single bonds."""
        lengths = []
        for g in graphs:
            ids = table.tokenize(fragment_sequence(g, CutRule.R_REMASK))
            lengths.extend(end - start for start, end in fragment_spans(ids, table))
        return cls.from_lengths(lengths)

    @property
    def max_length(self) -> int:
        return self.lengths[-1]

    def sample(self, rng: np.random.Generator, minimum: int = 1) -> int:
        """One length; ``minimum`` conditions the histogram on lengths at or above it."""
        if minimum <= self.lengths[0]:
            return int(rng.choice(self.lengths, p=self.probs))
        tail = [(n, p) for n, p in zip(self.lengths, self.probs) if n >= minimum]
        if not tail:
            return minimum
        probs = np.array([p for _, p in tail])
        return int(rng.choice([n for n, _ in tail], p=probs / probs.sum()))

    def to_dict(self) -> Dict[str, float]:
        return {str(k): v for k, v in zip(self.lengths, self.probs)}


def sample_length(model: LengthModel, rng: np.random.Generator) -> int:
    return model.sample(rng)

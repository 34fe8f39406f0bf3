import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from SafeGrammar.fragment_algebra import CutRule, decompose
from SafeGrammar.mol_dataclass import Fragment, MolGraph
from SafeGrammar.safe_parser import parse


class EmptyVocabulary(ValueError):
    pass


@dataclass
class VocabEntry:
    fragment: Fragment
    contributions: List[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.contributions)

    @property
    def score(self) -> float:
        # fsum is exact up to the final rounding, so any update order gives the same mean
        return math.fsum(self.contributions) / self.count


class FragmentVocab:
    """Fragments scored by the mean score of the molecules that contained them, capped at the top V.

    Ranking is score, then contribution count, then canonical key. Fragments with no open
    attachment, or more than ``max_attachments``, are never admitted.
    """

    def __init__(self, capacity: Optional[int] = None, max_attachments: Optional[int] = 1):
        if capacity is not None and capacity < 1:
            raise ValueError(f"vocabulary capacity {capacity} must be at least 1")
        self.capacity = capacity
        self.max_attachments = max_attachments
        self.entries: Dict[str, VocabEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def admits(self, fragment: Fragment) -> bool:
        n = fragment.n_attachments
        return n >= 1 and (self.max_attachments is None or n <= self.max_attachments)

    def update(self, fragments: Iterable[Fragment], score: float) -> List[str]:
        """Credit one molecule's score to each distinct admitted fragment, then re-top to capacity."""
        seen = {}
        for fragment in fragments:
            if self.admits(fragment):
                seen.setdefault(fragment.canonical_key, fragment)
        for key, fragment in seen.items():
            entry = self.entries.setdefault(key, VocabEntry(fragment))
            entry.contributions.append(float(score))
        self._trim()
        return sorted(seen)

    def ranked(self) -> List[Tuple[str, VocabEntry]]:
        return sorted(self.entries.items(), key=lambda item: (-item[1].score, -item[1].count, item[0]))

    def _trim(self):
        if self.capacity is not None and len(self.entries) > self.capacity:
            self.entries = dict(self.ranked()[:self.capacity])

    def score_of(self, key: str) -> float:
        return self.entries[key].score

    def fragments(self) -> List[Fragment]:
        return [entry.fragment for _, entry in self.ranked()]

    def sample_pair(self, rng: np.random.Generator) -> Tuple[Fragment, Fragment]:
        """Two fragments drawn uniformly and independently."""
        if not self.entries:
            raise EmptyVocabulary("fragment vocabulary is empty")
        frags = self.fragments()
        i, j = rng.integers(len(frags), size=2)
        return frags[int(i)], frags[int(j)]

    def to_rows(self) -> List[dict]:
        return [{"canonical": key, "fragment": entry.fragment.text, "score": entry.score, "count": entry.count}
                for key, entry in self.ranked()]


def build_vocab(corpus_with_scores: Sequence[Tuple[Union[str, MolGraph], float]], V: Optional[int],
                rng: np.random.Generator, max_attachments: Optional[int] = 1) -> FragmentVocab:
    """Decompose each scored molecule with three random non-ring single-bond cuts and pool the fragments."""
    vocab = FragmentVocab(V, max_attachments)
    for molecule, score in corpus_with_scores:
        g = parse(molecule) if isinstance(molecule, str) else molecule
        vocab.update(decompose(g, CutRule.R_VOCAB, rng), score)
    if not vocab.entries:
        raise EmptyVocabulary("no corpus molecule decomposed into an open fragment")
    return vocab

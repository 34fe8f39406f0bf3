from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from Denoiser.denoiser_contract import NEG_LOGIT
from Diffusion.diffusion_dataclass import DenoiserOutput, SeqState
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable


class LengthMismatch(ValueError):
    pass


class OracleDenoiser:
    """Exact posterior over clean tokens for an enumerable weighted corpus.

    Sequences are grouped by length; a query uses the group matching its length and
    conditions on every unmasked position.
    """

    def __init__(self, corpus: Sequence[Tuple[Sequence[int], float]], table: TokenTable = DEFAULT_TABLE):
        if not corpus:
            raise ValueError("oracle corpus is empty")
        self.table = table
        total = float(sum(w for _, w in corpus))
        if total <= 0:
            raise ValueError("oracle corpus weights must sum to a positive value")

        grouped: Dict[int, list] = {}
        for ids, w in corpus:
            ids = np.asarray(ids, dtype=np.int64)
            if np.any(ids == table.mask_id):
                raise ValueError("oracle corpus sequences must be mask-free")
            grouped.setdefault(len(ids), []).append((ids, w / total))
        self.groups = {L: (np.stack([ids for ids, _ in rows]), np.array([w for _, w in rows]))
                       for L, rows in grouped.items()}

    @classmethod
    def from_strings(cls, weighted: Mapping[str, float], table: TokenTable = DEFAULT_TABLE) -> "OracleDenoiser":
        return cls([(table.tokenize(s), w) for s, w in weighted.items()], table)

    def distribution(self) -> Dict[Tuple[int, ...], float]:
        dist: Dict[Tuple[int, ...], float] = {}
        for seqs, weights in self.groups.values():
            for ids, w in zip(seqs, weights):
                key = tuple(int(i) for i in ids)
                dist[key] = dist.get(key, 0.0) + float(w)
        return dist

    def predict(self, state: SeqState) -> DenoiserOutput:
        if state.L not in self.groups:
            raise LengthMismatch(f"no corpus sequence of length {state.L}")
        seqs, weights = self.groups[state.L]
        known = ~state.masked(self.table.mask_id)
        consistent = np.all(seqs[:, known] == state.ids[known], axis=1)
        w = weights * consistent
        if w.sum() <= 0:
            # nothing matches: fall back to position-wise corpus marginals
            w = weights

        probs = np.zeros((state.L, self.table.K))
        rows = np.broadcast_to(np.arange(state.L), seqs.shape)
        np.add.at(probs, (rows, seqs), np.broadcast_to(w[:, None], seqs.shape))
        probs /= probs.sum(axis=1, keepdims=True)
        logits = np.full_like(probs, NEG_LOGIT)
        support = probs > 0
        logits[support] = np.log(probs[support])
        return DenoiserOutput.from_logits(logits)

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from Metrics.fingerprint import fingerprint, pairwise_distances, tanimoto_distance
from Metrics.pseudo_properties import QED_MIN, SA_MAX, pseudo_qed, pseudo_sa
from SafeGrammar.canonical import canonicalize
from SafeGrammar.safe_parser import check_sequence


@dataclass(frozen=True)
class SetMetrics:
    validity: float
    uniqueness: float
    diversity: float
    quality: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def _unique_valid(molecules: Sequence[str]):
    """(number valid, first graph per canonical key in input order)."""
    n_valid = 0
    unique = {}
    for seq in molecules:
        g, report = check_sequence(seq)
        if not report.valid:
            continue
        n_valid += 1
        unique.setdefault(canonicalize(g), g)
    return n_valid, unique


def set_metrics(molecules: Sequence[str]) -> SetMetrics:
    """Validity, uniqueness, diversity and quality of a generated set.

    Uniqueness is relative to the valid molecules; diversity averages over pairs of distinct
    valid molecules; quality counts each valid unique molecule passing both property
    thresholds, as a fraction of the whole set.
    """
    n = len(molecules)
    if n == 0:
        raise ValueError("cannot score an empty set of molecules")
    n_valid, unique = _unique_valid(molecules)
    if n_valid == 0:
        return SetMetrics(0.0, 0.0, 0.0, 0.0, n)

    graphs = [unique[key] for key in sorted(unique)]
    diversity = 0.0
    if len(graphs) > 1:
        dist = pairwise_distances([fingerprint(g) for g in graphs])
        diversity = float(dist[np.triu_indices(len(graphs), k=1)].mean())
    good = sum(1 for g in graphs if pseudo_qed(g) >= QED_MIN and pseudo_sa(g) <= SA_MAX)
    return SetMetrics(validity=n_valid / n, uniqueness=len(unique) / n_valid, diversity=diversity,
                      quality=good / n, n=n)


def distance(reference: str, molecules: Sequence[str]) -> Optional[float]:
    """Mean Tanimoto distance from ``reference`` to each valid molecule; None if none are valid."""
    ref_graph, report = check_sequence(reference)
    if not report.valid:
        raise ValueError(f"reference molecule {reference!r} is invalid: {report.failure.value}")
    ref = fingerprint(ref_graph)
    dists = []
    for seq in molecules:
        g, report = check_sequence(seq)
        if report.valid:
            dists.append(tanimoto_distance(ref, fingerprint(g)))
    return float(np.mean(dists)) if dists else None


def per_molecule_rows(molecules: Sequence[str]) -> List[Dict[str, object]]:
    rows = []
    for seq in molecules:
        g, report = check_sequence(seq)
        row = {"sequence": seq, "valid": report.valid,
               "failure": report.failure.value if report.failure else "",
               "canonical": "", "pseudo_qed": "", "pseudo_sa": ""}
        if report.valid:
            row.update(canonical=canonicalize(g), pseudo_qed=round(pseudo_qed(g), 6), pseudo_sa=round(pseudo_sa(g), 6))
        rows.append(row)
    return rows

"""Hashed linear-path fingerprints and Tanimoto similarity."""
import hashlib
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np

from SafeGrammar.mol_dataclass import MolGraph
from SafeGrammar.safe_parser import parse

FP_BITS = 1024
MAX_PATH_ATOMS = 4


@dataclass(frozen=True)
class Fingerprint:
    bits: FrozenSet[int]
    n_bits: int = FP_BITS

    def __len__(self) -> int:
        return len(self.bits)

    def to_array(self) -> np.ndarray:
        out = np.zeros(self.n_bits, dtype=bool)
        out[list(self.bits)] = True
        return out


def _atom_label(g: MolGraph, idx: int) -> str:
    atom = g.atoms[idx]
    return atom.element.lower() if atom.aromatic else atom.element


def linear_paths(g: MolGraph, max_atoms: int = MAX_PATH_ATOMS) -> List[Tuple[int, ...]]:
    """Every simple path of 1..max_atoms atoms, each listed once per direction."""
    adj = g.adjacency()
    paths = []

    def extend(path: Tuple[int, ...]):
        paths.append(path)
        if len(path) == max_atoms:
            return
        for nb, _ in adj[path[-1]]:
            if nb not in path:
                extend(path + (nb,))

    for start in range(g.n_atoms):
        extend((start,))
    return paths


def _bond_orders(g: MolGraph) -> Dict[Tuple[int, int], int]:
    orders = {}
    for bond in g.bonds:
        orders[(bond.i, bond.j)] = orders[(bond.j, bond.i)] = bond.order
    return orders


def _path_key(g: MolGraph, path: Sequence[int], bond_at: Dict[Tuple[int, int], int]) -> str:
    parts = [_atom_label(g, path[0])]
    for a, b in zip(path, path[1:]):
        parts.extend((str(bond_at[(a, b)]), _atom_label(g, b)))
    forward = "-".join(parts)
    backward = "-".join(reversed(parts))
    return min(forward, backward)


def fingerprint(g: MolGraph, n_bits: int = FP_BITS) -> Fingerprint:
    bond_at = _bond_orders(g)
    bits = set()
    for path in linear_paths(g):
        digest = hashlib.blake2b(_path_key(g, path, bond_at).encode("utf-8"), digest_size=8).digest()
        bits.add(int.from_bytes(digest, "little") % n_bits)
    return Fingerprint(frozenset(bits), n_bits)


def fingerprint_of(text: str) -> Fingerprint:
    return fingerprint(parse(text))


def tanimoto_similarity(a: Fingerprint, b: Fingerprint) -> float:
    union = len(a.bits | b.bits)
    if union == 0:
        return 1.0
    return len(a.bits & b.bits) / union


def tanimoto_distance(a: Fingerprint, b: Fingerprint) -> float:
    return 1.0 - tanimoto_similarity(a, b)


def pairwise_distances(fps: Sequence[Fingerprint]) -> np.ndarray:
    """Dense Tanimoto distance matrix; empty-vs-empty pairs count as identical."""
    if not fps:
        return np.zeros((0, 0))
    bits = np.stack([fp.to_array() for fp in fps]).astype(np.float64)
    inter = bits @ bits.T
    counts = bits.sum(axis=1)
    union = counts[:, None] + counts[None, :] - inter
    sim = np.divide(inter, union, out=np.ones_like(inter), where=union > 0)
    return 1.0 - sim

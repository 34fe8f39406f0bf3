"""Cheap stand-ins for drug-likeness (pseudo_qed, in [0, 1]) and synthesizability (pseudo_sa, in [1, 10]).

They keep the threshold semantics of QED >= 0.6 and SA <= 4 without a chemistry toolkit;
absolute values are not comparable to the real scores.
"""
import numpy as np

from SafeGrammar.mol_dataclass import HETEROATOMS, MolGraph

QED_MIN = 0.6
SA_MAX = 4.0

ATOM_CENTER, ATOM_WIDTH = 12.0, 8.0
HETERO_CENTER, HETERO_WIDTH = 0.25, 0.2
RING_CENTER, RING_WIDTH = 1.0, 1.5

SIZE_PENALTY_PER_ATOM = 0.05


def hump(value: float, center: float, width: float) -> float:
    return float(np.exp(-((value - center) / width) ** 2))


def heteroatom_fraction(g: MolGraph) -> float:
    if not g.atoms:
        return 0.0
    return sum(1 for atom in g.atoms if atom.element in HETEROATOMS) / g.n_atoms


def pseudo_qed(g: MolGraph) -> float:
    return (hump(g.n_atoms, ATOM_CENTER, ATOM_WIDTH)
            * hump(heteroatom_fraction(g), HETERO_CENTER, HETERO_WIDTH)
            * hump(g.ring_count(), RING_CENTER, RING_WIDTH))


def branching_excess(g: MolGraph) -> float:
    """Mean over atoms of the degree above two."""
    if not g.atoms:
        return 0.0
    adj = g.adjacency()
    return sum(max(0, len(nbs) - 2) for nbs in adj) / g.n_atoms


def ring_systems(g: MolGraph) -> int:
    """Connected groups of ring bonds."""
    parent = list(range(g.n_atoms))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    ring_atoms = set()
    for b_idx in g.ring_bonds:
        bond = g.bonds[b_idx]
        ring_atoms.update((bond.i, bond.j))
        parent[find(bond.i)] = find(bond.j)
    return len({find(a) for a in ring_atoms})


def ring_fusions(g: MolGraph) -> int:
    # rings beyond one per ring system are fused, bridged or spiro
    return max(0, g.ring_count() - ring_systems(g))


def pseudo_sa(g: MolGraph) -> float:
    score = 1.0 + 3.0 * branching_excess(g) + 2.0 * ring_fusions(g) + SIZE_PENALTY_PER_ATOM * g.n_atoms
    return float(min(10.0, max(1.0, score)))


def is_drug_like(g: MolGraph) -> bool:
    return pseudo_qed(g) >= QED_MIN and pseudo_sa(g) <= SA_MAX

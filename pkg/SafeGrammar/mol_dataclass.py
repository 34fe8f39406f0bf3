from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple

MAX_VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1}
HETEROATOMS = frozenset({"N", "O", "F"})


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: int = 1

    def other(self, atom: int) -> int:
        return self.j if atom == self.i else self.i


@dataclass(frozen=True)
class Attachment:
    atom: int
    digit: int
    order: int = 1


@dataclass
class MolGraph:
    atoms: List[Atom] = field(default_factory=list)
    bonds: List[Bond] = field(default_factory=list)
    ring_bonds: FrozenSet[int] = frozenset()
    attachments: List[Attachment] = field(default_factory=list)
    blocks: List[int] = field(default_factory=list)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def is_closed(self) -> bool:
        return not self.attachments

    def adjacency(self) -> List[List[Tuple[int, int]]]:
        """Per atom, the list of (neighbour, bond index)."""
        adj: List[List[Tuple[int, int]]] = [[] for _ in self.atoms]
        for b_idx, bond in enumerate(self.bonds):
            adj[bond.i].append((bond.j, b_idx))
            adj[bond.j].append((bond.i, b_idx))
        return adj

    def degree(self, atom: int) -> int:
        return sum(1 for bond in self.bonds if atom in (bond.i, bond.j))

    def valence(self, atom: int) -> int:
        used = sum(bond.order for bond in self.bonds if atom in (bond.i, bond.j))
        return used + sum(att.order for att in self.attachments if att.atom == atom)

    def attachments_at(self, atom: int) -> List[int]:
        return [k for k, att in enumerate(self.attachments) if att.atom == atom]

    def components(self) -> List[List[int]]:
        """Connected components over real bonds, each sorted, ordered by smallest atom."""
        adj = self.adjacency()
        seen = [False] * self.n_atoms
        comps = []
        for root in range(self.n_atoms):
            if seen[root]:
                continue
            stack, comp = [root], []
            seen[root] = True
            while stack:
                a = stack.pop()
                comp.append(a)
                for nb, _ in adj[a]:
                    if not seen[nb]:
                        seen[nb] = True
                        stack.append(nb)
            comps.append(sorted(comp))
        return comps

    def element_counts(self) -> Dict[str, int]:
        counts = {element: 0 for element in MAX_VALENCE}
        for atom in self.atoms:
            counts[atom.element] = counts.get(atom.element, 0) + 1
        return counts

    def ring_count(self) -> int:
        # cyclomatic number
        return len(self.bonds) - self.n_atoms + len(self.components()) if self.atoms else 0


class FailureKind(str, Enum):
    SYNTAX_ERROR = "SyntaxError"
    UNMATCHED_CLOSURE = "UnmatchedClosure"
    VALENCE_VIOLATION = "ValenceViolation"
    EMPTY_SEQUENCE = "EmptySequence"
    DISCONNECTED = "Disconnected"


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    failure: Optional[FailureKind] = None
    detail: str = ""

    def __post_init__(self):
        if self.valid != (self.failure is None):
            raise ValueError("a report is valid exactly when it carries no failure")

    @classmethod
    def ok(cls) -> "ValidityReport":
        return cls(True)

    @classmethod
    def failed(cls, failure: FailureKind, detail: str = "") -> "ValidityReport":
        return cls(False, failure, detail)


@dataclass(frozen=True)
class Fragment:
    # identity is the canonical key; digits in token_span are arbitrary labels
    canonical_key: str
    graph: MolGraph = field(compare=False)
    token_span: Tuple[str, ...] = field(compare=False)

    @property
    def text(self) -> str:
        return "".join(self.token_span)

    @property
    def n_attachments(self) -> int:
        return len(self.graph.attachments)

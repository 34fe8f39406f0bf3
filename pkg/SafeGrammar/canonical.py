"""Canonical keys and serialization for MolGraphs.

Atoms are ranked by (element, degree, neighbourhood hash) after a few rounds of hash
refinement. Every depth-first traversal that starts at a minimal-rank atom and only
permutes the visiting order of equally ranked neighbours is rendered, and the smallest
string wins. Open attachments render as ``*`` in keys so their digit labels never
affect identity.

Acyclic components skip the enumeration: every ordering of a group of equally ranked
children renders to the same length, so the smallest string is built child group by
child group.
"""
import bisect
import functools
import hashlib
import itertools
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

from SafeGrammar.grammar_errors import DigitExhausted
from SafeGrammar.mol_dataclass import MolGraph
from SafeGrammar.token_table import BOND_SYMBOL

HASH_ROUNDS = 3
TRAVERSAL_LIMIT = 20000

Traversal = Tuple[Tuple[int, ...], Dict[int, Optional[int]]]
Visits = List[Tuple[int, Optional[int]]]


def _branch_order(a: Tuple[str, Visits], b: Tuple[str, Visits]) -> int:
    """Orders wrapped branches so their concatenation is the smallest string."""
    ab, ba = f"({a[0]})({b[0]})", f"({b[0]})({a[0]})"
    return (ab > ba) - (ab < ba)


class DigitPool:
    """Lowest-free allocation of the pairing digits 1..9."""

    def __init__(self):
        self._free = list(range(1, 10))

    def allocate(self) -> int:
        if not self._free:
            raise DigitExhausted("more than 9 pairing digits open at once")
        return self._free.pop(0)

    def release(self, digit: int):
        bisect.insort(self._free, digit)


def _digest(*parts: str) -> str:
    return hashlib.blake2b("|".join(parts).encode("utf-8"), digest_size=8).hexdigest()


def atom_hashes(g: MolGraph, rounds: int = HASH_ROUNDS) -> List[str]:
    adj = g.adjacency()
    labels = []
    for idx, atom in enumerate(g.atoms):
        stubs = ",".join(sorted(str(g.attachments[k].order) for k in g.attachments_at(idx)))
        labels.append(_digest(atom.element, str(len(adj[idx])), stubs))
    for _ in range(rounds):
        labels = [_digest(labels[idx], *sorted(f"{g.bonds[b].order}:{labels[nb]}" for nb, b in adj[idx]))
                  for idx in range(g.n_atoms)]
    return labels


def atom_ranks(g: MolGraph) -> List[int]:
    adj = g.adjacency()
    hashes = atom_hashes(g)
    keys = [(atom.element, len(adj[idx]), hashes[idx]) for idx, atom in enumerate(g.atoms)]
    distinct = sorted(set(keys))
    return [distinct.index(key) for key in keys]


class _Walker:
    def __init__(self, g: MolGraph):
        self.g = g
        self.adj = g.adjacency()
        self.ranks = atom_ranks(g)
        self.order_of = {frozenset((b.i, b.j)): b.order for b in g.bonds}
        self._attached = {att.atom for att in g.attachments}

    def _is_leaf(self, atom: int) -> bool:
        return len(self.adj[atom]) == 1 and atom not in self._attached

    def _arrangements(self, atom: int, candidates: List[int]):
        grouped: Dict[Tuple[int, int], List[int]] = {}
        for nb in candidates:
            grouped.setdefault((self.ranks[nb], self.order_of[frozenset((atom, nb))]), []).append(nb)
        options = []
        for key in sorted(grouped):
            members = sorted(grouped[key])
            if len(members) == 1 or all(self._is_leaf(m) for m in members):
                # interchangeable terminal atoms render identically in any order
                options.append([tuple(members)])
            else:
                options.append(list(itertools.permutations(members)))
        for combo in itertools.product(*options):
            yield [nb for group in combo for nb in group]

    def traversals(self, component: Sequence[int], limit: int = TRAVERSAL_LIMIT) -> List[Traversal]:
        found: List[Traversal] = []
        best = min(self.ranks[a] for a in component)
        roots = [a for a in component if self.ranks[a] == best]

        def step(visited: FrozenSet[int], stack: Tuple[Tuple[int, Optional[int]], ...],
                 order: Tuple[int, ...], parent: Dict[int, Optional[int]]):
            if len(found) >= limit:
                return
            while stack and stack[-1][0] in visited:
                stack = stack[:-1]
            if not stack:
                found.append((order, parent))
                return
            atom, par = stack[-1]
            stack = stack[:-1]
            visited = visited | {atom}
            order = order + (atom,)
            parent = {**parent, atom: par}
            fresh = [nb for nb, _ in self.adj[atom] if nb not in visited]
            for arrangement in self._arrangements(atom, fresh):
                step(visited, stack + tuple((nb, atom) for nb in reversed(arrangement)), order, parent)

        for root in roots:
            step(frozenset(), ((root, None),), (), {})
        return found

    def render(self, traversal: Traversal, pool: DigitPool, attachment_label: Callable[[int], str]) -> str:
        order, parent = traversal
        pos = {atom: i for i, atom in enumerate(order)}
        children: Dict[int, List[int]] = {atom: [] for atom in order}
        tree = set()
        for atom in order:
            if parent[atom] is not None:
                children[parent[atom]].append(atom)
                tree.add(frozenset((atom, parent[atom])))
        opens: Dict[int, List[Tuple[int, int]]] = {atom: [] for atom in order}
        closes: Dict[int, List[Tuple[int, int]]] = {atom: [] for atom in order}
        for b_idx, bond in enumerate(self.g.bonds):
            if bond.i not in pos or frozenset((bond.i, bond.j)) in tree:
                continue
            u, v = sorted((bond.i, bond.j), key=pos.get)
            opens[u].append((pos[v], b_idx))
            closes[v].append((pos[u], b_idx))

        ring_digit: Dict[int, int] = {}

        def atom_text(atom: int) -> str:
            parts = [self.g.atoms[atom].element]
            for _, b_idx in sorted(closes[atom]):
                parts.append(str(ring_digit[b_idx]))
                pool.release(ring_digit[b_idx])
            for _, b_idx in sorted(opens[atom]):
                ring_digit[b_idx] = pool.allocate()
                parts.append(BOND_SYMBOL[self.g.bonds[b_idx].order] + str(ring_digit[b_idx]))
            stubs = sorted(self.g.attachments_at(atom), key=lambda k: (self.g.attachments[k].order, k))
            parts.extend(attachment_label(k) for k in stubs)
            return "".join(parts)

        def emit(atom: int) -> str:
            text = atom_text(atom)
            kids = children[atom]
            for kid in kids[:-1]:
                text += "(" + BOND_SYMBOL[self.order_of[frozenset((atom, kid))]] + emit(kid) + ")"
            if kids:
                text += BOND_SYMBOL[self.order_of[frozenset((atom, kids[-1]))]] + emit(kids[-1])
            return text

        return emit(order[0])

    def _key_label(self, k: int) -> str:
        return BOND_SYMBOL[self.g.attachments[k].order] + "*"

    def _is_tree(self, component: Sequence[int]) -> bool:
        members = set(component)
        return sum(1 for b in self.g.bonds if b.i in members) == len(members) - 1

    def _subtree(self, atom: int, par: Optional[int]) -> Tuple[str, Visits]:
        """Smallest key rendering of the branch hanging from ``atom`` and its preorder visits."""
        stubs = sorted(self.g.attachments_at(atom), key=lambda k: (self.g.attachments[k].order, k))
        text = self.g.atoms[atom].element + "".join(self._key_label(k) for k in stubs)
        visits: Visits = [(atom, par)]
        grouped: Dict[Tuple[int, int], List[int]] = {}
        for nb, b_idx in self.adj[atom]:
            if nb != par:
                grouped.setdefault((self.ranks[nb], self.g.bonds[b_idx].order), []).append(nb)
        keys = sorted(grouped)
        wrap = functools.cmp_to_key(_branch_order)
        for n, key in enumerate(keys):
            bond = BOND_SYMBOL[key[1]]
            subs = []
            for nb in sorted(grouped[key]):
                sub_text, sub_visits = self._subtree(nb, atom)
                subs.append((bond + sub_text, sub_visits))
            if n < len(keys) - 1:
                ordered = sorted(subs, key=wrap)
                text += "".join("(" + s + ")" for s, _ in ordered)
            else:
                segments = []
                for last in range(len(subs)):
                    ordered = sorted(subs[:last] + subs[last + 1:], key=wrap) + [subs[last]]
                    segment = "".join("(" + s + ")" for s, _ in ordered[:-1]) + ordered[-1][0]
                    segments.append((segment, ordered))
                segment, ordered = min(segments, key=lambda item: item[0])
                text += segment
            for _, sub_visits in ordered:
                visits.extend(sub_visits)
        return text, visits

    def best(self, component: Sequence[int]) -> Tuple[str, Traversal]:
        if self._is_tree(component):
            low = min(self.ranks[a] for a in component)
            rendered = [self._subtree(root, None) for root in component if self.ranks[root] == low]
            text, visits = min(rendered, key=lambda item: item[0])
            return text, (tuple(a for a, _ in visits), dict(visits))
        keyed = ((self.render(tr, DigitPool(), self._key_label), tr) for tr in self.traversals(component))
        return min(keyed, key=lambda item: item[0])

    def ranked_components(self) -> List[Tuple[str, Traversal]]:
        return sorted((self.best(comp) for comp in self.g.components()), key=lambda item: item[0])


def canonical_components(g: MolGraph) -> List[Tuple[str, Traversal]]:
    """Per component: (canonical key, winning traversal), sorted by key."""
    return _Walker(g).ranked_components() if g.atoms else []


def render_traversal(g: MolGraph, traversal: Traversal, pool: DigitPool,
                     attachment_label: Callable[[int], str]) -> str:
    return _Walker(g).render(traversal, pool, attachment_label)


def canonicalize(g: MolGraph) -> str:
    return ".".join(key for key, _ in canonical_components(g))


def serialize(g: MolGraph) -> str:
    """Canonical string with real digits; open attachments keep their own unpaired digit."""
    if not g.atoms:
        return ""
    walker = _Walker(g)
    pool = DigitPool()

    def open_label(k: int) -> str:
        return BOND_SYMBOL[g.attachments[k].order] + str(pool.allocate())

    return ".".join(walker.render(tr, pool, open_label) for _, tr in walker.ranked_components())

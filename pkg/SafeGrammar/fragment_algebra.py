from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from SafeGrammar.canonical import DigitPool, canonical_components, canonicalize, render_traversal, serialize
from SafeGrammar.grammar_errors import NoAttachmentPoint
from SafeGrammar.mol_dataclass import MAX_VALENCE, Attachment, Bond, Fragment, MolGraph
from SafeGrammar.safe_parser import parse, ring_bond_indices
from SafeGrammar.token_table import BOND_SYMBOL, DEFAULT_TABLE, TokenTable

VOCAB_CUTS = 3


class CutRule(str, Enum):
    R_VOCAB = "R_vocab"
    R_REMASK = "R_remask"


@dataclass
class Piece:
    """A connected subgraph plus, per attachment, the id of its pairing partner (None = stays open)."""
    graph: MolGraph
    pair_ids: List[Optional[Hashable]] = field(default_factory=list)


def cuttable_bonds(g: MolGraph) -> List[int]:
    return [b_idx for b_idx, bond in enumerate(g.bonds) if bond.order == 1 and b_idx not in g.ring_bonds]


def _choose_cuts(g: MolGraph, rule: CutRule, rng: Optional[np.random.Generator]) -> List[int]:
    candidates = cuttable_bonds(g)
    if rule == CutRule.R_REMASK or len(candidates) <= VOCAB_CUTS:
        return candidates
    picks = rng.choice(len(candidates), size=VOCAB_CUTS, replace=False)
    return sorted(candidates[int(p)] for p in picks)


def cut_pieces(g: MolGraph, cuts: Sequence[int]) -> List[Piece]:
    """Remove the given bonds, leaving a paired attachment on both endpoints of each."""
    cut_set = set(cuts)
    kept = [bond for b_idx, bond in enumerate(g.bonds) if b_idx not in cut_set]
    stubs: List[Tuple[Attachment, Optional[Hashable]]] = [(att, None) for att in g.attachments]
    for b_idx in cuts:
        bond = g.bonds[b_idx]
        stubs.append((Attachment(bond.i, 0, bond.order), ("cut", b_idx)))
        stubs.append((Attachment(bond.j, 0, bond.order), ("cut", b_idx)))

    whole = MolGraph(atoms=list(g.atoms), bonds=kept)
    pieces = []
    for comp in whole.components():
        remap = {old: new for new, old in enumerate(comp)}
        bonds = [Bond(remap[b.i], remap[b.j], b.order) for b in kept if b.i in remap]
        own = [(att, pid) for att, pid in stubs if att.atom in remap]
        sub = MolGraph(atoms=[g.atoms[a] for a in comp], bonds=bonds,
                       ring_bonds=ring_bond_indices(len(comp), bonds),
                       attachments=[Attachment(remap[att.atom], att.digit, att.order) for att, _ in own],
                       blocks=[0] * len(comp))
        pieces.append(Piece(sub, [pid for _, pid in own]))
    return pieces


def render_pieces(pieces: Sequence[Piece]) -> str:
    """'.'-joined rendering of pieces in the given order with one shared digit pool.

    The first occurrence of a pair id opens a digit, the second closes and frees it.
    Attachments without a pair id keep a digit that is never freed.
    """
    pool = DigitPool()
    pending: Dict[Hashable, int] = {}
    pair_order: Dict[Hashable, int] = {}
    for piece in pieces:
        for att, pid in zip(piece.graph.attachments, piece.pair_ids):
            if pid is not None:
                pair_order[pid] = max(pair_order.get(pid, 1), att.order)
    blocks = []
    for piece in pieces:
        g = piece.graph

        def label(k: int, g=g, piece=piece) -> str:
            pid = piece.pair_ids[k]
            if pid is not None and pid in pending:
                digit = pending.pop(pid)
                pool.release(digit)
                return str(digit)
            digit = pool.allocate()
            if pid is None:
                return BOND_SYMBOL[g.attachments[k].order] + str(digit)
            pending[pid] = digit
            return BOND_SYMBOL[pair_order[pid]] + str(digit)

        for _, traversal in canonical_components(g):
            blocks.append(render_traversal(g, traversal, pool, label))
    return ".".join(blocks)


def make_fragment(g: MolGraph, table: TokenTable = DEFAULT_TABLE) -> Fragment:
    text = serialize(g)
    graph = parse(text, table=table)
    return Fragment(canonical_key=canonicalize(graph), graph=graph,
                    token_span=tuple(table.surface(table.tokenize(text))))


def fragment_from_text(text: str, table: TokenTable = DEFAULT_TABLE) -> Fragment:
    return make_fragment(parse(text, table=table), table)


def decompose(g: MolGraph, rule: CutRule, rng: Optional[np.random.Generator] = None,
              table: TokenTable = DEFAULT_TABLE) -> List[Fragment]:
    """Cut non-ring single bonds (three random ones, or all) and return the pieces as Fragments."""
    pieces = cut_pieces(g, _choose_cuts(g, rule, rng))
    return [make_fragment(piece.graph, table) for piece in pieces]


def fragment_sequence(g: MolGraph, rule: CutRule = CutRule.R_REMASK,
                      rng: Optional[np.random.Generator] = None) -> str:
    """The whole molecule written as '.'-delimited fragments, ordered by canonical key."""
    pieces = cut_pieces(g, _choose_cuts(g, rule, rng))
    pieces.sort(key=lambda piece: canonicalize(piece.graph))
    return render_pieces(pieces)


def safe_views(g: MolGraph, count: int, rng: np.random.Generator) -> List[str]:
    """``count`` renderings of g cut at every non-ring single bond: canonical block order first, then shuffled."""
    pieces = cut_pieces(g, _choose_cuts(g, CutRule.R_REMASK, None))
    pieces.sort(key=lambda piece: canonicalize(piece.graph))
    views = [render_pieces(pieces)]
    for _ in range(count - 1):
        views.append(render_pieces([pieces[int(k)] for k in rng.permutation(len(pieces))]))
    return views[:count]


def join_fragments(fragments: Sequence[Fragment], pairs: Sequence[Tuple[int, int, int, int]] = ()) -> str:
    """Serialize fragments in order; ``pairs`` holds (frag_a, stub_a, frag_b, stub_b) bonds to close."""
    pieces = [Piece(f.graph, [None] * len(f.graph.attachments)) for f in fragments]
    for n, (fa, ka, fb, kb) in enumerate(pairs):
        pieces[fa].pair_ids[ka] = ("join", n)
        pieces[fb].pair_ids[kb] = ("join", n)
    return render_pieces(pieces)


def attach(f1: Fragment, f2: Fragment, rng: np.random.Generator) -> str:
    """Bond one uniformly chosen attachment of each fragment; leftovers stay open."""
    if f1.graph.is_closed or f2.graph.is_closed:
        raise NoAttachmentPoint("both fragments need an open attachment point")
    k1 = int(rng.integers(len(f1.graph.attachments)))
    k2 = int(rng.integers(len(f2.graph.attachments)))
    return join_fragments([f1, f2], [(0, k1, 1, k2)])


def fragment_spans(ids: Sequence[int], table: TokenTable = DEFAULT_TABLE) -> List[Tuple[int, int]]:
    """Half-open spans of the non-empty runs between separators, up to the first pad."""
    spans = []
    start = 0
    end = len(ids)
    for pos, tok in enumerate(ids):
        if tok == table.pad_id:
            end = pos
            break
    for pos in range(end + 1):
        if pos == end or ids[pos] == table.separator_id:
            if pos > start:
                spans.append((start, pos))
            start = pos + 1
    return spans


def spare_valence(g: MolGraph) -> List[int]:
    return [MAX_VALENCE[atom.element] - g.valence(idx) for idx, atom in enumerate(g.atoms)]


def add_random_attachments(g: MolGraph, count: int, rng: np.random.Generator) -> MolGraph:
    """Open up to ``count`` single-bond attachment points on atoms with spare valence."""
    spare = spare_valence(g)
    stubs = list(g.attachments)
    for _ in range(count):
        open_atoms = [idx for idx, room in enumerate(spare) if room > 0]
        if not open_atoms:
            break
        atom = open_atoms[int(rng.integers(len(open_atoms)))]
        spare[atom] -= 1
        stubs.append(Attachment(atom, 0, 1))
    return MolGraph(atoms=list(g.atoms), bonds=list(g.bonds), ring_bonds=g.ring_bonds,
                    attachments=stubs, blocks=list(g.blocks) or [0] * g.n_atoms)

from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

from SafeGrammar.grammar_errors import GrammarError, SafeSyntaxError, UnmatchedClosure
from SafeGrammar.mol_dataclass import (MAX_VALENCE, Atom, Attachment, Bond, FailureKind, MolGraph,
                                       ValidityReport)
from SafeGrammar.token_table import (ATOM_SYMBOLS, BOND_ORDER, BRANCH_CLOSE, BRANCH_OPEN, DEFAULT_TABLE,
                                     DIGIT_SYMBOLS, MASK_TOKEN, PAD_TOKEN, SEPARATOR, TokenTable)


def ring_bond_indices(n_atoms: int, bonds: Sequence[Bond]) -> FrozenSet[int]:
    """Bonds lying on a cycle, i.e. every bond that is not a bridge."""
    adj: List[List[Tuple[int, int]]] = [[] for _ in range(n_atoms)]
    for b_idx, bond in enumerate(bonds):
        adj[bond.i].append((bond.j, b_idx))
        adj[bond.j].append((bond.i, b_idx))

    disc = [-1] * n_atoms
    low = [0] * n_atoms
    bridges: Set[int] = set()
    clock = 0
    for root in range(n_atoms):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = clock
        clock += 1
        # frames: (atom, bond index used to enter, neighbour cursor)
        stack = [(root, -1, 0)]
        while stack:
            atom, via, cursor = stack[-1]
            if cursor < len(adj[atom]):
                stack[-1] = (atom, via, cursor + 1)
                nb, b_idx = adj[atom][cursor]
                if b_idx == via:
                    continue
                if disc[nb] == -1:
                    disc[nb] = low[nb] = clock
                    clock += 1
                    stack.append((nb, b_idx, 0))
                else:
                    low[atom] = min(low[atom], disc[nb])
            else:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[atom])
                    if low[atom] > disc[parent]:
                        bridges.add(via)
    return frozenset(b for b in range(len(bonds)) if b not in bridges)


class _ParseState:
    def __init__(self):
        self.atoms: List[Atom] = []
        self.blocks: List[int] = []
        self.bonds: List[Bond] = []
        self.bond_keys: Set[FrozenSet[int]] = set()
        self.open_digits: Dict[int, Tuple[int, int]] = {}
        self.branches: List[int] = []
        self.prev: Optional[int] = None
        self.pending_order: Optional[int] = None
        self.block = 0

    def add_bond(self, i: int, j: int, order: int):
        if i == j:
            raise SafeSyntaxError(f"ring closure bonds atom {i} to itself")
        key = frozenset((i, j))
        if key in self.bond_keys:
            raise SafeSyntaxError(f"duplicate bond between atoms {i} and {j}")
        self.bond_keys.add(key)
        self.bonds.append(Bond(min(i, j), max(i, j), order))

    def take_order(self) -> int:
        order = self.pending_order or 1
        self.pending_order = None
        return order

    def require_no_pending(self, where: str):
        if self.pending_order is not None:
            raise SafeSyntaxError(f"bond symbol not followed by an atom or digit ({where})")


def parse_tokens(tokens: Sequence[str], strict: bool = False) -> MolGraph:
    """Build a MolGraph from surface tokens.

    Digits pair sequentially: an occurrence closes the currently open bond with the same
    digit, otherwise opens one. Digits still open at the end become attachments unless
    ``strict`` is set.
    """
    st = _ParseState()
    n_real = len(tokens)
    for pos, tok in enumerate(tokens):
        if tok == PAD_TOKEN:
            n_real = pos
            break
    if any(tok != PAD_TOKEN for tok in tokens[n_real:]):
        raise SafeSyntaxError("padding may only appear at the end of a sequence")

    for pos, tok in enumerate(tokens[:n_real]):
        if tok in ATOM_SYMBOLS:
            idx = len(st.atoms)
            st.atoms.append(Atom(tok))
            st.blocks.append(st.block)
            if st.prev is not None:
                st.add_bond(st.prev, idx, st.take_order())
            else:
                st.require_no_pending(f"offset {pos}")
            st.prev = idx
        elif tok in BOND_ORDER:
            if st.prev is None:
                raise SafeSyntaxError(f"bond symbol {tok!r} at offset {pos} has no preceding atom")
            st.require_no_pending(f"offset {pos}")
            st.pending_order = BOND_ORDER[tok]
        elif tok == BRANCH_OPEN:
            if st.prev is None:
                raise SafeSyntaxError(f"branch opened at offset {pos} without an atom")
            st.require_no_pending(f"offset {pos}")
            st.branches.append(st.prev)
        elif tok == BRANCH_CLOSE:
            if not st.branches:
                raise SafeSyntaxError(f"branch stack underflow at offset {pos}")
            st.require_no_pending(f"offset {pos}")
            st.prev = st.branches.pop()
        elif tok in DIGIT_SYMBOLS:
            if st.prev is None:
                raise SafeSyntaxError(f"digit at offset {pos} has no preceding atom")
            digit = int(tok)
            order = st.take_order()
            if digit in st.open_digits:
                other, other_order = st.open_digits.pop(digit)
                if order != 1 and other_order != 1 and order != other_order:
                    raise SafeSyntaxError(f"conflicting bond orders on digit {digit}")
                st.add_bond(other, st.prev, max(order, other_order))
            else:
                st.open_digits[digit] = (st.prev, order)
        elif tok == SEPARATOR:
            if st.branches:
                raise SafeSyntaxError(f"unclosed branch before separator at offset {pos}")
            st.require_no_pending(f"offset {pos}")
            st.prev = None
            st.block += 1
        elif tok == MASK_TOKEN:
            raise SafeSyntaxError(f"mask token at offset {pos}")
        else:
            raise SafeSyntaxError(f"unknown token {tok!r} at offset {pos}")

    if st.branches:
        raise SafeSyntaxError("unclosed branch")
    st.require_no_pending("end of sequence")
    if strict and st.open_digits:
        raise UnmatchedClosure(f"unpaired digits {sorted(st.open_digits)}")

    attachments = [Attachment(atom, digit, order) for digit, (atom, order) in st.open_digits.items()]
    return MolGraph(atoms=st.atoms, bonds=st.bonds, ring_bonds=ring_bond_indices(len(st.atoms), st.bonds),
                    attachments=attachments, blocks=st.blocks)


def parse(s: str, strict: bool = False, table: TokenTable = DEFAULT_TABLE) -> MolGraph:
    return parse_tokens(table.surface(table.tokenize(s)), strict=strict)


def parse_ids(ids: Sequence[int], strict: bool = False, table: TokenTable = DEFAULT_TABLE) -> MolGraph:
    return parse_tokens(table.surface(ids), strict=strict)


def validate(g: MolGraph) -> ValidityReport:
    if g.n_atoms == 0:
        return ValidityReport.failed(FailureKind.EMPTY_SEQUENCE)
    if g.attachments:
        digits = sorted(att.digit for att in g.attachments)
        return ValidityReport.failed(FailureKind.UNMATCHED_CLOSURE, f"open digits {digits}")
    for idx, atom in enumerate(g.atoms):
        used = g.valence(idx)
        if used > MAX_VALENCE[atom.element]:
            return ValidityReport.failed(FailureKind.VALENCE_VIOLATION,
                                         f"atom {idx} ({atom.element}) has valence {used}")
    if len(g.components()) > 1:
        return ValidityReport.failed(FailureKind.DISCONNECTED)
    return ValidityReport.ok()


def check_sequence(seq: Union[str, Sequence[int]],
                   table: TokenTable = DEFAULT_TABLE) -> Tuple[Optional[MolGraph], ValidityReport]:
    """Parse and validate without raising; grammar errors become failed reports."""
    try:
        ids = table.tokenize(seq) if isinstance(seq, str) else list(seq)
        g = parse_ids(ids, table=table)
    except UnmatchedClosure as e:
        return None, ValidityReport.failed(FailureKind.UNMATCHED_CLOSURE, str(e))
    except GrammarError as e:
        return None, ValidityReport.failed(FailureKind.SYNTAX_ERROR, str(e))
    except IndexError:
        return None, ValidityReport.failed(FailureKind.SYNTAX_ERROR, "token id outside the table")
    return g, validate(g)


def read_corpus(path: Union[str, Path]) -> List[str]:
    """Newline-delimited sequences; blank lines and '#' comment lines are skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip() and not line.lstrip().startswith("#")]

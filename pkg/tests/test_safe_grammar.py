import itertools

import numpy as np
import pytest

from SafeGrammar.canonical import DigitPool, _Walker, canonicalize, serialize
from SafeGrammar.fragment_algebra import (CutRule, add_random_attachments, attach, cuttable_bonds, decompose,
                                          fragment_from_text, fragment_sequence, fragment_spans, join_fragments,
                                          spare_valence)
from SafeGrammar.grammar_errors import DigitExhausted, NoAttachmentPoint, SafeSyntaxError, UnmatchedClosure
from SafeGrammar.mol_dataclass import Attachment, Bond, FailureKind, MolGraph
from SafeGrammar.safe_parser import check_sequence, parse, read_corpus, ring_bond_indices, validate
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

CORPUS = [
    "CCO", "CC(C)(C)O", "C1CC1N", "C1CCC(CC1)N", "CC(=O)NC", "C1CC2CCC1C2", "N#CC(F)F",
    "OC1CCOC1", "CC12.N1.O2", "C1CC1C(=O)OC", "C=CC=C", "FC(F)(F)C1CCNCC1",
]


def _shuffled(g: MolGraph, rng: np.random.Generator) -> MolGraph:
    perm = rng.permutation(g.n_atoms)
    new_of = {int(old): new for new, old in enumerate(perm)}
    bonds = [Bond(new_of[b.i], new_of[b.j], b.order) for b in g.bonds]
    order = rng.permutation(len(bonds))
    bonds = [bonds[int(k)] for k in order]
    return MolGraph(atoms=[g.atoms[int(old)] for old in perm], bonds=bonds,
                    ring_bonds=ring_bond_indices(g.n_atoms, bonds),
                    attachments=[Attachment(new_of[a.atom], a.digit, a.order) for a in g.attachments])


def test_token_table_layout():
    assert DEFAULT_TABLE.K == 20
    assert DEFAULT_TABLE.mask_id == 19
    assert DEFAULT_TABLE.token(DEFAULT_TABLE.pad_id) == "[PAD]"
    with pytest.raises(ValueError):
        TokenTable(("C", "[MASK]", "[PAD]"))
    assert TokenTable.from_list(DEFAULT_TABLE.to_list()) == DEFAULT_TABLE


def test_tokenize_examples():
    t = DEFAULT_TABLE
    assert t.tokenize("CC=O") == [t.id_of("C"), t.id_of("C"), t.id_of("="), t.id_of("O")]
    ids = t.tokenize("C1CC1.N1")
    assert t.surface(ids) == ["C", "1", "C", "C", "1", ".", "N", "1"]
    assert t.tokenize("C[MASK][PAD]") == [t.id_of("C"), t.mask_id, t.pad_id]
    with pytest.raises(SafeSyntaxError):
        t.tokenize("Cq")


@pytest.mark.parametrize("s", CORPUS + ["C[MASK]C", "((", "C..C"])
def test_detokenize_inverts_tokenize(s):
    assert DEFAULT_TABLE.detokenize(DEFAULT_TABLE.tokenize(s)) == s


def test_parse_cyclopropane():
    g = parse("C1CC1")
    assert g.n_atoms == 3
    assert len(g.bonds) == 3
    assert g.ring_bonds == frozenset({0, 1, 2})
    assert g.is_closed


def test_parse_cross_fragment_pairing_builds_ethane():
    g = parse("C1.C1")
    assert g.n_atoms == 2
    assert len(g.bonds) == 1
    assert not g.ring_bonds
    assert g.blocks == [0, 1]


@pytest.mark.parametrize("s", ["C(C", "C)", "=C", "C=", "C(=)C", "C11", "C1C1", "C[MASK]", "C[PAD]C", "1C"])
def test_parse_rejects(s):
    with pytest.raises(SafeSyntaxError):
        parse(s)


def test_trailing_padding_is_ignored():
    assert parse("CC[PAD][PAD]").n_atoms == 2


def test_digits_reuse_after_closing():
    g = parse("C1CC1.N1")
    assert len(g.ring_bonds) == 3
    assert g.attachments == [Attachment(3, 1, 1)]
    with pytest.raises(UnmatchedClosure):
        parse("C1CC1.N1", strict=True)


def test_attachment_keeps_bond_order():
    g = parse("C=1")
    assert g.attachments[0].order == 2
    assert g.valence(0) == 2


def test_validate_examples():
    assert validate(parse("C1CC1")).valid
    report = validate(parse("C(=O)(=O)(=O)"))
    assert report.failure == FailureKind.VALENCE_VIOLATION
    assert validate(parse("")).failure == FailureKind.EMPTY_SEQUENCE
    assert validate(parse("C1CC1.N1")).failure == FailureKind.UNMATCHED_CLOSURE
    assert validate(parse("CC.CC")).failure == FailureKind.DISCONNECTED
    assert validate(parse("FF")).valid
    assert validate(parse("FC=F")).failure == FailureKind.VALENCE_VIOLATION


def test_check_sequence_maps_errors_to_reports():
    g, report = check_sequence("C(C")
    assert g is None and report.failure == FailureKind.SYNTAX_ERROR
    _, report = check_sequence(DEFAULT_TABLE.tokenize("C[MASK]"))
    assert report.failure == FailureKind.SYNTAX_ERROR
    g, report = check_sequence("CCO")
    assert report.valid and g.n_atoms == 3
    # pure: same input, same report
    assert check_sequence("C=O=C")[1] == check_sequence("C=O=C")[1]


def test_canonical_examples():
    assert canonicalize(parse("CCO")) == canonicalize(parse("OCC"))
    assert canonicalize(parse("C1.C1")) == canonicalize(parse("CC"))
    assert canonicalize(parse("C")) == "C"
    assert canonicalize(parse("C1CC1")) == "C1CC1"
    assert canonicalize(parse("CC")) != canonicalize(parse("CN"))


def test_canonical_key_writes_attachments_as_stars():
    assert canonicalize(parse("C1")) == "C*"
    assert canonicalize(parse("C7")) == canonicalize(parse("C3"))


@pytest.mark.parametrize("s", CORPUS)
def test_canonical_invariant_under_atom_reordering(s):
    rng = np.random.default_rng(7)
    g = parse(s)
    key = canonicalize(g)
    for _ in range(10):
        assert canonicalize(_shuffled(g, rng)) == key


@pytest.mark.parametrize("s", CORPUS)
def test_serialize_round_trip(s):
    g = parse(s)
    assert canonicalize(parse(serialize(g))) == canonicalize(g)


def test_fragment_order_invariance():
    blocks = ["C1CC", "N12", "O2"]
    keys = {canonicalize(parse(".".join(p))) for p in itertools.permutations(blocks)}
    assert len(keys) == 1
    assert keys == {canonicalize(parse("CCCNO"))}


def test_digit_pool_exhaustion():
    pool = DigitPool()
    assert [pool.allocate() for _ in range(9)] == list(range(1, 10))
    with pytest.raises(DigitExhausted):
        pool.allocate()
    pool.release(4)
    assert pool.allocate() == 4


def test_decompose_ethane_all_cuts():
    frags = decompose(parse("CC"), CutRule.R_REMASK)
    assert [f.text for f in frags] == ["C1", "C1"]
    assert frags[0] == frags[1]
    assert frags[0].canonical_key == "C*"


def test_decompose_cyclopropane_is_one_fragment():
    frags = decompose(parse("C1CC1"), CutRule.R_REMASK)
    assert len(frags) == 1
    assert frags[0].graph.is_closed


def test_decompose_pentane_three_random_cuts():
    rng = np.random.default_rng(0)
    g = parse("CCCCC")
    assert len(cuttable_bonds(g)) == 4
    for _ in range(20):
        assert len(decompose(g, CutRule.R_VOCAB, rng)) == 4


def test_decompose_small_molecule_cuts_everything():
    frags = decompose(parse("CCO"), CutRule.R_VOCAB, np.random.default_rng(1))
    assert sorted(f.canonical_key for f in frags) == sorted(["C*", "C**", "O*"])


@pytest.mark.parametrize("s", CORPUS)
def test_remask_serialization_reassembles_molecule(s):
    g = parse(s)
    text = fragment_sequence(g, CutRule.R_REMASK)
    assert canonicalize(parse(text)) == canonicalize(g)
    assert len(fragment_spans(DEFAULT_TABLE.tokenize(text))) == len(decompose(g, CutRule.R_REMASK))


def test_vocab_serialization_reassembles_molecule():
    rng = np.random.default_rng(3)
    g = parse("CC(C)CC(=O)NCCO")
    for _ in range(10):
        assert canonicalize(parse(fragment_sequence(g, CutRule.R_VOCAB, rng))) == canonicalize(g)


def test_attach_examples():
    rng = np.random.default_rng(0)
    ethane = attach(fragment_from_text("C1"), fragment_from_text("C1"), rng)
    assert canonicalize(parse(ethane)) == "CC"
    methylamine = attach(fragment_from_text("C1"), fragment_from_text("N1"), rng)
    assert canonicalize(parse(methylamine)) == canonicalize(parse("CN"))
    with pytest.raises(NoAttachmentPoint):
        attach(fragment_from_text("CC"), fragment_from_text("C1"), rng)


def test_attach_leaves_other_attachments_open():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g = parse(attach(fragment_from_text("C12"), fragment_from_text("N1"), rng))
        assert len(g.components()) == 1
        assert len(g.attachments) == 1


def test_attach_reverses_single_cut():
    g = parse("C1CC1N")
    f1, f2 = decompose(g, CutRule.R_REMASK)
    assert canonicalize(parse(attach(f1, f2, np.random.default_rng(0)))) == canonicalize(g)


def test_attach_renumbers_colliding_ring_digits():
    rng = np.random.default_rng(2)
    ring = fragment_from_text("C1CC12")
    text = attach(ring, ring, rng)
    g, report = check_sequence(text)
    assert report.valid
    assert len(g.ring_bonds) == 6


def test_join_fragments_with_explicit_pairs():
    frags = [fragment_from_text("C12"), fragment_from_text("N1"), fragment_from_text("O1")]
    text = join_fragments(frags, [(0, 0, 1, 0), (0, 1, 2, 0)])
    assert canonicalize(parse(text)) == canonicalize(parse("NCO"))


def test_fragment_spans_examples():
    t = DEFAULT_TABLE
    assert fragment_spans(t.tokenize("C1CC1.N1")) == [(0, 5), (6, 8)]
    assert fragment_spans(t.tokenize("CC")) == [(0, 2)]
    assert fragment_spans(t.tokenize("C..C")) == [(0, 1), (3, 4)]
    assert fragment_spans(t.tokenize("CC.N[PAD][PAD]")) == [(0, 2), (3, 4)]


def test_add_random_attachments_respects_valence():
    rng = np.random.default_rng(4)
    g = add_random_attachments(parse("C(F)(F)F"), 3, rng)
    assert len(g.attachments) == 1
    assert all(room >= 0 for room in spare_valence(g))
    g = add_random_attachments(parse("CC"), 2, rng)
    assert len(g.attachments) == 2
    assert len(parse(serialize(g)).attachments) == 2


def test_read_corpus_skips_comments(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("# toy\nCCO\n\nC1CC1\n", encoding="utf-8")
    assert read_corpus(path) == ["CCO", "C1CC1"]


TREES = ["CC(C)(C)O", "CC(C)(C)C(C)(N)C(=O)O", "CC(CC(C)C)C(C)CC", "N1CC(C2)C(C3)C", "OC(CO)(CO)CO",
         "C=CC(C=C)(C#N)C(F)(F)F"]


def _dendrimer() -> str:
    middle = "C(C)(C)C"
    inner = f"C({middle})({middle}){middle}"
    return f"C({inner})({inner})({inner}){inner}"


@pytest.mark.parametrize("s", TREES)
def test_tree_keys_match_full_enumeration(s):
    walker = _Walker(parse(s))
    (component,) = walker.g.components()
    enumerated = min(walker.render(tr, DigitPool(), walker._key_label) for tr in walker.traversals(component))
    assert walker.best(component)[0] == enumerated


def test_large_symmetric_tree_is_canonical():
    g = parse(_dendrimer())
    assert g.n_atoms == 53
    rng = np.random.default_rng(3)
    key = canonicalize(g)
    for _ in range(5):
        assert canonicalize(_shuffled(g, rng)) == key
    assert canonicalize(parse(serialize(g))) == key

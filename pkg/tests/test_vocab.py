import pytest

from blockflow.vocab import (
    VocabularyError,
    block_candidates,
    center_matched_set,
    compatible_tuples,
    load_vocabulary,
    serialize_vocabulary,
)

TWO_BLOCK_DOC = """
blocks:
  - id: 0
    atoms: [{element: C}, {element: Br}]
    bonds: [[0, 1, single]]
    centers: [{atom: 1, class: aryl-bromide, leaving: true}]
  - id: 1
    atoms: [{element: N}]
    bonds: []
    centers: [{atom: 0, class: amine}]
reactions:
  - id: 0
    class_a: aryl-bromide
    class_b: amine
    l_a: true
    l_b: false
    bond_order: single
"""


def test_load_fixture_counts():
    vocab = load_vocabulary(TWO_BLOCK_DOC)
    assert vocab.n_blocks == 2
    assert vocab.n_reactions == 1
    assert vocab.max_centers == 1
    assert vocab.max_atoms == 2


def test_leaving_center_degree_violation():
    doc = TWO_BLOCK_DOC.replace(
        "atoms: [{element: C}, {element: Br}]\n    bonds: [[0, 1, single]]",
        "atoms: [{element: C}, {element: Br}, {element: C}]\n"
        "    bonds: [[0, 1, single], [1, 2, single]]",
    )
    with pytest.raises(VocabularyError, match="leaving center not degree-1"):
        load_vocabulary(doc)


def test_dangling_center_class():
    doc = TWO_BLOCK_DOC.replace("class_b: amine", "class_b: phantom")
    with pytest.raises(VocabularyError, match="dangling center class"):
        load_vocabulary(doc)


def test_ids_must_be_dense():
    doc = TWO_BLOCK_DOC.replace("id: 1", "id: 3")
    with pytest.raises(VocabularyError, match="dense and sequential"):
        load_vocabulary(doc)


def test_declared_max_atoms_enforced():
    doc = "max_atoms: 1\n" + TWO_BLOCK_DOC
    with pytest.raises(VocabularyError, match="exceeds declared max_atoms"):
        load_vocabulary(doc)


def test_disconnected_block_rejected():
    doc = TWO_BLOCK_DOC.replace("bonds: [[0, 1, single]]", "bonds: []", 1)
    with pytest.raises(VocabularyError, match="disconnected"):
        load_vocabulary(doc)


def test_center_matched_set_matches_brute_force(cc_vocab):
    for r in range(cc_vocab.n_reactions):
        template = cc_vocab.reactions[r]
        for side, klass in (("A", template.class_a), ("B", template.class_b)):
            expected = {
                (b.id, ci)
                for b in cc_vocab.blocks
                for ci, c in enumerate(b.centers)
                if c.center_class == klass
            }
            assert center_matched_set(cc_vocab, r, side) == expected


def test_center_matched_set_invalid_reaction(toy_vocab):
    with pytest.raises(VocabularyError, match="invalid reaction id"):
        center_matched_set(toy_vocab, 99, "A")


def test_block_candidates_out_of_range_center(cc_vocab):
    # methylamine has one center; asking about center index 1 excludes it
    assert 4 not in block_candidates(cc_vocab, 0, 1, "B")


def test_compatible_tuples_fixture():
    vocab = load_vocabulary("""
blocks:
  - id: 0
    atoms: [{element: C}, {element: Br}]
    bonds: [[0, 1, single]]
    centers: [{atom: 1, class: aryl-bromide, leaving: true}]
  - id: 1
    atoms: [{element: B}]
    bonds: []
    centers: [{atom: 0, class: boron}]
  - id: 2
    atoms: [{element: B}, {element: C}]
    bonds: [[0, 1, single]]
    centers: [{atom: 0, class: boron}]
reactions:
  - id: 0
    class_a: aryl-bromide
    class_b: boron
    l_a: true
    l_b: true
    bond_order: single
""")
    moves = compatible_tuples([0], occupied=set(), vocab=vocab)
    assert len(moves) == 2
    assert {m.new_block for m in moves} == {1, 2}

    # a block with no centers offers nothing
    assert compatible_tuples([1], occupied=set(), vocab=vocab) == []

    # consuming the only center removes all moves through it
    assert compatible_tuples([0], occupied={(0, 0)}, vocab=vocab) == []


def test_compatible_tuples_invariant_under_entry_reordering(toy_vocab):
    text = serialize_vocabulary(toy_vocab)
    import yaml

    doc = yaml.safe_load(text)
    doc["blocks"] = list(reversed(doc["blocks"]))
    doc["reactions"] = list(reversed(doc["reactions"]))
    reordered = load_vocabulary(yaml.safe_dump(doc))
    assert (compatible_tuples([0, 3], set(), toy_vocab)
            == compatible_tuples([0, 3], set(), reordered))


def test_load_serialize_roundtrip(toy_vocab, cc_vocab):
    for vocab in (toy_vocab, cc_vocab):
        again = load_vocabulary(serialize_vocabulary(vocab))
        assert again == vocab

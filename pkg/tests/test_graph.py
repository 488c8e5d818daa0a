import numpy as np
import pytest

from blockflow.graph import (
    EdgeCodec,
    GraphError,
    ReactionGraph,
    assemble_atom_graph,
    canonical_code,
    check_validity,
    codec_for,
    couple,
    instantiate_block,
    iter_edges,
    symmetrize,
    unique_neighbor,
)
from blockflow.vocab import load_vocabulary

COUPLE_DOC = """
blocks:
  - id: 0
    name: bromide
    atoms: [{element: C}, {element: Br}]
    bonds: [[0, 1, single]]
    centers: [{atom: 1, class: halide, leaving: true}]
  - id: 1
    name: amine
    atoms: [{element: N}]
    bonds: []
    centers: [{atom: 0, class: amine}]
  - id: 2
    name: diamine
    atoms: [{element: N}, {element: C}, {element: N}]
    bonds: [[0, 1, single], [1, 2, single]]
    centers: [{atom: 0, class: amine}, {atom: 2, class: amine}]
reactions:
  - id: 0
    class_a: halide
    class_b: amine
    l_a: true
    l_b: false
    bond_order: single
  - id: 1
    class_a: amine
    class_b: amine
    l_a: false
    l_b: false
    bond_order: single
"""


@pytest.fixture(scope="module")
def couple_vocab():
    return load_vocabulary(COUPLE_DOC)


# -- codec -------------------------------------------------------------------

def test_encode_examples():
    codec = EdgeCodec(n_reactions=2, max_centers=3)
    assert codec.encode(1, 2, 0) == 15
    assert codec.no_edge == 18
    assert codec.mask == 19
    assert codec.n_channels == 20


def test_codec_roundtrip_exhaustive():
    rng = np.random.default_rng(1)
    for _ in range(20):
        codec = EdgeCodec(n_reactions=int(rng.integers(1, 6)),
                          max_centers=int(rng.integers(1, 5)))
        for ch in range(codec.no_edge):
            assert codec.encode(*codec.decode(ch)) == ch


def test_encode_out_of_range():
    codec = EdgeCodec(n_reactions=2, max_centers=3)
    with pytest.raises(GraphError):
        codec.encode(2, 0, 0)
    with pytest.raises(GraphError):
        codec.decode(codec.no_edge)


# -- symmetrize ---------------------------------------------------------------

def test_symmetrize_mirrors_upper():
    e = np.zeros((3, 3), dtype=np.int64)
    e[0, 1] = 7
    out = symmetrize(e)
    assert out[1, 0] == 7
    assert out[0, 1] == 7
    assert np.array_equal(symmetrize(out), out)  # idempotent


def test_symmetrize_random_entrywise(rng):
    e = rng.integers(0, 9, size=(6, 6))
    out = symmetrize(e)
    for i in range(6):
        for j in range(i + 1, 6):
            assert out[j, i] == out[i, j] == e[i, j]


# -- unique_neighbor / couple --------------------------------------------------

def test_unique_neighbor(couple_vocab):
    g = instantiate_block(couple_vocab.blocks[0], slot=0)
    br = g.atom_key(0, 1)
    assert unique_neighbor(g, br) == g.atom_key(0, 0)
    # degree-2 middle atom of the diamine
    g2 = instantiate_block(couple_vocab.blocks[2], slot=0)
    with pytest.raises(GraphError, match="degree"):
        unique_neighbor(g2, g2.atom_key(0, 1))
    # isolated atom
    g3 = instantiate_block(couple_vocab.blocks[1], slot=0)
    with pytest.raises(GraphError, match="degree"):
        unique_neighbor(g3, g3.atom_key(0, 0))


def test_couple_with_leaving_group(couple_vocab):
    g = instantiate_block(couple_vocab.blocks[0], slot=0)
    couple(g, slot=0, block_a=couple_vocab.blocks[0],
           new_block=couple_vocab.blocks[1], new_slot=1,
           template=couple_vocab.reactions[0], center_a=0, center_b=0)
    assert g.n_atoms == 2  # Br left
    elements = sorted(v[2] for v in g.atoms.values())
    assert elements == ["C", "N"]
    assert g.n_bonds == 1


def test_couple_additive_no_leaving(couple_vocab):
    g = instantiate_block(couple_vocab.blocks[1], slot=0)
    couple(g, slot=0, block_a=couple_vocab.blocks[1],
           new_block=couple_vocab.blocks[2], new_slot=1,
           template=couple_vocab.reactions[1], center_a=0, center_b=0)
    assert g.n_atoms == 1 + 3
    assert g.n_bonds == 0 + 2 + 1


def test_couple_occupied_center_rejected(couple_vocab):
    g = instantiate_block(couple_vocab.blocks[1], slot=0)
    couple(g, 0, couple_vocab.blocks[1], couple_vocab.blocks[2], 1,
           couple_vocab.reactions[1], 0, 0)
    with pytest.raises(GraphError, match="occupied"):
        couple(g, 0, couple_vocab.blocks[1], couple_vocab.blocks[2], 2,
               couple_vocab.reactions[1], 0, 0)


def test_couple_class_mismatch(couple_vocab):
    g = instantiate_block(couple_vocab.blocks[1], slot=0)
    with pytest.raises(GraphError, match="reagent A"):
        couple(g, 0, couple_vocab.blocks[1], couple_vocab.blocks[1], 1,
               couple_vocab.reactions[0], 0, 0)


# -- assembly ------------------------------------------------------------------

def _graph(vocab, blocks, edges):
    codec = codec_for(vocab)
    n = len(blocks)
    x = np.asarray(blocks, dtype=np.int64)
    e = np.full((n, n), codec.no_edge, dtype=np.int64)
    for i, j, r, vi, vj in edges:
        e[i, j] = codec.encode(r, vi, vj)
    return ReactionGraph(n=n, x=x, e=symmetrize(e))


def test_assemble_single_block(couple_vocab):
    g = _graph(couple_vocab, [2], [])
    atom_graph = assemble_atom_graph(g, couple_vocab)
    block = couple_vocab.blocks[2]
    assert atom_graph.n_atoms == len(block.atoms)
    assert atom_graph.n_bonds == len(block.bonds)


def test_assemble_two_block_matches_couple(couple_vocab):
    g = _graph(couple_vocab, [0, 1], [(0, 1, 0, 0, 0)])
    atom_graph = assemble_atom_graph(g, couple_vocab)
    assert atom_graph.n_atoms == 2
    assert atom_graph.n_bonds == 1


def test_assemble_distinct_triples_distinct_products(couple_vocab):
    # coupling onto different centers of the diamine gives different provenance
    g1 = _graph(couple_vocab, [2, 1], [(0, 1, 1, 0, 0)])
    g2 = _graph(couple_vocab, [2, 1], [(0, 1, 1, 1, 0)])
    a1 = assemble_atom_graph(g1, couple_vocab)
    a2 = assemble_atom_graph(g2, couple_vocab)
    # the N bonded across differs: atom of center 0 vs center 2
    ends1 = {a1.provenance[k] for k in (a1.bonds[-1][0], a1.bonds[-1][1])}
    ends2 = {a2.provenance[k] for k in (a2.bonds[-1][0], a2.bonds[-1][1])}
    assert ends1 != ends2


def test_assemble_rejects_masked_and_cyclic(couple_vocab, toy_vocab):
    from blockflow.graph import masked_graph

    g = masked_graph(2, 2, toy_vocab)
    with pytest.raises(GraphError, match="masked"):
        assemble_atom_graph(g, toy_vocab)

    g2 = _graph(couple_vocab, [2, 2, 2],
                [(0, 1, 1, 0, 0), (0, 2, 1, 1, 0), (1, 2, 1, 1, 1)])
    with pytest.raises(GraphError, match="spanning tree"):
        assemble_atom_graph(g2, couple_vocab)


# -- validity ------------------------------------------------------------------

def test_validity_disconnected(couple_vocab):
    g = _graph(couple_vocab, [2, 1, 1], [(0, 1, 1, 0, 0)])
    report = check_validity(g, couple_vocab)
    assert not report.valid
    assert not report.is_tree
    assert report.fully_denoised


def test_validity_class_mismatch(couple_vocab):
    # block 1 (amine) cannot be reagent A of the halide template
    g = _graph(couple_vocab, [1, 1], [(0, 1, 0, 0, 0)])
    report = check_validity(g, couple_vocab)
    assert not report.valid
    assert not report.edges_compatible


def test_validity_center_reuse(couple_vocab):
    g = _graph(couple_vocab, [1, 1, 1],
               [(0, 1, 1, 0, 0), (0, 2, 1, 0, 0)])
    report = check_validity(g, couple_vocab)
    assert not report.centers_unique


def test_validity_of_generated(toy_vocab, toy_records):
    for rec in toy_records:
        assert check_validity(rec.graph, toy_vocab).valid


# -- canonical code --------------------------------------------------------------

def test_canonical_code_permutation_invariant(couple_vocab):
    g = _graph(couple_vocab, [2, 1, 1], [(0, 1, 1, 0, 0), (0, 2, 1, 1, 0)])
    # swap slots 1 and 2 (both block 1, but the center on node 0 differs)
    g_swapped = _graph(couple_vocab, [2, 1, 1],
                       [(0, 1, 1, 1, 0), (0, 2, 1, 0, 0)])
    assert canonical_code(g, couple_vocab) == canonical_code(g_swapped, couple_vocab)


def test_canonical_code_distinguishes_triples(couple_vocab):
    g1 = _graph(couple_vocab, [2, 1], [(0, 1, 1, 0, 0)])
    g2 = _graph(couple_vocab, [2, 1], [(0, 1, 1, 1, 0)])
    assert canonical_code(g1, couple_vocab) != canonical_code(g2, couple_vocab)


def test_canonical_code_requires_valid_tree(couple_vocab):
    g = _graph(couple_vocab, [2, 1, 1], [(0, 1, 1, 0, 0)])
    with pytest.raises(GraphError):
        canonical_code(g, couple_vocab)


def test_count_identities_on_generated(cc_vocab):
    from blockflow.datagen import generate_graph

    rng = np.random.default_rng(3)
    codec = codec_for(cc_vocab)
    for _ in range(40):
        g, atom_graph = generate_graph(cc_vocab, int(rng.integers(1, 5)), rng)
        atoms = sum(len(cc_vocab.blocks[int(b)].atoms) for b in g.x[: g.n])
        bonds = sum(len(cc_vocab.blocks[int(b)].bonds) for b in g.x[: g.n])
        leavings = sum(
            int(cc_vocab.reactions[r].leaving_a) + int(cc_vocab.reactions[r].leaving_b)
            for _, _, r, _, _ in iter_edges(g, codec))
        assert atom_graph.n_atoms == atoms - leavings
        assert atom_graph.n_bonds == bonds - leavings + (g.n - 1)

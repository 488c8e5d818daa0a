import math

import numpy as np
import pytest

from blockflow.datagen import (
    EmbedError,
    GenConfig,
    embed_coordinates,
    estimate_block_count_prior,
    generate_graph,
    generate_records,
    ideal_bond_length,
    MIN_NONBONDED,
)
from blockflow.graph import check_validity, codec_for, iter_edges
from blockflow.io import record_to_line
from blockflow.vocab import load_vocabulary


def test_generate_graph_zero_depth(toy_vocab, rng):
    g, atom_graph = generate_graph(toy_vocab, 0, rng)
    assert g.n == 1
    assert list(iter_edges(g, codec_for(toy_vocab))) == []
    assert atom_graph.n_atoms == toy_vocab.atom_count(int(g.x[0]))


def test_generate_graph_early_break_on_centerless_seed():
    vocab = load_vocabulary("""
blocks:
  - id: 0
    atoms: [{element: C}]
    bonds: []
    centers: []
  - id: 1
    atoms: [{element: N}]
    bonds: []
    centers: [{atom: 0, class: amine}]
reactions:
  - id: 0
    class_a: amine
    class_b: amine
    l_a: false
    l_b: false
    bond_order: single
""")
    hit = False
    for seed in range(40):
        rng = np.random.default_rng(seed)
        g, _ = generate_graph(vocab, 3, rng)
        if g.x[0] == 0:
            hit = True
            assert g.n == 1  # no compatible move from the centerless block
    assert hit


def test_generate_records_deterministic(toy_vocab):
    cfg = GenConfig(depth_min=1, depth_max=2, count=6, seed=42)
    a = generate_records(toy_vocab, cfg)
    b = generate_records(toy_vocab, cfg)
    lines_a = [record_to_line(r, toy_vocab) for r in a]
    lines_b = [record_to_line(r, toy_vocab) for r in b]
    assert lines_a == lines_b
    # threads do not change the output
    c = generate_records(toy_vocab, cfg, threads=3)
    assert lines_a == [record_to_line(r, toy_vocab) for r in c]


def test_generated_records_are_valid_trees(toy_vocab, toy_records):
    for rec in toy_records:
        report = check_validity(rec.graph, toy_vocab)
        assert report.valid
        edges = list(iter_edges(rec.graph, codec_for(toy_vocab)))
        assert rec.graph.n == len(edges) + 1


def test_depth_histogram_uniform(toy_vocab):
    cfg = GenConfig(depth_min=1, depth_max=2, count=400, seed=5)
    records = generate_records(toy_vocab, cfg)
    depth_counts = {1: 0, 2: 0}
    for rec in records:
        depth_counts[rec.graph.n - 1] += 1
    p = 0.5
    sigma = math.sqrt(p * (1 - p) * len(records))
    assert abs(depth_counts[1] - p * len(records)) <= 4 * sigma


def test_gen_config_validation():
    with pytest.raises(ValueError):
        GenConfig(depth_min=0, depth_max=2, count=5)
    with pytest.raises(ValueError):
        GenConfig(depth_min=3, depth_max=2, count=5)


def test_dedup_collapses_duplicates():
    vocab = load_vocabulary("""
blocks:
  - id: 0
    atoms: [{element: C}, {element: N}]
    bonds: [[0, 1, single]]
    centers: [{atom: 1, class: amine}]
reactions:
  - id: 0
    class_a: amine
    class_b: amine
    l_a: false
    l_b: false
    bond_order: single
""")
    records = generate_records(vocab, GenConfig(depth_min=1, depth_max=1,
                                                count=20, seed=1, dedup=True))
    assert len(records) == 1


# -- embedding -------------------------------------------------------------------

def test_ideal_bond_length_table_and_fallback():
    assert ideal_bond_length("C", "C", "single") == 1.54
    assert ideal_bond_length("Br", "C", "single") == 1.94
    # fallback pair not in the table
    assert 1.0 < ideal_bond_length("B", "S", "single") < 2.2


def test_embed_two_bonded_carbons(rng):
    vocab = load_vocabulary("""
blocks:
  - id: 0
    atoms: [{element: C}, {element: C}]
    bonds: [[0, 1, single]]
    centers: [{atom: 0, class: x}]
reactions:
  - id: 0
    class_a: x
    class_b: x
    l_a: false
    l_b: false
    bond_order: single
""")
    from blockflow.graph import instantiate_block

    g = instantiate_block(vocab.blocks[0], slot=0)
    coords = embed_coordinates(g, rng)
    d = np.linalg.norm(coords[0] - coords[1])
    assert 1.23 <= d <= 1.85


def test_embed_deterministic(toy_vocab):
    g, atom_graph = generate_graph(toy_vocab, 2, np.random.default_rng(9))
    c1 = embed_coordinates(atom_graph, np.random.default_rng(33))
    c2 = embed_coordinates(atom_graph, np.random.default_rng(33))
    for key in c1:
        assert np.array_equal(c1[key], c2[key])


def test_embed_no_close_nonbonded_pairs(toy_vocab):
    rng = np.random.default_rng(100)
    violations = 0
    for _ in range(100):
        depth = int(rng.integers(1, 3))
        _, atom_graph = generate_graph(toy_vocab, depth, rng)
        coords = embed_coordinates(atom_graph, rng)
        keys = atom_graph.sorted_keys()
        bonded = {frozenset((a, b)) for a, b, _ in atom_graph.bonds}
        for i, a in enumerate(keys):
            for b in keys[i + 1:]:
                if frozenset((a, b)) in bonded:
                    continue
                if np.linalg.norm(coords[a] - coords[b]) < MIN_NONBONDED:
                    violations += 1
    assert violations == 0


def test_embed_bond_tolerance_on_generated(cc_vocab):
    rng = np.random.default_rng(7)
    for _ in range(10):
        _, atom_graph = generate_graph(cc_vocab, int(rng.integers(1, 4)), rng)
        coords = embed_coordinates(atom_graph, rng)
        for a, b, order in atom_graph.bonds:
            ea, eb = atom_graph.atoms[a][2], atom_graph.atoms[b][2]
            ideal = ideal_bond_length(ea, eb, order)
            d = np.linalg.norm(coords[a] - coords[b])
            assert abs(d - ideal) <= 0.2 * ideal


# -- block count prior -------------------------------------------------------------

def test_block_count_prior_simple(toy_vocab):
    records = generate_records(toy_vocab, GenConfig(depth_min=2, depth_max=2,
                                                    count=2, seed=1))
    records += generate_records(toy_vocab, GenConfig(depth_min=3, depth_max=3,
                                                     count=2, seed=2))
    prior = estimate_block_count_prior(records)
    assert prior.probs[3] == 0.5
    assert prior.probs[4] == 0.5
    assert prior.support == [3, 4]


def test_block_count_prior_point_mass(toy_records):
    prior = estimate_block_count_prior(toy_records[:1])
    assert prior.probs.sum() == 1.0
    assert len(prior.support) == 1


def test_block_count_prior_recount(toy_records):
    prior = estimate_block_count_prior(toy_records)
    counts = {}
    for rec in toy_records:
        counts[rec.graph.n] = counts.get(rec.graph.n, 0) + 1
    for n, k in counts.items():
        assert abs(prior.probs[n] - k / len(toy_records)) < 1e-12


def test_block_count_prior_empty():
    with pytest.raises(ValueError):
        estimate_block_count_prior([])

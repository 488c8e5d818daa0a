"""Procedural dataset generation: reaction graphs grown by uniform picks over
compatible coupling moves, toy 3D conformers from an incremental embedder,
and the empirical block-count prior used by the sampler.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .graph import (
    AtomGraph,
    ReactionGraph,
    canonical_code,
    codec_for,
    instantiate_block,
    couple,
    symmetrize,
)
from .io import MoleculeRecord
from .vocab import Vocabulary, compatible_tuples

logger = logging.getLogger(__name__)


class EmbedError(RuntimeError):
    """Coordinate relaxation failed to converge within its iteration budget."""


@dataclass(frozen=True)
class GenConfig:
    """Dataset generation settings; a molecule built from T coupling steps
    has T + 1 blocks."""

    depth_min: int
    depth_max: int
    count: int
    seed: int = 0
    dedup: bool = False

    def __post_init__(self):
        if not 1 <= self.depth_min <= self.depth_max:
            raise ValueError("need 1 <= depth_min <= depth_max")
        if self.count < 1:
            raise ValueError("count must be positive")


@dataclass(frozen=True)
class BlockCountPrior:
    """Empirical categorical prior over the number of blocks per molecule.
    ``probs[k]`` is the probability of n == k (index 0 unused)."""

    probs: np.ndarray

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.probs), p=self.probs))

    @property
    def support(self) -> list[int]:
        return [n for n, p in enumerate(self.probs) if p > 0]


def estimate_block_count_prior(records: list[MoleculeRecord]) -> BlockCountPrior:
    if not records:
        raise ValueError("empty dataset")
    n_max = max(r.graph.n for r in records)
    counts = np.zeros(n_max + 1, dtype=np.float64)
    for r in records:
        counts[r.graph.n] += 1
    return BlockCountPrior(probs=counts / counts.sum())


# ---------------------------------------------------------------------------
# Graph growth
# ---------------------------------------------------------------------------

def generate_graph(
    vocab: Vocabulary,
    depth: int,
    rng: np.random.Generator,
) -> tuple[ReactionGraph, AtomGraph]:
    """Grow one molecule: a uniformly chosen seed block, then up to ``depth``
    uniform picks over the compatible 5-tuples, breaking early when no move
    remains. The returned graph always passes validity checking."""
    codec = codec_for(vocab)
    node_blocks = [int(rng.integers(vocab.n_blocks))]
    atom_graph = instantiate_block(vocab.blocks[node_blocks[0]], slot=0)
    edges: list[tuple[int, int, int, int, int]] = []

    for _ in range(depth):
        moves = compatible_tuples(node_blocks, atom_graph.used_centers, vocab)
        if not moves:
            break
        move = moves[int(rng.integers(len(moves)))]
        new_slot = len(node_blocks)
        couple(
            atom_graph,
            slot=move.slot,
            block_a=vocab.blocks[node_blocks[move.slot]],
            new_block=vocab.blocks[move.new_block],
            new_slot=new_slot,
            template=vocab.reactions[move.reaction],
            center_a=move.center,
            center_b=move.new_center,
        )
        node_blocks.append(move.new_block)
        edges.append((move.slot, new_slot, move.reaction, move.center, move.new_center))

    n = len(node_blocks)
    x = np.asarray(node_blocks, dtype=np.int64)
    e = np.full((n, n), codec.no_edge, dtype=np.int64)
    for i, j, r, vi, vj in edges:
        e[i, j] = codec.encode(r, vi, vj)
    return ReactionGraph(n=n, x=x, e=symmetrize(e)), atom_graph


# ---------------------------------------------------------------------------
# Toy coordinate embedder
# ---------------------------------------------------------------------------

_BOND_TABLE: dict[tuple[str, str, str], float] | None = None

# covalent radii (angstrom) for the fallback length model
_RADII = {"C": 0.76, "N": 0.71, "O": 0.66, "B": 0.84,
          "F": 0.57, "Cl": 1.02, "Br": 1.20, "S": 1.05}
_ORDER_FACTOR = {"single": 1.0, "aromatic": 0.93, "double": 0.87, "triple": 0.78}


def _bond_table() -> dict[tuple[str, str, str], float]:
    global _BOND_TABLE
    if _BOND_TABLE is None:
        text = resources.files("blockflow.data").joinpath("bond_lengths.yaml").read_text()
        table = {}
        for row in yaml.safe_load(text)["pairs"]:
            a, b = sorted((row["a"], row["b"]))
            table[(a, b, row["order"])] = float(row["length"])
        _BOND_TABLE = table
    return _BOND_TABLE


def ideal_bond_length(elem_a: str, elem_b: str, order: str) -> float:
    a, b = sorted((elem_a, elem_b))
    table = _bond_table()
    if (a, b, order) in table:
        return table[(a, b, order)]
    return (_RADII[a] + _RADII[b]) * _ORDER_FACTOR[order]


MIN_NONBONDED = 0.8  # angstrom, hard floor for any non-bonded pair


def embed_coordinates(
    atom_graph: AtomGraph,
    rng: np.random.Generator,
    max_iter: int = 2000,
) -> dict[int, np.ndarray]:
    """Toy 3D coordinates for an assembled molecule: incremental placement
    along a BFS of the bond graph, then iterative relaxation of bond-length
    residuals with a short-range repulsion between non-bonded atoms.

    Returns atom key -> xyz. Raises :class:`EmbedError` when the relaxation
    does not reach every bonded pair within 20% of its ideal length and every
    non-bonded pair at least 0.8 A apart.
    """
    keys = atom_graph.sorted_keys()
    index = {k: i for i, k in enumerate(keys)}
    n = len(keys)
    coords = np.zeros((n, 3))

    bonds = []
    for a, b, order in atom_graph.bonds:
        ea = atom_graph.atoms[a][2]
        eb = atom_graph.atoms[b][2]
        bonds.append((index[a], index[b], ideal_bond_length(ea, eb, order)))
    adjacency: dict[int, list[int]] = {i: [] for i in range(n)}
    lengths: dict[tuple[int, int], float] = {}
    for i, j, length in bonds:
        adjacency[i].append(j)
        adjacency[j].append(i)
        lengths[(min(i, j), max(i, j))] = length

    # incremental placement
    placed = {0}
    queue = [0]
    while queue:
        cur = queue.pop(0)
        for nb in adjacency[cur]:
            if nb in placed:
                continue
            direction = rng.normal(size=3)
            for other in adjacency[cur]:
                if other in placed and other != nb:
                    away = coords[cur] - coords[other]
                    norm = np.linalg.norm(away)
                    if norm > 1e-9:
                        direction += 1.5 * away / norm
            direction /= max(np.linalg.norm(direction), 1e-9)
            coords[nb] = coords[cur] + lengths[(min(cur, nb), max(cur, nb))] * direction
            placed.add(nb)
            queue.append(nb)
    if len(placed) != n:
        raise EmbedError("atom graph is disconnected")

    bond_idx = np.asarray([(i, j) for i, j, _ in bonds], dtype=np.int64).reshape(-1, 2)
    bond_len = np.asarray([l for _, _, l in bonds])
    bonded = {(min(i, j), max(i, j)) for i, j, _ in bonds}
    pair_i, pair_j = np.triu_indices(n, k=1)
    nonbonded = np.asarray(
        [k for k, (i, j) in enumerate(zip(pair_i, pair_j)) if (i, j) not in bonded],
        dtype=np.int64,
    )
    repulse_radius = 1.6

    for _ in range(max_iter):
        moved = np.zeros_like(coords)
        if len(bond_idx):
            delta = coords[bond_idx[:, 1]] - coords[bond_idx[:, 0]]
            dist = np.linalg.norm(delta, axis=1)
            dist = np.maximum(dist, 1e-9)
            err = (dist - bond_len) / dist
            shift = 0.4 * err[:, None] * delta
            np.add.at(moved, bond_idx[:, 0], 0.5 * shift)
            np.add.at(moved, bond_idx[:, 1], -0.5 * shift)
        if len(nonbonded):
            ii = pair_i[nonbonded]
            jj = pair_j[nonbonded]
            delta = coords[jj] - coords[ii]
            dist = np.linalg.norm(delta, axis=1)
            close = dist < repulse_radius
            if close.any():
                d = np.maximum(dist[close], 1e-9)
                push = 0.3 * (repulse_radius - d) / d
                vec = push[:, None] * delta[close]
                np.add.at(moved, ii[close], -vec)
                np.add.at(moved, jj[close], vec)
        coords += moved

        ok_bonds = True
        if len(bond_idx):
            dist = np.linalg.norm(coords[bond_idx[:, 1]] - coords[bond_idx[:, 0]], axis=1)
            ok_bonds = bool(np.all(np.abs(dist - bond_len) <= 0.05 * bond_len))
        ok_rep = True
        if len(nonbonded):
            dist = np.linalg.norm(coords[pair_j[nonbonded]] - coords[pair_i[nonbonded]], axis=1)
            ok_rep = bool(np.all(dist >= MIN_NONBONDED + 0.1))
        if ok_bonds and ok_rep:
            return {k: coords[index[k]].copy() for k in keys}
    raise EmbedError(f"relaxation did not converge within {max_iter} iterations")


def record_from_graph(
    graph: ReactionGraph,
    atom_graph: AtomGraph,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> MoleculeRecord:
    positions = embed_coordinates(atom_graph, rng)
    coords = np.zeros((graph.n, vocab.max_atoms, 3))
    atom_mask = np.zeros((graph.n, vocab.max_atoms), dtype=bool)
    for key, (slot, local) in atom_graph.provenance.items():
        coords[slot, local] = positions[key]
        atom_mask[slot, local] = True
    return MoleculeRecord(graph=graph, coords=coords, atom_mask=atom_mask)


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

def _generate_one(vocab: Vocabulary, cfg: GenConfig, idx: int) -> MoleculeRecord | None:
    for attempt in range(5):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, idx, attempt]))
        depth = int(rng.integers(cfg.depth_min, cfg.depth_max + 1))
        graph, atom_graph = generate_graph(vocab, depth, rng)
        try:
            return record_from_graph(graph, atom_graph, vocab, rng)
        except EmbedError:
            logger.warning("record %d attempt %d: embedding failed, retrying", idx, attempt)
    logger.warning("record %d: skipped after repeated embedding failures", idx)
    return None


def generate_records(vocab: Vocabulary, cfg: GenConfig, threads: int = 1) -> list[MoleculeRecord]:
    """Generate ``cfg.count`` records; each record owns an independent RNG
    stream derived from (seed, index), so output is identical for any worker
    count."""
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: _generate_one(vocab, cfg, i), range(cfg.count)))
    else:
        results = [_generate_one(vocab, cfg, i) for i in range(cfg.count)]
    records = [r for r in results if r is not None]
    if cfg.dedup:
        seen: set[bytes] = set()
        unique = []
        for r in records:
            code = canonical_code(r.graph, vocab)
            if code not in seen:
                seen.add(code)
                unique.append(r)
        records = unique
    return records


def builtin_vocabulary_path(name: str):
    """Path to a vocabulary shipped with the package ('toy' or 'crosscoupling')."""
    fname = {"toy": "vocab_toy.yaml", "crosscoupling": "vocab_crosscoupling.yaml"}[name]
    return resources.files("blockflow.data").joinpath(fname)


def load_builtin_vocabulary(name: str) -> Vocabulary:
    from .vocab import load_vocabulary

    return load_vocabulary(builtin_vocabulary_path(name).read_text())

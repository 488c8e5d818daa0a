"""Reaction-graph representation and atom-level assembly.

A molecule is a tree over building-block slots: node tensor ``x`` holds block
identities (plus a mask token), edge tensor ``e`` holds categorical edge
labels. A concrete edge between slots ``i < j`` encodes the triple
(reaction, center on i, center on j), with slot ``i`` playing reagent A.
Assembly replays the couplings over the atom-level graphs of the blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from .vocab import BuildingBlock, ReactionTemplate, Vocabulary


@lru_cache(maxsize=64)
def triu_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cached strict upper-triangle index pair for size n (read-only use)."""
    return np.triu_indices(n, k=1)


class GraphError(ValueError):
    """Raised for malformed or incompatible reaction graphs."""


# ---------------------------------------------------------------------------
# Edge label codec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeCodec:
    """Bijection between edge labels and the categorical channel space.

    Channels are laid out as ``r * V**2 + v_i * V + v_j`` for concrete triples,
    followed by the no-edge channel and the mask channel. This layout is an
    artifact convention; it is part of the dataset format.
    """

    n_reactions: int
    max_centers: int

    @property
    def no_edge(self) -> int:
        return self.n_reactions * self.max_centers ** 2

    @property
    def mask(self) -> int:
        return self.no_edge + 1

    @property
    def n_channels(self) -> int:
        """Full channel count including no-edge and mask."""
        return self.no_edge + 2

    @property
    def n_prob_channels(self) -> int:
        """Channels a denoiser may put mass on: concrete labels + no-edge."""
        return self.no_edge + 1

    def encode(self, reaction: int, center_i: int, center_j: int) -> int:
        v = self.max_centers
        if not (0 <= reaction < self.n_reactions and 0 <= center_i < v and 0 <= center_j < v):
            raise GraphError(
                f"edge label out of range: r={reaction}, v_i={center_i}, v_j={center_j}")
        return reaction * v * v + center_i * v + center_j

    def decode(self, index: int) -> tuple[int, int, int]:
        """Inverse of :meth:`encode`; only valid for concrete channels."""
        if not 0 <= index < self.no_edge:
            raise GraphError(f"not a concrete edge channel: {index}")
        v = self.max_centers
        reaction, rest = divmod(index, v * v)
        center_i, center_j = divmod(rest, v)
        return reaction, center_i, center_j

    def is_concrete(self, index: int) -> bool:
        return 0 <= index < self.no_edge


def codec_for(vocab: Vocabulary) -> EdgeCodec:
    return EdgeCodec(n_reactions=vocab.n_reactions, max_centers=vocab.max_centers)


def node_mask_token(vocab: Vocabulary) -> int:
    """The absorbing token for node identities (one past the last block id)."""
    return vocab.n_blocks


# ---------------------------------------------------------------------------
# Reaction graph
# ---------------------------------------------------------------------------

@dataclass
class ReactionGraph:
    """Block-level molecule state.

    ``x``: int array [N] of block ids (or the mask token) — slots >= n are
    padding and hold block id 0 by convention (never the mask token, so
    visibility rules treat them as denoised-and-empty).
    ``e``: int array [N, N] of edge channel indices, symmetric, no-edge on the
    diagonal and on all padding rows/columns.
    """

    n: int
    x: np.ndarray
    e: np.ndarray

    @property
    def capacity(self) -> int:
        return len(self.x)

    def copy(self) -> "ReactionGraph":
        return ReactionGraph(n=self.n, x=self.x.copy(), e=self.e.copy())

    def key(self) -> bytes:
        """Hashable evidence key over the live region (padding excluded)."""
        n = self.n
        iu = triu_pairs(n)
        return (n.to_bytes(2, "little")
                + self.x[:n].tobytes()
                + self.e[:n, :n][iu].tobytes())


def empty_graph(n: int, capacity: int, codec: EdgeCodec) -> ReactionGraph:
    """A fully masked graph state with clean padding."""
    if not 1 <= n <= capacity:
        raise GraphError(f"need 1 <= n <= capacity, got n={n}, capacity={capacity}")
    x = np.zeros(capacity, dtype=np.int64)
    e = np.full((capacity, capacity), codec.no_edge, dtype=np.int64)
    x[:n] = -1  # placeholder; caller sets mask token
    return ReactionGraph(n=n, x=x, e=e)


def masked_graph(n: int, capacity: int, vocab: Vocabulary) -> ReactionGraph:
    codec = codec_for(vocab)
    g = empty_graph(n, capacity, codec)
    g.x[:n] = node_mask_token(vocab)
    iu = np.triu_indices(n, k=1)
    g.e[:n, :n][iu] = codec.mask
    g.e[:n, :n] = symmetrize(g.e[:n, :n])
    return g


def symmetrize(e: np.ndarray) -> np.ndarray:
    """Copy the upper triangle onto the lower; diagonal untouched."""
    out = e.copy()
    iu = triu_pairs(out.shape[0])
    out[(iu[1], iu[0])] = out[iu]
    return out


def iter_edges(g: ReactionGraph, codec: EdgeCodec) -> Iterator[tuple[int, int, int, int, int]]:
    """Yield concrete edges as (i, j, reaction, center_i, center_j), i < j."""
    for i in range(g.n):
        for j in range(i + 1, g.n):
            ch = int(g.e[i, j])
            if codec.is_concrete(ch):
                yield (i, j, *codec.decode(ch))


def occupied_centers(g: ReactionGraph, codec: EdgeCodec) -> set[tuple[int, int]]:
    occ: set[tuple[int, int]] = set()
    for i, j, _, vi, vj in iter_edges(g, codec):
        occ.add((i, vi))
        occ.add((j, vj))
    return occ


# ---------------------------------------------------------------------------
# Atom-level graph and assembly
# ---------------------------------------------------------------------------

@dataclass
class AtomGraph:
    """Atom-level molecule under assembly.

    Atoms are stored under stable integer keys that survive leaving-group
    deletions; ``provenance`` maps each live atom key back to its
    (slot, local index) origin.
    """

    atoms: dict[int, tuple[int, int, str, bool]] = field(default_factory=dict)
    bonds: list[tuple[int, int, str]] = field(default_factory=list)
    provenance: dict[int, tuple[int, int]] = field(default_factory=dict)
    used_centers: set[tuple[int, int]] = field(default_factory=set)
    _next_key: int = 0

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def add_atom(self, slot: int, local: int, element: str, in_ring: bool) -> int:
        key = self._next_key
        self._next_key += 1
        self.atoms[key] = (slot, local, element, in_ring)
        self.provenance[key] = (slot, local)
        return key

    def neighbors(self, key: int) -> list[int]:
        out = []
        for a, b, _ in self.bonds:
            if a == key:
                out.append(b)
            elif b == key:
                out.append(a)
        return out

    def atom_key(self, slot: int, local: int) -> int:
        for key, (s, l) in self.provenance.items():
            if (s, l) == (slot, local):
                return key
        raise GraphError(f"no live atom at slot {slot}, local index {local}")

    def sorted_keys(self) -> list[int]:
        return sorted(self.atoms)


def unique_neighbor(g: AtomGraph, atom: int) -> int:
    """The single neighbor of a degree-1 atom; errors otherwise."""
    nbrs = g.neighbors(atom)
    if len(nbrs) != 1:
        raise GraphError(f"atom {atom} has degree {len(nbrs)}, expected 1")
    return nbrs[0]


def instantiate_block(block: BuildingBlock, slot: int) -> AtomGraph:
    g = AtomGraph()
    keys = [g.add_atom(slot, li, a.element, a.in_ring) for li, a in enumerate(block.atoms)]
    for a, b, order in block.bonds:
        g.bonds.append((keys[a], keys[b], order))
    return g


def couple(
    g: AtomGraph,
    slot: int,
    block_a: BuildingBlock,
    new_block: BuildingBlock,
    new_slot: int,
    template: ReactionTemplate,
    center_a: int,
    center_b: int,
) -> AtomGraph:
    """Attach ``new_block`` (reagent B) to the existing node at ``slot``
    (reagent A) via ``template``, mutating and returning ``g``.

    Leaving-flagged sides lose their center atom; the formed cross-bond is
    rerouted to that atom's unique neighbor. Each center is consumable once.
    """
    if not 0 <= center_a < len(block_a.centers):
        raise GraphError(f"center {center_a} out of range for block {block_a.id}")
    if not 0 <= center_b < len(new_block.centers):
        raise GraphError(f"center {center_b} out of range for block {new_block.id}")
    if block_a.centers[center_a].center_class != template.class_a:
        raise GraphError(
            f"block {block_a.id} center {center_a} does not match reagent A of "
            f"reaction {template.id}")
    if new_block.centers[center_b].center_class != template.class_b:
        raise GraphError(
            f"block {new_block.id} center {center_b} does not match reagent B of "
            f"reaction {template.id}")
    if (slot, center_a) in g.used_centers:
        raise GraphError(f"center ({slot}, {center_a}) already occupied")
    if (new_slot, center_b) in g.used_centers:
        raise GraphError(f"center ({new_slot}, {center_b}) already occupied")

    new_keys = [
        g.add_atom(new_slot, li, a.element, a.in_ring)
        for li, a in enumerate(new_block.atoms)
    ]
    for a, b, order in new_block.bonds:
        g.bonds.append((new_keys[a], new_keys[b], order))

    end_a = g.atom_key(slot, block_a.centers[center_a].atom)
    end_b = new_keys[new_block.centers[center_b].atom]

    def remove_leaving(atom_key: int) -> int:
        survivor = unique_neighbor(g, atom_key)
        g.bonds = [bd for bd in g.bonds if atom_key not in (bd[0], bd[1])]
        del g.atoms[atom_key]
        del g.provenance[atom_key]
        return survivor

    if template.leaving_a:
        end_a = remove_leaving(end_a)
    if template.leaving_b:
        end_b = remove_leaving(end_b)

    g.bonds.append((end_a, end_b, template.bond_order))
    g.used_centers.add((slot, center_a))
    g.used_centers.add((new_slot, center_b))
    return g


def _check_tree(g: ReactionGraph, codec: EdgeCodec) -> tuple[bool, list[tuple[int, int]]]:
    edges = [(i, j) for i, j, *_ in iter_edges(g, codec)]
    if len(edges) != g.n - 1:
        return False, edges
    adj: dict[int, list[int]] = {i: [] for i in range(g.n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    frontier = [0]
    while frontier:
        cur = frontier.pop()
        for nb in adj[cur]:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    return len(seen) == g.n, edges


def assemble_atom_graph(g: ReactionGraph, vocab: Vocabulary) -> AtomGraph:
    """Instantiate node 0 and replay couplings over a BFS traversal from node
    0 (children by ascending index). Deterministic; couplings on disjoint
    centers commute, so any fixed traversal yields the same atom graph.
    """
    codec = codec_for(vocab)
    mask = node_mask_token(vocab)
    if np.any(g.x[:g.n] == mask) or np.any(g.e[:g.n, :g.n] == codec.mask):
        raise GraphError("graph contains masked entries")
    ok, _ = _check_tree(g, codec)
    if not ok:
        raise GraphError("edges do not form a spanning tree")

    labels = {(i, j): (r, vi, vj) for i, j, r, vi, vj in iter_edges(g, codec)}
    adj: dict[int, list[int]] = {i: [] for i in range(g.n)}
    for i, j in labels:
        adj[i].append(j)
        adj[j].append(i)

    atom_graph = instantiate_block(vocab.blocks[int(g.x[0])], slot=0)
    visited = {0}
    queue = [0]
    while queue:
        cur = queue.pop(0)
        for child in sorted(adj[cur]):
            if child in visited:
                continue
            visited.add(child)
            lo, hi = min(cur, child), max(cur, child)
            r, v_lo, v_hi = labels[(lo, hi)]
            if cur != lo:
                raise GraphError(
                    f"edge ({lo},{hi}) traversed against its reagent orientation")
            couple(
                atom_graph,
                slot=cur,
                block_a=vocab.blocks[int(g.x[cur])],
                new_block=vocab.blocks[int(g.x[child])],
                new_slot=child,
                template=vocab.reactions[r],
                center_a=v_lo,
                center_b=v_hi,
            )
            queue.append(child)
    return atom_graph


def atom_validity(g: ReactionGraph, vocab: Vocabulary) -> np.ndarray:
    """Per-(slot, atom) mask of atoms surviving assembly, shape
    [capacity, max_atoms]. Falls back to full block rows when the graph cannot
    be assembled (invalid trees still need a coordinate support)."""
    s0 = np.zeros((g.capacity, vocab.max_atoms), dtype=bool)
    try:
        atom_graph = assemble_atom_graph(g, vocab)
    except GraphError:
        for i in range(g.n):
            s0[i, : vocab.atom_count(int(g.x[i]))] = True
        return s0
    for slot, local in atom_graph.provenance.values():
        s0[slot, local] = True
    return s0


# ---------------------------------------------------------------------------
# Validity report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidityReport:
    fully_denoised: bool
    is_tree: bool
    edges_compatible: bool
    centers_unique: bool
    failures: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return (self.fully_denoised and self.is_tree
                and self.edges_compatible and self.centers_unique)


def check_validity(g: ReactionGraph, vocab: Vocabulary) -> ValidityReport:
    """Post-hoc validity check with failure attribution (never raises)."""
    codec = codec_for(vocab)
    mask = node_mask_token(vocab)
    failures: list[str] = []

    fully = not (np.any(g.x[:g.n] == mask) or np.any(g.e[:g.n, :g.n] == codec.mask))
    if not fully:
        failures.append("masked entries remain")

    is_tree = False
    edges: list[tuple[int, int, int, int, int]] = []
    if fully:
        ok, pairs = _check_tree(g, codec)
        is_tree = ok
        if not ok:
            failures.append(
                f"edges do not form a spanning tree ({len(pairs)} edges over {g.n} nodes)")
        edges = list(iter_edges(g, codec))

    compatible = True
    centers_ok = True
    if fully:
        used: set[tuple[int, int]] = set()
        for i, j, r, vi, vj in edges:
            template = vocab.reactions[r]
            block_i = vocab.blocks[int(g.x[i])]
            block_j = vocab.blocks[int(g.x[j])]
            if not (vi < len(block_i.centers)
                    and block_i.centers[vi].center_class == template.class_a):
                compatible = False
                failures.append(f"edge ({i},{j}): block {block_i.id} fails reagent A match")
            if not (vj < len(block_j.centers)
                    and block_j.centers[vj].center_class == template.class_b):
                compatible = False
                failures.append(f"edge ({i},{j}): block {block_j.id} fails reagent B match")
            for endpoint in ((i, vi), (j, vj)):
                if endpoint in used:
                    centers_ok = False
                    failures.append(f"center {endpoint} used by more than one edge")
                used.add(endpoint)
    return ValidityReport(
        fully_denoised=fully,
        is_tree=is_tree,
        edges_compatible=compatible and fully,
        centers_unique=centers_ok and fully,
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# Canonical codes
# ---------------------------------------------------------------------------

def canonical_code(g: ReactionGraph, vocab: Vocabulary) -> bytes:
    """Slot-permutation-invariant code for a valid tree.

    Rooted-tree canonical form (AHU-style) minimized over all roots; node
    labels are block ids, edge labels are oriented (reaction, parent center,
    child center) along the traversal. Equal codes == labeled-tree isomorphism.
    """
    codec = codec_for(vocab)
    report = check_validity(g, vocab)
    if not (report.fully_denoised and report.is_tree):
        raise GraphError(f"canonical_code requires a valid tree: {report.failures}")

    adj: dict[int, list[tuple[int, tuple[int, int, int]]]] = {i: [] for i in range(g.n)}
    for i, j, r, vi, vj in iter_edges(g, codec):
        adj[i].append((j, (r, vi, vj)))
        adj[j].append((i, (r, vj, vi)))

    def encode_from(node: int, parent: int) -> tuple:
        children = []
        for nb, label in adj[node]:
            if nb != parent:
                children.append((label, encode_from(nb, node)))
        children.sort()
        return (int(g.x[node]), tuple(children))

    best = min(repr(encode_from(root, -1)) for root in range(g.n))
    return best.encode()

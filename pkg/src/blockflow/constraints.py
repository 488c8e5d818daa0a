"""Logit-space constraints applied between the denoiser and the reverse step:
no-edge diagonals, the global edge-count cap, chemistry compatibility masking,
and the single-parent edge pruning that makes every sampled edge set a tree.

The compatibility mask goes slightly beyond per-edge class matching: it also
zeroes channels whose reaction centers are already consumed by a denoised edge
and channels that would leave a masked endpoint with no admissible block.
Together with sequential occupancy tracking inside the edge pruning draw, this
makes any subset of simultaneously unmasked entries jointly satisfiable, so a
constrained trajectory can only terminate in a valid molecule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .graph import ReactionGraph, codec_for, iter_edges, node_mask_token, occupied_centers, symmetrize
from .vocab import Vocabulary, block_candidates

logger = logging.getLogger(__name__)


class ConstraintDeadlock(RuntimeError):
    """An edge column lost all probability mass; the trajectory cannot finish."""


@dataclass(frozen=True)
class _VocabTables:
    """Static per-vocabulary lookup tables over concrete edge channels."""

    chan_reaction: np.ndarray   # [C] reaction id per concrete channel
    chan_center_a: np.ndarray   # [C] center index on the lower (A) side
    chan_center_b: np.ndarray   # [C] center index on the higher (B) side
    member_a: np.ndarray        # [C, B] block b admissible on side A of channel
    member_b: np.ndarray        # [C, B] block b admissible on side B of channel
    cand_a: np.ndarray          # [R, V, B] center-matched reagent sets, side A
    cand_b: np.ndarray          # [R, V, B] center-matched reagent sets, side B


@lru_cache(maxsize=8)
def _tables(vocab: Vocabulary) -> _VocabTables:
    codec = codec_for(vocab)
    n_concrete = codec.no_edge
    b = vocab.n_blocks
    r_n, v_n = vocab.n_reactions, vocab.max_centers
    cand_a = np.zeros((r_n, v_n, b), dtype=bool)
    cand_b = np.zeros((r_n, v_n, b), dtype=bool)
    for r in range(r_n):
        for v in range(v_n):
            for blk in block_candidates(vocab, r, v, "A"):
                cand_a[r, v, blk] = True
            for blk in block_candidates(vocab, r, v, "B"):
                cand_b[r, v, blk] = True
    chan_reaction = np.zeros(n_concrete, dtype=np.int64)
    chan_center_a = np.zeros(n_concrete, dtype=np.int64)
    chan_center_b = np.zeros(n_concrete, dtype=np.int64)
    member_a = np.zeros((n_concrete, b), dtype=bool)
    member_b = np.zeros((n_concrete, b), dtype=bool)
    for ch in range(n_concrete):
        r, vi, vj = codec.decode(ch)
        chan_reaction[ch] = r
        chan_center_a[ch] = vi
        chan_center_b[ch] = vj
        member_a[ch] = cand_a[r, vi]
        member_b[ch] = cand_b[r, vj]
    return _VocabTables(chan_reaction, chan_center_a, chan_center_b,
                        member_a, member_b, cand_a, cand_b)


def _renormalize(row: np.ndarray) -> bool:
    total = row.sum()
    if total <= 0.0:
        return False
    row /= total
    return True


# ---------------------------------------------------------------------------
# The three logit constraints
# ---------------------------------------------------------------------------

def apply_diagonal_no_edge(edge_probs: np.ndarray) -> np.ndarray:
    """Point mass on no-edge along the diagonal; a block never couples to
    itself. Idempotent; off-diagonal rows untouched."""
    out = edge_probs.copy()
    no_edge = out.shape[-1] - 1
    idx = np.arange(out.shape[0])
    out[idx, idx, :] = 0.0
    out[idx, idx, no_edge] = 1.0
    return out


def apply_edge_count_limit(edge_probs: np.ndarray, g: ReactionGraph, vocab: Vocabulary) -> np.ndarray:
    """Once the upper triangle holds n - 1 concrete denoised edges, every
    still-masked entry is forced to no-edge."""
    codec = codec_for(vocab)
    n = g.n
    iu = np.triu_indices(n, k=1)
    vals = g.e[:n, :n][iu]
    k_t = int(np.sum((vals != codec.mask) & (vals != codec.no_edge)))
    if k_t > n - 1:
        raise ValueError(f"invalid state: {k_t} concrete edges for {n} blocks")
    if k_t < n - 1:
        return edge_probs
    out = edge_probs.copy()
    no_edge = out.shape[-1] - 1
    masked = vals == codec.mask
    for i, j in zip(iu[0][masked], iu[1][masked]):
        out[i, j, :] = 0.0
        out[i, j, no_edge] = 1.0
        out[j, i, :] = out[i, j, :]
    return out


def _allowed_blocks(
    g: ReactionGraph,
    vocab: Vocabulary,
    tables: _VocabTables,
) -> dict[int, np.ndarray]:
    """Per-slot admissible-block mask. Denoised slots are their own point set;
    masked slots are constrained by every denoised incident edge."""
    codec = codec_for(vocab)
    mask_tok = node_mask_token(vocab)
    b = vocab.n_blocks
    allowed = {}
    for i in range(g.n):
        if g.x[i] != mask_tok:
            row = np.zeros(b, dtype=bool)
            row[int(g.x[i])] = True
        else:
            row = np.ones(b, dtype=bool)
        allowed[i] = row
    for i, j, r, vi, vj in iter_edges(g, codec):
        if g.x[i] == mask_tok:
            allowed[i] &= tables.cand_a[r, vi]
        if g.x[j] == mask_tok:
            allowed[j] &= tables.cand_b[r, vj]
    return allowed


def apply_compatibility_mask(
    node_probs: np.ndarray,
    edge_probs: np.ndarray,
    g: ReactionGraph,
    vocab: Vocabulary,
) -> tuple[np.ndarray, np.ndarray]:
    """Restrict node rows to center-matched reagents demanded by denoised
    incident edges, and masked edge channels to labels consistent with their
    endpoints' identities (or remaining identity sets), center ranges, and
    center occupancy. Fully zeroed rows fall back to no-edge (edges) or a
    uniform vocabulary row (nodes), with a logged warning."""
    codec = codec_for(vocab)
    mask_tok = node_mask_token(vocab)
    tables = _tables(vocab)
    n = g.n

    nodes = node_probs.copy()
    edges = edge_probs.copy()
    allowed = _allowed_blocks(g, vocab, tables)
    occupied = occupied_centers(g, codec)

    for i in range(n):
        if g.x[i] != mask_tok:
            continue
        row = nodes[i]
        row[~allowed[i]] = 0.0
        if not _renormalize(row):
            logger.warning("node %d: compatibility emptied its row; uniform fallback", i)
            row[:] = 1.0 / len(row)

    no_edge = edges.shape[-1] - 1
    for i in range(n):
        for j in range(i + 1, n):
            if g.e[i, j] != codec.mask:
                continue
            ok = np.ones(no_edge, dtype=bool)
            ok &= tables.member_a[:, allowed[i]].any(axis=1)
            ok &= tables.member_b[:, allowed[j]].any(axis=1)
            for slot, centers in ((i, tables.chan_center_a), (j, tables.chan_center_b)):
                for (occ_slot, occ_center) in occupied:
                    if occ_slot == slot:
                        ok &= centers != occ_center
            row = edges[i, j]
            row[:no_edge][~ok] = 0.0
            if not _renormalize(row):
                logger.warning(
                    "edge (%d,%d): compatibility emptied its row; no-edge fallback", i, j)
                row[:] = 0.0
                row[no_edge] = 1.0
            edges[j, i] = row
    return nodes, edges


def apply_constraints(
    node_probs: np.ndarray,
    edge_probs: np.ndarray,
    g: ReactionGraph,
    vocab: Vocabulary,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed application order: cheapest absolute constraints first."""
    edge_probs = apply_diagonal_no_edge(edge_probs)
    edge_probs = apply_edge_count_limit(edge_probs, g, vocab)
    return apply_compatibility_mask(node_probs, edge_probs, g, vocab)


# ---------------------------------------------------------------------------
# Single-parent edge pruning
# ---------------------------------------------------------------------------

def sample_edges(
    edge_probs: np.ndarray,
    g: ReactionGraph,
    n: int,
    rng: np.random.Generator,
    vocab: Vocabulary | None = None,
) -> np.ndarray:
    """Resolve one parent edge per block column and return the pruned
    probability tensor fed to the reverse step.

    For each column j > 0 the (parent, channel) pair is drawn jointly from the
    column's concrete probability mass; every other pair in the column becomes
    a no-edge point mass. Columns whose parent edge is already denoised are
    forced to re-select it, and with ``vocab`` given the draws additionally
    respect center occupancy across the columns resolved in this call, so
    simultaneous unmaskings can never conflict. Already-denoised entries are
    carried over as point masses.
    """
    codec = codec_for(vocab) if vocab is not None else None
    no_edge = edge_probs.shape[-1] - 1
    out = np.zeros_like(edge_probs)
    for k in range(len(out)):
        out[k, :, no_edge] = 1.0
        out[:, k, no_edge] = 1.0

    tables = _tables(vocab) if vocab is not None else None
    occupied: set[tuple[int, int]] = set()
    denoised_edges: dict[int, tuple[int, int]] = {}
    if codec is not None:
        occupied = occupied_centers(g, codec)
        for i, j, r, vi, vj in iter_edges(g, codec):
            denoised_edges[j] = (i, codec.encode(r, vi, vj))
    else:
        # structural single-parent forcing still needs the denoised edges
        for i in range(n):
            for j in range(i + 1, n):
                ch = int(g.e[i, j])
                if ch < no_edge:
                    denoised_edges[j] = (i, ch)

    for j in range(1, n):
        if j in denoised_edges:
            parent, ch = denoised_edges[j]
            out[parent, j, :] = 0.0
            out[parent, j, ch] = 1.0
            continue
        masses = edge_probs[:j, j, :no_edge].copy()
        if tables is not None:
            for (occ_slot, occ_center) in occupied:
                if occ_slot < j:
                    masses[occ_slot, tables.chan_center_a == occ_center] = 0.0
                if occ_slot == j:
                    masses[:, tables.chan_center_b == occ_center] = 0.0
        total = masses.sum()
        if total <= 0.0:
            raise ConstraintDeadlock(f"edge column {j} has zero concrete mass")
        flat = masses.reshape(-1) / total
        pick = int(rng.choice(len(flat), p=flat))
        parent, ch = divmod(pick, no_edge)
        out[parent, j, :] = 0.0
        out[parent, j, ch] = 1.0
        if tables is not None:
            occupied.add((parent, int(tables.chan_center_a[ch])))
            occupied.add((j, int(tables.chan_center_b[ch])))
    nn = len(out)
    iu = np.triu_indices(nn, k=1)
    out[(iu[1], iu[0])] = out[iu]
    return out

"""Denoiser contract, atom featurization, training losses, and two concrete
denoisers that stand in for a neural backbone at desk scale:

* :class:`OracleDenoiser` — the exact Bayes posterior over a finite empirical
  dataset, used as a ground-truth test double for the whole sampling stack.
* :class:`TabularDenoiser` — a minimal trainable model (categorical count
  tables conditioned on position and a time bucket, plus per-(slot, block)
  coordinate means) that exercises the loss stack end to end.

Every denoiser output obeys zero-masking structurally (probability arrays
have no mask channel) and carry-over exactly (observed entries are returned
as point masses).
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, forward_noise, loss_weight
from .flow import masked_centroid, pair_data
from .graph import ReactionGraph, codec_for, node_mask_token, symmetrize
from .io import MoleculeRecord
from .vocab import ELEMENTS, Vocabulary


class DenoiseError(RuntimeError):
    pass


@dataclass
class DenoiserOutput:
    """Predicted clean-state distributions and coordinates.

    ``node_probs``: [N, B] rows over block ids (no mask channel).
    ``edge_probs``: [N, N, R*V^2 + 1] rows over concrete channels + no-edge.
    ``coords_pred``: [N, M, 3] estimate of the centered clean coordinates.
    """

    node_probs: np.ndarray
    edge_probs: np.ndarray
    coords_pred: np.ndarray


def validate_denoiser_output(out: DenoiserOutput, g: ReactionGraph, vocab: Vocabulary,
                             atol: float = 1e-6) -> None:
    """Assert the output contract: simplex rows, carry-over point masses on
    observed entries, and edge symmetry. Raises :class:`DenoiseError`."""
    codec = codec_for(vocab)
    mask_tok = node_mask_token(vocab)
    n = g.n
    if out.node_probs.shape[1] != vocab.n_blocks:
        raise DenoiseError("node_probs carries a mask channel or wrong width")
    if out.edge_probs.shape[2] != codec.n_prob_channels:
        raise DenoiseError("edge_probs channel count must be R*V^2 + 1")
    if np.any(out.node_probs < -atol) or np.any(out.edge_probs < -atol):
        raise DenoiseError("negative probabilities")
    if not np.allclose(out.node_probs[:n].sum(axis=1), 1.0, atol=atol):
        raise DenoiseError("node rows must sum to 1")
    live = out.edge_probs[:n, :n]
    if not np.allclose(live.sum(axis=2), 1.0, atol=atol):
        raise DenoiseError("edge rows must sum to 1")
    if not np.allclose(live, np.swapaxes(live, 0, 1), atol=atol):
        raise DenoiseError("edge_probs must be symmetric")
    for i in range(n):
        if g.x[i] != mask_tok and abs(out.node_probs[i, int(g.x[i])] - 1.0) > atol:
            raise DenoiseError(f"carry-over violated at node {i}")
    for i in range(n):
        for j in range(i + 1, n):
            ch = int(g.e[i, j])
            if ch != codec.mask and abs(out.edge_probs[i, j, ch] - 1.0) > atol:
                raise DenoiseError(f"carry-over violated at edge ({i},{j})")
    if not np.all(np.isfinite(out.coords_pred)):
        raise DenoiseError("non-finite coordinate prediction")


class Denoiser(ABC):
    """Contract: given a partially masked state and centered coordinates at
    time t, predict clean node/edge distributions and coordinates. ``prior``
    carries the trajectory's initial Gaussian draw for denoisers that pair
    coordinates against it."""

    vocab: Vocabulary

    @abstractmethod
    def denoise(self, g: ReactionGraph, c_tilde: np.ndarray, t: float,
                prior: np.ndarray | None = None) -> DenoiserOutput:
        ...


# ---------------------------------------------------------------------------
# Atom-level featurization (exposed for denoisers; the tabular model works on
# block identities directly)
# ---------------------------------------------------------------------------

N_ELEMENT_CHANNELS = len(ELEMENTS) + 1  # 8 concrete elements + mask
N_BOND_CHANNELS = 5                     # 4 orders + mask
_BOND_INDEX = {"single": 0, "double": 1, "triple": 2, "aromatic": 3}


def featurize_atoms(g: ReactionGraph, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Per-atom one-hot features [N, M, 11] (element incl. mask, ring flag,
    center flag) and intra-block bond features [N, M, M, 5]. Masked slots get
    the mask element and all-mask intra-block bonds; padding stays zero."""
    mask_tok = node_mask_token(vocab)
    n_cap, m = g.capacity, vocab.max_atoms
    atom_feats = np.zeros((n_cap, m, N_ELEMENT_CHANNELS + 2))
    bond_feats = np.zeros((n_cap, m, m, N_BOND_CHANNELS))
    elem_index = {e: k for k, e in enumerate(ELEMENTS)}
    for i in range(g.n):
        if g.x[i] == mask_tok:
            atom_feats[i, :, len(ELEMENTS)] = 1.0
            off_diag = ~np.eye(m, dtype=bool)
            bond_feats[i][off_diag, N_BOND_CHANNELS - 1] = 1.0
            continue
        block = vocab.blocks[int(g.x[i])]
        centers = {c.atom for c in block.centers}
        for a, atom in enumerate(block.atoms):
            atom_feats[i, a, elem_index[atom.element]] = 1.0
            atom_feats[i, a, N_ELEMENT_CHANNELS] = float(atom.in_ring)
            atom_feats[i, a, N_ELEMENT_CHANNELS + 1] = float(a in centers)
        for a, b, order in block.bonds:
            bond_feats[i, a, b, _BOND_INDEX[order]] = 1.0
            bond_feats[i, b, a, _BOND_INDEX[order]] = 1.0
    return atom_feats, bond_feats


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    pair_weight: float = 0.4
    slddt_weight: float = 0.4
    bond_weight: float = 0.2
    pair_cutoff: float = 3.0
    bond_time_threshold: float = 0.25
    slddt_cutoff: float = 15.0
    slddt_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    use_aux_losses: bool = False


_EPS = 1e-12


def loss_graph(node_probs: np.ndarray, edge_probs: np.ndarray,
               g0: ReactionGraph, w_t: float) -> float:
    """Weighted cross-entropy of the clean graph under the predictions."""
    n = g0.n
    total = 0.0
    for i in range(n):
        total -= np.log(max(node_probs[i, int(g0.x[i])], _EPS))
    for i in range(n):
        for j in range(i + 1, n):
            total -= np.log(max(edge_probs[i, j, int(g0.e[i, j])], _EPS))
    return float(w_t * total)


def loss_mse(c_pred: np.ndarray, c_true: np.ndarray, s0: np.ndarray) -> float:
    support = s0.astype(bool)
    if not support.any():
        raise ValueError("empty atom support")
    diff = c_pred[support] - c_true[support]
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def _valid_points(coords: np.ndarray, s0: np.ndarray) -> np.ndarray:
    return coords[s0.astype(bool)]


def loss_pair(c_pred: np.ndarray, c_true: np.ndarray, s0: np.ndarray,
              cutoff: float = 3.0) -> float:
    """Squared error of pairwise distances for true pairs within the cutoff."""
    p = _valid_points(c_pred, s0)
    q = _valid_points(c_true, s0)
    if len(q) < 2:
        return 0.0
    iu = np.triu_indices(len(q), k=1)
    d_true = np.linalg.norm(q[iu[0]] - q[iu[1]], axis=1)
    d_pred = np.linalg.norm(p[iu[0]] - p[iu[1]], axis=1)
    sel = d_true <= cutoff
    return float(np.sum((d_pred[sel] - d_true[sel]) ** 2))


def loss_slddt(c_pred: np.ndarray, c_true: np.ndarray, s0: np.ndarray,
               cutoff: float = 15.0,
               thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)) -> float:
    """Mean smooth-LDDT disagreement over true pairs inside the cutoff."""
    p = _valid_points(c_pred, s0)
    q = _valid_points(c_true, s0)
    if len(q) < 2:
        return 0.0
    iu = np.triu_indices(len(q), k=1)
    d_true = np.linalg.norm(q[iu[0]] - q[iu[1]], axis=1)
    d_pred = np.linalg.norm(p[iu[0]] - p[iu[1]], axis=1)
    sel = d_true < cutoff
    if not sel.any():
        return 0.0
    delta = np.abs(d_pred[sel] - d_true[sel])
    taus = np.asarray(thresholds)
    scores = 1.0 / (1.0 + np.exp(-(taus[None, :] - delta[:, None])))
    return float(np.mean(1.0 - scores.mean(axis=1)))


def loss_bond(c_pred: np.ndarray, c_true: np.ndarray,
              bonds: list[tuple[tuple[int, int], tuple[int, int]]],
              t: float | None = None, time_threshold: float = 0.25) -> float:
    """Mean absolute bond-length deviation; zeroed above the time threshold."""
    if t is not None and t > time_threshold:
        return 0.0
    if not bonds:
        return 0.0
    total = 0.0
    for (i, a), (j, b) in bonds:
        d_pred = np.linalg.norm(c_pred[i, a] - c_pred[j, b])
        d_true = np.linalg.norm(c_true[i, a] - c_true[j, b])
        total += abs(d_pred - d_true)
    return float(total / len(bonds))


def intra_block_bonds(g: ReactionGraph, vocab: Vocabulary) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    out = []
    mask_tok = node_mask_token(vocab)
    for i in range(g.n):
        if g.x[i] == mask_tok:
            continue
        for a, b, _ in vocab.blocks[int(g.x[i])].bonds:
            out.append(((i, a), (i, b)))
    return out


def total_loss(out: DenoiserOutput, g0: ReactionGraph, c0_tilde: np.ndarray,
               s0: np.ndarray, w_t: float, t: float, cfg: TrainConfig,
               vocab: Vocabulary) -> float:
    """Default composition: graph + MSE + pairwise. Auxiliary mode mirrors the
    ablation direction by weighting pair/sLDDT/bond terms."""
    base = (loss_graph(out.node_probs, out.edge_probs, g0, w_t)
            + loss_mse(out.coords_pred, c0_tilde, s0))
    pair = loss_pair(out.coords_pred, c0_tilde, s0, cfg.pair_cutoff)
    if not cfg.use_aux_losses:
        return base + pair
    slddt = loss_slddt(out.coords_pred, c0_tilde, s0, cfg.slddt_cutoff,
                       cfg.slddt_thresholds)
    bond = loss_bond(out.coords_pred, c0_tilde, intra_block_bonds(g0, vocab),
                     t=t, time_threshold=cfg.bond_time_threshold)
    return (base + cfg.pair_weight * pair + cfg.slddt_weight * slddt
            + cfg.bond_weight * bond)


# ---------------------------------------------------------------------------
# Oracle denoiser
# ---------------------------------------------------------------------------

class OracleDenoiser(Denoiser):
    """Exact posterior over a finite dataset: node/edge rows are empirical
    conditionals of the clean state given every unmasked entry, and the
    coordinate head is the posterior mean of the consistent records' paired
    clean coordinates (computed against the trajectory's prior draw)."""

    def __init__(self, records: list[MoleculeRecord], vocab: Vocabulary, capacity: int):
        if not records:
            raise ValueError("oracle needs a non-empty dataset")
        self.vocab = vocab
        self.capacity = capacity
        self.codec = codec_for(vocab)
        self.mask_tok = node_mask_token(vocab)
        k = len(records)
        m = vocab.max_atoms
        self._n = np.array([r.graph.n for r in records], dtype=np.int64)
        if self._n.max() > capacity:
            raise ValueError("capacity smaller than the largest record")
        self._x = np.zeros((k, capacity), dtype=np.int64)
        self._e = np.full((k, capacity, capacity), self.codec.no_edge, dtype=np.int64)
        self._c0 = np.zeros((k, capacity, m, 3))
        self._s0 = np.zeros((k, capacity, m), dtype=bool)
        for idx, rec in enumerate(records):
            n = rec.graph.n
            self._x[idx, :n] = rec.graph.x[:n]
            self._e[idx, :n, :n] = rec.graph.e[:n, :n]
            if rec.coords is not None:
                self._c0[idx, :n] = rec.coords
                self._s0[idx, :n] = rec.atom_mask
        self._cache: dict[bytes, DenoiserOutput] = {}
        self._cache_prior: np.ndarray | None = None

    def consistent(self, g: ReactionGraph) -> np.ndarray:
        """Indices of records matching every unmasked entry of the state."""
        n = g.n
        sel = self._n == n
        known = g.x[:n] != self.mask_tok
        if known.any():
            sel &= np.all(self._x[:, :n][:, known] == g.x[:n][known], axis=1)
        iu = np.triu_indices(n, k=1)
        vals = g.e[:n, :n][iu]
        known_e = vals != self.codec.mask
        if known_e.any():
            recs = self._e[:, :n, :n][:, iu[0][known_e], iu[1][known_e]]
            sel &= np.all(recs == vals[known_e], axis=1)
        return np.flatnonzero(sel)

    def denoise(self, g: ReactionGraph, c_tilde: np.ndarray, t: float,
                prior: np.ndarray | None = None) -> DenoiserOutput:
        if prior is not self._cache_prior:
            self._cache.clear()
            self._cache_prior = prior
        key = g.key()
        hit = self._cache.get(key)
        if hit is not None:
            return hit

        idx = self.consistent(g)
        if len(idx) == 0:
            raise DenoiseError("no dataset molecule is consistent with the state")
        n, cap = g.n, self.capacity
        b = self.vocab.n_blocks
        node_probs = np.zeros((cap, b))
        for i in range(n):
            if g.x[i] != self.mask_tok:
                node_probs[i, int(g.x[i])] = 1.0
            else:
                counts = np.bincount(self._x[idx, i], minlength=b).astype(float)
                node_probs[i] = counts / counts.sum()
        if n < cap:
            node_probs[n:, 0] = 1.0

        c_prob = self.codec.n_prob_channels
        edge_probs = np.zeros((cap, cap, c_prob))
        edge_probs[:, :, self.codec.no_edge] = 1.0
        for i in range(n):
            for j in range(i + 1, n):
                ch = int(g.e[i, j])
                row = np.zeros(c_prob)
                if ch != self.codec.mask:
                    row[ch] = 1.0
                else:
                    counts = np.bincount(self._e[idx, i, j], minlength=c_prob).astype(float)
                    row = counts / counts.sum()
                edge_probs[i, j] = row
                edge_probs[j, i] = row

        prior_arr = prior if prior is not None else np.zeros_like(self._c0[0])
        coords = np.zeros_like(self._c0[0])
        for rec in idx:
            c0_tilde, _ = pair_data(self._c0[rec], self._s0[rec], prior_arr, t,
                                    g.x, self.mask_tok)
            coords += c0_tilde
        coords /= len(idx)

        out = DenoiserOutput(node_probs=node_probs, edge_probs=edge_probs,
                             coords_pred=coords)
        self._cache[key] = out
        return out


# ---------------------------------------------------------------------------
# Tabular denoiser
# ---------------------------------------------------------------------------

def _bucket(t: float, n_buckets: int) -> int:
    return min(int(t * n_buckets), n_buckets - 1)


@dataclass
class TabularDenoiser(Denoiser):
    """Count-table denoiser: categorical counts per (n, position, time bucket)
    with hierarchical fallback, and per-(n, slot, block) means of the
    recentered clean coordinates."""

    vocab: Vocabulary
    n_buckets: int = 10
    node_counts: dict = field(default_factory=dict)
    edge_counts: dict = field(default_factory=dict)
    coord_sums: dict = field(default_factory=dict)
    coord_hits: dict = field(default_factory=dict)

    # bucket tables hold few samples early on and can wrongly zero a value's
    # support; blending in the position-marginal table keeps every value seen
    # in the data reachable without changing single-record point masses
    _MARGINAL_BLEND = 0.25

    def _blended(self, specific, marginal, width: int) -> np.ndarray:
        if specific is None and marginal is None:
            return np.full(width, 1.0 / width)
        row = np.zeros(width)
        if specific is not None:
            row += specific
        if marginal is not None and marginal.sum() > 0:
            row += self._MARGINAL_BLEND * marginal / marginal.sum() * max(row.sum(), 1.0)
        return row / row.sum()

    def _node_row(self, n: int, i: int, bucket: int) -> np.ndarray:
        return self._blended(self.node_counts.get((n, i, bucket)),
                             self.node_counts.get((n, i)),
                             self.vocab.n_blocks)

    def _edge_row(self, n: int, i: int, j: int, bucket: int) -> np.ndarray:
        return self._blended(self.edge_counts.get((n, i, j, bucket)),
                             self.edge_counts.get((n, i, j)),
                             codec_for(self.vocab).n_prob_channels)

    def _coords_row(self, n: int, i: int, block: int | None) -> np.ndarray:
        m = self.vocab.max_atoms
        if block is not None:
            key = (n, i, block)
            if key in self.coord_hits and self.coord_hits[key] > 0:
                return self.coord_sums[key] / self.coord_hits[key]
        total = np.zeros((m, 3))
        hits = 0
        for (kn, ki, _), count in self.coord_hits.items():
            if kn == n and ki == i and count > 0:
                total += self.coord_sums[(kn, ki, _)]
                hits += count
        if hits:
            return total / hits
        return np.zeros((m, 3))

    def denoise(self, g: ReactionGraph, c_tilde: np.ndarray, t: float,
                prior: np.ndarray | None = None) -> DenoiserOutput:
        codec = codec_for(self.vocab)
        mask_tok = node_mask_token(self.vocab)
        n, cap = g.n, g.capacity
        bucket = _bucket(t, self.n_buckets)
        b = self.vocab.n_blocks
        node_probs = np.zeros((cap, b))
        for i in range(n):
            if g.x[i] != mask_tok:
                node_probs[i, int(g.x[i])] = 1.0
            else:
                node_probs[i] = self._node_row(n, i, bucket)
        if n < cap:
            node_probs[n:, 0] = 1.0

        c_prob = codec.n_prob_channels
        edge_probs = np.zeros((cap, cap, c_prob))
        edge_probs[:, :, codec.no_edge] = 1.0
        for i in range(n):
            for j in range(i + 1, n):
                ch = int(g.e[i, j])
                if ch != codec.mask:
                    row = np.zeros(c_prob)
                    row[ch] = 1.0
                else:
                    row = self._edge_row(n, i, j, bucket)
                edge_probs[i, j] = row
                edge_probs[j, i] = row

        coords = np.zeros((cap, self.vocab.max_atoms, 3))
        for i in range(n):
            block = int(g.x[i]) if g.x[i] != mask_tok else None
            coords[i] = self._coords_row(n, i, block)
        return DenoiserOutput(node_probs=node_probs, edge_probs=edge_probs,
                              coords_pred=coords)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        def dump(d, is_coord=False):
            return {
                ",".join(map(str, key)): (val.tolist())
                for key, val in d.items()
            }

        doc = {
            "format": "blockflow-tabular",
            "version": 1,
            "n_buckets": self.n_buckets,
            "node_counts": dump(self.node_counts),
            "edge_counts": dump(self.edge_counts),
            "coord_sums": dump(self.coord_sums),
            "coord_hits": {",".join(map(str, k)): v for k, v in self.coord_hits.items()},
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str, vocab: Vocabulary) -> "TabularDenoiser":
        doc = json.loads(text)
        if doc.get("format") != "blockflow-tabular" or doc.get("version") != 1:
            raise DenoiseError("unrecognized tabular model file")

        def parse(d):
            return {tuple(map(int, key.split(","))): np.asarray(val, dtype=np.float64)
                    for key, val in d.items()}

        return cls(
            vocab=vocab,
            n_buckets=int(doc["n_buckets"]),
            node_counts=parse(doc["node_counts"]),
            edge_counts=parse(doc["edge_counts"]),
            coord_sums=parse(doc["coord_sums"]),
            coord_hits={tuple(map(int, k.split(","))): int(v)
                        for k, v in doc["coord_hits"].items()},
        )


def tabular_fit(
    records: list[MoleculeRecord],
    vocab: Vocabulary,
    schedule: NoiseSchedule,
    epochs: int = 8,
    seed: int = 0,
    train_config: TrainConfig | None = None,
    draws_per_record: int = 4,
    weight_steps: int = 100,
) -> tuple[TabularDenoiser, list[float]]:
    """Fit the count tables on noised views of the dataset.

    Returns the model and its loss curve: the loss on a fixed evaluation pass
    before training (uniform-fallback baseline) followed by one entry per
    epoch, so the curve reflects parameter movement rather than evaluation
    noise. Deterministic under seed."""
    if not records:
        raise ValueError("empty dataset")
    cfg = train_config or TrainConfig()
    model = TabularDenoiser(vocab=vocab)
    codec = codec_for(vocab)
    mask_tok = node_mask_token(vocab)
    b = vocab.n_blocks
    c_prob = codec.n_prob_channels
    m = vocab.max_atoms
    losses: list[float] = []

    eval_points: list[tuple[int, float, ReactionGraph, np.ndarray, np.ndarray]] = []
    for k, rec in enumerate(records):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 999983, k]))
        for d in range(2):
            t = float(rng.uniform(0.05, 0.95))
            g_t = forward_noise(rec.graph, t, schedule, rng, vocab)
            c1 = 0.2 * rng.normal(size=(rec.graph.n, m, 3))
            c0_tilde, _ = pair_data(rec.coords, rec.atom_mask, c1, t, g_t.x, mask_tok)
            mu = masked_centroid(c0_tilde, rec.atom_mask)
            eval_points.append((k, t, g_t, c0_tilde - mu, rec.atom_mask))

    def eval_loss() -> float:
        total = 0.0
        for k, t, g_t, target, s0 in eval_points:
            rec = records[k]
            out = model.denoise(g_t, np.zeros_like(target), t)
            w_t = loss_weight(schedule, max(t, 1.0 / weight_steps),
                              max(t - 1.0 / weight_steps, 0.0))
            total += total_loss(out, rec.graph, target, s0, w_t, t, cfg, vocab)
        return total / len(eval_points)

    losses.append(eval_loss())
    for epoch in range(epochs):
        for k, rec in enumerate(records):
            rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, k]))
            n = rec.graph.n
            for _ in range(draws_per_record):
                t = float(rng.uniform())
                bucket = _bucket(t, model.n_buckets)
                g_t = forward_noise(rec.graph, t, schedule, rng, vocab)
                for i in range(n):
                    if g_t.x[i] == mask_tok:
                        for key in ((n, i, bucket), (n, i)):
                            model.node_counts.setdefault(key, np.zeros(b))[int(rec.graph.x[i])] += 1
                for i in range(n):
                    for j in range(i + 1, n):
                        if g_t.e[i, j] == codec.mask:
                            for key in ((n, i, j, bucket), (n, i, j)):
                                model.edge_counts.setdefault(key, np.zeros(c_prob))[int(rec.graph.e[i, j])] += 1
                c1 = 0.2 * rng.normal(size=(n, m, 3))
                c0_tilde, _ = pair_data(rec.coords, rec.atom_mask, c1, t, g_t.x,
                                        mask_tok, align=True)
                mu = masked_centroid(c0_tilde, rec.atom_mask)
                target = (c0_tilde - mu) * rec.atom_mask[..., None]
                for i in range(n):
                    key = (n, i, int(rec.graph.x[i]))
                    model.coord_sums.setdefault(key, np.zeros((m, 3)))
                    model.coord_sums[key] += target[i]
                    model.coord_hits[key] = model.coord_hits.get(key, 0) + 1

        losses.append(eval_loss())
    return model, losses

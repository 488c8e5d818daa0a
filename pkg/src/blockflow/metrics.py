"""Evaluation metrics: validity rate, geometry distributions with
Wasserstein-1 (linear and circular) and Jensen-Shannon divergence,
fingerprint diversity / uniqueness / novelty, and conformer coverage and
matching scores.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from collections import defaultdict

import numpy as np
from scipy.stats import wasserstein_distance

from .flow import kabsch_align
from .graph import AtomGraph, ReactionGraph, canonical_code, assemble_atom_graph
from .vocab import Vocabulary


# ---------------------------------------------------------------------------
# Distribution distances
# ---------------------------------------------------------------------------

def wasserstein1(a, b, topology: str = "linear", period: float = 360.0) -> float:
    """Earth-mover distance between two empirical samples, on the line
    (closed-form quantile coupling) or on the circle (the cut-point-optimal
    coupling, computed via the weighted median of the CDF difference)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty sample set")
    if topology == "linear":
        return float(wasserstein_distance(a, b))
    if topology != "circular":
        raise ValueError(f"unknown topology {topology!r}")

    a = np.mod(a, period)
    b = np.mod(b, period)
    points = np.unique(np.concatenate([a, b, [0.0]]))
    segments = np.diff(np.concatenate([points, [period]]))
    f_a = np.searchsorted(np.sort(a), points, side="right") / len(a)
    f_b = np.searchsorted(np.sort(b), points, side="right") / len(b)
    diff = f_a - f_b
    order = np.argsort(diff)
    cum = np.cumsum(segments[order])
    median_idx = np.searchsorted(cum, cum[-1] / 2.0)
    level = diff[order][min(median_idx, len(order) - 1)]
    return float(np.sum(np.abs(diff - level) * segments))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence (natural log) between two histograms over
    the same binning; empty bins contribute zero. Bounded by ln 2."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("histogram binning mismatch")
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("empty histogram")
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)

    def kl(x, y):
        sel = x > 0
        return float(np.sum(x[sel] * np.log(x[sel] / y[sel])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def shared_histograms(a, b, bins: int, topology: str = "linear",
                      period: float = 360.0) -> tuple[np.ndarray, np.ndarray]:
    """Histogram two sample sets over a common binning."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if topology == "circular":
        edges = np.linspace(0.0, period, bins + 1)
        a = np.mod(a, period)
        b = np.mod(b, period)
    else:
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        if hi <= lo:
            hi = lo + 1e-9
        edges = np.linspace(lo, hi, bins + 1)
    return np.histogram(a, bins=edges)[0], np.histogram(b, bins=edges)[0]


# ---------------------------------------------------------------------------
# Geometry extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometrySample:
    kind: str          # bond_length | bond_angle | dihedral
    key: tuple         # hybridization-annotated element labels
    value: float       # angstrom or degrees in [0, 360)


def _hybridization(orders: list[str]) -> str:
    if any(o == "triple" for o in orders) or sum(o == "double" for o in orders) >= 2:
        return "sp"
    if any(o in ("double", "aromatic") for o in orders):
        return "sp2"
    return "sp3"


def _atom_labels(atom_graph: AtomGraph) -> dict[int, str]:
    orders: dict[int, list[str]] = defaultdict(list)
    for a, b, order in atom_graph.bonds:
        orders[a].append(order)
        orders[b].append(order)
    labels = {}
    for key, (_, _, element, _) in atom_graph.atoms.items():
        labels[key] = f"{element}.{_hybridization(orders.get(key, []))}"
    return labels


def _angle(p0, p1, p2) -> float:
    u = p0 - p1
    v = p2 - p1
    cosine = np.dot(u, v) / max(np.linalg.norm(u) * np.linalg.norm(v), 1e-12)
    return math.degrees(math.acos(np.clip(cosine, -1.0, 1.0)))


def _dihedral(p0, p1, p2, p3) -> float:
    b0 = p1 - p0
    b1 = p2 - p1
    b2 = p3 - p2
    n0 = np.cross(b0, b1)
    n1 = np.cross(b1, b2)
    m = np.cross(n0, b1 / max(np.linalg.norm(b1), 1e-12))
    angle = math.degrees(math.atan2(np.dot(m, n1), np.dot(n0, n1)))
    return angle % 360.0


def extract_geometry(atom_graph: AtomGraph, coords: dict[int, np.ndarray]) -> list[GeometrySample]:
    """One sample per bond, bonded angle triple, and bonded dihedral
    quadruple, keyed by element-hybridization labels."""
    labels = _atom_labels(atom_graph)
    nbrs: dict[int, list[int]] = defaultdict(list)
    for a, b, _ in atom_graph.bonds:
        nbrs[a].append(b)
        nbrs[b].append(a)

    samples: list[GeometrySample] = []
    for a, b, _ in atom_graph.bonds:
        key = tuple(sorted((labels[a], labels[b])))
        samples.append(GeometrySample(
            "bond_length", key, float(np.linalg.norm(coords[a] - coords[b]))))

    for center in atom_graph.sorted_keys():
        ends = sorted(nbrs[center])
        for idx, a in enumerate(ends):
            for c in ends[idx + 1:]:
                la, lc = sorted((labels[a], labels[c]))
                key = (la, labels[center], lc)
                samples.append(GeometrySample(
                    "bond_angle", key, _angle(coords[a], coords[center], coords[c])))

    seen: set[tuple[int, ...]] = set()
    for b, c, _ in atom_graph.bonds:
        for first, second in ((b, c), (c, b)):
            for a in nbrs[first]:
                if a == second:
                    continue
                for d in nbrs[second]:
                    if d == first or d == a:
                        continue
                    quad = (a, first, second, d)
                    if quad[::-1] in seen or quad in seen:
                        continue
                    seen.add(quad)
                    # torsion(a,b,c,d) == torsion(d,c,b,a): only the key needs
                    # a canonical direction
                    key_fwd = tuple(labels[k] for k in quad)
                    key = min(key_fwd, key_fwd[::-1])
                    value = _dihedral(*(coords[k] for k in quad))
                    samples.append(GeometrySample("dihedral", key, value))
    return samples


def geometry_from_result(graph: ReactionGraph, coords: np.ndarray,
                         vocab: Vocabulary) -> list[GeometrySample]:
    atom_graph = assemble_atom_graph(graph, vocab)
    positions = {key: coords[slot, local]
                 for key, (slot, local) in atom_graph.provenance.items()}
    return extract_geometry(atom_graph, positions)


# ---------------------------------------------------------------------------
# Fingerprints and sample-set statistics
# ---------------------------------------------------------------------------

_ORDER_CODE = {"single": "1", "double": "2", "triple": "3", "aromatic": "a"}


def path_fingerprint(atom_graph: AtomGraph, n_bits: int = 2048,
                     max_bonds: int = 6) -> frozenset[int]:
    """Hashed linear element/bond-order paths of up to ``max_bonds`` bonds.
    The path set is an isomorphism invariant, so equal molecules always give
    equal fingerprints."""
    element = {k: v[2] for k, v in atom_graph.atoms.items()}
    nbrs: dict[int, list[tuple[int, str]]] = defaultdict(list)
    for a, b, order in atom_graph.bonds:
        nbrs[a].append((b, order))
        nbrs[b].append((a, order))

    strings: set[str] = set()

    def walk(path: list[int], text: str):
        strings.add(min(text, _reverse_path(path, element, atom_graph)))
        if (len(path) - 1) >= max_bonds:
            return
        for nb, order in nbrs[path[-1]]:
            if nb in path:
                continue
            walk(path + [nb], text + _ORDER_CODE[order] + element[nb])

    for start in atom_graph.sorted_keys():
        walk([start], element[start])

    bits = set()
    for s in strings:
        digest = hashlib.sha1(s.encode()).digest()
        bits.add(int.from_bytes(digest[:8], "big") % n_bits)
    return frozenset(bits)


def _reverse_path(path: list[int], element: dict[int, str], atom_graph: AtomGraph) -> str:
    orders = {}
    for a, b, order in atom_graph.bonds:
        orders[(a, b)] = order
        orders[(b, a)] = order
    rev = path[::-1]
    text = element[rev[0]]
    for prev, cur in zip(rev, rev[1:]):
        text += _ORDER_CODE[orders[(prev, cur)]] + element[cur]
    return text


def tanimoto(a: frozenset[int], b: frozenset[int]) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


@dataclass(frozen=True)
class SampleSetStats:
    diversity: float   # mean pairwise Tanimoto distance (1 - similarity)
    uniqueness: float  # distinct canonical codes / sample count
    novelty: float     # fraction of samples absent from the training set


def diversity_uniqueness_novelty(
    sample_graphs: list[ReactionGraph],
    training_graphs: list[ReactionGraph],
    vocab: Vocabulary,
) -> SampleSetStats:
    if len(sample_graphs) < 2:
        raise ValueError("need at least two samples")
    fps = [path_fingerprint(assemble_atom_graph(g, vocab)) for g in sample_graphs]
    total = 0.0
    pairs = 0
    for i in range(len(fps)):
        for j in range(i + 1, len(fps)):
            total += 1.0 - tanimoto(fps[i], fps[j])
            pairs += 1
    codes = [canonical_code(g, vocab) for g in sample_graphs]
    training = {canonical_code(g, vocab) for g in training_graphs}
    novel = sum(1 for c in codes if c not in training)
    return SampleSetStats(
        diversity=total / pairs,
        uniqueness=len(set(codes)) / len(codes),
        novelty=novel / len(codes),
    )


# ---------------------------------------------------------------------------
# Conformer coverage / matching
# ---------------------------------------------------------------------------

def aligned_rmsd(p: np.ndarray, q: np.ndarray) -> float:
    """RMSD after optimal translation and proper rotation of p onto q."""
    if p.shape != q.shape:
        raise ValueError("atom count mismatch")
    pc = p - p.mean(axis=0)
    qc = q - q.mean(axis=0)
    rotation, _ = kabsch_align(pc, qc)
    diff = pc @ rotation.T - qc
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


@dataclass(frozen=True)
class CovMat:
    cov: float       # fraction of generated conformers within tau of a reference
    mat: float       # mean over generated of the min RMSD to the references
    cov_ref: float   # fraction of references within tau of a generated conformer


def cov_mat(generated: list[np.ndarray], reference: list[np.ndarray],
            tau: float = 0.75) -> CovMat:
    """Coverage and matching between conformer ensembles of one molecule.
    ``cov`` follows the generated-indexed indicator sum; ``cov_ref`` is the
    reference-coverage variant, reported alongside."""
    if not generated or not reference:
        raise ValueError("empty conformer set")
    dists = np.array([[aligned_rmsd(m, g) for g in reference] for m in generated])
    min_per_gen = dists.min(axis=1)
    min_per_ref = dists.min(axis=0)
    return CovMat(
        cov=float(np.mean(min_per_gen <= tau)),
        mat=float(np.mean(min_per_gen)),
        cov_ref=float(np.mean(min_per_ref <= tau)),
    )


# ---------------------------------------------------------------------------
# Density report helpers (plain-text KDE)
# ---------------------------------------------------------------------------

def kde_density(samples, kind: str = "linear", bandwidth: float = 0.15,
                kappa: float = 25.0, grid_size: int = 181,
                period: float = 360.0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE on the line or von Mises KDE on the circle, returned as
    (grid, density) arrays for CSV emission."""
    samples = np.asarray(samples, dtype=np.float64)
    if kind == "circular":
        grid = np.linspace(0.0, period, grid_size, endpoint=False)
        theta = np.radians(grid[:, None] - samples[None, :])
        dens = np.exp(kappa * np.cos(theta)).sum(axis=1)
        dens /= np.trapezoid(dens, grid)
        return grid, dens
    lo, hi = samples.min() - 3 * bandwidth, samples.max() + 3 * bandwidth
    grid = np.linspace(lo, hi, grid_size)
    z = (grid[:, None] - samples[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z).sum(axis=1)
    dens /= np.trapezoid(dens, grid)
    return grid, dens

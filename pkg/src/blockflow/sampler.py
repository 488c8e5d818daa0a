"""Unconditional and inpainting samplers.

Each trajectory starts from an all-mask graph and a scaled Gaussian coordinate
prior, then walks diffusion time from 1 to 0 on a uniform grid: recenter the
coordinates by the visibility mask, denoise, constrain the logits, resolve one
parent edge per block column, take the categorical reverse step, and move the
coordinates by an (optionally annealed) Euler step. A final deterministic pass
at t = 0 produces the output graph by argmax and the output coordinates as the
re-centered clean-coordinate prediction, so coordinate quality is independent
of Euler integration residuals.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constraints import ConstraintDeadlock, apply_constraints
from .datagen import BlockCountPrior
from .denoise import Denoiser, validate_denoiser_output
from .diffusion import NoiseSchedule, alpha
from .flow import FlowConfig, euler_step, masked_centroid, visibility_for_sampling
from .graph import (
    ReactionGraph,
    atom_validity,
    codec_for,
    masked_graph,
    node_mask_token,
    symmetrize,
    triu_pairs,
)
from .vocab import Vocabulary


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 100
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    flow: FlowConfig = field(default_factory=FlowConfig)
    constraints: bool = True
    seed: int = 0
    fixed_n: int | None = None
    capacity: int | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass
class SampleResult:
    graph: ReactionGraph
    coords: np.ndarray       # [capacity, max_atoms, 3], re-centered clean estimate
    atom_mask: np.ndarray    # surviving atoms of the final molecule


@dataclass(frozen=True)
class InpaintFragment:
    slot: int
    block: int
    coords: np.ndarray  # [block atom count, 3]


@dataclass(frozen=True)
class InpaintSpec:
    fragments: tuple[InpaintFragment, ...]
    free_slots: int
    t_star: float = 0.03

    def __post_init__(self):
        slots = [f.slot for f in self.fragments]
        if len(set(slots)) != len(slots):
            raise ValueError("fixed slots must be disjoint")
        if self.free_slots < 0:
            raise ValueError("free_slots must be non-negative")


TraceHook = Callable[[int, float, ReactionGraph, np.ndarray], None]


def _resolve_capacity(cfg: SampleConfig, denoiser: Denoiser, n: int) -> int:
    if cfg.capacity is not None:
        if cfg.capacity < n:
            raise SamplerError(f"capacity {cfg.capacity} below block count {n}")
        return cfg.capacity
    return max(n, getattr(denoiser, "capacity", n))


def _final_pass(
    g: ReactionGraph,
    c: np.ndarray,
    c1: np.ndarray,
    vocab: Vocabulary,
    denoiser: Denoiser,
    cfg: SampleConfig,
) -> SampleResult:
    codec = codec_for(vocab)
    st = visibility_for_sampling(g, vocab)
    c_tilde = c - masked_centroid(c, st)
    out = denoiser.denoise(g, c_tilde, 0.0, prior=c1)
    validate_denoiser_output(out, g, vocab)

    final = g.copy()
    final.x[: g.n] = np.argmax(out.node_probs[: g.n], axis=1)
    n = g.n
    iu = np.triu_indices(n, k=1)
    block = final.e[:n, :n]
    block[iu] = np.argmax(out.edge_probs[:n, :n][iu], axis=1)
    final.e[:n, :n] = symmetrize(block)

    s0 = atom_validity(final, vocab)
    coords = out.coords_pred - masked_centroid(out.coords_pred, s0)
    coords = coords * cfg.flow.z_c
    coords[~s0] = 0.0
    return SampleResult(graph=final, coords=coords, atom_mask=s0)


class _StepCache:
    """Constrained predictions and pruned edge targets for the current
    evidence state; the trajectory loop recomputes it only when the state (or
    the denoiser's time bucket) changes."""

    def __init__(self, vocab: Vocabulary, denoiser: Denoiser, cfg: SampleConfig,
                 c1: np.ndarray):
        self.vocab = vocab
        self.denoiser = denoiser
        self.cfg = cfg
        self.c1 = c1
        self.node_probs = None
        self.edge_probs = None
        self.coords_pred = None

    def recompute(self, g: ReactionGraph, c_tilde: np.ndarray, t: float,
                  rng: np.random.Generator) -> None:
        out = self.denoiser.denoise(g, c_tilde, t, prior=self.c1)
        validate_denoiser_output(out, g, self.vocab)
        if self.cfg.constraints:
            node_probs, edge_probs = apply_constraints(
                out.node_probs, out.edge_probs, g, self.vocab)
        else:
            node_probs, edge_probs = out.node_probs, out.edge_probs
        self.node_probs = node_probs
        self.edge_probs = edge_probs
        self.coords_pred = out.coords_pred


def _draw_row(probs: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(probs)
    cum[-1] = max(cum[-1], 1.0)
    return int(np.searchsorted(cum, rng.random(), side="right"))


def _commit_edge_value(
    g: ReactionGraph,
    edge_probs: np.ndarray,
    i: int,
    j: int,
    rng: np.random.Generator,
    no_edge: int,
) -> int:
    """Unmask value for edge (i, j): the single-parent column draw projected
    onto this pair.

    The joint categorical over column j's (parent, channel) mass assigns this
    pair its concrete posterior share; any other outcome projects to no-edge.
    An already-denoised parent elsewhere in the column forces no-edge, and the
    last open pair of a parentless column can only resolve concrete, so every
    column ends with exactly one parent.
    """
    for i2 in range(j):
        ch = int(g.e[i2, j])
        if ch < no_edge and i2 != i:
            return no_edge
    column = edge_probs[:j, j, :no_edge]
    total = column.sum()
    if total <= 0.0:
        raise ConstraintDeadlock(f"edge column {j} has zero concrete mass")
    own = column[i].sum()
    if rng.random() * total >= own:
        return no_edge
    return _draw_row(column[i] / own, rng)


def _run_trajectory(
    g: ReactionGraph,
    c1: np.ndarray,
    vocab: Vocabulary,
    denoiser: Denoiser,
    cfg: SampleConfig,
    rng: np.random.Generator,
    trace_hook: TraceHook | None = None,
    fixed_coords: np.ndarray | None = None,
    fixed_slots: tuple[int, ...] = (),
    t_star: float = 0.0,
) -> SampleResult:
    """Walk diffusion time from 1 to 0.

    Which entries unmask at a step follows the per-entry posterior hazard
    (alpha_s - alpha_t) / (1 - alpha_t); the unmasked values are committed one
    entry at a time with the predictions re-conditioned between commits. With
    at most one unmasking per step this is exactly the parallel reverse
    kernel; when several entries fire together it replaces the factorized
    approximation with exact sequential conditioning, which keeps a posterior
    denoiser consistent along the whole trajectory.
    """
    n = g.n
    codec = codec_for(vocab)
    mask_tok = node_mask_token(vocab)
    c = c1.copy()
    ts = np.linspace(1.0, 0.0, cfg.steps + 1)
    cache = _StepCache(vocab, denoiser, cfg, c1)
    iu = triu_pairs(n)
    n_buckets = int(getattr(denoiser, "n_buckets", 0) or 0)
    dirty = True
    last_bucket = -1
    st = None

    for k in range(cfg.steps):
        t, s = float(ts[k]), float(ts[k + 1])
        if fixed_slots and t > t_star:
            # fixed-fragment coordinates follow the interpolation path; the
            # shift into the centered frame commutes with the interpolation,
            # so the overwrite happens in the raw frame
            for slot in fixed_slots:
                c[slot] = (1.0 - t) * fixed_coords[slot] + t * c1[slot]
        if trace_hook is not None:
            trace_hook(k, t, g, c)

        bucket = min(int(t * n_buckets), n_buckets - 1) if n_buckets else 0
        if dirty or bucket != last_bucket:
            st = visibility_for_sampling(g, vocab)
            cache.recompute(g, c - masked_centroid(c, st), t, rng)
            dirty = False
            last_bucket = bucket
        # the Euler update uses the step-start frame and prediction, before
        # any of this step's unmask commits
        c_tilde_step = c - masked_centroid(c, st)
        coords_pred = cache.coords_pred

        a_s, a_t = alpha(cfg.schedule, s), alpha(cfg.schedule, t)
        hazard = (a_s - a_t) / (1.0 - a_t)

        masked_nodes = np.flatnonzero(g.x[:n] == mask_tok)
        node_fire = masked_nodes[rng.random(len(masked_nodes)) < hazard]
        edge_vals = g.e[:n, :n][iu]
        masked_edges = np.flatnonzero(edge_vals == codec.mask)
        edge_fire = masked_edges[rng.random(len(masked_edges)) < hazard]

        def ensure_fresh():
            nonlocal dirty, st
            if dirty:
                st = visibility_for_sampling(g, vocab)
                cache.recompute(g, c - masked_centroid(c, st), t, rng)
                dirty = False

        for i in node_fire:
            ensure_fresh()
            g.x[i] = _draw_row(cache.node_probs[i], rng)
            dirty = True
        for idx in edge_fire:
            ensure_fresh()
            i, j = int(iu[0][idx]), int(iu[1][idx])
            g.e[i, j] = g.e[j, i] = _commit_edge_value(
                g, cache.edge_probs, i, j, rng, codec.no_edge)
            dirty = True

        c = euler_step(c, c_tilde_step, coords_pred, t, dt=t - s,
                       anneal_coeff=cfg.flow.anneal_coeff,
                       velocity=cfg.flow.velocity)

    if trace_hook is not None:
        trace_hook(cfg.steps, 0.0, g, c)
    return _final_pass(g, c, c1, vocab, denoiser, cfg)


def sample(
    vocab: Vocabulary,
    denoiser: Denoiser,
    cfg: SampleConfig,
    rng: np.random.Generator,
    block_count_prior: BlockCountPrior | None = None,
    trace_hook: TraceHook | None = None,
) -> SampleResult:
    """Draw one molecule. The block count comes from ``cfg.fixed_n`` or the
    empirical prior; the output graph always has n blocks and n - 1 edges."""
    if cfg.fixed_n is not None:
        n = cfg.fixed_n
    elif block_count_prior is not None:
        n = block_count_prior.sample(rng)
    else:
        raise SamplerError("need fixed_n or a block-count prior")
    capacity = _resolve_capacity(cfg, denoiser, n)
    g = masked_graph(n, capacity, vocab)
    c1 = cfg.flow.noise_scale * rng.normal(size=(capacity, vocab.max_atoms, 3))
    return _run_trajectory(g, c1, vocab, denoiser, cfg, rng, trace_hook)


def inpaint(
    vocab: Vocabulary,
    denoiser: Denoiser,
    cfg: SampleConfig,
    spec: InpaintSpec,
    rng: np.random.Generator,
    trace_hook: TraceHook | None = None,
) -> SampleResult:
    """Conditional sampling with fixed fragments: the fixed slots start
    denoised and never re-mask, and their coordinates are overwritten with the
    data-prior interpolation until t reaches ``spec.t_star``, after which
    normal Euler steps refine them alongside the rest of the molecule."""
    n = len(spec.fragments) + spec.free_slots
    if n < 1:
        raise SamplerError("inpainting needs at least one slot")
    for frag in spec.fragments:
        if not 0 <= frag.slot < n:
            raise SamplerError(f"fixed slot {frag.slot} outside [0, {n})")
        if not 0 <= frag.block < vocab.n_blocks:
            raise SamplerError(f"unknown block {frag.block}")
        expected = vocab.atom_count(frag.block)
        if frag.coords.shape != (expected, 3):
            raise SamplerError(
                f"fragment at slot {frag.slot}: coords must be [{expected}, 3]")

    capacity = _resolve_capacity(cfg, denoiser, n)
    g = masked_graph(n, capacity, vocab)
    fixed_coords = np.zeros((capacity, vocab.max_atoms, 3))
    fixed_slots = []
    for frag in spec.fragments:
        g.x[frag.slot] = frag.block
        fixed_coords[frag.slot, : len(frag.coords)] = frag.coords
        fixed_slots.append(frag.slot)
    c1 = cfg.flow.noise_scale * rng.normal(size=(capacity, vocab.max_atoms, 3))
    result = _run_trajectory(
        g, c1, vocab, denoiser, cfg, rng, trace_hook,
        fixed_coords=fixed_coords, fixed_slots=tuple(fixed_slots),
        t_star=spec.t_star,
    )
    for frag in spec.fragments:
        if int(result.graph.x[frag.slot]) != frag.block:
            raise SamplerError("carry-over violated: fixed block changed")
    return result


# ---------------------------------------------------------------------------
# Batch generation
# ---------------------------------------------------------------------------

def _sample_chunk(args) -> list[SampleResult]:
    vocab, denoiser, cfg, prior, indices = args
    out = []
    for idx in indices:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, idx]))
        out.append(sample(vocab, denoiser, cfg, rng, block_count_prior=prior))
    return out


def sample_many(
    vocab: Vocabulary,
    denoiser: Denoiser,
    cfg: SampleConfig,
    count: int,
    block_count_prior: BlockCountPrior | None = None,
    workers: int = 1,
) -> list[SampleResult]:
    """Generate ``count`` molecules; sample i uses the RNG stream derived from
    (seed, i), so results are byte-identical for any worker count."""
    indices = list(range(count))
    if workers <= 1:
        return _sample_chunk((vocab, denoiser, cfg, block_count_prior, indices))
    chunks = [indices[k::workers] for k in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            _sample_chunk,
            [(vocab, denoiser, cfg, block_count_prior, chunk) for chunk in chunks],
        ))
    by_index: dict[int, SampleResult] = {}
    for chunk, part in zip(chunks, parts):
        for idx, res in zip(chunk, part):
            by_index[idx] = res
    return [by_index[i] for i in indices]

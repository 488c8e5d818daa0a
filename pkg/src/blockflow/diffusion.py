"""Absorbing-state discrete diffusion: noise schedules, forward masking
kernel, reverse categorical posterior, and the step loss weight.

The forward process replaces node/edge tokens with a dedicated mask token
independently with probability 1 - alpha(t); the reverse posterior unmasks a
masked entry with probability (alpha_s - alpha_t) / (1 - alpha_t) toward the
denoiser's predicted distribution and otherwise keeps it masked. Unmasked
entries are carried over verbatim and never change again.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .graph import ReactionGraph, codec_for, node_mask_token, symmetrize
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("linear", "geometric", "loglinear")

DEFAULT_SIGMA_MAX = 1e8


@dataclass(frozen=True)
class NoiseSchedule:
    """Monotone noise level sigma(t) on [0, 1] with alpha_t = exp(-sigma(t)).

    linear:    sigma(t) = sigma_max * t
    geometric: sigma(t) = sigma_max * (base**t - 1) / (base - 1)
    loglinear: sigma(t) = -log(1 - (1 - exp(-sigma_max)) * t), i.e. alpha_t
               decays linearly from 1 to exp(-sigma_max).

    The geometric/loglinear functional forms are artifact conventions.
    """

    kind: str = "linear"
    sigma_max: float = DEFAULT_SIGMA_MAX
    geometric_base: float = 10.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.sigma_max <= 0:
            raise ValueError("sigma_max must be positive")
        if self.kind == "geometric" and self.geometric_base <= 1.0:
            raise ValueError("geometric base must exceed 1")

    def sigma(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must be in [0, 1], got {t}")
        if self.kind == "linear":
            return self.sigma_max * t
        if self.kind == "geometric":
            b = self.geometric_base
            return self.sigma_max * (b ** t - 1.0) / (b - 1.0)
        eps = math.exp(-self.sigma_max)
        return -math.log1p(-(1.0 - eps) * t)


def alpha(schedule: NoiseSchedule, t: float) -> float:
    """Survival probability of a token at time t; alpha(0) = 1."""
    return math.exp(-schedule.sigma(t))


def loss_weight(schedule: NoiseSchedule, t: float, t_prev: float) -> float:
    """Step weight for the categorical loss: delta_sigma / (exp(sigma_t) - 1).

    Guarded at sigma(t) == 0 (the delta_sigma / sigma limit), which only
    arises at t == 0 where the weight degenerates to 0/0. Equal times give a
    zero delta and therefore a zero weight.
    """
    if t_prev > t:
        raise ValueError(f"need t_prev <= t, got {t_prev} > {t}")
    s_t = schedule.sigma(t)
    s_prev = schedule.sigma(t_prev)
    delta = s_t - s_prev
    if delta == 0.0:
        return 0.0
    denom = math.expm1(s_t)
    if denom == 0.0:
        logger.warning("loss_weight at sigma(t)=0; returning limit value")
        return delta / s_t if s_t > 0 else 0.0
    return delta / denom


# ---------------------------------------------------------------------------
# Forward kernel
# ---------------------------------------------------------------------------

def forward_noise(
    g: ReactionGraph,
    t: float,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    vocab: Vocabulary,
) -> ReactionGraph:
    """Mask each node and upper-triangle edge entry independently with
    probability 1 - alpha_t; padding and the diagonal are untouched."""
    a_t = alpha(schedule, t)
    out = g.copy()
    n = g.n
    node_mask = rng.random(n) >= a_t
    out.x[:n][node_mask] = node_mask_token(vocab)
    codec = codec_for(vocab)
    iu = np.triu_indices(n, k=1)
    edge_mask = rng.random(len(iu[0])) >= a_t
    block = out.e[:n, :n]
    vals = block[iu]
    vals[edge_mask] = codec.mask
    block[iu] = vals
    out.e[:n, :n] = symmetrize(block)
    return out


def forward_noise_step(
    z: ReactionGraph,
    t_from: float,
    t_to: float,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    vocab: Vocabulary,
) -> ReactionGraph:
    """Extend an already-noised state from t_from to t_to > t_from by masking
    surviving entries with probability 1 - alpha_to / alpha_from. Composing
    steps matches one-shot noising in distribution."""
    if not t_from < t_to:
        raise ValueError("need t_from < t_to")
    a_from = alpha(schedule, t_from)
    a_to = alpha(schedule, t_to)
    keep = a_to / a_from if a_from > 0 else 0.0
    out = z.copy()
    n = z.n
    mask_tok = node_mask_token(vocab)
    codec = codec_for(vocab)

    alive = out.x[:n] != mask_tok
    flip = rng.random(n) >= keep
    out.x[:n][alive & flip] = mask_tok

    iu = np.triu_indices(n, k=1)
    block = out.e[:n, :n]
    vals = block[iu]
    alive_e = vals != codec.mask
    flip_e = rng.random(len(vals)) >= keep
    vals[alive_e & flip_e] = codec.mask
    block[iu] = vals
    out.e[:n, :n] = symmetrize(block)
    return out


# ---------------------------------------------------------------------------
# Reverse kernel
# ---------------------------------------------------------------------------

def _draw_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized categorical draw per row of a [k, channels] simplex array."""
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = np.maximum(cum[:, -1], 1.0)
    u = rng.random(len(probs))
    return (u[:, None] >= cum).sum(axis=1)


def reverse_step(
    z_t: ReactionGraph,
    node_probs: np.ndarray,
    edge_probs: np.ndarray,
    s: float,
    t: float,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    vocab: Vocabulary,
) -> ReactionGraph:
    """One reverse posterior step from time t to s < t.

    ``node_probs`` is [N, B] over block ids; ``edge_probs`` is
    [N, N, R*V^2 + 1] over concrete channels plus no-edge (no mask channel —
    zero-masking is structural). Unmasked entries are copied verbatim; masked
    entries unmask with probability (alpha_s - alpha_t) / (1 - alpha_t) to a
    draw from their predicted row. Edges are drawn on the upper triangle and
    mirrored.
    """
    if s >= t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    if node_probs.shape[1] != vocab.n_blocks:
        raise ValueError("node_probs must have exactly one channel per block")
    codec = codec_for(vocab)
    if edge_probs.shape[2] != codec.n_prob_channels:
        raise ValueError("edge_probs must cover concrete channels plus no-edge")

    a_s = alpha(schedule, s)
    a_t = alpha(schedule, t)
    p_unmask = (a_s - a_t) / (1.0 - a_t)

    out = z_t.copy()
    n = z_t.n
    mask_tok = node_mask_token(vocab)

    masked_nodes = np.flatnonzero(out.x[:n] == mask_tok)
    if len(masked_nodes):
        flips = rng.random(len(masked_nodes)) < p_unmask
        hit = masked_nodes[flips]
        if len(hit):
            out.x[hit] = _draw_rows(node_probs[hit], rng)

    iu = np.triu_indices(n, k=1)
    block = out.e[:n, :n]
    vals = block[iu]
    masked_edges = np.flatnonzero(vals == codec.mask)
    if len(masked_edges):
        flips = rng.random(len(masked_edges)) < p_unmask
        hit = masked_edges[flips]
        if len(hit):
            rows = edge_probs[(iu[0][hit], iu[1][hit])]
            vals[hit] = _draw_rows(rows, rng)
    block[iu] = vals
    out.e[:n, :n] = symmetrize(block)
    return out

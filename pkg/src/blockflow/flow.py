"""Visibility-aware coordinate flow.

Coordinates live in a [N, M, 3] tensor (N block slots, M atom slots per
block). While a block is still masked, none of its M atom slots can be told
apart from padding, so the visibility mask treats all of them as valid; once
the block is denoised only its real atoms remain visible. The data-prior
pairing centers both endpoints by the prior's visibility-masked centroid and
holds dummy atoms (visible but absent from the true molecule) fixed at their
prior positions along the whole interpolation path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import ReactionGraph, codec_for, iter_edges, node_mask_token
from .vocab import Vocabulary


@dataclass(frozen=True)
class FlowConfig:
    """Coordinate-side knobs.

    ``z_c``: dataset coordinate std used to normalize at load and invert at
    output. ``anneal_coeff`` k scales the Euler step size by k*t (0 disables).
    ``noise_scale`` scales the isotropic Gaussian prior. ``velocity`` selects
    the literal update (default) or the conditional-path-exact variant that
    divides the displacement by t.
    """

    z_c: float = 1.0
    anneal_coeff: float = 10.0
    noise_scale: float = 0.2
    velocity: str = "paper"

    def __post_init__(self):
        if self.z_c <= 0:
            raise ValueError("z_c must be positive")
        if self.velocity not in ("paper", "rescaled"):
            raise ValueError(f"unknown velocity option {self.velocity!r}")


def visibility_mask(
    x_nodes: np.ndarray,
    n: int,
    mask_token: int,
    atom_mask: np.ndarray | None = None,
    vocab: Vocabulary | None = None,
    max_atoms: int | None = None,
) -> np.ndarray:
    """Per-(slot, atom) visibility given the current node state.

    Masked slots get all-ones rows; denoised slots get their true-atom rows —
    taken from ``atom_mask`` when known (training) or derived from the block's
    atom count via ``vocab`` (sampling). Rows at or beyond ``n`` are zero.
    """
    if atom_mask is None and vocab is None:
        raise ValueError("need atom_mask or vocab to resolve denoised rows")
    m = atom_mask.shape[1] if atom_mask is not None else (max_atoms or vocab.max_atoms)
    st = np.zeros((len(x_nodes), m), dtype=bool)
    for i in range(n):
        if x_nodes[i] == mask_token:
            st[i, :] = True
        elif atom_mask is not None:
            st[i, :] = atom_mask[i, :]
        else:
            st[i, : vocab.atom_count(int(x_nodes[i]))] = True
    return st


def visibility_for_sampling(g: ReactionGraph, vocab: Vocabulary) -> np.ndarray:
    """Sampling-time visibility: denoised slots expose their block's atoms
    minus any leaving atoms already committed by denoised incident edges."""
    mask_tok = node_mask_token(vocab)
    st = visibility_mask(g.x, g.n, mask_tok, vocab=vocab)
    codec = codec_for(vocab)
    for i, j, r, vi, vj in iter_edges(g, codec):
        template = vocab.reactions[r]
        for slot, center, leaves in ((i, vi, template.leaving_a), (j, vj, template.leaving_b)):
            if not leaves or g.x[slot] == mask_tok:
                continue
            block = vocab.blocks[int(g.x[slot])]
            if center < len(block.centers):
                st[slot, block.centers[center].atom] = False
    return st


def masked_centroid(coords: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mask-weighted centroid over all (slot, atom) entries."""
    total = mask.sum()
    if total == 0:
        raise ValueError("centroid over an empty mask")
    return (coords * mask[..., None]).sum(axis=(0, 1)) / total


def pair_data(
    c0: np.ndarray,
    s0: np.ndarray,
    c1: np.ndarray,
    t: float,
    x_t: np.ndarray,
    mask_token: int,
    align: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Build the centered data-prior pair and its interpolation at time t.

    Returns (c0_tilde, c_t). Both endpoints are centered by the prior's
    visibility-masked centroid; dummy atoms copy the centered prior so they
    stay constant along the path; entries outside the visibility support are
    zero. With ``align`` the prior is first rotated onto the clean structure
    over the true-atom support (training-time pairing only).
    """
    st = visibility_mask(x_t, len(x_t), mask_token, atom_mask=s0)
    if st.sum() == 0:
        raise ValueError("empty visibility support")

    if align:
        c1 = rotate_onto(c1, c0, s0)

    shift = masked_centroid(c1, st)
    c1_tilde = c1 - shift

    c0_tilde = np.zeros_like(c0)
    real = s0.astype(bool)
    dummy = st & ~real
    c0_tilde[real] = c0[real] - shift
    c0_tilde[dummy] = c1_tilde[dummy]
    c1_masked = np.where(st[..., None], c1_tilde, 0.0)
    c_t = (1.0 - t) * c0_tilde + t * c1_masked
    return c0_tilde, c_t


# ---------------------------------------------------------------------------
# Rigid alignment
# ---------------------------------------------------------------------------

def kabsch_align(
    p: np.ndarray,
    q: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, bool]:
    """Proper rotation R minimizing the weighted RMSD of R @ p_i vs q_i.

    Inputs are [k, 3] point sets, assumed centered by the caller. Returns
    (rotation, degenerate); degenerate point sets (fewer than 3 effective
    points or a rank-deficient covariance) yield the identity with the flag
    set. Reflections are corrected to det=+1.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if weights is None:
        weights = np.ones(len(p))
    w = np.asarray(weights, dtype=np.float64)[:, None]
    h = (w * p).T @ q
    u, sing, vt = np.linalg.svd(h)
    if (w > 0).sum() < 3 or sing[1] <= 1e-12 * max(sing[0], 1e-300):
        return np.eye(3), True
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.diag([1.0, 1.0, d])
    rotation = vt.T @ corr @ u.T
    return rotation, False


def rotate_onto(c_move: np.ndarray, c_ref: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Rotate a [N, M, 3] tensor about its support-weighted centroid so the
    supported points best match the reference; degenerate supports are left
    untouched."""
    w = support.reshape(-1).astype(np.float64)
    p = c_move.reshape(-1, 3)
    q = c_ref.reshape(-1, 3)
    total = w.sum()
    if total == 0:
        return c_move
    mu_p = (w[:, None] * p).sum(axis=0) / total
    mu_q = (w[:, None] * q).sum(axis=0) / total
    rotation, degenerate = kabsch_align(p - mu_p, q - mu_q, w)
    if degenerate:
        return c_move
    return ((p - mu_p) @ rotation.T + mu_p).reshape(c_move.shape)


# ---------------------------------------------------------------------------
# Euler integration
# ---------------------------------------------------------------------------

def euler_step(
    c_t: np.ndarray,
    c_tilde_t: np.ndarray,
    c0_hat: np.ndarray,
    t: float,
    dt: float,
    anneal_coeff: float = 0.0,
    velocity: str = "paper",
) -> np.ndarray:
    """Step the coordinates toward the predicted clean structure.

    The step size is dt, scaled by anneal_coeff * t when annealing is on, and
    divided by t for the rescaled velocity; the effective interpolation factor
    is clamped to [0, 1] so annealed steps cannot overshoot the target.
    """
    if not 0.0 < dt <= t:
        raise ValueError(f"need 0 < dt <= t, got dt={dt}, t={t}")
    step = dt * (anneal_coeff * t if anneal_coeff > 0 else 1.0)
    if velocity == "rescaled":
        step = step / t
    elif velocity != "paper":
        raise ValueError(f"unknown velocity option {velocity!r}")
    step = min(step, 1.0)
    return c_t + step * (c0_hat - c_tilde_t)

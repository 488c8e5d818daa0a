"""Oracle-based acceptance suite.

Each criterion is a standalone runner returning a pass/fail result with a
one-line detail string; the CLI ``selftest`` subcommand and the pytest
acceptance module both drive these. ``quick`` reduces sample counts for a
fast smoke run; the acceptance gate is the full configuration.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.stats import fisher_exact

from .datagen import (
    GenConfig,
    estimate_block_count_prior,
    generate_graph,
    generate_records,
    load_builtin_vocabulary,
)
from .denoise import (
    OracleDenoiser,
    loss_bond,
    loss_pair,
    loss_slddt,
    tabular_fit,
)
from .diffusion import NoiseSchedule, alpha, forward_noise, loss_weight, reverse_step
from .denoise import DenoiserOutput
from .flow import masked_centroid, pair_data, visibility_mask
from .graph import (
    ReactionGraph,
    canonical_code,
    check_validity,
    codec_for,
    iter_edges,
    masked_graph,
    node_mask_token,
    symmetrize,
    triu_pairs,
)
from .io import MoleculeRecord
from .metrics import cov_mat, jsd, wasserstein1
from .sampler import InpaintFragment, InpaintSpec, SampleConfig, inpaint, sample, sample_many
from .vocab import Vocabulary


@dataclass(frozen=True)
class CriterionResult:
    name: str
    passed: bool
    detail: str


def _workers(requested: int | None) -> int:
    if requested:
        return requested
    return min(2, os.cpu_count() or 1)


# shared fixtures -----------------------------------------------------------

_TOY_SCHEDULE = NoiseSchedule(kind="loglinear", sigma_max=12.0)


def toy_dataset(count: int = 50, seed: int = 11):
    vocab = load_builtin_vocabulary("toy")
    records = generate_records(vocab, GenConfig(depth_min=1, depth_max=2,
                                                count=count, seed=seed))
    return vocab, records, estimate_block_count_prior(records)


def _graph_key(g: ReactionGraph) -> tuple:
    iu = triu_pairs(g.n)
    return (g.n, tuple(g.x[: g.n]), tuple(g.e[: g.n, : g.n][iu]))


# 1 -------------------------------------------------------------------------

def criterion_oracle_distribution(quick: bool = False, workers: int | None = None) -> CriterionResult:
    """Sampled graph distribution converges to the empirical dataset law."""
    vocab, records, prior = toy_dataset()
    oracle = OracleDenoiser(records, vocab, capacity=3)
    cfg = SampleConfig(steps=100, schedule=_TOY_SCHEDULE, seed=5)
    n_samples = 1500 if quick else 10000
    start = time.time()
    results = sample_many(vocab, oracle, cfg, n_samples, block_count_prior=prior,
                          workers=_workers(workers))
    elapsed = time.time() - start
    emp = Counter(_graph_key(r.graph) for r in records)
    got = Counter(_graph_key(r.graph) for r in results)
    keys = set(emp) | set(got)
    tv = 0.5 * sum(abs(emp.get(k, 0) / len(records) - got.get(k, 0) / n_samples)
                   for k in keys)
    bound = 0.12 if quick else 0.05
    passed = tv < bound and elapsed < 120.0
    return CriterionResult(
        "oracle distribution convergence",
        passed,
        f"TV={tv:.4f} (bound {bound}), {n_samples} samples in {elapsed:.1f}s",
    )


# 2 -------------------------------------------------------------------------

def criterion_coordinate_exactness(quick: bool = False, workers: int | None = None) -> CriterionResult:
    """Single-molecule dataset: sampled coordinates equal the centered conformer."""
    vocab = load_builtin_vocabulary("toy")
    records = generate_records(vocab, GenConfig(depth_min=2, depth_max=2,
                                                count=1, seed=7))
    rec = records[0]
    prior = estimate_block_count_prior(records)
    oracle = OracleDenoiser(records, vocab, capacity=rec.graph.n)
    expected = rec.coords - masked_centroid(rec.coords, rec.atom_mask)
    expected = expected * rec.atom_mask[..., None]
    worst = 0.0
    for steps in (20, 50, 100):
        cfg = SampleConfig(steps=steps, schedule=_TOY_SCHEDULE, seed=steps)
        rng = np.random.default_rng(np.random.SeedSequence([2, steps]))
        res = sample(vocab, oracle, cfg, rng, block_count_prior=prior)
        if _graph_key(res.graph) != _graph_key(rec.graph):
            return CriterionResult("coordinate exactness", False,
                                   f"graph mismatch at steps={steps}")
        worst = max(worst, float(np.abs(res.coords - expected).max()))
    return CriterionResult("coordinate exactness", worst < 1e-6,
                           f"max abs error {worst:.2e} over steps 20/50/100")


# 3 -------------------------------------------------------------------------

def criterion_constraint_soundness(quick: bool = False, workers: int | None = None) -> CriterionResult:
    """Constrained samples are always valid; removing constraints lowers
    validity for the trained tabular denoiser (one-sided exact test)."""
    vocab, records, prior = toy_dataset()
    oracle = OracleDenoiser(records, vocab, capacity=3)
    tabular, _ = tabular_fit(records, vocab, _TOY_SCHEDULE, epochs=5, seed=3)
    n_samples = 300 if quick else 2000
    w = _workers(workers)

    def validity_count(denoiser, constraints, seed):
        cfg = SampleConfig(steps=100, schedule=_TOY_SCHEDULE, seed=seed,
                           constraints=constraints)
        results = sample_many(vocab, denoiser, cfg, n_samples,
                              block_count_prior=prior, workers=w)
        return sum(check_validity(r.graph, vocab).valid for r in results)

    oracle_on = validity_count(oracle, True, 31)
    tabular_on = validity_count(tabular, True, 32)
    tabular_off = validity_count(tabular, False, 33)
    oracle_off = validity_count(oracle, False, 34)

    _, p_value = fisher_exact(
        [[tabular_on, n_samples - tabular_on],
         [tabular_off, n_samples - tabular_off]],
        alternative="greater",
    )
    passed = (oracle_on == n_samples and tabular_on == n_samples
              and p_value < 0.01 and oracle_off <= oracle_on)
    return CriterionResult(
        "constraint soundness",
        passed,
        f"valid on/{n_samples}: oracle={oracle_on}, tabular={tabular_on}; "
        f"tabular off={tabular_off} (p={p_value:.2e}); oracle off={oracle_off}",
    )


# 4 -------------------------------------------------------------------------

def _big_clean_graph(vocab: Vocabulary, n: int) -> ReactionGraph:
    codec = codec_for(vocab)
    x = np.arange(n, dtype=np.int64) % vocab.n_blocks
    e = np.full((n, n), codec.no_edge, dtype=np.int64)
    return ReactionGraph(n=n, x=x, e=e)


def criterion_kernel_correctness(quick: bool = False, workers: int | None = None) -> CriterionResult:
    """Forward mask rate, reverse unmask rate, and zero carry-over violations."""
    vocab = load_builtin_vocabulary("toy")
    codec = codec_for(vocab)
    mask_tok = node_mask_token(vocab)
    schedule = NoiseSchedule(kind="linear", sigma_max=2.0)
    n = 141  # ~10^4 node+edge entries per draw
    g = _big_clean_graph(vocab, n)
    iu = triu_pairs(n)
    total = n + len(iu[0])
    details = []
    ok = True

    rng = np.random.default_rng(401)
    for t in (0.1, 0.3, 0.5, 0.7, 0.9):
        z = forward_noise(g, t, schedule, rng, vocab)
        masked = int((z.x[:n] == mask_tok).sum() + (z.e[:n, :n][iu] == codec.mask).sum())
        p = 1.0 - alpha(schedule, t)
        sigma = math.sqrt(p * (1.0 - p) * total)
        if abs(masked - p * total) > 3.0 * sigma:
            ok = False
            details.append(f"forward t={t}: {masked} vs {p * total:.0f}+/-{3 * sigma:.0f}")

    z = masked_graph(n, n, vocab)
    b = vocab.n_blocks
    node_probs = np.full((n, b), 1.0 / b)
    c_prob = codec.n_prob_channels
    edge_probs = np.full((n, n, c_prob), 1.0 / c_prob)
    out = DenoiserOutput(node_probs=node_probs, edge_probs=edge_probs,
                         coords_pred=np.zeros((n, vocab.max_atoms, 3)))
    s, t = 0.3, 0.7
    z_s = reverse_step(z, out.node_probs, out.edge_probs, s, t, schedule, rng, vocab)
    unmasked = int((z_s.x[:n] != mask_tok).sum() + (z_s.e[:n, :n][iu] != codec.mask).sum())
    a_s, a_t = alpha(schedule, s), alpha(schedule, t)
    p = (a_s - a_t) / (1.0 - a_t)
    sigma = math.sqrt(p * (1.0 - p) * total)
    if abs(unmasked - p * total) > 3.0 * sigma:
        ok = False
        details.append(f"reverse: {unmasked} vs {p * total:.0f}+/-{3 * sigma:.0f}")

    # carry-over along full sampling trajectories
    vocab_t, records, prior = toy_dataset()
    oracle = OracleDenoiser(records, vocab_t, capacity=3)
    violations = 0
    n_traj = 30 if quick else 200
    for i in range(n_traj):
        seen: dict = {}

        def hook(step, t_now, graph, coords):
            nonlocal violations
            for slot in range(graph.n):
                val = int(graph.x[slot])
                if ("x", slot) in seen:
                    if val != seen[("x", slot)]:
                        violations += 1
                elif val != node_mask_token(vocab_t):
                    seen[("x", slot)] = val
            for a in range(graph.n):
                for bb in range(a + 1, graph.n):
                    val = int(graph.e[a, bb])
                    if ("e", a, bb) in seen:
                        if val != seen[("e", a, bb)]:
                            violations += 1
                    elif val != codec_for(vocab_t).mask:
                        seen[("e", a, bb)] = val

        cfg = SampleConfig(steps=60, schedule=_TOY_SCHEDULE, seed=900 + i)
        rng_i = np.random.default_rng(np.random.SeedSequence([4, i]))
        sample(vocab_t, oracle, cfg, rng_i, block_count_prior=prior, trace_hook=hook)
    if violations:
        ok = False
        details.append(f"carry-over violations: {violations}")

    return CriterionResult(
        "kernel correctness", ok,
        "; ".join(details) if details else
        f"forward/reverse rates within 3 sigma; 0 carry-over violations over {n_traj} trajectories",
    )


# 5 -------------------------------------------------------------------------

def criterion_pair_data(quick: bool = False, workers: int | None = None) -> CriterionResult:
    """Pairing invariants over randomized shapes, masks, and times."""
    rng = np.random.default_rng(5005)
    cases = 200 if quick else 1000
    mask_tok = 99
    worst_centroid = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(2, 6))
        s0 = np.zeros((n, m), dtype=bool)
        x_t = np.full(n, 0, dtype=np.int64)
        for i in range(n):
            count = int(rng.integers(1, m + 1))
            s0[i, :count] = True
            if rng.random() < 0.5:
                x_t[i] = mask_tok
        c0 = rng.normal(size=(n, m, 3)) * 3.0
        c1 = rng.normal(size=(n, m, 3))
        st = visibility_mask(x_t, n, mask_tok, atom_mask=s0)

        c0_tilde_0, c_t0 = pair_data(c0, s0, c1, 0.0, x_t, mask_tok)
        if not np.allclose(c_t0, c0_tilde_0):
            return CriterionResult("pairing invariants", False, "t=0 endpoint mismatch")
        c0_tilde_1, c_t1 = pair_data(c0, s0, c1, 1.0, x_t, mask_tok)
        shift = masked_centroid(c1, st)
        c1_tilde = np.where(st[..., None], c1 - shift, 0.0)
        if not np.allclose(c_t1, c1_tilde):
            return CriterionResult("pairing invariants", False, "t=1 endpoint mismatch")
        worst_centroid = max(worst_centroid,
                             float(np.linalg.norm(masked_centroid(c1 - shift, st))))

        dummy = st & ~s0
        if dummy.any():
            for t in (0.0, 0.3, 0.7, 1.0):
                _, c_t = pair_data(c0, s0, c1, t, x_t, mask_tok)
                if not np.allclose(c_t[dummy], c1_tilde[dummy], atol=1e-12):
                    return CriterionResult("pairing invariants", False,
                                           f"dummy atoms moved at t={t}")
    passed = worst_centroid < 1e-9
    return CriterionResult("pairing invariants", passed,
                           f"{cases} cases; worst centered-prior centroid "
                           f"{worst_centroid:.1e}")


# 6 -------------------------------------------------------------------------

def criterion_loss_values(quick: bool = False, workers: int | None = None) -> CriterionResult:
    """Analytic loss fixtures."""
    checks = []

    coords = np.zeros((1, 3, 3))
    coords[0, 0] = (0.0, 0.0, 0.0)
    coords[0, 1] = (2.0, 0.0, 0.0)
    coords[0, 2] = (0.0, 3.0, 0.0)
    s0 = np.ones((1, 3), dtype=bool)
    slddt_val = loss_slddt(coords, coords, s0)
    expected = 1.0 - np.mean([1.0 / (1.0 + math.exp(-tau)) for tau in (0.5, 1, 2, 4)])
    checks.append(("slddt", abs(slddt_val - 0.19588) < 1e-4
                   and abs(slddt_val - expected) < 1e-12,
                   f"{slddt_val:.6f}"))

    pred = np.zeros((1, 2, 3))
    true = np.zeros((1, 2, 3))
    true[0, 1] = (2.0, 0.0, 0.0)
    pred[0, 1] = (3.0, 0.0, 0.0)
    s0_pair = np.ones((1, 2), dtype=bool)
    pair_val = loss_pair(pred, true, s0_pair, cutoff=3.0)
    checks.append(("pair", abs(pair_val - 1.0) < 1e-12, f"{pair_val}"))

    bond_pred = np.zeros((1, 2, 3))
    bond_pred[0, 1] = (1.2, 0.0, 0.0)
    bond_true = np.zeros((1, 2, 3))
    bond_true[0, 1] = (1.5, 0.0, 0.0)
    bond_val = loss_bond(bond_pred, bond_true, [((0, 0), (0, 1))], t=0.1)
    bond_zero = loss_bond(bond_pred, bond_true, [((0, 0), (0, 1))], t=0.5)
    checks.append(("bond", abs(bond_val - 0.3) < 1e-12 and bond_zero == 0.0,
                   f"{bond_val}/{bond_zero}"))

    schedule = NoiseSchedule(kind="linear", sigma_max=2.0 * math.log(2.0))
    w = loss_weight(schedule, 0.5, 0.0)  # sigma = ln2, delta = ln2
    checks.append(("w_t", abs(w - math.log(2.0)) < 1e-12, f"{w:.12f}"))

    passed = all(ok for _, ok, _ in checks)
    return CriterionResult("loss values", passed,
                           ", ".join(f"{n}={d}" for n, _, d in checks))


# 7 -------------------------------------------------------------------------

def criterion_metric_units(quick: bool = False, workers: int | None = None) -> CriterionResult:
    checks = []
    checks.append(("w1 identical", abs(wasserstein1([1.0, 2.0], [1.0, 2.0])) < 1e-9))
    checks.append(("w1 point masses", abs(wasserstein1([0.0], [1.0]) - 1.0) < 1e-9))
    checks.append(("w1 circular", abs(wasserstein1([350.0], [10.0], "circular") - 20.0) < 1e-9))
    checks.append(("jsd zero", jsd([1, 2, 3], [1, 2, 3]) == 0.0))
    checks.append(("jsd ln2", abs(jsd([1, 0], [0, 1]) - math.log(2.0)) < 1e-12))
    rng = np.random.default_rng(7)
    conformers = [rng.normal(size=(6, 3)) for _ in range(4)]
    cm = cov_mat(conformers, conformers, tau=0.75)
    checks.append(("cov_mat self", cm.cov == 1.0 and cm.mat < 1e-9))
    passed = all(ok for _, ok in checks)
    failing = [n for n, ok in checks if not ok]
    return CriterionResult("metric units", passed,
                           "all exact" if passed else f"failing: {failing}")


# 8 -------------------------------------------------------------------------

def _brute_force_isomorphic(g1: ReactionGraph, g2: ReactionGraph, vocab) -> bool:
    """Exhaustive labeled-tree isomorphism over node relabelings: node labels
    are block ids, edge labels are the reaction plus the (node, center)
    attachment pair — the same label structure the canonical code encodes."""
    from itertools import permutations

    if g1.n != g2.n:
        return False
    codec = codec_for(vocab)

    def labeled(g, perm):
        nodes = [0] * g.n
        for i in range(g.n):
            nodes[perm[i]] = int(g.x[i])
        edges = set()
        for i, j, r, vi, vj in iter_edges(g, codec):
            edges.add((r, frozenset(((perm[i], vi), (perm[j], vj)))))
        return tuple(nodes), edges

    base = labeled(g2, list(range(g2.n)))
    for perm in permutations(range(g1.n)):
        if labeled(g1, list(perm)) == base:
            return True
    return False


def _random_labeled_tree(rng, vocab) -> ReactionGraph:
    codec = codec_for(vocab)
    n = int(rng.integers(2, 6))
    x = rng.integers(0, vocab.n_blocks, size=n).astype(np.int64)
    e = np.full((n, n), codec.no_edge, dtype=np.int64)
    for j in range(1, n):
        i = int(rng.integers(0, j))
        ch = codec.encode(int(rng.integers(0, vocab.n_reactions)),
                          int(rng.integers(0, vocab.max_centers)),
                          int(rng.integers(0, vocab.max_centers)))
        e[i, j] = ch
    return ReactionGraph(n=n, x=x, e=symmetrize(e))


def _permute_tree(g: ReactionGraph, perm: list[int], codec) -> ReactionGraph:
    n = g.n
    x = np.zeros(n, dtype=np.int64)
    for i in range(n):
        x[perm[i]] = g.x[i]
    e = np.full((n, n), codec.no_edge, dtype=np.int64)
    for i, j, r, vi, vj in iter_edges(g, codec):
        a, b = perm[i], perm[j]
        if a < b:
            e[a, b] = codec.encode(r, vi, vj)
        else:
            e[b, a] = codec.encode(r, vj, vi)
    return ReactionGraph(n=n, x=x, e=symmetrize(e))


def criterion_assembly_arithmetic(quick: bool = False, workers: int | None = None) -> CriterionResult:
    """Leaving-group count identities and canonical-code permutation fuzz."""
    vocab = load_builtin_vocabulary("crosscoupling")
    rng = np.random.default_rng(88)
    n_mols = 100 if quick else 500
    for k in range(n_mols):
        depth = int(rng.integers(1, 5))
        g, atom_graph = generate_graph(vocab, depth, rng)
        codec = codec_for(vocab)
        atoms_expected = sum(len(vocab.blocks[int(b)].atoms) for b in g.x[: g.n])
        bonds_expected = sum(len(vocab.blocks[int(b)].bonds) for b in g.x[: g.n])
        leavings = 0
        for _, _, r, _, _ in iter_edges(g, codec):
            t = vocab.reactions[r]
            leavings += int(t.leaving_a) + int(t.leaving_b)
        atoms_expected -= leavings
        bonds_expected += (g.n - 1) - leavings
        if atom_graph.n_atoms != atoms_expected or atom_graph.n_bonds != bonds_expected:
            return CriterionResult(
                "assembly arithmetic", False,
                f"molecule {k}: atoms {atom_graph.n_atoms} vs {atoms_expected}, "
                f"bonds {atom_graph.n_bonds} vs {bonds_expected}")

    # canonical-code fuzz against the brute-force isomorphism oracle
    fuzz = 200 if quick else 1000
    rng = np.random.default_rng(89)
    codec = codec_for(vocab)
    collisions = 0
    for k in range(fuzz):
        g = _random_labeled_tree(rng, vocab)
        perm = list(rng.permutation(g.n))
        g_perm = _permute_tree(g, perm, codec)
        if canonical_code(g, vocab) != canonical_code(g_perm, vocab):
            return CriterionResult("assembly arithmetic", False,
                                   f"permuted copy changed canonical code (case {k})")
        other = _random_labeled_tree(rng, vocab)
        same_code = canonical_code(g, vocab) == canonical_code(other, vocab)
        iso = _brute_force_isomorphic(g, other, vocab)
        if same_code != iso:
            collisions += 1
    passed = collisions == 0
    return CriterionResult("assembly arithmetic", passed,
                           f"{n_mols} molecules, {fuzz} permutations, "
                           f"{collisions} code/isomorphism disagreements")


# 9 -------------------------------------------------------------------------

def criterion_inpainting(quick: bool = False, workers: int | None = None) -> CriterionResult:
    vocab = load_builtin_vocabulary("toy")
    records = generate_records(vocab, GenConfig(depth_min=2, depth_max=2,
                                                count=1, seed=21))
    rec = records[0]
    oracle = OracleDenoiser(records, vocab, capacity=rec.graph.n)
    block0 = int(rec.graph.x[0])
    n_atoms0 = vocab.atom_count(block0)
    spec = InpaintSpec(
        fragments=(InpaintFragment(slot=0, block=block0,
                                   coords=rec.coords[0, :n_atoms0].copy()),),
        free_slots=rec.graph.n - 1,
        t_star=0.03,
    )
    cfg = SampleConfig(steps=100, schedule=_TOY_SCHEDULE, seed=91)

    states: list[tuple[float, np.ndarray]] = []

    def hook(step, t, graph, coords):
        states.append((t, coords.copy()))

    rng = np.random.default_rng(np.random.SeedSequence([9, 0]))
    res = inpaint(vocab, oracle, cfg, spec, rng, trace_hook=hook)
    c1 = states[0][1]
    c0_spec = np.zeros_like(c1)
    c0_spec[0, :n_atoms0] = spec.fragments[0].coords
    constrained_steps = 0
    for t, coords in states[:-1]:
        if t > spec.t_star:
            expected = (1.0 - t) * c0_spec[0] + t * c1[0]
            if not np.allclose(coords[0], expected, atol=1e-12):
                return CriterionResult("inpainting contract", False,
                                       f"interpolation mismatch at t={t:.2f}")
            constrained_steps += 1
    if constrained_steps != 97:
        return CriterionResult("inpainting contract", False,
                               f"{constrained_steps} constrained steps, expected 97")

    runs = 20 if quick else 100
    recovered = 0
    for i in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence([9, 1, i]))
        out = inpaint(vocab, oracle, cfg, spec, rng)
        if int(out.graph.x[0]) != block0:
            return CriterionResult("inpainting contract", False,
                                   "fixed block missing from output")
        if _graph_key(out.graph) == _graph_key(rec.graph):
            recovered += 1
    passed = recovered == runs
    return CriterionResult(
        "inpainting contract", passed,
        f"97 interpolated steps exact; recovery {recovered}/{runs}",
    )


# 10 ------------------------------------------------------------------------

def criterion_cli_reproducibility(quick: bool = False, workers: int | None = None) -> CriterionResult:
    from .cli import main as cli_main

    with tempfile.TemporaryDirectory() as tmp:
        def run_twice(label, argv_fn):
            out_a = os.path.join(tmp, f"{label}_a.out")
            out_b = os.path.join(tmp, f"{label}_b.out")
            for out in (out_a, out_b):
                code = cli_main(argv_fn(out))
                if code != 0:
                    raise RuntimeError(f"{label}: exit code {code}")
            with open(out_a, "rb") as fa, open(out_b, "rb") as fb:
                return fa.read() == fb.read()

        dataset = os.path.join(tmp, "data.jsonl")
        model = os.path.join(tmp, "model.json")
        checks = {}
        checks["gen-dataset"] = run_twice(
            "gen",
            lambda out: ["gen-dataset", "--vocab", "builtin:toy", "--count", "12",
                         "--depth-min", "1", "--depth-max", "2", "--seed", "7",
                         "--out", out])
        cli_main(["gen-dataset", "--vocab", "builtin:toy", "--count", "12",
                  "--depth-min", "1", "--depth-max", "2", "--seed", "7",
                  "--out", dataset])
        checks["fit-tabular"] = run_twice(
            "fit",
            lambda out: ["fit-tabular", "--vocab", "builtin:toy", "--dataset", dataset,
                         "--epochs", "2", "--seed", "3", "--schedule", "loglinear",
                         "--sigma-max", "12", "--out", out])
        cli_main(["fit-tabular", "--vocab", "builtin:toy", "--dataset", dataset,
                  "--epochs", "2", "--seed", "3", "--schedule", "loglinear",
                  "--sigma-max", "12", "--out", model])
        checks["sample"] = run_twice(
            "sample",
            lambda out: ["sample", "--vocab", "builtin:toy", "--oracle-dataset", dataset,
                         "--n-samples", "8", "--steps", "40", "--seed", "5",
                         "--schedule", "loglinear", "--sigma-max", "12", "--out", out])
        sample_file = os.path.join(tmp, "samples.jsonl")
        cli_main(["sample", "--vocab", "builtin:toy", "--oracle-dataset", dataset,
                  "--n-samples", "8", "--steps", "40", "--seed", "5",
                  "--schedule", "loglinear", "--sigma-max", "12", "--out", sample_file])
        spec_file = os.path.join(tmp, "spec.json")
        vocab = load_builtin_vocabulary("toy")
        recs = generate_records(vocab, GenConfig(depth_min=1, depth_max=1,
                                                 count=1, seed=2))
        blk = int(recs[0].graph.x[0])
        with open(spec_file, "w", encoding="utf-8") as fh:
            import json as _json

            _json.dump({"fragments": [{"slot": 0, "block": blk,
                                       "coords": recs[0].coords[0, :vocab.atom_count(blk)].tolist()}],
                        "free_slots": 1}, fh)
        checks["inpaint"] = run_twice(
            "inpaint",
            lambda out: ["inpaint", "--vocab", "builtin:toy", "--oracle-dataset", dataset,
                         "--spec", spec_file, "--n-samples", "4", "--steps", "40",
                         "--seed", "5", "--schedule", "loglinear", "--sigma-max", "12",
                         "--out", out])
        checks["eval"] = run_twice(
            "eval",
            lambda out: ["eval", "--vocab", "builtin:toy", "--generated", sample_file,
                         "--reference", dataset, "--report", out])
        failures = [k for k, ok in checks.items() if not ok]
        return CriterionResult(
            "cli reproducibility", not failures,
            "all byte-identical" if not failures else f"mismatch: {failures}",
        )


CRITERIA = [
    criterion_oracle_distribution,
    criterion_coordinate_exactness,
    criterion_constraint_soundness,
    criterion_kernel_correctness,
    criterion_pair_data,
    criterion_loss_values,
    criterion_metric_units,
    criterion_assembly_arithmetic,
    criterion_inpainting,
    criterion_cli_reproducibility,
]


def run_all(quick: bool = False, workers: int | None = None) -> list[CriterionResult]:
    results = []
    for criterion in CRITERIA:
        results.append(criterion(quick=quick, workers=workers))
    return results

"""Command-line entry point: dataset generation, tabular fitting, sampling,
inpainting, evaluation, and the oracle-based self test.

Every run is deterministic under its seed and emits a ``<out>.manifest.json``
sidecar echoing the resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import defaultdict

import numpy as np

from . import __version__
from .datagen import (
    GenConfig,
    BlockCountPrior,
    builtin_vocabulary_path,
    estimate_block_count_prior,
    generate_records,
)
from .denoise import OracleDenoiser, TabularDenoiser, tabular_fit
from .diffusion import NoiseSchedule
from .flow import FlowConfig
from .graph import check_validity, canonical_code
from .io import MoleculeRecord, read_records, write_manifest, write_records
from .metrics import (
    cov_mat,
    diversity_uniqueness_novelty,
    geometry_from_result,
    jsd,
    kde_density,
    shared_histograms,
    wasserstein1,
)
from .sampler import InpaintFragment, InpaintSpec, SampleConfig, inpaint, sample_many
from .vocab import load_vocabulary_file


def _default_workers() -> int:
    env = os.environ.get("BLOCKFLOW_THREADS")
    if env:
        return max(1, int(env))
    return 1


def _load_vocab(args):
    if args.vocab == "builtin:toy":
        return load_vocabulary_file(builtin_vocabulary_path("toy"))
    if args.vocab == "builtin:crosscoupling":
        return load_vocabulary_file(builtin_vocabulary_path("crosscoupling"))
    return load_vocabulary_file(args.vocab)


def _schedule_from(args) -> NoiseSchedule:
    return NoiseSchedule(kind=args.schedule, sigma_max=args.sigma_max)


def _add_vocab_arg(p):
    p.add_argument("--vocab", required=True,
                   help="vocabulary file, or builtin:toy / builtin:crosscoupling")


def _add_schedule_args(p):
    p.add_argument("--schedule", default="linear",
                   choices=["linear", "geometric", "loglinear"])
    p.add_argument("--sigma-max", type=float, default=1e8)


def _manifest_for(args, command: str) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_validate_vocab(args) -> int:
    vocab = _load_vocab(args)
    print(f"blocks: {vocab.n_blocks}")
    print(f"reactions: {vocab.n_reactions}")
    print(f"max centers per block: {vocab.max_centers}")
    print(f"max atoms per block: {vocab.max_atoms}")
    print("ok")
    return 0


def cmd_gen_dataset(args) -> int:
    vocab = _load_vocab(args)
    cfg = GenConfig(depth_min=args.depth_min, depth_max=args.depth_max,
                    count=args.count, seed=args.seed, dedup=args.dedup)
    records = generate_records(vocab, cfg, threads=args.threads)
    count = write_records(args.out, records, vocab)
    write_manifest(args.out + ".manifest.json", "gen-dataset", _manifest_for(args, "gen-dataset"))
    print(f"wrote {count} records to {args.out}")
    return 0


def cmd_fit_tabular(args) -> int:
    vocab = _load_vocab(args)
    records = read_records(args.dataset, vocab)
    schedule = _schedule_from(args)
    model, losses = tabular_fit(records, vocab, schedule, epochs=args.epochs,
                                seed=args.seed)
    prior = estimate_block_count_prior(records)
    doc = {
        "tabular": json.loads(model.to_json()),
        "block_prior": prior.probs.tolist(),
        "capacity": max(r.graph.n for r in records),
        "loss_curve": losses,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    write_manifest(args.out + ".manifest.json", "fit-tabular", _manifest_for(args, "fit-tabular"))
    print(f"fit tabular model on {len(records)} records; "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return 0


def _load_denoiser(args, vocab):
    if getattr(args, "oracle_dataset", None):
        records = read_records(args.oracle_dataset, vocab)
        capacity = max(r.graph.n for r in records)
        prior = estimate_block_count_prior(records)
        return OracleDenoiser(records, vocab, capacity=capacity), prior, capacity
    if not getattr(args, "model", None):
        raise SystemExit("need --model or --oracle-dataset")
    with open(args.model, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    model = TabularDenoiser.from_json(json.dumps(doc["tabular"]), vocab)
    prior = BlockCountPrior(probs=np.asarray(doc["block_prior"], dtype=np.float64))
    return model, prior, int(doc["capacity"])


def _sample_config(args, capacity) -> SampleConfig:
    return SampleConfig(
        steps=args.steps,
        schedule=_schedule_from(args),
        flow=FlowConfig(z_c=args.z_c, anneal_coeff=args.anneal,
                        noise_scale=args.noise_scale, velocity=args.velocity),
        constraints=(args.constraints == "on"),
        seed=args.seed,
        fixed_n=args.fixed_n,
        capacity=capacity,
    )


def cmd_sample(args) -> int:
    vocab = _load_vocab(args)
    denoiser, prior, capacity = _load_denoiser(args, vocab)
    if args.fixed_n is not None:
        capacity = max(capacity, args.fixed_n)
    cfg = _sample_config(args, capacity)
    results = sample_many(vocab, denoiser, cfg, args.n_samples,
                          block_count_prior=prior, workers=args.workers)
    records = [MoleculeRecord(graph=r.graph, coords=r.coords, atom_mask=r.atom_mask)
               for r in results]
    write_records(args.out, records, vocab)
    write_manifest(args.out + ".manifest.json", "sample", _manifest_for(args, "sample"))
    valid = sum(check_validity(r.graph, vocab).valid for r in results)
    print(f"wrote {len(records)} samples to {args.out} "
          f"({100.0 * valid / len(records):.1f}% valid)")
    return 0


def cmd_inpaint(args) -> int:
    vocab = _load_vocab(args)
    denoiser, _, capacity = _load_denoiser(args, vocab)
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec_doc = json.load(fh)
    fragments = tuple(
        InpaintFragment(slot=int(f["slot"]), block=int(f["block"]),
                        coords=np.asarray(f["coords"], dtype=np.float64))
        for f in spec_doc["fragments"]
    )
    spec = InpaintSpec(fragments=fragments,
                       free_slots=int(spec_doc["free_slots"]),
                       t_star=float(spec_doc.get("t_star", 0.03)))
    n = len(fragments) + spec.free_slots
    cfg = _sample_config(args, max(capacity, n))
    records = []
    for idx in range(args.n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, idx]))
        res = inpaint(vocab, denoiser, cfg, spec, rng)
        records.append(MoleculeRecord(graph=res.graph, coords=res.coords,
                                      atom_mask=res.atom_mask))
    write_records(args.out, records, vocab)
    write_manifest(args.out + ".manifest.json", "inpaint", _manifest_for(args, "inpaint"))
    print(f"wrote {len(records)} inpainted samples to {args.out}")
    return 0


def cmd_eval(args) -> int:
    vocab = _load_vocab(args)
    generated = read_records(args.generated, vocab)
    reference = read_records(args.reference, vocab)

    lines = [f"blockflow eval report (v{__version__})",
             f"generated: {args.generated} ({len(generated)} records)",
             f"reference: {args.reference} ({len(reference)} records)", ""]

    reports = [check_validity(r.graph, vocab) for r in generated]
    valid_flags = [r.valid for r in reports]
    lines.append(f"validity: {100.0 * np.mean(valid_flags):.2f}%")
    failure_counts = defaultdict(int)
    for rep in reports:
        for f in rep.failures:
            failure_counts[f.split(":")[0].split(" (")[0]] += 1
    for kind, cnt in sorted(failure_counts.items()):
        lines.append(f"  failure[{kind}]: {cnt}")

    def geometry_samples(records):
        table = defaultdict(list)
        for rec in records:
            if rec.coords is None:
                continue
            report = check_validity(rec.graph, vocab)
            if not report.valid:
                continue
            for s in geometry_from_result(rec.graph, rec.coords, vocab):
                table[(s.kind, s.key)].append(s.value)
        return table

    gen_geo = geometry_samples(generated)
    ref_geo = geometry_samples(reference)
    common = sorted(set(gen_geo) & set(ref_geo),
                    key=lambda k: -min(len(gen_geo[k]), len(ref_geo[k])))
    lines.append("")
    lines.append("geometry distances (key, n_gen, n_ref, W1, JSD):")
    csv_rows = [("kind", "key", "n_gen", "n_ref", "w1", "jsd")]
    for kind, key in common[: args.top_keys]:
        a = gen_geo[(kind, key)]
        b = ref_geo[(kind, key)]
        topo = "linear" if kind == "bond_length" else "circular"
        w1 = wasserstein1(a, b, topology=topo)
        ha, hb = shared_histograms(a, b, bins=args.bins, topology=topo)
        div = jsd(ha, hb)
        label = "|".join(key)
        lines.append(f"  {kind:12s} {label:40s} {len(a):6d} {len(b):6d} "
                     f"{w1:10.4f} {div:8.4f}")
        csv_rows.append((kind, label, len(a), len(b), f"{w1:.6g}", f"{div:.6g}"))

    valid_graphs = [r.graph for r, ok in zip(generated, valid_flags) if ok]
    if len(valid_graphs) >= 2:
        stats = diversity_uniqueness_novelty(valid_graphs,
                                             [r.graph for r in reference], vocab)
        lines.append("")
        lines.append(f"diversity(1-tanimoto): {stats.diversity:.4f}")
        lines.append(f"uniqueness: {stats.uniqueness:.4f}")
        lines.append(f"novelty: {stats.novelty:.4f}")

    gen_by_code = defaultdict(list)
    ref_by_code = defaultdict(list)
    for rec, ok in zip(generated, valid_flags):
        if ok and rec.coords is not None:
            gen_by_code[canonical_code(rec.graph, vocab)].append(
                rec.coords[rec.atom_mask.astype(bool)])
    for rec in reference:
        if rec.coords is not None and check_validity(rec.graph, vocab).valid:
            ref_by_code[canonical_code(rec.graph, vocab)].append(
                rec.coords[rec.atom_mask.astype(bool)])
    shared_codes = [c for c in gen_by_code if c in ref_by_code]
    if shared_codes:
        covs, mats, cov_refs = [], [], []
        for code in shared_codes:
            cm = cov_mat(gen_by_code[code], ref_by_code[code], tau=args.tau)
            covs.append(cm.cov)
            mats.append(cm.mat)
            cov_refs.append(cm.cov_ref)
        lines.append("")
        lines.append(f"conformers: {len(shared_codes)} shared molecules, tau={args.tau}")
        lines.append(f"  COV (generated-indexed): {np.mean(covs):.4f}")
        lines.append(f"  COV (reference coverage): {np.mean(cov_refs):.4f}")
        lines.append(f"  MAT: {np.mean(mats):.4f}")

    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            for row in csv_rows:
                fh.write(",".join(str(v) for v in row) + "\n")
    if args.kde_csv and common:
        kind, key = common[0]
        topo = "circular" if kind != "bond_length" else "linear"
        with open(args.kde_csv, "w", encoding="utf-8") as fh:
            fh.write("series,x,density\n")
            for name, values in (("generated", gen_geo[(kind, key)]),
                                 ("reference", ref_geo[(kind, key)])):
                grid, dens = kde_density(values, kind=topo)
                for x, d in zip(grid, dens):
                    fh.write(f"{name},{x:.6g},{d:.6g}\n")
    write_manifest(args.report + ".manifest.json", "eval", _manifest_for(args, "eval"))
    print("\n".join(lines))
    return 0


def cmd_selftest(args) -> int:
    from .acceptance import run_all

    results = run_all(quick=args.quick, workers=args.workers)
    failed = [r for r in results if not r.passed]
    for r in results:
        marker = "PASS" if r.passed else "FAIL"
        print(f"[{marker}] {r.name}: {r.detail}")
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 0 if not failed else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockflow",
        description="Building-block reaction-graph and coordinate co-generation",
    )
    parser.add_argument("--version", action="version", version=f"blockflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-vocab", help="load and validate a vocabulary")
    _add_vocab_arg(p)
    p.set_defaults(func=cmd_validate_vocab)

    p = sub.add_parser("gen-dataset", help="procedurally generate molecules")
    _add_vocab_arg(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--depth-min", type=int, default=2)
    p.add_argument("--depth-max", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dedup", action="store_true")
    p.add_argument("--threads", type=int, default=_default_workers())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("fit-tabular", help="fit the tabular denoiser")
    _add_vocab_arg(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    _add_schedule_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_tabular)

    def add_sampling_args(p):
        _add_vocab_arg(p)
        p.add_argument("--model", help="tabular model file")
        p.add_argument("--oracle-dataset", help="dataset file for the oracle denoiser")
        p.add_argument("--n-samples", type=int, default=100)
        p.add_argument("--steps", type=int, default=100)
        p.add_argument("--anneal", type=float, default=10.0)
        p.add_argument("--noise-scale", type=float, default=0.2)
        p.add_argument("--z-c", type=float, default=1.0)
        p.add_argument("--velocity", default="paper", choices=["paper", "rescaled"])
        p.add_argument("--constraints", default="on", choices=["on", "off"])
        p.add_argument("--fixed-n", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=_default_workers())
        _add_schedule_args(p)
        p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="unconditional generation")
    add_sampling_args(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("inpaint", help="conditional generation with fixed fragments")
    add_sampling_args(p)
    p.add_argument("--spec", required=True, help="JSON inpainting spec")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("eval", help="evaluate generated molecules against a reference set")
    _add_vocab_arg(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--bins", type=int, default=36)
    p.add_argument("--top-keys", type=int, default=12)
    p.add_argument("--tau", type=float, default=0.75)
    p.add_argument("--csv", default=None)
    p.add_argument("--kde-csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the oracle-based acceptance suite")
    p.add_argument("--quick", action="store_true",
                   help="reduced sample counts (smoke test, not the acceptance gate)")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

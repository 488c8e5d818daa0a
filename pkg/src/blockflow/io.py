"""Line-delimited molecule record format and run manifests.

One JSON object per line: ``n``, ``blocks`` (block ids by slot), ``edges``
(upper-triangle concrete edges as [i, j, reaction, center_i, center_j]) and an
optional ``coords`` list of [slot, local_atom, x, y, z] rows for surviving
atoms, in angstroms at 9 significant digits. Graph fields round-trip
bit-exactly; coordinate text is stable after the first serialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .graph import ReactionGraph, codec_for, symmetrize
from .vocab import Vocabulary


@dataclass
class MoleculeRecord:
    """A dataset entry: one reaction graph plus one conformer."""

    graph: ReactionGraph
    coords: np.ndarray | None = None      # [n, max_atoms, 3]
    atom_mask: np.ndarray | None = None   # [n, max_atoms] bool, surviving atoms


def _fmt(value: float) -> float:
    return float(format(float(value), ".9g"))


def record_to_line(record: MoleculeRecord, vocab: Vocabulary) -> str:
    g = record.graph
    codec = codec_for(vocab)
    edges = []
    for i in range(g.n):
        for j in range(i + 1, g.n):
            ch = int(g.e[i, j])
            if codec.is_concrete(ch):
                edges.append([i, j, *codec.decode(ch)])
    doc: dict = {
        "n": g.n,
        "blocks": [int(b) for b in g.x[: g.n]],
        "edges": edges,
    }
    if record.coords is not None and record.atom_mask is not None:
        rows = []
        for slot in range(g.n):
            for local in range(record.atom_mask.shape[1]):
                if record.atom_mask[slot, local]:
                    x, y, z = record.coords[slot, local]
                    rows.append([slot, local, _fmt(x), _fmt(y), _fmt(z)])
        doc["coords"] = rows
    return json.dumps(doc, separators=(",", ":"))


def line_to_record(line: str, vocab: Vocabulary) -> MoleculeRecord:
    doc = json.loads(line)
    codec = codec_for(vocab)
    n = int(doc["n"])
    x = np.zeros(n, dtype=np.int64)
    x[:] = np.asarray(doc["blocks"], dtype=np.int64)
    e = np.full((n, n), codec.no_edge, dtype=np.int64)
    for i, j, r, vi, vj in doc.get("edges", []):
        e[i, j] = codec.encode(r, vi, vj)
    e = symmetrize(e)
    graph = ReactionGraph(n=n, x=x, e=e)

    coords = atom_mask = None
    if "coords" in doc:
        m = vocab.max_atoms
        coords = np.zeros((n, m, 3), dtype=np.float64)
        atom_mask = np.zeros((n, m), dtype=bool)
        for slot, local, px, py, pz in doc["coords"]:
            coords[int(slot), int(local)] = (float(px), float(py), float(pz))
            atom_mask[int(slot), int(local)] = True
    return MoleculeRecord(graph=graph, coords=coords, atom_mask=atom_mask)


def write_records(path, records: Iterable[MoleculeRecord], vocab: Vocabulary) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_line(record, vocab) + "\n")
            count += 1
    return count


def read_records(path, vocab: Vocabulary) -> list[MoleculeRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(line_to_record(line, vocab))
    return out


def write_manifest(path, command: str, config: dict) -> None:
    """Sidecar manifest making the run reproducible from its config alone."""
    from . import __version__

    doc = {"tool": f"blockflow {__version__}", "command": command, "config": config}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Building-block / reaction-template vocabulary: loading, validation, and
compatibility queries.

The vocabulary is the static chemistry knowledge of the whole pipeline: which
fragments exist, where their reaction centers are, and which template couples
which pair of center classes. Everything downstream (assembly, constraints,
sampling) answers compatibility questions through this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import yaml

ELEMENTS = ("C", "N", "O", "B", "F", "Cl", "Br", "S")
BOND_ORDERS = ("single", "double", "triple", "aromatic")


class VocabularyError(ValueError):
    """Raised when a vocabulary document fails parsing or validation."""


@dataclass(frozen=True)
class AtomSpec:
    """One heavy atom of a building block (hydrogens are implicit)."""

    element: str
    in_ring: bool = False


@dataclass(frozen=True)
class ReactionCenter:
    """An atom of a block where a coupling may form or cleave a bond.

    If ``is_leaving``, firing a leaving-flagged template at this center deletes
    the center atom and reroutes the new bond to its unique neighbor; such
    centers must have degree exactly 1 inside their block.
    """

    atom: int
    center_class: str
    is_leaving: bool = False


@dataclass(frozen=True)
class BuildingBlock:
    id: int
    atoms: tuple[AtomSpec, ...]
    bonds: tuple[tuple[int, int, str], ...]
    centers: tuple[ReactionCenter, ...]
    name: str = ""

    def degree(self, atom: int) -> int:
        return sum(1 for a, b, _ in self.bonds if atom in (a, b))

    def neighbors(self, atom: int) -> list[int]:
        out = []
        for a, b, _ in self.bonds:
            if a == atom:
                out.append(b)
            elif b == atom:
                out.append(a)
        return out


@dataclass(frozen=True)
class ReactionTemplate:
    """Two-reagent coupling rule: reagent A's class + reagent B's class form
    one new bond; ``leaving_a``/``leaving_b`` flag whether the matched center
    atom departs on the respective side."""

    id: int
    class_a: str
    class_b: str
    leaving_a: bool
    leaving_b: bool
    bond_order: str


class CompatTuple(NamedTuple):
    """One admissible growth move: existing node ``slot`` reacts at ``center``
    via ``reaction`` with a fresh copy of ``new_block`` at ``new_center``."""

    slot: int
    center: int
    reaction: int
    new_block: int
    new_center: int


@dataclass(frozen=True)
class Vocabulary:
    blocks: tuple[BuildingBlock, ...]
    reactions: tuple[ReactionTemplate, ...]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def max_centers(self) -> int:
        return max((len(b.centers) for b in self.blocks), default=0)

    @property
    def max_atoms(self) -> int:
        return max((len(b.atoms) for b in self.blocks), default=0)

    def atom_count(self, block_id: int) -> int:
        return len(self.blocks[block_id].atoms)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise VocabularyError(msg)


def _parse_block(entry: dict) -> BuildingBlock:
    _require(isinstance(entry, dict), f"block entry is not a mapping: {entry!r}")
    bid = entry.get("id")
    _require(isinstance(bid, int) and bid >= 0, f"block id missing or invalid: {entry!r}")
    atoms = []
    for a in entry.get("atoms", []):
        elem = a.get("element")
        _require(elem in ELEMENTS, f"block {bid}: unknown element {elem!r}")
        atoms.append(AtomSpec(element=elem, in_ring=bool(a.get("ring", False))))
    _require(len(atoms) > 0, f"block {bid}: no atoms")
    bonds = []
    for b in entry.get("bonds", []):
        _require(len(b) == 3, f"block {bid}: bond must be [a, b, order]: {b!r}")
        i, j, order = int(b[0]), int(b[1]), str(b[2])
        _require(0 <= i < len(atoms) and 0 <= j < len(atoms) and i != j,
                 f"block {bid}: bond endpoints out of range: {b!r}")
        _require(order in BOND_ORDERS, f"block {bid}: unknown bond order {order!r}")
        bonds.append((i, j, order))
    centers = []
    for c in entry.get("centers", []):
        atom = int(c.get("atom", -1))
        _require(0 <= atom < len(atoms), f"block {bid}: center atom out of range: {c!r}")
        klass = c.get("class")
        _require(isinstance(klass, str) and klass,
                 f"block {bid}: center class missing: {c!r}")
        centers.append(ReactionCenter(atom=atom, center_class=klass,
                                      is_leaving=bool(c.get("leaving", False))))
    block = BuildingBlock(id=bid, atoms=tuple(atoms), bonds=tuple(bonds),
                          centers=tuple(centers), name=str(entry.get("name", "")))
    # connectivity of the intra-block atom graph
    if len(atoms) > 1:
        seen = {0}
        frontier = [0]
        while frontier:
            cur = frontier.pop()
            for nb in block.neighbors(cur):
                if nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        _require(len(seen) == len(atoms), f"block {bid}: atom graph is disconnected")
    for c in block.centers:
        if c.is_leaving:
            _require(block.degree(c.atom) == 1,
                     f"block {bid}: leaving center not degree-1 (atom {c.atom})")
    return block


def _parse_reaction(entry: dict) -> ReactionTemplate:
    rid = entry.get("id")
    _require(isinstance(rid, int) and rid >= 0,
             f"reaction id missing or invalid: {entry!r}")
    class_a, class_b = entry.get("class_a"), entry.get("class_b")
    _require(isinstance(class_a, str) and class_a, f"reaction {rid}: class_a missing")
    _require(isinstance(class_b, str) and class_b, f"reaction {rid}: class_b missing")
    order = str(entry.get("bond_order", "single"))
    _require(order in BOND_ORDERS, f"reaction {rid}: unknown bond order {order!r}")
    return ReactionTemplate(id=rid, class_a=class_a, class_b=class_b,
                            leaving_a=bool(entry.get("l_a", False)),
                            leaving_b=bool(entry.get("l_b", False)),
                            bond_order=order)


def load_vocabulary(text: str) -> Vocabulary:
    """Parse and validate a vocabulary document (YAML with ``blocks`` and
    ``reactions`` sections). Deterministic: the same document always yields
    a structurally identical :class:`Vocabulary`.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise VocabularyError(f"vocabulary parse failure: {exc}") from exc
    _require(isinstance(doc, dict), "vocabulary document must be a mapping")
    raw_blocks = doc.get("blocks")
    raw_reactions = doc.get("reactions")
    _require(isinstance(raw_blocks, list) and raw_blocks, "missing 'blocks' section")
    _require(isinstance(raw_reactions, list) and raw_reactions,
             "missing 'reactions' section")

    blocks = sorted((_parse_block(e) for e in raw_blocks), key=lambda b: b.id)
    _require([b.id for b in blocks] == list(range(len(blocks))),
             "block ids must be dense and sequential from 0")
    reactions = sorted((_parse_reaction(e) for e in raw_reactions), key=lambda r: r.id)
    _require([r.id for r in reactions] == list(range(len(reactions))),
             "reaction ids must be dense and sequential from 0")

    declared_m = doc.get("max_atoms")
    if declared_m is not None:
        for b in blocks:
            _require(len(b.atoms) <= int(declared_m),
                     f"block {b.id}: atom count {len(b.atoms)} exceeds declared "
                     f"max_atoms {declared_m}")

    vocab = Vocabulary(blocks=tuple(blocks), reactions=tuple(reactions))
    known_classes = {c.center_class for b in blocks for c in b.centers}
    for r in reactions:
        for side, klass in (("A", r.class_a), ("B", r.class_b)):
            _require(klass in known_classes,
                     f"reaction {r.id}: dangling center class {klass!r} (side {side})")
    return vocab


def load_vocabulary_file(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        return load_vocabulary(fh.read())


def serialize_vocabulary(vocab: Vocabulary) -> str:
    """Emit a document that :func:`load_vocabulary` parses back to an equal
    vocabulary (load/serialize round trip is idempotent)."""
    doc = {
        "blocks": [
            {
                "id": b.id,
                **({"name": b.name} if b.name else {}),
                "atoms": [{"element": a.element, "ring": a.in_ring} for a in b.atoms],
                "bonds": [[i, j, order] for i, j, order in b.bonds],
                "centers": [
                    {"atom": c.atom, "class": c.center_class, "leaving": c.is_leaving}
                    for c in b.centers
                ],
            }
            for b in vocab.blocks
        ],
        "reactions": [
            {
                "id": r.id,
                "class_a": r.class_a,
                "class_b": r.class_b,
                "l_a": r.leaving_a,
                "l_b": r.leaving_b,
                "bond_order": r.bond_order,
            }
            for r in vocab.reactions
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def center_matched_set(vocab: Vocabulary, reaction: int, side: str) -> frozenset[tuple[int, int]]:
    """All (block id, center id) pairs whose class matches ``reaction``'s
    reagent on ``side`` ('A' or 'B'). Pure lookup."""
    if not 0 <= reaction < vocab.n_reactions:
        raise VocabularyError(f"invalid reaction id {reaction}")
    if side not in ("A", "B"):
        raise VocabularyError(f"side must be 'A' or 'B', got {side!r}")
    template = vocab.reactions[reaction]
    klass = template.class_a if side == "A" else template.class_b
    return frozenset(
        (b.id, ci)
        for b in vocab.blocks
        for ci, c in enumerate(b.centers)
        if c.center_class == klass
    )


def block_candidates(vocab: Vocabulary, reaction: int, center: int, side: str) -> frozenset[int]:
    """Blocks whose center index ``center`` matches ``reaction``'s reagent on
    ``side`` — the center-matched reagent sets used by the logit constraints."""
    return frozenset(b for b, c in center_matched_set(vocab, reaction, side) if c == center)


def compatible_tuples(
    node_blocks: Sequence[int],
    occupied: Iterable[tuple[int, int]],
    vocab: Vocabulary,
) -> list[CompatTuple]:
    """Enumerate all admissible growth moves for a partial graph.

    ``node_blocks[slot]`` gives the block at each existing node and
    ``occupied`` the (slot, center) pairs already consumed by an edge. A tuple
    is returned when the existing node's free center matches reagent A of some
    template and a vocabulary block offers a reagent-B match.
    """
    occupied = set(occupied)
    out: list[CompatTuple] = []
    for slot, block_id in enumerate(node_blocks):
        block = vocab.blocks[block_id]
        for ci, c in enumerate(block.centers):
            if (slot, ci) in occupied:
                continue
            for r in vocab.reactions:
                if c.center_class != r.class_a:
                    continue
                for nb in vocab.blocks:
                    for nci, nc in enumerate(nb.centers):
                        if nc.center_class == r.class_b:
                            out.append(CompatTuple(slot, ci, r.id, nb.id, nci))
    return out

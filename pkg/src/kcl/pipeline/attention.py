"""Per-atom attention weights from the final KMPNN round."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from kcl import numcore as nc
from kcl.augment import augment
from kcl.elementkg import ElementKG
from kcl.encoders import pack_augmented
from kcl.pipeline.model import KclModel
from kcl.smiles import MolecularGraph

ATTENTION_HEADER = ("mol_index", "atom_index", "neighbor_kind", "neighbor_label", "weight")


@dataclass(frozen=True)
class AttentionEntry:
    mol_index: int
    atom_index: int
    neighbor_kind: str      # "atom" | "attribute"
    neighbor_label: str     # "<element><atom index>" or the attribute name
    weight: float


@dataclass
class AttentionDump:
    entries: list[AttentionEntry] = field(default_factory=list)

    def per_atom(self) -> dict[tuple[int, int], list[AttentionEntry]]:
        out = defaultdict(list)
        for e in self.entries:
            out[(e.mol_index, e.atom_index)].append(e)
        return dict(out)

    def atom_sums(self) -> dict[tuple[int, int], float]:
        return {k: float(sum(e.weight for e in v)) for k, v in self.per_atom().items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ATTENTION_HEADER)
        for e in self.entries:
            w.writerow((e.mol_index, e.atom_index, e.neighbor_kind, e.neighbor_label,
                        repr(e.weight)))
        return buf.getvalue()


def dump_attention(model: KclModel, molecules: list[MolecularGraph], kg: ElementKG,
                   chunk: int = 32) -> AttentionDump:
    """Final-round alpha (attribute neighbours) and beta (atom neighbours) per atom.

    The two softmaxes are concatenated and rescaled so each atom's weights sum
    to one.  Atoms without any neighbour produce no entries.
    """
    work = model.copy()
    work.cover(molecules)
    attr_names = work.tables.attr_names
    dump = AttentionDump()
    for start in range(0, len(molecules), chunk):
        mols = molecules[start:start + chunk]
        augs = [augment(m, kg) for m in mols]
        pack = pack_augmented(augs, work.tables)
        trace = []
        with nc.no_grad():
            work.encode_kmpnn(augs, trace=trace)
        t = trace[-1]

        rows = defaultdict(list)   # global atom -> [(kind, label, raw weight)]
        for k in range(len(pack.bond_dst)):
            u, v = int(pack.bond_src[k]), int(pack.bond_dst[k])
            g = int(pack.graph_of_atom[u])
            local = u - int(pack.atom_offsets[g])
            rows[v].append(("atom", f"{mols[g].atoms[local].element}{local}", float(t.beta[k])))
        for k in range(len(pack.rel_dst)):
            v = int(pack.rel_dst[k])
            name = attr_names[int(pack.attr_rows[int(pack.rel_src[k])])]
            rows[v].append(("attribute", name, float(t.alpha[k])))

        for v in sorted(rows):
            g = int(pack.graph_of_atom[v])
            local = v - int(pack.atom_offsets[g])
            items = rows[v]
            total = float(np.sum([w for *_, w in items]))
            for kind, label, w in items:
                dump.entries.append(AttentionEntry(start + g, local, kind, label, w / total))
    return dump

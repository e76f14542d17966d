"""Knowledge-guided augmentation: attach KG attribute nodes to a molecule."""
from __future__ import annotations

import logging
from dataclasses import dataclass

from kcl.elementkg import ElementKG
from kcl.errors import KclError
from kcl.smiles import Atom, Bond, MolecularGraph

log = logging.getLogger(__name__)


class EmptyGraph(KclError):
    pass


class UnknownElement(KclError):
    pass


@dataclass(frozen=True)
class AugNode:
    kind: str               # "atom" | "attribute"
    payload: Atom | str     # Atom for atoms, entity name for attributes


@dataclass(frozen=True)
class AugEdge:
    kind: str               # "bond" | "relation"
    source: int
    target: int
    label: str              # bond order or relation name

    @property
    def direction(self) -> str:
        return "bidirectional" if self.kind == "bond" else "attribute_to_atom"


@dataclass
class AugmentedGraph:
    nodes: list[AugNode]
    edges: list[AugEdge]
    origin: MolecularGraph
    skipped_atoms: int = 0

    @property
    def num_atoms(self) -> int:
        return self.origin.num_atoms

    @property
    def attribute_names(self) -> list[str]:
        return [n.payload for n in self.nodes if n.kind == "attribute"]

    def bond_edges(self) -> list[AugEdge]:
        return [e for e in self.edges if e.kind == "bond"]

    def relation_edges(self) -> list[AugEdge]:
        return [e for e in self.edges if e.kind == "relation"]

    def in_edges(self, node: int) -> list[tuple[int, AugEdge]]:
        """(source node, edge) pairs delivering messages to ``node``."""
        out = []
        for e in self.edges:
            if e.kind == "bond":
                if e.target == node:
                    out.append((e.source, e))
                elif e.source == node:
                    out.append((e.target, e))
            elif e.target == node:
                out.append((e.source, e))
        return out

    def strip(self) -> MolecularGraph:
        """The atom-induced subgraph with the original indices."""
        atoms = [n.payload for n in self.nodes if n.kind == "atom"]
        bonds = [Bond(e.source, e.target, e.label) for e in self.bond_edges()]
        return MolecularGraph(atoms, bonds, self.origin.source_text)


def augment(mol: MolecularGraph, kg: ElementKG, on_unknown: str = "skip") -> AugmentedGraph:
    """Add one node per distinct KG attribute of the molecule's elements.

    Atoms keep their indices; attribute nodes follow, sorted by name.  Every
    triple ``(attr, rel, element(atom))`` yields a directed edge attr -> atom.
    Atoms whose element is missing from the KG are skipped (counted in
    ``skipped_atoms``) or raise :class:`UnknownElement` when ``on_unknown="error"``.
    """
    if mol.num_atoms == 0:
        raise EmptyGraph("cannot augment an empty molecule")
    if on_unknown not in ("skip", "error"):
        raise ValueError(f"on_unknown must be 'skip' or 'error', not {on_unknown!r}")

    per_atom = []
    skipped = 0
    for atom in mol.atoms:
        if not kg.has_element(atom.element):
            if on_unknown == "error":
                raise UnknownElement(f"element {atom.element} is not in the KG")
            skipped += 1
            per_atom.append([])
            continue
        per_atom.append(kg.neighbors_of_element(atom.element))
    if skipped:
        log.warning("%d atom(s) of %s have no KG element; left unaugmented",
                    skipped, mol.source_text or "molecule")

    attrs = sorted({t.head for triples in per_atom for t in triples})
    attr_index = {name: mol.num_atoms + i for i, name in enumerate(attrs)}

    nodes = [AugNode("atom", a) for a in mol.atoms] + [AugNode("attribute", n) for n in attrs]
    edges = [AugEdge("bond", b.begin, b.end, b.order) for b in mol.bonds]
    for atom_idx, triples in enumerate(per_atom):
        for t in triples:
            edges.append(AugEdge("relation", attr_index[t.head], atom_idx, t.relation))
    return AugmentedGraph(nodes, edges, mol, skipped)


def _node_ref(g: AugmentedGraph, idx: int) -> str:
    node = g.nodes[idx]
    return f"atom:{idx}" if node.kind == "atom" else f"attribute:{node.payload}"


def export_edges(g: AugmentedGraph) -> str:
    """Debug edge list: ``src_kind:src_id  label  direction  dst_kind:dst_id``."""
    lines = [f"{_node_ref(g, e.source)}  {e.label}  {e.direction}  {_node_ref(g, e.target)}"
             for e in g.edges]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_edges(text: str) -> list[tuple[str, str, str, str]]:
    return [tuple(line.split("  ")) for line in text.splitlines() if line.strip()]

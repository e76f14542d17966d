"""Chemical Element KG: attribute entities linked to element entities.

Triples run attribute -> element, e.g. ``("Gas", "isStateOf", "Cl")``.
Continuous element properties are discretized into labelled groups
(``DensityGroup1`` ...) through :class:`BinningSpec` objects.
"""
from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from kcl.errors import KclError
from kcl.smiles import ATOMIC_NUMBER


class MissingBinningSpec(KclError):
    pass


class ValueOutOfBins(KclError):
    pass


class UnknownEntity(KclError, KeyError):
    pass


@dataclass(frozen=True)
class Entity:
    name: str
    kind: str  # "element" or "attribute"


@dataclass(frozen=True, order=True)
class Triple:
    head: str
    relation: str
    tail: str


@dataclass(frozen=True)
class BinningSpec:
    attribute_name: str
    bin_edges: tuple[float, ...]
    label_prefix: str

    def __post_init__(self):
        edges = tuple(float(e) for e in self.bin_edges)
        object.__setattr__(self, "bin_edges", edges)
        if len(edges) < 3:
            raise ValueError(f"{self.attribute_name}: need at least 2 bins")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"{self.attribute_name}: bin edges must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) - 1

    def bin_index(self, value: float) -> int:
        """0-based bin of ``value``; bins are half-open except the last, which is closed."""
        edges = self.bin_edges
        if not edges[0] <= value <= edges[-1]:
            raise ValueOutOfBins(
                f"{self.attribute_name}={value} outside [{edges[0]}, {edges[-1]}]")
        return min(bisect.bisect_right(edges, value) - 1, self.n_bins - 1)

    def label(self, value: float) -> str:
        return f"{self.label_prefix}{self.bin_index(value) + 1}"


def relation_name(attribute: str) -> str:
    return f"is{attribute}Of"


def equal_frequency_edges(values, n_bins: int) -> list[float]:
    """Quantile edges giving ``n_bins`` groups of roughly equal size.

    Duplicate quantiles (heavily tied data) are merged, so fewer bins may come
    back; fewer than two distinct bins is an error.
    """
    vals = np.sort(np.asarray(values, dtype=float))
    if vals.size == 0:
        raise ValueError("no values to bin")
    qs = np.quantile(vals, np.linspace(0.0, 1.0, n_bins + 1))
    edges = [float(qs[0])]
    for q in qs[1:]:
        if q > edges[-1]:
            edges.append(float(q))
    if len(edges) < 3:
        raise ValueError("values too degenerate for 2 bins")
    return edges


@dataclass
class ElementKG:
    entities: dict[str, Entity]
    triples: tuple[Triple, ...]
    binning: list[BinningSpec] = field(default_factory=list)
    _by_tail: dict[str, list[Triple]] = field(init=False, repr=False)

    def __post_init__(self):
        self.triples = tuple(sorted(set(self.triples)))
        self._by_tail = {}
        for t in self.triples:
            if t.head not in self.entities or t.tail not in self.entities:
                raise UnknownEntity(f"triple {t} references an unknown entity")
            self._by_tail.setdefault(t.tail, []).append(t)
        for lst in self._by_tail.values():
            lst.sort(key=lambda t: (t.relation, t.head))

    @property
    def relation_types(self) -> set[str]:
        return {t.relation for t in self.triples}

    @property
    def elements(self) -> list[str]:
        return sorted((e.name for e in self.entities.values() if e.kind == "element"),
                      key=lambda s: ATOMIC_NUMBER.get(s, 0))

    @property
    def attributes(self) -> list[str]:
        return sorted(e.name for e in self.entities.values() if e.kind == "attribute")

    def neighbors_of_element(self, element: str) -> list[Triple]:
        ent = self.entities.get(element)
        if ent is None or ent.kind != "element":
            raise UnknownEntity(f"unknown element {element!r}")
        return list(self._by_tail.get(element, ()))

    def has_element(self, element: str) -> bool:
        ent = self.entities.get(element)
        return ent is not None and ent.kind == "element"


def neighbors_of_element(kg: ElementKG, element: str) -> list[Triple]:
    """Triples whose tail is ``element``, sorted by relation then head."""
    return kg.neighbors_of_element(element)


def kg_stats(kg: ElementKG) -> dict[str, int]:
    n_el = sum(1 for e in kg.entities.values() if e.kind == "element")
    n_attr = sum(1 for e in kg.entities.values() if e.kind == "attribute")
    return {
        "elements": n_el,
        "attributes": n_attr,
        "entities": n_el + n_attr,
        "relation_types": len(kg.relation_types),
        "triples": len(kg.triples),
    }


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def build_kg(rows, binning) -> ElementKG:
    """Build the KG from element table rows (dicts keyed by column name).

    Each row needs a ``symbol``.  Columns with a matching BinningSpec are
    treated as continuous and replaced by their group label; other columns
    must be categorical and are used verbatim.  Empty cells produce no triple.
    """
    specs = {b.attribute_name: b for b in binning}
    rows = list(rows)
    columns: list[str] = []
    for row in rows:
        for col in row:
            if col != "symbol" and col not in columns:
                columns.append(col)

    for col in columns:
        if col in specs:
            continue
        cells = [r.get(col, "") for r in rows if r.get(col, "").strip()]
        if cells and all(_is_number(c) for c in cells):
            raise MissingBinningSpec(f"numeric column {col!r} has no binning spec")

    entities: dict[str, Entity] = {}
    triples = []
    for row in rows:
        symbol = row["symbol"].strip()
        if symbol not in ATOMIC_NUMBER:
            raise UnknownEntity(f"{symbol!r} is not a chemical element")
        entities[symbol] = Entity(symbol, "element")
        for col in columns:
            cell = (row.get(col) or "").strip()
            if not cell:
                continue
            head = specs[col].label(float(cell)) if col in specs else cell
            if head in ATOMIC_NUMBER:
                raise KclError(f"attribute value {head!r} collides with an element symbol")
            entities[head] = Entity(head, "attribute")
            triples.append(Triple(head, relation_name(col), symbol))
    return ElementKG(entities, tuple(triples), list(binning))


def read_element_table(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_binning(path) -> list[BinningSpec]:
    """Sidecar format: ``attribute<TAB>label_prefix<TAB>edge,edge,...`` per line."""
    specs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, prefix, edges = line.split("\t")
        specs.append(BinningSpec(name, tuple(float(e) for e in edges.split(",")), prefix))
    return specs


def write_binning(specs, path):
    lines = ["# attribute\tlabel_prefix\tbin_edges"]
    for s in specs:
        lines.append(f"{s.attribute_name}\t{s.label_prefix}\t"
                     + ",".join(repr(e) for e in s.bin_edges))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_kg_tsv(kg: ElementKG, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for t in kg.triples:
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\n")


def read_kg_tsv(path, binning=()) -> ElementKG:
    """Load a triple file.  Heads become attributes, tails become elements."""
    entities: dict[str, Entity] = {}
    triples = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise KclError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail")
        head, rel, tail = parts
        entities[head] = Entity(head, "attribute")
        entities[tail] = Entity(tail, "element")
        triples.append(Triple(head, rel, tail))
    return ElementKG(entities, tuple(triples), list(binning))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("kcl") / "data" / name))


def load_reference_kg() -> ElementKG:
    """The KG built from the bundled periodic table and reference binning."""
    return build_kg(read_element_table(bundled_path("periodic_table.csv")),
                    read_binning(bundled_path("binning.tsv")))

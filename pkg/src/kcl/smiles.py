"""A small SMILES reader producing :class:`MolecularGraph` objects.

Supported: organic-subset atoms, aromatic lowercase atoms, bracket atoms with
hydrogen count and formal charge, branches, ring closures (digits and ``%nn``)
and the bond symbols ``- = # :``.  Stereo marks, isotopes, atom classes and
multi-component input (``.``) are rejected with :class:`UnknownSymbol`.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from kcl.errors import KclError

ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni "
    "Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I "
    "Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt "
    "Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr "
    "Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {sym: i + 1 for i, sym in enumerate(ELEMENTS)}

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
# lowercase symbols legal inside brackets
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

BOND_ORDERS = ("single", "double", "triple", "aromatic")
_BOND_SYMBOL = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}


class SmilesError(KclError, ValueError):
    """Malformed SMILES; ``offset`` is the 0-based byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EmptyInput(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnknownSymbol(SmilesError):
    pass


class InvalidBond(SmilesError):
    """Dangling bond symbol, self-loop, or a duplicated atom pair."""


class VocabularyOverflow(KclError):
    pass


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0

    @property
    def key(self) -> tuple[str, bool, int]:
        return (self.element, self.aromatic, self.charge)

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBER[self.element]


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: str = "single"

    @property
    def type_index(self) -> int:
        return BOND_ORDERS.index(self.order)


@dataclass
class MolecularGraph:
    atoms: list[Atom]
    bonds: list[Bond]
    source_text: str = ""
    adjacency: list[list[int]] = field(init=False)

    def __post_init__(self):
        self.adjacency = [[] for _ in self.atoms]
        for b in self.bonds:
            self.adjacency[b.begin].append(b.end)
            self.adjacency[b.end].append(b.begin)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    def degrees(self) -> list[int]:
        return [len(nbrs) for nbrs in self.adjacency]

    def bond_between(self, u: int, v: int) -> Bond | None:
        for b in self.bonds:
            if {b.begin, b.end} == {u, v}:
                return b
        return None

    def permuted(self, perm: list[int]) -> "MolecularGraph":
        """Relabel atoms so that old atom ``perm[i]`` becomes new atom ``i``."""
        inverse = {old: new for new, old in enumerate(perm)}
        atoms = [self.atoms[old] for old in perm]
        bonds = [Bond(inverse[b.begin], inverse[b.end], b.order) for b in self.bonds]
        return MolecularGraph(atoms, bonds, self.source_text)


def _read_bracket(text: str, start: int) -> tuple[Atom, int]:
    """Parse ``[...]`` beginning at ``start``; return the atom and the index past ``]``."""
    close = text.find("]", start)
    if close < 0:
        raise UnknownSymbol("unterminated bracket atom", start)
    body = text[start + 1:close]
    pos = start + 1
    if body and body[0].isdigit():
        raise UnknownSymbol("isotopes are not supported", pos)

    i = 0
    element = None
    aromatic = False
    for cand in AROMATIC_BRACKET:
        if body.startswith(cand):
            element, aromatic = cand.capitalize(), True
            i = len(cand)
            break
    if element is None:
        if len(body) >= 2 and body[:2] in ATOMIC_NUMBER:
            element, i = body[:2], 2
        elif body[:1] in ATOMIC_NUMBER:
            element, i = body[:1], 1
        else:
            raise UnknownSymbol(f"unknown element in {text[start:close + 1]!r}", pos)

    if i < len(body) and body[i] == "H":
        i += 1
        while i < len(body) and body[i].isdigit():
            i += 1

    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        j = i + 1
        while j < len(body) and body[j] == body[i]:
            j += 1
        digits_start = j
        while j < len(body) and body[j].isdigit():
            j += 1
        if j > digits_start:
            if j - i != 1 + (j - digits_start):
                raise UnknownSymbol("mixed charge notation", pos + i)
            charge = sign * int(body[digits_start:j])
        else:
            charge = sign * (j - i)
        i = j

    if i != len(body):
        raise UnknownSymbol(f"unsupported bracket content {body[i]!r}", pos + i)
    return Atom(element, aromatic, charge), close + 1


def parse_smiles(text: str) -> MolecularGraph:
    """Parse one single-component SMILES string into a molecular graph."""
    if not text or not text.strip():
        raise EmptyInput("empty SMILES", 0)
    text = text.strip()

    atoms: list[Atom] = []
    bonds: list[Bond] = []
    pairs: set[frozenset[int]] = set()
    branch_stack: list[tuple[int, int]] = []  # (atom index, offset of '(')
    open_rings: dict[int, tuple[int, str | None, int]] = {}
    prev: int | None = None
    pending: tuple[str, int] | None = None  # bond symbol awaiting its second atom

    def add_bond(u: int, v: int, order: str | None, offset: int):
        if u == v:
            raise InvalidBond("ring closure onto the same atom", offset)
        key = frozenset((u, v))
        if key in pairs:
            raise InvalidBond("duplicate bond between the same atoms", offset)
        if order is None:
            order = "aromatic" if atoms[u].aromatic and atoms[v].aromatic else "single"
        pairs.add(key)
        bonds.append(Bond(u, v, order))

    def add_atom(atom: Atom, offset: int):
        nonlocal prev, pending
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending[0] if pending else None, offset)
        elif pending is not None:
            raise InvalidBond("bond symbol with no preceding atom", pending[1])
        pending = None
        prev = idx

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            atom, nxt = _read_bracket(text, i)
            add_atom(atom, i)
            i = nxt
            continue
        two = text[i:i + 2]
        if two in ("Cl", "Br"):
            add_atom(Atom(two), i)
            i += 2
            continue
        if ch in ORGANIC_SUBSET:
            add_atom(Atom(ch), i)
        elif ch in AROMATIC_ORGANIC:
            add_atom(Atom(ch.upper(), aromatic=True), i)
        elif ch in _BOND_SYMBOL:
            if pending is not None or prev is None:
                raise InvalidBond(f"misplaced bond symbol {ch!r}", i)
            pending = (_BOND_SYMBOL[ch], i)
        elif ch == "(":
            if prev is None or pending is not None:
                raise UnbalancedParenthesis("branch opened without a preceding atom", i)
            branch_stack.append((prev, i))
        elif ch == ")":
            if not branch_stack:
                raise UnbalancedParenthesis("unmatched ')'", i)
            if pending is not None:
                raise InvalidBond("dangling bond symbol", pending[1])
            if text[i - 1] == "(":
                raise UnbalancedParenthesis("empty branch", i - 1)
            prev = branch_stack.pop()[0]
        elif ch.isdigit() or ch == "%":
            if prev is None:
                raise InvalidBond("ring closure with no preceding atom", i)
            if ch == "%":
                if not text[i + 1:i + 3].isdigit() or len(text[i + 1:i + 3]) != 2:
                    raise UnknownSymbol("'%' must be followed by two digits", i)
                label, width = int(text[i + 1:i + 3]), 3
            else:
                label, width = int(ch), 1
            order = pending[0] if pending else None
            if label in open_rings:
                other, other_order, other_offset = open_rings.pop(label)
                if order and other_order and order != other_order:
                    raise InvalidBond("conflicting ring-closure bond orders", i)
                add_bond(other, prev, order or other_order, i)
            else:
                open_rings[label] = (prev, order, i)
            pending = None
            i += width
            continue
        else:
            raise UnknownSymbol(f"unsupported symbol {ch!r}", i)
        i += 1

    if pending is not None:
        raise InvalidBond("dangling bond symbol", pending[1])
    if branch_stack:
        raise UnbalancedParenthesis("unclosed '('", branch_stack[-1][1])
    if open_rings:
        first = min(open_rings.values(), key=lambda r: r[2])
        raise UnclosedRing("ring bond never closed", first[2])
    return MolecularGraph(atoms, bonds, text)


class AtomVocabulary:
    """Maps ``(element, aromatic, charge)`` tuples to dense integer indices.

    Indices are assigned in insertion order; :meth:`from_graphs` inserts in
    sorted order so the result does not depend on corpus order.  Writes are
    serialized by a lock; reads are lock-free.
    """

    def __init__(self, keys=(), capacity: int = 256):
        self.capacity = capacity
        self._index: dict[tuple[str, bool, int], int] = {}
        self._lock = threading.Lock()
        for key in keys:
            self.add(tuple(key))

    @classmethod
    def from_graphs(cls, graphs, capacity: int = 256) -> "AtomVocabulary":
        keys = sorted({a.key for g in graphs for a in g.atoms})
        return cls(keys, capacity)

    def __len__(self):
        return len(self._index)

    def __contains__(self, key):
        return tuple(key) in self._index

    def keys(self) -> list[tuple[str, bool, int]]:
        return sorted(self._index, key=self._index.__getitem__)

    def add(self, key) -> int:
        key = (str(key[0]), bool(key[1]), int(key[2]))
        with self._lock:
            if key in self._index:
                return self._index[key]
            if len(self._index) >= self.capacity:
                raise VocabularyOverflow(
                    f"atom vocabulary full ({self.capacity} types), cannot add {key}")
            self._index[key] = len(self._index)
            return self._index[key]

    def lookup(self, key) -> int:
        return self._index[tuple(key)]

    def to_json(self) -> str:
        return json.dumps({"capacity": self.capacity,
                           "keys": [list(k) for k in self.keys()]})

    @classmethod
    def from_json(cls, text: str) -> "AtomVocabulary":
        data = json.loads(text)
        return cls([tuple(k) for k in data["keys"]], data["capacity"])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "AtomVocabulary":
        return cls.from_json(Path(path).read_text())


def atom_type_index(atom: Atom, vocab: AtomVocabulary, grow: bool = True) -> int:
    """Embedding-table row for ``atom``; unseen types are appended when ``grow``."""
    if grow:
        return vocab.add(atom.key)
    return vocab.lookup(atom.key)


def read_corpus(path) -> list[tuple[str, list[str]]]:
    """Read a molecule corpus: one SMILES per line, optional tab-separated labels.

    Blank lines and lines starting with ``#`` are skipped.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            smiles, *labels = line.split("\t")
            rows.append((smiles.strip(), labels))
    return rows


_ORDER_SYMBOL = {"single": "", "double": "=", "triple": "#", "aromatic": ""}


def _atom_text(atom: Atom) -> str:
    sym = atom.element.lower() if atom.aromatic else atom.element
    plain = AROMATIC_ORGANIC if atom.aromatic else ORGANIC_SUBSET
    if atom.charge == 0 and sym in plain:
        return sym
    charge = ""
    if atom.charge:
        charge = ("+" if atom.charge > 0 else "-") + (str(abs(atom.charge)) if abs(atom.charge) > 1 else "")
    return f"[{sym}{charge}]"


def to_smiles(mol: MolecularGraph) -> str:
    """Write a (non-canonical) SMILES string by depth-first traversal from atom 0.

    Explicit bond symbols are emitted wherever the parser's default would
    differ, so ``parse_smiles(to_smiles(g))`` reproduces ``g`` up to atom order.
    """
    if mol.num_atoms == 0:
        return ""
    order_of = {frozenset((b.begin, b.end)): b.order for b in mol.bonds}

    def bond_text(u, v):
        order = order_of[frozenset((u, v))]
        both_arom = mol.atoms[u].aromatic and mol.atoms[v].aromatic
        if order == "single" and both_arom:
            return "-"
        if order == "aromatic" and not both_arom:
            return ":"
        return _ORDER_SYMBOL[order]

    visited = [False] * mol.num_atoms
    parent = [-1] * mol.num_atoms
    tree_children: list[list[int]] = [[] for _ in mol.atoms]
    ring_pairs = []
    stack = [0]
    while stack:
        u = stack.pop()
        if visited[u]:
            continue
        visited[u] = True
        for v in sorted(mol.adjacency[u], reverse=True):
            if not visited[v]:
                parent[v] = u
                stack.append(v)
    # rebuild tree edges from the final parent assignment
    for v, p in enumerate(parent):
        if p >= 0:
            tree_children[p].append(v)
    tree = {frozenset((v, p)) for v, p in enumerate(parent) if p >= 0}
    for b in mol.bonds:
        if frozenset((b.begin, b.end)) not in tree:
            ring_pairs.append((b.begin, b.end))
    if any(not v for v in visited):
        raise ValueError("to_smiles needs a connected graph")

    ring_at: dict[int, list[tuple[int, int]]] = {}
    for k, (u, v) in enumerate(ring_pairs):
        ring_at.setdefault(u, []).append((k, v))
        ring_at.setdefault(v, []).append((k, u))
    labels: dict[int, int] = {}
    free_labels = list(range(1, 100))

    out = []

    def emit(u):
        out.append(_atom_text(mol.atoms[u]))
        for k, other in ring_at.get(u, []):
            if k in labels:
                lab = labels.pop(k)
                out.append(bond_text(u, other) + (str(lab) if lab < 10 else f"%{lab}"))
                free_labels.append(lab)
                free_labels.sort()
            else:
                lab = free_labels.pop(0)
                labels[k] = lab
                out.append(str(lab) if lab < 10 else f"%{lab}")
        kids = sorted(tree_children[u])
        for i, v in enumerate(kids):
            branch = i < len(kids) - 1
            if branch:
                out.append("(")
            out.append(bond_text(u, v))
            emit(v)
            if branch:
                out.append(")")

    import sys
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * mol.num_atoms + 100))
    try:
        emit(0)
    finally:
        sys.setrecursionlimit(limit)
    return "".join(out)

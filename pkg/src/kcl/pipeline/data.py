"""Labeled corpora, the bundled desk corpus and a synthetic molecule generator."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from kcl.elementkg import bundled_path
from kcl.errors import KclError
from kcl.smiles import Atom, Bond, MolecularGraph, parse_smiles, read_corpus, to_smiles

TASK_KINDS = ("classification", "regression")
SPLITS = ("train", "valid", "test")
HALOGENS = ("F", "Cl", "Br", "I")


class CorpusTooSmall(KclError):
    pass


class EmptySplit(KclError):
    pass


@dataclass
class LabeledCorpus:
    """Molecules with one label each plus an optional train/valid/test assignment."""
    smiles: list[str]
    molecules: list[MolecularGraph]
    labels: np.ndarray
    task: str = "classification"
    name: str = "corpus"
    assignment: list[str] | None = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.task not in TASK_KINDS:
            raise KclError(f"task must be one of {TASK_KINDS}, not {self.task!r}")
        if not (len(self.smiles) == len(self.molecules) == len(self.labels)):
            raise KclError("smiles, molecules and labels differ in length")
        if self.assignment is not None and len(self.assignment) != len(self.smiles):
            raise KclError("split assignment does not cover the corpus")

    def __len__(self):
        return len(self.smiles)

    def indices(self, split: str) -> np.ndarray:
        if self.assignment is None:
            raise EmptySplit("corpus has no split assignment")
        return np.array([i for i, s in enumerate(self.assignment) if s == split], dtype=int)

    def with_assignment(self, assignment) -> "LabeledCorpus":
        return replace(self, assignment=list(assignment))

    def split_sizes(self) -> dict[str, int]:
        return {s: len(self.indices(s)) for s in SPLITS}


def from_smiles(smiles: list[str], labels, task="classification", name="corpus") -> LabeledCorpus:
    mols = [parse_smiles(s) for s in smiles]
    return LabeledCorpus(list(smiles), mols, labels, task, name)


def load_labeled(path, label_column: int = 0, task: str = "classification",
                 name: str | None = None) -> LabeledCorpus:
    """Read ``smiles<TAB>label...`` rows; ``label_column`` picks the label."""
    rows = read_corpus(path)
    if not rows:
        raise CorpusTooSmall(f"{path} holds no molecules")
    try:
        labels = [float(r[1][label_column]) for r in rows]
    except (IndexError, ValueError):
        raise KclError(f"{path}: label column {label_column} missing or not numeric") from None
    return from_smiles([r[0] for r in rows], labels, task, name or str(path))


def bundled_corpus(task: str = "classification") -> LabeledCorpus:
    """The bundled 300-molecule corpus: ``has_halogen`` (classification) or ``tpsa``."""
    column = 0 if task == "classification" else 1
    name = "bundled_halogen" if task == "classification" else "bundled_tpsa"
    return load_labeled(bundled_path("molecules.tsv"), column, task, name)


def load_unlabeled(path) -> list[MolecularGraph]:
    return [parse_smiles(s) for s, _ in read_corpus(path)]


# ---------------------------------------------------------------- synthetic molecules

_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1, "Br": 1, "I": 1}


def random_molecule(rng: np.random.Generator, min_atoms: int = 5, max_atoms: int = 14,
                    halogens: int = 0) -> MolecularGraph:
    """A random connected, valence-respecting molecule.

    The skeleton is a random tree of C/N/O/S atoms, sometimes with a benzene
    ring or an extra ring-closing bond and a few double bonds.  ``halogens``
    halogen atoms are then attached to carbons with free valence.
    """
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    used: list[int] = []

    def add(atom, attach=None, order="single"):
        atoms.append(atom)
        used.append(0)
        idx = len(atoms) - 1
        if attach is not None:
            bonds.append(Bond(attach, idx, order))
            cost = 2 if order == "double" else 1
            used[attach] += cost
            used[idx] += cost
        return idx

    def free(i):
        a = atoms[i]
        cap = 3 if a.aromatic else _VALENCE[a.element]
        return cap - used[i]

    if rng.random() < 0.4:
        ring = [add(Atom("C", aromatic=True))]
        for _ in range(5):
            ring.append(add(Atom("C", aromatic=True), ring[-1], "aromatic"))
        bonds.append(Bond(ring[-1], ring[0], "aromatic"))
        used[ring[-1]] += 1
        used[ring[0]] += 1
    else:
        add(Atom("C"))

    target = int(rng.integers(min_atoms, max_atoms + 1))
    heavy = ("C", "C", "C", "C", "N", "O", "S")
    while len(atoms) < target:
        sites = [i for i in range(len(atoms)) if free(i) >= 1]
        if not sites:
            break
        site = int(rng.choice(sites))
        el = heavy[int(rng.integers(len(heavy)))]
        order = "single"
        if free(site) >= 2 and not atoms[site].aromatic and el in ("C", "O", "N") \
                and rng.random() < 0.2:
            order = "double"
        add(Atom(el), site, order)

    if rng.random() < 0.25:
        # close one extra ring between two aliphatic carbons far enough apart
        cands = [i for i in range(len(atoms))
                 if atoms[i].element == "C" and not atoms[i].aromatic and free(i) >= 1]
        adj = MolecularGraph(list(atoms), list(bonds)).adjacency
        for a in cands:
            dist = _bfs(adj, a)
            far = [b for b in cands if b != a and dist.get(b, 0) in (4, 5)]
            if far:
                b = far[0]
                bonds.append(Bond(a, b, "single"))
                used[a] += 1
                used[b] += 1
                break

    for _ in range(halogens):
        sites = [i for i in range(len(atoms)) if atoms[i].element == "C" and free(i) >= 1]
        if not sites:
            break
        add(Atom(HALOGENS[int(rng.integers(len(HALOGENS)))]), int(rng.choice(sites)))

    mol = MolecularGraph(atoms, bonds)
    text = to_smiles(mol)
    return parse_smiles(text)


def _bfs(adj, start):
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def synthetic_molecules(n: int, seed: int = 0, halogen_fraction: float = 0.0,
                        min_atoms: int = 5, max_atoms: int = 14) -> list[MolecularGraph]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 3)) if rng.random() < halogen_fraction else 0
        out.append(random_molecule(rng, min_atoms, max_atoms, halogens=k))
    return out


def has_halogen(mol: MolecularGraph) -> bool:
    return any(a.element in HALOGENS for a in mol.atoms)


def halogen_corpus(n: int = 200, seed: int = 0) -> LabeledCorpus:
    """Synthetic classification corpus; the label is the presence of a halogen atom."""
    mols = synthetic_molecules(n, seed, halogen_fraction=0.5)
    labels = [float(has_halogen(m)) for m in mols]
    return LabeledCorpus([m.source_text for m in mols], mols, labels, "classification",
                         f"synthetic_halogen_{seed}")

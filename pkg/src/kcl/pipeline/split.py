"""Random and scaffold train/valid/test splits (8:1:1)."""
from __future__ import annotations

from collections import defaultdict

import networkx as nx
import numpy as np

from kcl.pipeline.data import CorpusTooSmall, LabeledCorpus
from kcl.smiles import MolecularGraph

FRACTIONS = (0.8, 0.1, 0.1)
MIN_CORPUS = 10


def split_sizes(n: int) -> tuple[int, int, int]:
    n_valid = int(round(n * FRACTIONS[1]))
    n_test = int(round(n * FRACTIONS[2]))
    return n - n_valid - n_test, n_valid, n_test


def framework(mol: MolecularGraph) -> MolecularGraph:
    """Ring systems plus linkers: repeatedly strip degree-1 atoms.

    An acyclic molecule strips down to nothing.
    """
    alive = set(range(mol.num_atoms))
    deg = {i: len(mol.adjacency[i]) for i in alive}
    leaves = [i for i in alive if deg[i] <= 1]
    while leaves:
        nxt = []
        for u in leaves:
            if u not in alive:
                continue
            alive.discard(u)
            for v in mol.adjacency[u]:
                if v in alive:
                    deg[v] -= 1
                    if deg[v] <= 1:
                        nxt.append(v)
        leaves = nxt
    keep = sorted(alive)
    remap = {old: new for new, old in enumerate(keep)}
    atoms = [mol.atoms[i] for i in keep]
    bonds = [b.__class__(remap[b.begin], remap[b.end], b.order) for b in mol.bonds
             if b.begin in alive and b.end in alive]
    return MolecularGraph(atoms, bonds)


def scaffold_key(mol: MolecularGraph) -> str:
    """Element- and bond-order-free hash of the framework ("" when acyclic)."""
    core = framework(mol)
    if core.num_atoms == 0:
        return ""
    g = nx.Graph()
    g.add_nodes_from(range(core.num_atoms))
    g.add_edges_from((b.begin, b.end) for b in core.bonds)
    return f"{core.num_atoms}:{core.num_bonds}:" + nx.weisfeiler_lehman_graph_hash(g, iterations=4)


def random_split(corpus: LabeledCorpus, seed: int = 0) -> LabeledCorpus:
    n = len(corpus)
    if n < MIN_CORPUS:
        raise CorpusTooSmall(f"need at least {MIN_CORPUS} molecules to split, got {n}")
    n_train, n_valid, _ = split_sizes(n)
    order = np.random.default_rng(seed).permutation(n)
    assignment = [""] * n
    for rank, i in enumerate(order):
        assignment[i] = ("train" if rank < n_train
                         else "valid" if rank < n_train + n_valid else "test")
    return corpus.with_assignment(assignment)


def scaffold_split(corpus: LabeledCorpus) -> LabeledCorpus:
    """Whole scaffold groups go, largest first, to train, then valid, then test."""
    n = len(corpus)
    if n < MIN_CORPUS:
        raise CorpusTooSmall(f"need at least {MIN_CORPUS} molecules to split, got {n}")
    groups: dict[str, list[int]] = defaultdict(list)
    for i, mol in enumerate(corpus.molecules):
        groups[scaffold_key(mol)].append(i)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[1][0]))
    train_cut = FRACTIONS[0] * n
    valid_cut = (FRACTIONS[0] + FRACTIONS[1]) * n
    assignment = [""] * n
    n_train = n_valid = 0
    for _, members in ordered:
        if n_train + len(members) <= train_cut:
            split = "train"
            n_train += len(members)
        elif n_train + n_valid + len(members) <= valid_cut:
            split = "valid"
            n_valid += len(members)
        else:
            split = "test"
        for i in members:
            assignment[i] = split
    return corpus.with_assignment(assignment)


def split(corpus: LabeledCorpus, mode: str = "random", seed: int = 0) -> LabeledCorpus:
    if mode == "random":
        return random_split(corpus, seed)
    if mode == "scaffold":
        return scaffold_split(corpus)
    raise ValueError(f"split mode must be random or scaffold, not {mode!r}")

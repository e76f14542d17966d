"""Projection head, fingerprint-based hard-negative batches and the NT-Xent loss."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kcl import numcore as nc
from kcl.augment import EmptyGraph
from kcl.errors import KclError, ShapeMismatch
from kcl.numcore import ParameterSet, Tensor
from kcl.smiles import MolecularGraph

MASK64 = (1 << 64) - 1


class LengthMismatch(KclError):
    pass


class BatchTooLarge(KclError):
    pass


class NonPositiveTemperature(KclError):
    pass


class SizeMismatch(KclError):
    pass


# ---------------------------------------------------------------- fingerprints

def splitmix64(x: int) -> int:
    """SplitMix64 finalizer (Steele, Lea & Flood 2014)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def hash_sequence(values, seed: int = 0x4B434C) -> int:
    h = splitmix64(seed)
    for v in values:
        h = splitmix64(h ^ (int(v) & MASK64))
    return h


def atom_invariant(atom) -> tuple[int, int, int]:
    return (atom.atomic_number, atom.charge, int(atom.aromatic))


@dataclass(frozen=True)
class Fingerprint:
    bits: np.ndarray      # bool, length nbits
    radius: int = 2

    @property
    def nbits(self) -> int:
        return self.bits.shape[0]

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def to_hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str, nbits: int, radius: int = 2) -> "Fingerprint":
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        return cls(np.unpackbits(raw)[:nbits].astype(bool), radius)

    def __eq__(self, other):
        return (isinstance(other, Fingerprint) and self.radius == other.radius
                and np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.to_hex(), self.radius))


def morgan_fingerprint(mol: MolecularGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Circular-environment fingerprint.

    Level 0 hashes each atom's invariant; level ``r`` hashes the atom's level
    ``r-1`` id together with the sorted (bond type, neighbor id) pairs.  Every
    id at every level sets bit ``id % nbits``.
    """
    if mol.num_atoms == 0:
        raise EmptyGraph("cannot fingerprint an empty molecule")
    bits = np.zeros(nbits, dtype=bool)
    nbrs = [[] for _ in mol.atoms]
    for b in mol.bonds:
        nbrs[b.begin].append((b.type_index, b.end))
        nbrs[b.end].append((b.type_index, b.begin))
    ids = [hash_sequence(atom_invariant(a)) for a in mol.atoms]
    for h in ids:
        bits[h % nbits] = True
    for level in range(1, radius + 1):
        new = []
        for i in range(mol.num_atoms):
            env = sorted((bt, ids[j]) for bt, j in nbrs[i])
            new.append(hash_sequence([level, ids[i]] + [v for pair in env for v in pair]))
        ids = new
        for h in ids:
            bits[h % nbits] = True
    return Fingerprint(bits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """``N12 / (N1 + N2 - N12)``; two empty fingerprints give 0."""
    if a.nbits != b.nbits:
        raise LengthMismatch(f"fingerprint lengths {a.nbits} and {b.nbits} differ")
    n1, n2 = int(a.bits.sum()), int(b.bits.sum())
    n12 = int(np.logical_and(a.bits, b.bits).sum())
    denom = n1 + n2 - n12
    return n12 / denom if denom else 0.0


def tanimoto_matrix(fps: list[Fingerprint]) -> np.ndarray:
    if len({f.nbits for f in fps}) > 1:
        raise LengthMismatch("fingerprints of different lengths")
    B = np.array([f.bits for f in fps], dtype=np.float64)
    inter = B @ B.T
    counts = B.sum(axis=1)
    union = counts[:, None] + counts[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0, inter / union, 0.0)
    return sim


def write_fingerprint_cache(fps: list[Fingerprint], path):
    Path(path).write_text("".join(f"{i}\t{f.to_hex()}\n" for i, f in enumerate(fps)))


def read_fingerprint_cache(path, nbits: int = 2048, radius: int = 2) -> list[Fingerprint]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            _, hx = line.split("\t")
            out.append(Fingerprint.from_hex(hx, nbits, radius))
    return out


# ---------------------------------------------------------------- batching

@dataclass(frozen=True)
class ContrastBatch:
    indices: tuple[int, ...]

    def __len__(self):
        return len(self.indices)


def build_hard_batches(corpus: list[Fingerprint], batch_size: int, seed: int = 0,
                       similarity: np.ndarray | None = None) -> list[ContrastBatch]:
    """Partition the corpus into batches of mutually similar molecules.

    Anchors are visited in a seeded random order; each unassigned anchor takes
    the ``batch_size - 1`` most Tanimoto-similar unassigned molecules (ties go
    to the lower corpus index).  The final batch may be short.
    """
    n = len(corpus)
    if batch_size < 1 or n < batch_size:
        raise BatchTooLarge(f"batch size {batch_size} does not fit a corpus of {n}")
    sim = tanimoto_matrix(corpus) if similarity is None else similarity
    order = np.random.default_rng(seed).permutation(n)
    free = np.ones(n, dtype=bool)
    idx = np.arange(n)
    batches = []
    for anchor in order:
        if not free[anchor]:
            continue
        free[anchor] = False
        cand = idx[free]
        pick = cand[np.lexsort((cand, -sim[anchor, cand]))][: batch_size - 1]
        free[pick] = False
        batches.append(ContrastBatch((int(anchor),) + tuple(int(p) for p in pick)))
    return batches


def random_batches(n: int, batch_size: int, seed: int = 0) -> list[ContrastBatch]:
    if batch_size < 1 or n < batch_size:
        raise BatchTooLarge(f"batch size {batch_size} does not fit a corpus of {n}")
    order = np.random.default_rng(seed).permutation(n)
    return [ContrastBatch(tuple(int(i) for i in order[s:s + batch_size]))
            for s in range(0, n, batch_size)]


def mean_intra_batch_similarity(batches, sim: np.ndarray) -> float:
    """Mean pairwise Tanimoto over all within-batch pairs."""
    total, count = 0.0, 0
    for b in batches:
        ix = np.array(b.indices)
        if len(ix) < 2:
            continue
        block = sim[np.ix_(ix, ix)]
        total += (block.sum() - np.trace(block)) / 2
        count += len(ix) * (len(ix) - 1) // 2
    return total / count if count else 0.0


# ---------------------------------------------------------------- loss and head

def nt_xent(Z, Z_aug, tau: float) -> Tensor:
    """Mean over pairs of ``-log(e^{s_ii/tau} / sum_j (e^{s_ij/tau} + e^{s_ji/tau}))``.

    ``s_ij`` is the cosine similarity of original ``i`` and augmented view
    ``j``.  The positive term sits in both sums of the denominator, which puts
    the floor of the loss at ``ln 2``.
    """
    if tau <= 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    Z, Z_aug = nc.as_tensor(Z), nc.as_tensor(Z_aug)
    if Z.shape != Z_aug.shape or Z.ndim != 2 or Z.shape[0] < 1:
        raise SizeMismatch(f"need two equal (N, d) matrices, got {Z.shape} and {Z_aug.shape}")
    n = Z.shape[0]
    S = nc.div(nc.matmul(nc.normalize_rows(Z), nc.transpose(nc.normalize_rows(Z_aug))), tau)
    both = nc.concat([S, nc.transpose(S)], axis=1)
    pos = nc.take(S, (np.arange(n), np.arange(n)))
    return nc.mean(nc.sub(nc.logsumexp(both, axis=1), pos))


class ProjectionHead:
    """Two affine layers with a ReLU between them (``head.*`` parameters)."""

    def __init__(self, params: ParameterSet, prefix: str = "head"):
        self.params = params
        self.prefix = prefix

    @classmethod
    def create(cls, params: ParameterSet, rng, in_dim: int, hidden: int, out_dim: int,
               prefix: str = "head") -> "ProjectionHead":
        for name, (a, b) in (("1", (in_dim, hidden)), ("2", (hidden, out_dim))):
            lim = np.sqrt(6.0 / (a + b))
            params.add(f"{prefix}.W{name}", rng.uniform(-lim, lim, (a, b)))
            params.add(f"{prefix}.b{name}", np.zeros(b))
        return cls(params, prefix)

    def __getitem__(self, name) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    @property
    def in_dim(self) -> int:
        return self["W1"].shape[0]

    @property
    def out_dim(self) -> int:
        return self["W2"].shape[1]


def project(head: ProjectionHead, h) -> Tensor:
    h = nc.as_tensor(h)
    if h.shape[-1] != head.in_dim:
        raise ShapeMismatch(f"projection head expects width {head.in_dim}, got {h.shape[-1]}")
    hidden = nc.relu(nc.add(nc.matmul(h, head["W1"]), head["b1"]))
    return nc.add(nc.matmul(hidden, head["W2"]), head["b2"])

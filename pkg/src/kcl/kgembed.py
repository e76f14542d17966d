"""Rotation-model (RotatE) embeddings of the element KG.

Entities live in C^d (stored as real and imaginary halves, real width 2d);
each relation is a vector of d phases, i.e. an elementwise unit-modulus
rotation.  A triple scores ``sum_k |h_k * r_k - t_k|``, the L1 norm over
complex components with the modulus inside each component.

The defaults of :class:`RotateConfig` (epochs, margin, negatives, lr) are
our own choices; no published values exist for this KG.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from kcl import numcore as nc
from kcl.elementkg import ElementKG, Triple, UnknownEntity
from kcl.errors import KclError

NORM_CONVENTION = "L1-complex-modulus"


class EmptyKG(KclError):
    pass


class NonPositiveDim(KclError):
    pass


class UnknownRelation(KclError, KeyError):
    pass


class VocabularyMismatch(KclError):
    pass


@dataclass
class RotateConfig:
    dim: int = 128              # real width of entity vectors (2 x complex dim)
    relation_dim: int = 64      # width of relation features handed to encoders
    epochs: int = 200
    lr: float = 0.01
    margin: float = 6.0
    negatives_per_positive: int = 4
    adversarial: bool = False   # self-adversarial negative weighting
    adversarial_temperature: float = 1.0
    seed: int = 0


@dataclass
class KgEmbedding:
    entity_names: list[str]
    relation_names: list[str]
    entity_re: np.ndarray       # (n_entities, d)
    entity_im: np.ndarray       # (n_entities, d)
    phases: np.ndarray          # (n_relations, d)
    relation_dim: int = 64
    projection_seed: int = 0
    _eidx: dict[str, int] = field(init=False, repr=False)
    _ridx: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._eidx = {n: i for i, n in enumerate(self.entity_names)}
        self._ridx = {n: i for i, n in enumerate(self.relation_names)}

    @property
    def complex_dim(self) -> int:
        return self.phases.shape[1]

    @property
    def dims(self) -> dict[str, int]:
        return {"entity": 2 * self.complex_dim, "relation": self.relation_dim}

    def entity_index(self, name: str) -> int:
        try:
            return self._eidx[name]
        except KeyError:
            raise UnknownEntity(f"no embedding for entity {name!r}") from None

    def relation_index(self, name: str) -> int:
        try:
            return self._ridx[name]
        except KeyError:
            raise UnknownRelation(f"no embedding for relation {name!r}") from None

    def entity_complex(self, name: str) -> np.ndarray:
        i = self.entity_index(name)
        return self.entity_re[i] + 1j * self.entity_im[i]

    def rotation(self, name: str) -> np.ndarray:
        return np.exp(1j * self.phases[self.relation_index(name)])

    def entity_feature(self, name: str) -> np.ndarray:
        i = self.entity_index(name)
        return np.concatenate([self.entity_re[i], self.entity_im[i]])

    def _projection(self) -> np.ndarray:
        rng = np.random.default_rng(self.projection_seed)
        d = self.complex_dim
        return rng.standard_normal((d, self.relation_dim)) / np.sqrt(d)

    def relation_feature(self, name: str) -> np.ndarray:
        """Phases used directly when widths agree, else a frozen random projection."""
        ph = self.phases[self.relation_index(name)]
        if ph.shape[0] == self.relation_dim:
            return ph.copy()
        return ph @ self._projection()

    def copy(self) -> "KgEmbedding":
        return KgEmbedding(list(self.entity_names), list(self.relation_names),
                           self.entity_re.copy(), self.entity_im.copy(), self.phases.copy(),
                           self.relation_dim, self.projection_seed)


def rotate_score(emb: KgEmbedding, triple: Triple) -> float:
    h = emb.entity_complex(triple.head)
    r = emb.rotation(triple.relation)
    t = emb.entity_complex(triple.tail)
    return float(np.abs(h * r - t).sum())


def init_embedding(kg: ElementKG, config: RotateConfig) -> KgEmbedding:
    if not kg.triples:
        raise EmptyKG("cannot embed a KG without triples")
    if config.dim <= 0 or config.dim % 2:
        raise NonPositiveDim(f"entity dim must be positive and even, got {config.dim}")
    if config.relation_dim <= 0:
        raise NonPositiveDim(f"relation dim must be positive, got {config.relation_dim}")
    rng = np.random.default_rng(config.seed)
    d = config.dim // 2
    ents = kg.attributes + kg.elements
    rels = sorted(kg.relation_types)
    scale = (config.margin + 2.0) / d
    return KgEmbedding(
        ents, rels,
        rng.uniform(-scale, scale, (len(ents), d)),
        rng.uniform(-scale, scale, (len(ents), d)),
        rng.uniform(-np.pi, np.pi, (len(rels), d)),
        config.relation_dim, config.seed,
    )


def _distance(re, im, ph, h, r, t):
    """Differentiable triple scores for index arrays ``h, r, t``."""
    c, s = nc.take(nc.cos(ph), r), nc.take(nc.sin(ph), r)
    hr, hi = nc.take(re, h), nc.take(im, h)
    dr = nc.sub(nc.sub(nc.mul(hr, c), nc.mul(hi, s)), nc.take(re, t))
    di = nc.sub(nc.add(nc.mul(hr, s), nc.mul(hi, c)), nc.take(im, t))
    # tiny floor keeps the modulus differentiable at an exact match
    mod = nc.sqrt(nc.add(nc.add(nc.square(dr), nc.square(di)), 1e-18))
    return nc.sum(mod, axis=1)


def _corrupt(rng, h, t, heads_pool, tails_pool, k):
    """``k`` uniform corruptions per positive: replace the head or the tail."""
    h_neg = np.repeat(h, k)
    t_neg = np.repeat(t, k)
    flip = rng.random(h_neg.shape[0]) < 0.5
    h_neg[flip] = rng.choice(heads_pool, flip.sum())
    t_neg[~flip] = rng.choice(tails_pool, (~flip).sum())
    return h_neg, t_neg


def train_rotate(kg: ElementKG, config: RotateConfig | None = None,
                 history: list | None = None) -> KgEmbedding:
    """Margin-ranking training with uniform negatives, full batch per epoch.

    Corrupted heads are drawn from attribute entities and corrupted tails from
    element entities.  Per-epoch mean losses are appended to ``history`` when
    given.  Deterministic for a fixed ``config.seed``.
    """
    config = config or RotateConfig()
    emb = init_embedding(kg, config)
    if config.epochs == 0:
        return emb

    rng = np.random.default_rng(config.seed + 1)
    params = nc.ParameterSet()
    re = params.add("re", emb.entity_re.copy())
    im = params.add("im", emb.entity_im.copy())
    ph = params.add("phase", emb.phases.copy())

    h = np.array([emb.entity_index(t.head) for t in kg.triples])
    r = np.array([emb.relation_index(t.relation) for t in kg.triples])
    t = np.array([emb.entity_index(x.tail) for x in kg.triples])
    heads_pool = np.array([emb.entity_index(a) for a in kg.attributes])
    tails_pool = np.array([emb.entity_index(e) for e in kg.elements])
    k = config.negatives_per_positive

    for _ in range(config.epochs):
        h_neg, t_neg = _corrupt(rng, h, t, heads_pool, tails_pool, k)
        pos = _distance(re, im, ph, h, r, t)
        neg = _distance(re, im, ph, h_neg, np.repeat(r, k), t_neg)
        pos_rep = nc.take(pos, np.repeat(np.arange(len(h)), k))
        hinge = nc.relu(nc.add(nc.sub(pos_rep, neg), config.margin))
        if config.adversarial:
            w = np.exp(-config.adversarial_temperature * neg.data).reshape(-1, k)
            w = (w / w.sum(axis=1, keepdims=True)).reshape(-1) * k
            hinge = nc.mul(hinge, w)
        loss = nc.mean(hinge)
        loss.backward()
        nc.adam_step(params, lr=config.lr)
        if history is not None:
            history.append(loss.item())

    emb.entity_re = re.data.copy()
    emb.entity_im = im.data.copy()
    # keep phases in (-pi, pi]; rotations are unchanged
    emb.phases = np.angle(np.exp(1j * ph.data))
    return emb


def _all_scores(emb: KgEmbedding, head: str, relation: str, candidates: list[str]) -> np.ndarray:
    hr = emb.entity_complex(head) * emb.rotation(relation)
    idx = [emb.entity_index(c) for c in candidates]
    tails = emb.entity_re[idx] + 1j * emb.entity_im[idx]
    return np.abs(hr[None, :] - tails).sum(axis=1)


def rank_eval(emb: KgEmbedding, kg: ElementKG, triples=None, filtered: bool = True) -> dict:
    """Tail-prediction ranking among all element entities.

    With ``filtered`` (the default) other known true tails of the same
    ``(head, relation)`` are removed from the candidate list.  Ties count half.
    """
    for name in kg.entities:
        if name not in emb._eidx:
            raise VocabularyMismatch(f"entity {name!r} has no embedding")
    for rel in kg.relation_types:
        if rel not in emb._ridx:
            raise VocabularyMismatch(f"relation {rel!r} has no embedding")
    triples = list(kg.triples if triples is None else triples)
    if not triples:
        raise EmptyKG("nothing to rank")

    known: dict[tuple[str, str], set[str]] = {}
    for tr in kg.triples:
        known.setdefault((tr.head, tr.relation), set()).add(tr.tail)
    elements = kg.elements

    ranks = []
    for tr in triples:
        others = known.get((tr.head, tr.relation), set()) - {tr.tail} if filtered else set()
        cands = [e for e in elements if e not in others]
        scores = _all_scores(emb, tr.head, tr.relation, cands)
        true = scores[cands.index(tr.tail)]
        better = np.sum(scores < true)
        ties = np.sum(scores == true) - 1
        ranks.append(1.0 + better + 0.5 * ties)
    ranks = np.asarray(ranks)
    return {
        "mrr": float(np.mean(1.0 / ranks)),
        "hits_at_1": float(np.mean(ranks <= 1.0)),
        "hits_at_3": float(np.mean(ranks <= 3.0)),
    }


def save_embedding(emb: KgEmbedding, path):
    """Text table: a ``#`` header, then ``E|R <TAB> name <TAB> floats``.

    Floats are written with ``repr`` so a load gives back identical values.
    """
    lines = [f"# kcl-rotate entity_dim={emb.dims['entity']} relation_dim={emb.relation_dim} "
             f"complex_dim={emb.complex_dim} norm={NORM_CONVENTION} "
             f"projection_seed={emb.projection_seed}"]
    for i, name in enumerate(emb.entity_names):
        vals = np.concatenate([emb.entity_re[i], emb.entity_im[i]])
        lines.append("E\t" + name + "\t" + " ".join(repr(float(v)) for v in vals))
    for i, name in enumerate(emb.relation_names):
        lines.append("R\t" + name + "\t" + " ".join(repr(float(v)) for v in emb.phases[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embedding(path) -> KgEmbedding:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = dict(kv.split("=", 1) for kv in text[0].lstrip("# ").split()[1:])
    if header.get("norm") != NORM_CONVENTION:
        raise KclError(f"unsupported norm convention {header.get('norm')!r}")
    d = int(header["complex_dim"])
    ents, rels, evecs, rvecs = [], [], [], []
    for line in text[1:]:
        if not line.strip():
            continue
        kind, name, vals = line.split("\t")
        vec = np.array([float(v) for v in vals.split()])
        if kind == "E":
            ents.append(name)
            evecs.append(vec)
        else:
            rels.append(name)
            rvecs.append(vec)
    evecs = np.array(evecs).reshape(len(ents), 2 * d)
    return KgEmbedding(ents, rels, evecs[:, :d].copy(), evecs[:, d:].copy(),
                       np.array(rvecs).reshape(len(rels), d),
                       int(header["relation_dim"]), int(header["projection_seed"]))


def config_dict(config: RotateConfig) -> dict:
    return asdict(config)

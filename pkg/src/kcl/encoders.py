"""Graph encoders: KMPNN over augmented graphs, a GCN over plain molecules.

Both work on *packs*: several graphs flattened into one disjoint union with
per-node graph ids, so a whole contrastive batch is one forward pass.  Row
vectors throughout: a linear map ``W h`` is written ``h @ W``.

KMPNN round (per atom ``v``)::

    beta_uv  = softmax_u LeakyReLU(a_atom . [Wb h_v || Wb h_u])     u atom nbr
    alpha_uv = softmax_u LeakyReLU(a_attr . [Wa h_v || Wa h_u])     u attribute nbr
    m_v = sum_u beta_uv (h_e W1) * h_u + sum_u alpha_uv (h_e W0) * h_u
    h_v = GRU(h_v, m_v)

Attribute nodes only send; their hidden state never changes.  Edge hidden
states are the projected static edge features.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from kcl import numcore as nc
from kcl.augment import AugmentedGraph
from kcl.errors import KclError, ShapeMismatch
from kcl.kgembed import KgEmbedding
from kcl.numcore import ParameterSet, Tensor
from kcl.smiles import BOND_ORDERS, AtomVocabulary, MolecularGraph


class UncoveredNodeType(KclError):
    pass


class EmptyNeighborhood(KclError):
    pass


class EmptySet(KclError):
    pass


@dataclass
class EncoderConfig:
    atom_dim: int = 128
    bond_dim: int = 64
    attr_dim: int = 128
    rel_dim: int = 64
    hidden: int = 64          # KMPNN_node_hidden
    edge_hidden: int = 64     # KMPNN_edge_hidden
    kmpnn_steps: int = 6      # KMPNN_step
    set2set_steps: int = 3
    gcn_layers: int = 2
    gcn_hidden: int = 64
    leaky_slope: float = 0.2
    random_init: bool = False  # "w/o Init": random attribute/relation features

    @property
    def embed_dim(self) -> int:
        return 2 * self.hidden

    def to_dict(self) -> dict:
        return asdict(self)


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


# ---------------------------------------------------------------- feature tables

class FeatureTables:
    """Embedding rows for atom types, bond orders, KG attributes and relations.

    Atom/bond rows are random and trainable.  Attribute/relation rows are
    frozen copies of the KG embedding unless ``random_init`` is set, in which
    case they are random and trainable like the atom rows.
    """

    def __init__(self, params: ParameterSet, vocab: AtomVocabulary,
                 attr_names: list[str], rel_names: list[str]):
        self.params = params
        self.vocab = vocab
        self.attr_names = list(attr_names)
        self.rel_names = list(rel_names)
        self.attr_row = {n: i for i, n in enumerate(self.attr_names)}
        self.rel_row = {n: i for i, n in enumerate(self.rel_names)}

    @classmethod
    def create(cls, params: ParameterSet, vocab: AtomVocabulary, config: EncoderConfig,
               rng: np.random.Generator, kg_emb: KgEmbedding | None = None,
               attr_names=None, rel_names=None) -> "FeatureTables":
        params.add("tables.atom", rng.normal(0, 1 / np.sqrt(config.atom_dim),
                                             (vocab.capacity, config.atom_dim)))
        params.add("tables.bond", rng.normal(0, 1 / np.sqrt(config.bond_dim),
                                             (len(BOND_ORDERS), config.bond_dim)))
        if kg_emb is not None:
            attr_names = attr_names or kg_emb.entity_names
            rel_names = rel_names or kg_emb.relation_names
        if attr_names is None or rel_names is None:
            raise KclError("need a KG embedding or explicit attribute/relation names")
        if config.random_init or kg_emb is None:
            attr = rng.normal(0, 1 / np.sqrt(config.attr_dim), (len(attr_names), config.attr_dim))
            rel = rng.normal(0, 1 / np.sqrt(config.rel_dim), (len(rel_names), config.rel_dim))
            trainable = True
        else:
            if kg_emb.dims["entity"] != config.attr_dim or kg_emb.relation_dim != config.rel_dim:
                raise ShapeMismatch(f"KG embedding dims {kg_emb.dims} do not match "
                                    f"attr/rel dims {config.attr_dim}/{config.rel_dim}")
            attr = np.array([kg_emb.entity_feature(n) for n in attr_names])
            rel = np.array([kg_emb.relation_feature(n) for n in rel_names])
            trainable = False
        params.add("tables.attr", attr.reshape(len(attr_names), config.attr_dim), trainable)
        params.add("tables.rel", rel.reshape(len(rel_names), config.rel_dim), trainable)
        return cls(params, vocab, attr_names, rel_names)

    @property
    def atom(self) -> Tensor:
        return self.params["tables.atom"]

    @property
    def bond(self) -> Tensor:
        return self.params["tables.bond"]

    @property
    def attr(self) -> Tensor:
        return self.params["tables.attr"]

    @property
    def rel(self) -> Tensor:
        return self.params["tables.rel"]

    def atom_rows(self, atoms) -> np.ndarray:
        rows = []
        for a in atoms:
            if a.key not in self.vocab:
                raise UncoveredNodeType(f"atom type {a.key} missing from the vocabulary")
            rows.append(self.vocab.lookup(a.key))
        return np.array(rows, dtype=int)

    def attr_rows(self, names) -> np.ndarray:
        try:
            return np.array([self.attr_row[n] for n in names], dtype=int)
        except KeyError as exc:
            raise UncoveredNodeType(f"attribute {exc.args[0]!r} has no feature row") from None

    def rel_rows(self, names) -> np.ndarray:
        try:
            return np.array([self.rel_row[n] for n in names], dtype=int)
        except KeyError as exc:
            raise UncoveredNodeType(f"relation {exc.args[0]!r} has no feature row") from None


# ---------------------------------------------------------------- packs

@dataclass
class MolPack:
    atom_rows: np.ndarray
    graph_of_atom: np.ndarray
    src: np.ndarray           # directed edges, both directions of every bond
    dst: np.ndarray
    num_graphs: int

    @property
    def num_atoms(self) -> int:
        return len(self.atom_rows)


@dataclass
class AugPack:
    atom_rows: np.ndarray
    graph_of_atom: np.ndarray
    attr_rows: np.ndarray
    bond_src: np.ndarray      # directed atom->atom message edges
    bond_dst: np.ndarray
    bond_type: np.ndarray
    rel_src: np.ndarray       # index into the pack's attribute nodes
    rel_dst: np.ndarray
    rel_type: np.ndarray
    num_graphs: int
    atom_offsets: np.ndarray  # start of each graph's atoms
    attr_offsets: np.ndarray  # start of each graph's attribute nodes

    @property
    def num_atoms(self) -> int:
        return len(self.atom_rows)


def pack_molecules(graphs: list[MolecularGraph], tables: FeatureTables) -> MolPack:
    rows, gid, src, dst = [], [], [], []
    offset = 0
    for i, g in enumerate(graphs):
        rows.append(tables.atom_rows(g.atoms))
        gid.append(np.full(g.num_atoms, i))
        for b in g.bonds:
            src += [b.begin + offset, b.end + offset]
            dst += [b.end + offset, b.begin + offset]
        offset += g.num_atoms
    return MolPack(np.concatenate(rows), np.concatenate(gid),
                   np.array(src, dtype=int), np.array(dst, dtype=int), len(graphs))


def pack_augmented(graphs: list[AugmentedGraph], tables: FeatureTables) -> AugPack:
    atom_rows, gid, attr_rows = [], [], []
    bs, bd, bt, rs, rd, rt = [], [], [], [], [], []
    a_off, t_off = 0, 0
    atom_offsets, attr_offsets = [], []
    for i, g in enumerate(graphs):
        n_atoms = g.num_atoms
        atoms = [n.payload for n in g.nodes[:n_atoms]]
        atom_rows.append(tables.atom_rows(atoms))
        attr_rows.append(tables.attr_rows(g.attribute_names))
        gid.append(np.full(n_atoms, i))
        atom_offsets.append(a_off)
        attr_offsets.append(t_off)
        for e in g.edges:
            if e.kind == "bond":
                k = BOND_ORDERS.index(e.label)
                bs += [e.source + a_off, e.target + a_off]
                bd += [e.target + a_off, e.source + a_off]
                bt += [k, k]
            else:
                rs.append(e.source - n_atoms + t_off)
                rd.append(e.target + a_off)
                rt.append(e.label)
        a_off += n_atoms
        t_off += len(g.nodes) - n_atoms
    as_int = lambda x: np.array(x, dtype=int)  # noqa: E731
    return AugPack(
        np.concatenate(atom_rows), np.concatenate(gid),
        np.concatenate(attr_rows) if attr_rows else as_int([]),
        as_int(bs), as_int(bd), as_int(bt),
        as_int(rs), as_int(rd), tables.rel_rows(rt) if rt else as_int([]),
        len(graphs), as_int(atom_offsets), as_int(attr_offsets),
    )


# ---------------------------------------------------------------- building blocks

def linear(x, W, b=None) -> Tensor:
    out = nc.matmul(x, W)
    return nc.add(out, b) if b is not None else out


def attention_coeffs(center, neighbors, a, W, slope: float = 0.2) -> Tensor:
    """Softmax over neighbors of ``LeakyReLU(a . [h_center W || h_nbr W])``."""
    neighbors = nc.as_tensor(neighbors)
    if neighbors.ndim != 2 or neighbors.shape[0] == 0:
        raise EmptyNeighborhood("attention needs at least one neighbor")
    wc = nc.matmul(center, W)
    wn = nc.matmul(neighbors, W)
    k = wn.shape[0]
    pairs = nc.concat([nc.matmul(nc.Tensor(np.ones((k, 1))), nc.reshape(wc, (1, -1))), wn], axis=1)
    return nc.softmax(nc.leaky_relu(nc.matmul(pairs, a), slope), axis=0)


def _message(edge_hidden, neighbor_hidden, coeff, W) -> Tensor:
    edge_hidden, neighbor_hidden = nc.as_tensor(edge_hidden), nc.as_tensor(neighbor_hidden)
    W = nc.as_tensor(W)
    if edge_hidden.shape[-1] != W.shape[0] or W.shape[1] != neighbor_hidden.shape[-1]:
        raise ShapeMismatch(f"message: edge {edge_hidden.shape}, W {W.shape}, "
                            f"neighbor {neighbor_hidden.shape}")
    return nc.mul(coeff, nc.mul(nc.matmul(edge_hidden, W), neighbor_hidden))


def msg_attr(edge_hidden, neighbor_hidden, alpha, W0) -> Tensor:
    """Attribute-neighbor message: ``alpha * (h_e W0) * h_u`` (elementwise)."""
    return _message(edge_hidden, neighbor_hidden, alpha, W0)


def msg_atom(edge_hidden, neighbor_hidden, beta, W1) -> Tensor:
    """Atom-neighbor message: ``beta * (h_e W1) * h_u`` (elementwise)."""
    return _message(edge_hidden, neighbor_hidden, beta, W1)


def gru_cell(h, m, p: ParameterSet, prefix: str) -> Tensor:
    """Cho et al. GRU with input ``m`` and state ``h``."""
    def gate(name):
        return nc.add(nc.add(nc.matmul(m, p[f"{prefix}.W{name}"]),
                             nc.matmul(h, p[f"{prefix}.U{name}"])), p[f"{prefix}.b{name}"])
    z = nc.sigmoid(gate("z"))
    r = nc.sigmoid(gate("r"))
    cand = nc.tanh(nc.add(nc.add(nc.matmul(m, p[f"{prefix}.Wh"]),
                                 nc.matmul(nc.mul(r, h), p[f"{prefix}.Uh"])), p[f"{prefix}.bh"]))
    return nc.add(nc.mul(nc.sub(1.0, z), h), nc.mul(z, cand))


def _lstm_cell(x, h, c, p: ParameterSet, prefix: str):
    def gate(name):
        return nc.add(nc.add(nc.matmul(x, p[f"{prefix}.W{name}"]),
                             nc.matmul(h, p[f"{prefix}.U{name}"])), p[f"{prefix}.b{name}"])
    i = nc.sigmoid(gate("i"))
    f = nc.sigmoid(gate("f"))
    o = nc.sigmoid(gate("o"))
    g = nc.tanh(gate("g"))
    c = nc.add(nc.mul(f, c), nc.mul(i, g))
    return nc.mul(o, nc.tanh(c)), c


def set2set_segments(x, segment_ids, num_segments: int, p: ParameterSet, prefix: str,
                     steps: int, attention_log: list | None = None) -> Tensor:
    """Set2set readout of each segment's rows; output width ``2 * x.shape[1]``."""
    x = nc.as_tensor(x)
    seg = np.asarray(segment_ids, dtype=int)
    if x.shape[0] == 0:
        raise EmptySet("set2set over an empty set")
    d = x.shape[1]
    h = nc.Tensor(np.zeros((num_segments, d)))
    c = nc.Tensor(np.zeros((num_segments, d)))
    q_star = nc.Tensor(np.zeros((num_segments, 2 * d)))
    for _ in range(steps):
        h, c = _lstm_cell(q_star, h, c, p, prefix)
        scores = nc.sum(nc.mul(x, nc.take(h, seg)), axis=1)
        att = nc.segment_softmax(scores, seg, num_segments)
        if attention_log is not None:
            attention_log.append(att.data.copy())
        read = nc.segment_sum(nc.mul(nc.reshape(att, (-1, 1)), x), seg, num_segments)
        q_star = nc.concat([h, read], axis=1)
    return q_star


def set2set(node_hiddens, p: ParameterSet, prefix: str = "kmpnn.s2s", process_steps: int = 3,
            attention_log: list | None = None) -> Tensor:
    """Set2set over a single set of row vectors -> vector of width ``2 * hidden``."""
    x = nc.as_tensor(node_hiddens)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptySet("set2set needs at least one vector")
    out = set2set_segments(x, np.zeros(x.shape[0], dtype=int), 1, p, prefix,
                           process_steps, attention_log)
    return nc.reshape(out, (-1,))


# ---------------------------------------------------------------- parameter init

def _add_gru(params, rng, prefix, d_in, d):
    for g in ("z", "r", "h"):
        params.add(f"{prefix}.W{g}", _glorot(rng, d_in, d))
        params.add(f"{prefix}.U{g}", _glorot(rng, d, d))
        params.add(f"{prefix}.b{g}", np.zeros(d))


def add_set2set_params(params, rng, prefix, d):
    for g in ("i", "f", "o", "g"):
        params.add(f"{prefix}.W{g}", _glorot(rng, 2 * d, d))
        params.add(f"{prefix}.U{g}", _glorot(rng, d, d))
        params.add(f"{prefix}.b{g}", np.ones(d) if g == "f" else np.zeros(d))


class KmpnnParams:
    """Named view onto the ``kmpnn.*`` entries of a ParameterSet."""

    def __init__(self, params: ParameterSet, config: EncoderConfig):
        self.params = params
        self.config = config

    @classmethod
    def create(cls, params: ParameterSet, config: EncoderConfig, rng) -> "KmpnnParams":
        if config.kmpnn_steps < 1:
            raise KclError("KMPNN needs at least one message-passing step")
        h, eh = config.hidden, config.edge_hidden
        params.add("kmpnn.in_atom.W", _glorot(rng, config.atom_dim, h))
        params.add("kmpnn.in_atom.b", np.zeros(h))
        params.add("kmpnn.in_attr.W", _glorot(rng, config.attr_dim, h))
        params.add("kmpnn.in_attr.b", np.zeros(h))
        params.add("kmpnn.in_bond.W", _glorot(rng, config.bond_dim, eh))
        params.add("kmpnn.in_bond.b", np.zeros(eh))
        params.add("kmpnn.in_rel.W", _glorot(rng, config.rel_dim, eh))
        params.add("kmpnn.in_rel.b", np.zeros(eh))
        params.add("kmpnn.W0", _glorot(rng, eh, h))
        params.add("kmpnn.W1", _glorot(rng, eh, h))
        params.add("kmpnn.att_attr.W", _glorot(rng, h, h))
        params.add("kmpnn.att_attr.a", _glorot(rng, 2 * h, 1).reshape(-1))
        params.add("kmpnn.att_atom.W", _glorot(rng, h, h))
        params.add("kmpnn.att_atom.a", _glorot(rng, 2 * h, 1).reshape(-1))
        _add_gru(params, rng, "kmpnn.gru", h, h)
        add_set2set_params(params, rng, "kmpnn.s2s", h)
        return cls(params, config)

    def __getitem__(self, name) -> Tensor:
        return self.params[f"kmpnn.{name}"]

    @property
    def W0(self) -> Tensor:
        return self["W0"]

    @property
    def W1(self) -> Tensor:
        return self["W1"]


class GcnParams:
    def __init__(self, params: ParameterSet, config: EncoderConfig):
        self.params = params
        self.config = config

    @classmethod
    def create(cls, params: ParameterSet, config: EncoderConfig, rng) -> "GcnParams":
        if config.gcn_layers < 1:
            raise KclError("GCN needs at least one layer")
        d_in = config.atom_dim
        for layer in range(config.gcn_layers):
            params.add(f"gcn.layer{layer}.W", _glorot(rng, d_in, config.gcn_hidden))
            params.add(f"gcn.layer{layer}.b", np.zeros(config.gcn_hidden))
            d_in = config.gcn_hidden
        params.add("gcn.gate.w", _glorot(rng, config.gcn_hidden, 1).reshape(-1))
        params.add("gcn.gate.b", np.zeros(1))
        return cls(params, config)

    def __getitem__(self, name) -> Tensor:
        return self.params[f"gcn.{name}"]


# ---------------------------------------------------------------- encoders

@dataclass
class KmpnnTrace:
    """Final-round attention weights and hidden states of one KMPNN pass."""
    alpha: np.ndarray          # per relation edge
    beta: np.ndarray           # per directed bond edge
    attr_hidden_before: np.ndarray
    attr_hidden_after: np.ndarray
    atom_hidden: np.ndarray


def kmpnn_forward(pack: AugPack, tables: FeatureTables, kp: KmpnnParams,
                  trace: list | None = None) -> Tensor:
    """Encode every graph of ``pack``; returns ``(num_graphs, 2 * hidden)``."""
    cfg = kp.config
    slope = cfg.leaky_slope
    n = pack.num_atoms
    H = linear(nc.take(tables.atom, pack.atom_rows), kp["in_atom.W"], kp["in_atom.b"])
    A = linear(nc.take(tables.attr, pack.attr_rows), kp["in_attr.W"], kp["in_attr.b"])
    attr_before = A.data.copy()

    eb = linear(nc.take(tables.bond, pack.bond_type), kp["in_bond.W"], kp["in_bond.b"])
    er = linear(nc.take(tables.rel, pack.rel_type), kp["in_rel.W"], kp["in_rel.b"])
    bond_gate = nc.matmul(eb, kp.W1)        # (h_e W1) for atom neighbours
    rel_gate = nc.matmul(er, kp.W0)         # (h_e W0) for attribute neighbours

    h = cfg.hidden
    a_atom, a_attr = kp["att_atom.a"], kp["att_attr.a"]
    a_atom_c, a_atom_n = nc.take(a_atom, slice(0, h)), nc.take(a_atom, slice(h, 2 * h))
    a_attr_c, a_attr_n = nc.take(a_attr, slice(0, h)), nc.take(a_attr, slice(h, 2 * h))
    # attribute hiddens are static, so their attention halves are too
    attr_score = nc.matmul(nc.matmul(A, kp["att_attr.W"]), a_attr_n)
    attr_src = nc.take(A, pack.rel_src)
    has_bonds, has_rels = len(pack.bond_src) > 0, len(pack.rel_src) > 0

    alpha = beta = np.zeros(0)
    for _ in range(cfg.kmpnn_steps):
        m = nc.Tensor(np.zeros((n, h)))
        if has_bonds:
            wh = nc.matmul(H, kp["att_atom.W"])
            logits = nc.add(nc.take(nc.matmul(wh, a_atom_c), pack.bond_dst),
                            nc.take(nc.matmul(wh, a_atom_n), pack.bond_src))
            b = nc.segment_softmax(nc.leaky_relu(logits, slope), pack.bond_dst, n)
            msg = nc.mul(nc.reshape(b, (-1, 1)),
                         nc.mul(bond_gate, nc.take(H, pack.bond_src)))
            m = nc.add(m, nc.segment_sum(msg, pack.bond_dst, n))
            beta = b.data
        if has_rels:
            wc = nc.matmul(nc.matmul(H, kp["att_attr.W"]), a_attr_c)
            logits = nc.add(nc.take(wc, pack.rel_dst), nc.take(attr_score, pack.rel_src))
            a = nc.segment_softmax(nc.leaky_relu(logits, slope), pack.rel_dst, n)
            msg = nc.mul(nc.reshape(a, (-1, 1)), nc.mul(rel_gate, attr_src))
            m = nc.add(m, nc.segment_sum(msg, pack.rel_dst, n))
            alpha = a.data
        H = gru_cell(H, m, kp.params, "kmpnn.gru")

    out = set2set_segments(H, pack.graph_of_atom, pack.num_graphs, kp.params, "kmpnn.s2s",
                           cfg.set2set_steps)
    if trace is not None:
        trace.append(KmpnnTrace(alpha, beta, attr_before, A.data.copy(), H.data.copy()))
    return out


def kmpnn_encode(g: AugmentedGraph, tables: FeatureTables, params: KmpnnParams) -> Tensor:
    """Graph embedding of one augmented graph (width ``2 * hidden``)."""
    return nc.reshape(kmpnn_forward(pack_augmented([g], tables), tables, params), (-1,))


def gcn_forward(pack: MolPack, tables: FeatureTables, gp: GcnParams) -> Tensor:
    """Mean-aggregation GCN (self loop included) with gated-sum + max readout."""
    n = pack.num_atoms
    H = nc.take(tables.atom, pack.atom_rows)
    deg = np.bincount(pack.dst, minlength=n).astype(float) + 1.0
    inv_deg = (1.0 / deg).reshape(-1, 1)
    for layer in range(gp.config.gcn_layers):
        agg = H
        if len(pack.src):
            agg = nc.add(H, nc.segment_sum(nc.take(H, pack.src), pack.dst, n))
        H = nc.relu(linear(nc.mul(agg, inv_deg), gp[f"layer{layer}.W"], gp[f"layer{layer}.b"]))
    gate = nc.sigmoid(nc.add(nc.matmul(H, gp["gate.w"]), gp["gate.b"]))
    weighted = nc.segment_sum(nc.mul(nc.reshape(gate, (-1, 1)), H), pack.graph_of_atom,
                              pack.num_graphs)
    pooled = _segment_max(H, pack.graph_of_atom, pack.num_graphs)
    return nc.concat([weighted, pooled], axis=1)


def _segment_max(x: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    """Per-segment elementwise max built from per-graph row slices.

    Rows of a segment are contiguous in every pack.
    """
    bounds = np.searchsorted(seg, np.arange(num_segments + 1))
    rows = [nc.max(nc.take(x, slice(bounds[i], bounds[i + 1])), axis=0, keepdims=True)
            for i in range(num_segments)]
    return nc.concat(rows, axis=0)


def gcn_encode(g: MolecularGraph, tables: FeatureTables, params: GcnParams) -> Tensor:
    """Graph embedding of one plain molecule (width ``2 * gcn_hidden``)."""
    return nc.reshape(gcn_forward(pack_molecules([g], tables), tables, params), (-1,))

"""Every differentiable op against central finite differences."""
import numpy as np
import pytest

from kcl import numcore as nc
from kcl.augment import augment
from kcl.contrast import ProjectionHead, nt_xent, project
from kcl.encoders import (EncoderConfig, FeatureTables, GcnParams, KmpnnParams, gcn_forward,
                          kmpnn_forward, pack_augmented, pack_molecules, set2set)
from kcl.smiles import AtomVocabulary, parse_smiles

from gradcheck import check_gradients

TOL = 1e-4


def away_from_kinks(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * (gap + np.abs(x)), x)


def weights(rng, shape):
    return nc.Tensor(rng.normal(size=shape))


SEG = np.array([0, 2, 1, 0, 2, 2, 1])


def case(name, rng):
    """(fn, arrays) for one randomized instance of op ``name``."""
    r = rng
    if name in ("add", "sub", "mul", "div"):
        a, b = r.normal(size=(3, 4)), r.normal(size=(4,))
        if name == "div":
            b = np.abs(b) + 0.5
        op = getattr(nc, name)
        w = weights(r, (3, 4))
        return (lambda t: nc.sum(nc.mul(op(t[0], t[1]), w))), [a, b]
    if name in ("exp", "tanh", "sigmoid", "cos", "sin", "square", "neg"):
        op = getattr(nc, name)
        w = weights(r, (5,))
        return (lambda t: nc.sum(nc.mul(op(t[0]), w))), [r.normal(size=5)]
    if name in ("log", "sqrt"):
        op = getattr(nc, name)
        w = weights(r, (5,))
        return (lambda t: nc.sum(nc.mul(op(t[0]), w))), [r.uniform(0.5, 2.0, 5)]
    if name in ("abs", "relu", "leaky_relu"):
        op = getattr(nc, name)
        w = weights(r, (6,))
        return (lambda t: nc.sum(nc.mul(op(t[0]), w))), [away_from_kinks(r, 6)]
    if name == "matmul":
        w = weights(r, (3, 2))
        return (lambda t: nc.sum(nc.mul(nc.matmul(t[0], t[1]), w))), [r.normal(size=(3, 4)),
                                                                      r.normal(size=(4, 2))]
    if name == "matvec":
        w = weights(r, (3,))
        return (lambda t: nc.sum(nc.mul(nc.matmul(t[0], t[1]), w))), [r.normal(size=(3, 4)),
                                                                      r.normal(size=4)]
    if name == "transpose_reshape":
        w = weights(r, (6, 2))
        return (lambda t: nc.sum(nc.mul(nc.reshape(nc.transpose(t[0]), (6, 2)), w))), \
            [r.normal(size=(3, 4))]
    if name == "concat_stack":
        w = weights(r, (2, 2, 5))
        return (lambda t: nc.sum(nc.mul(nc.stack([nc.concat([t[0], t[1]], 1)] * 2), w))), \
            [r.normal(size=(2, 2)), r.normal(size=(2, 3))]
    if name == "take":
        idx = np.array([0, 2, 2, 1])
        w = weights(r, (4, 3))
        return (lambda t: nc.sum(nc.mul(nc.take(t[0], idx), w))), [r.normal(size=(3, 3))]
    if name == "segment_sum":
        w = weights(r, (3, 2))
        return (lambda t: nc.sum(nc.mul(nc.segment_sum(t[0], SEG, 3), w))), [r.normal(size=(7, 2))]
    if name == "segment_softmax":
        w = weights(r, (7,))
        return (lambda t: nc.sum(nc.mul(nc.segment_softmax(t[0], SEG, 3), w))), [r.normal(size=7)]
    if name in ("sum_axis", "mean_axis"):
        op = nc.sum if name == "sum_axis" else nc.mean
        w = weights(r, (4,))
        return (lambda t: nc.sum(nc.mul(op(t[0], axis=0), w))), [r.normal(size=(3, 4))]
    if name == "max_axis":
        w = weights(r, (4,))
        return (lambda t: nc.sum(nc.mul(nc.max(t[0], axis=0), w))), [r.normal(size=(3, 4))]
    if name == "softmax":
        w = weights(r, (2, 5))
        return (lambda t: nc.sum(nc.mul(nc.softmax(t[0], axis=1), w))), [r.normal(size=(2, 5))]
    if name == "logsumexp":
        w = weights(r, (2,))
        return (lambda t: nc.sum(nc.mul(nc.logsumexp(t[0], axis=1), w))), [r.normal(size=(2, 5))]
    if name == "norm":
        w = weights(r, (3,))
        return (lambda t: nc.sum(nc.mul(nc.norm(t[0], axis=1), w))), [r.normal(size=(3, 4))]
    if name == "cosine_similarity":
        w = weights(r, (3,))
        return (lambda t: nc.sum(nc.mul(nc.cosine_similarity(t[0], t[1], axis=1), w))), \
            [r.normal(size=(3, 4)), r.normal(size=(3, 4))]
    if name == "normalize_rows":
        w = weights(r, (3, 4))
        return (lambda t: nc.sum(nc.mul(nc.normalize_rows(t[0]), w))), [r.normal(size=(3, 4))]
    if name == "nt_xent":
        tau = float(r.choice([0.1, 0.5, 1.0]))
        return (lambda t: nt_xent(t[0], t[1], tau)), [r.normal(size=(4, 3)), r.normal(size=(4, 3))]
    raise KeyError(name)


OPS = ["add", "sub", "mul", "div", "exp", "log", "sqrt", "square", "neg", "abs", "cos", "sin",
       "tanh", "sigmoid", "relu", "leaky_relu", "matmul", "matvec", "transpose_reshape",
       "concat_stack", "take", "segment_sum", "segment_softmax", "sum_axis", "mean_axis",
       "max_axis", "softmax", "logsumexp", "norm", "cosine_similarity", "normalize_rows",
       "nt_xent"]


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("name", OPS)
def test_op_gradient(name, seed):
    fn, arrays = case(name, np.random.default_rng(100 * seed + OPS.index(name)))
    assert check_gradients(fn, arrays) < TOL


# ---------------------------------------------------------------- composed path

SMALL = EncoderConfig(atom_dim=6, bond_dim=4, attr_dim=5, rel_dim=3, hidden=4, edge_hidden=3,
                      kmpnn_steps=2, set2set_steps=2, gcn_layers=2, gcn_hidden=4,
                      random_init=True)


def small_model(kg, mols, seed):
    rng = np.random.default_rng(seed)
    ps = nc.ParameterSet()
    vocab = AtomVocabulary.from_graphs(mols)
    tables = FeatureTables.create(ps, vocab, SMALL, rng, None, kg.attributes + kg.elements,
                                  sorted(kg.relation_types))
    kp = KmpnnParams.create(ps, SMALL, rng)
    gp = GcnParams.create(ps, SMALL, rng)
    head = ProjectionHead.create(ps, rng, 8, 5, 3)
    return ps, tables, kp, gp, head


def composed_loss(ps, names, tables, kp, gp, head, mp, ap):
    """Rebind ``names`` to fresh tensors, then GCN/KMPNN -> head -> NT-Xent."""
    def fn(tensors):
        saved = {n: ps.params[n] for n in names}
        ps.params.update(dict(zip(names, tensors)))
        try:
            z1 = project(head, gcn_forward(mp, tables, gp))
            z2 = project(head, kmpnn_forward(ap, tables, kp))
            return nt_xent(z1, z2, 0.5)
        finally:
            ps.params.update(saved)
    return fn


COMPOSED_PARAMS = ["tables.atom", "tables.attr", "tables.rel", "tables.bond", "kmpnn.W0",
                   "kmpnn.W1", "kmpnn.att_attr.a", "kmpnn.att_atom.W", "kmpnn.gru.Wz",
                   "kmpnn.s2s.Wi", "gcn.layer0.W", "gcn.gate.w", "head.W1"]


@pytest.mark.parametrize("seed", range(4))
def test_composed_encoder_gradient(seed, ref_kg):
    mols = [parse_smiles(s) for s in ("CCO", "c1ccccc1O", "CC(=O)N", "OCC(F)S")]
    ps, tables, kp, gp, head = small_model(ref_kg, mols, seed)
    mp = pack_molecules(mols, tables)
    ap = pack_augmented([augment(m, ref_kg) for m in mols], tables)
    fn = composed_loss(ps, COMPOSED_PARAMS, tables, kp, gp, head, mp, ap)
    arrays = [ps[n].data.copy() for n in COMPOSED_PARAMS]
    err = check_gradients(fn, arrays, max_entries=6, rng=np.random.default_rng(seed))
    assert err < TOL


@pytest.mark.parametrize("seed", range(3))
def test_set2set_gradient(seed):
    rng = np.random.default_rng(seed)
    ps = nc.ParameterSet()
    from kcl.encoders import add_set2set_params
    add_set2set_params(ps, rng, "s", 3)
    w = weights(rng, (6,))
    fn = lambda t: nc.sum(nc.mul(set2set(t[0], ps, "s", 3), w))  # noqa: E731
    assert check_gradients(fn, [rng.normal(size=(5, 3))]) < TOL

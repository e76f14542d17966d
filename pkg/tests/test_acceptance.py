"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from kcl import numcore as nc
from kcl.augment import augment
from kcl.contrast import Fingerprint, morgan_fingerprint, nt_xent, project, tanimoto
from kcl.elementkg import (Triple, bundled_path, build_kg, kg_stats, read_binning,
                           read_element_table)
from kcl.encoders import add_set2set_params, gcn_encode, kmpnn_encode, set2set
from kcl.kgembed import RotateConfig, init_embedding, rank_eval, rotate_score, train_rotate
from kcl.pipeline import (KclModel, PretrainConfig, ablation_run, bundled_corpus,
                          dump_attention, finetune, halogen_corpus, pretrain, random_split,
                          read_ablation_csv, synthetic_molecules)
from kcl.pipeline.ablation import VARIANTS
from kcl.smiles import AtomVocabulary

from conftest import make_toy_kg
from gradcheck import check_gradients
from test_gradients import COMPOSED_PARAMS, OPS, case, small_model

PUBLISHED_TRIPLES = 1643


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def full_emb(ref_kg):
    cfg = PretrainConfig()
    return train_rotate(ref_kg, RotateConfig(epochs=cfg.kg_epochs, lr=cfg.kg_lr, seed=0))


def test_01_kg_statistics(report):
    start = time.perf_counter()
    kg = build_kg(read_element_table(bundled_path("periodic_table.csv")),
                  read_binning(bundled_path("binning.tsv")))
    stats = kg_stats(kg)
    elapsed = time.perf_counter() - start
    within = abs(stats["triples"] - PUBLISHED_TRIPLES) <= 0.1 * PUBLISHED_TRIPLES
    exact = stats["entities"] == stats["elements"] + stats["attributes"]
    report(1, within and exact and elapsed < 1.0,
           f"triples={stats['triples']} (target {PUBLISHED_TRIPLES} +/-10%), "
           f"entities={stats['entities']}={stats['elements']}+{stats['attributes']}, "
           f"{elapsed:.3f}s")


def test_02_rotate_toy_kg(report):
    start = time.perf_counter()
    kg = make_toy_kg()
    emb = train_rotate(kg, RotateConfig(dim=16, relation_dim=8, epochs=300, seed=0))
    rng = np.random.default_rng(0)
    true = np.mean([rotate_score(emb, t) for t in kg.triples])
    corrupted = np.mean([rotate_score(emb, Triple(t.head, t.relation, str(rng.choice(kg.elements))))
                         for t in kg.triples for _ in range(20)])
    mrr = rank_eval(emb, kg)["mrr"]
    random_mrr = np.mean([rank_eval(init_embedding(kg, RotateConfig(dim=16, relation_dim=8,
                                                                    seed=s)), kg)["mrr"]
                          for s in range(5)])
    elapsed = time.perf_counter() - start
    report(2, true < corrupted and mrr >= 2 * random_mrr and elapsed < 30,
           f"true {true:.3f} < corrupted {corrupted:.3f}, MRR {mrr:.3f} vs random "
           f"{random_mrr:.3f}, {elapsed:.1f}s")


def test_03_gradient_suite(report, ref_kg):
    start = time.perf_counter()
    from kcl.augment import augment as aug
    from kcl.encoders import kmpnn_forward, pack_augmented
    from kcl.smiles import parse_smiles
    errors = []
    for seed in range(3):
        for name in OPS:
            fn, arrays = case(name, np.random.default_rng(100 * seed + OPS.index(name)))
            errors.append(check_gradients(fn, arrays))
    mols = [parse_smiles(s) for s in ("CCO", "c1ccccc1O", "CC(=O)N", "OCC(F)S")]
    kmpnn_names = [n for n in COMPOSED_PARAMS if not n.startswith("gcn.")]
    for seed in range(5):
        ps, tables, kp, _, head = small_model(ref_kg, mols, seed)
        ap1 = pack_augmented([aug(m, ref_kg) for m in mols], tables)
        ap2 = pack_augmented([aug(m, ref_kg) for m in mols[::-1]], tables)

        def fn(tensors, ps=ps, tables=tables, kp=kp, head=head, ap1=ap1, ap2=ap2):
            saved = {n: ps.params[n] for n in kmpnn_names}
            ps.params.update(dict(zip(kmpnn_names, tensors)))
            try:
                return nt_xent(project(head, kmpnn_forward(ap1, tables, kp)),
                               project(head, kmpnn_forward(ap2, tables, kp)), 0.5)
            finally:
                ps.params.update(saved)
        arrays = [ps[n].data.copy() for n in kmpnn_names]
        errors.append(check_gradients(fn, arrays, max_entries=6, rng=np.random.default_rng(seed)))
    elapsed = time.perf_counter() - start
    worst = max(errors)
    report(3, len(errors) >= 20 and worst < 1e-4 and elapsed < 60,
           f"{len(errors)} instances, worst relative error {worst:.2e}, {elapsed:.1f}s")


def test_04_augmentation_oracle(report, ref_kg, bundled_mols):
    bad = 0
    for mol in bundled_mols[:50]:
        g = augment(mol, ref_kg)
        triples = [t for a in mol.atoms for t in ref_kg.neighbors_of_element(a.element)]
        n_attr = len({t.head for t in triples})
        back = g.strip()
        ok = (len(g.nodes) == mol.num_atoms + n_attr
              and len(g.relation_edges()) == len(triples)
              and len(g.bond_edges()) == len(mol.bonds)
              and back.atoms == mol.atoms and back.bonds == mol.bonds)
        bad += not ok
    report(4, bad == 0, f"{50 - bad}/50 molecules match brute force and strip back exactly")


def test_05_unit_anchors(report):
    a = Fingerprint(np.isin(np.arange(8), [0, 1, 2]))
    b = Fingerprint(np.isin(np.arange(8), [1, 2, 3, 4]))
    t = tanimoto(a, b)
    z = nc.Tensor(np.array([[0.3, -1.2, 0.5]]))
    gaps = [abs(nt_xent(z, z, tau).item() - math.log(2)) for tau in (0.1, 0.5, 1.0)]
    report(5, t == 0.4 and max(gaps) < 1e-9,
           f"tanimoto={t!r}, max |nt_xent - ln2| = {max(gaps):.1e}")


def test_06_contrastive_training_signal(report, ref_kg, full_emb):
    start = time.perf_counter()
    mols = synthetic_molecules(100, seed=0, halogen_fraction=0.5)
    cfg = PretrainConfig(epochs=10, seed=0)
    first = pretrain(mols, ref_kg, full_emb, cfg).epoch_losses
    second = pretrain(mols, ref_kg, full_emb, cfg).epoch_losses
    drop = 1 - first[-1] / first[0]
    elapsed = time.perf_counter() - start
    report(6, drop >= 0.2 and first == second and elapsed < 300,
           f"epoch loss {first[0]:.4f} -> {first[-1]:.4f} ({drop:.1%} drop), "
           f"deterministic={first == second}, {elapsed:.1f}s for two runs")


def test_07_downstream_direction(report, ref_kg, full_emb):
    start = time.perf_counter()
    margins = []
    for seed in range(3):
        corpus = random_split(halogen_corpus(400, seed=seed), seed)
        cfg = PretrainConfig(epochs=30, seed=seed)
        trained = pretrain(corpus.molecules, ref_kg, full_emb, cfg).model.drop_head()
        untrained = pretrain(corpus.molecules, ref_kg, full_emb,
                             cfg.with_overrides(epochs=0)).model.drop_head()
        auc_p = finetune(trained, corpus, ref_kg, "linear", cfg).test
        auc_r = finetune(untrained, corpus, ref_kg, "linear", cfg).test
        margins.append(auc_p - auc_r)
        print(f"seed {seed}: pretrained {auc_p:.4f}, random {auc_r:.4f}")
    elapsed = time.perf_counter() - start
    mean = float(np.mean(margins))
    report(7, mean >= 0.05 and elapsed < 600,
           f"mean ROC-AUC margin {mean:.4f} over 3 seeds "
           f"({', '.join(f'{m:+.3f}' for m in margins)}), {elapsed:.0f}s")


def test_08_ablation_wiring(report, ref_kg, full_emb, tmp_path):
    corpus = bundled_corpus()
    data = random_split(corpus, 0)
    base = PretrainConfig(epochs=1, ft_epochs=2, seed=0)
    table = ablation_run(corpus.molecules, [data], ref_kg, full_emb, base, protocol="linear")
    path = tmp_path / "ablation.csv"
    path.write_text(table.to_csv())
    rows = read_ablation_csv(path.read_text())
    header = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")][0]
    shape_ok = (header == "Dataset," + ",".join(VARIANTS)
                and {(r["dataset"], r["variant"]) for r in rows}
                == {(d, v) for d in (data.name, "Ave(Cls)") for v in VARIANTS})
    sim = table.batch_similarity
    report(8, shape_ok and sim["w/oNS"] < sim["ALL"],
           f"table columns {header!r}; batch Tanimoto w/oNS {sim['w/oNS']:.4f} < "
           f"ALL {sim['ALL']:.4f}")


def test_09_attention_dump(report, ref_kg, full_emb, bundled_mols, tmp_path):
    res = pretrain(bundled_mols[:40], ref_kg, full_emb, PretrainConfig(epochs=1, seed=0))
    res.model.drop_head().save(tmp_path / "fixed.ckpt")
    dumps = []
    for _ in range(2):
        model, _ = KclModel.load(tmp_path / "fixed.ckpt")
        dumps.append(dump_attention(model, bundled_mols, ref_kg))
    sums = dumps[0].atom_sums()
    worst = max(abs(s - 1.0) for s in sums.values())
    covered = {m for m, _ in sums}
    stable = dumps[0].to_csv().encode() == dumps[1].to_csv().encode()
    report(9, worst < 1e-6 and stable and covered == set(range(len(bundled_mols))),
           f"{len(sums)} atoms over {len(covered)} molecules, worst |sum-1| {worst:.1e}, "
           f"byte-stable={stable}")


def test_10_permutation_invariance(report, ref_kg, full_emb, bundled_mols):
    rng = np.random.default_rng(10)
    mols = [m for m in bundled_mols if m.num_atoms > 2][:20]
    model = KclModel.create(AtomVocabulary.from_graphs(mols), ref_kg, full_emb, PretrainConfig())
    p = model.params
    add_set2set_params(p, rng, "probe", 8)
    worst = {"kmpnn": 0.0, "gcn": 0.0, "set2set": 0.0}
    fp_exact = True
    for mol in mols:
        base_k = kmpnn_encode(augment(mol, ref_kg), model.tables, model.kmpnn).data
        base_g = gcn_encode(mol, model.tables, model.gcn).data
        x = rng.normal(size=(mol.num_atoms, 8))
        base_s = set2set(nc.Tensor(x), p, "probe", 3).data
        base_f = morgan_fingerprint(mol)
        for _ in range(10):
            perm = [int(i) for i in rng.permutation(mol.num_atoms)]
            q = mol.permuted(perm)
            worst["kmpnn"] = max(worst["kmpnn"], np.abs(
                kmpnn_encode(augment(q, ref_kg), model.tables, model.kmpnn).data - base_k).max())
            worst["gcn"] = max(worst["gcn"], np.abs(
                gcn_encode(q, model.tables, model.gcn).data - base_g).max())
            worst["set2set"] = max(worst["set2set"], np.abs(
                set2set(nc.Tensor(x[perm]), p, "probe", 3).data - base_s).max())
            fp_exact &= morgan_fingerprint(q) == base_f
    ok = all(v < 1e-9 for v in worst.values()) and fp_exact
    report(10, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f", fingerprint exact={fp_exact} (20 molecules x 10 permutations)")

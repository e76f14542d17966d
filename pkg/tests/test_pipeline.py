import numpy as np
import pytest

from kcl.errors import ConfigInvalid
from kcl.pipeline import (AblationTable, CorpusTooSmall, EmptySplit, KclModel, PretrainConfig,
                          ProtocolUnknown, SingleClass, ablation_run, bundled_corpus,
                          dump_attention, finetune, halogen_corpus, load_config, metrics_csv,
                          paper_scale, parse_config, pretrain, random_split, read_ablation_csv,
                          read_metrics_csv, rmse, roc_auc, scaffold_key, scaffold_split,
                          synthetic_molecules)
from kcl.pipeline.data import LabeledCorpus, from_smiles
from kcl.pipeline.split import framework, split_sizes
from kcl.smiles import parse_smiles

TINY = dict(epochs=2, batch_size=8, kmpnn_steps=2, kmpnn_hidden=16, gcn_hidden=16,
            kmpnn_edge_hidden=8, proj_hidden=16, proj_dim=8, set2set_steps=2,
            ft_epochs=3, ft_batch_size=16, hidden_size=32)


def tiny(**kw):
    return PretrainConfig(**{**TINY, **kw})


# ---------------------------------------------------------------- config

def test_config_file_keys_and_roundtrip(tmp_path, monkeypatch):
    cfg = parse_config("epoch = 3  # comment\nKMPNN_step=2\nnegative_mining = off\n"
                       "GCN_node_hidden = 32\nKMPNN_node_hidden = 32\ntau=0.5\n")
    assert (cfg.epochs, cfg.kmpnn_steps, cfg.negative_mining, cfg.tau) == (3, 2, False, 0.5)
    assert parse_config(cfg.dumps()) == cfg
    path = tmp_path / "c.cfg"
    path.write_text("batch_size = 7\n")
    monkeypatch.setenv("KCL_CONFIG", str(path))
    assert load_config().batch_size == 7
    monkeypatch.delenv("KCL_CONFIG")
    assert load_config() == PretrainConfig()


@pytest.mark.parametrize("text", ["tau = 0", "epoch = -1", "bogus = 1", "lr = abc",
                                  "negative_mining = maybe", "just words",
                                  "downstream_encoder = rnn"])
def test_config_rejects(text):
    with pytest.raises(ConfigInvalid):
        parse_config(text)


def test_paper_scale():
    cfg = paper_scale()
    assert (cfg.batch_size, cfg.epochs, cfg.tau, cfg.lr) == (256, 20, 0.1, 1e-4)
    assert PretrainConfig().batch_size == 32


# ---------------------------------------------------------------- splits and metrics

def test_random_split_sizes():
    c = halogen_corpus(100, seed=0)
    s = random_split(c, seed=4)
    assert s.split_sizes() == {"train": 80, "valid": 10, "test": 10}
    assert s.assignment == random_split(c, seed=4).assignment
    assert split_sizes(37) == (29, 4, 4)
    with pytest.raises(CorpusTooSmall):
        random_split(halogen_corpus(9), 0)


def test_scaffold_key_is_element_free():
    assert scaffold_key(parse_smiles("c1ccccc1CCO")) == scaffold_key(parse_smiles("C1CCNCC1C"))
    assert scaffold_key(parse_smiles("CCCO")) == ""
    assert scaffold_key(parse_smiles("c1ccccc1")) != scaffold_key(parse_smiles("c1ccccc1Cc1ccccc1"))
    assert framework(parse_smiles("c1ccccc1CCc1ccccc1C")).num_atoms == 14


def test_scaffold_split_groups_never_span(bundled_mols):
    c = scaffold_split(bundled_corpus())
    where = {}
    for mol, s in zip(c.molecules, c.assignment):
        where.setdefault(scaffold_key(mol), set()).add(s)
    assert all(len(v) == 1 for v in where.values())
    sizes = c.split_sizes()
    assert sizes["train"] >= sizes["valid"] > 0 and sizes["test"] > 0


def test_same_scaffold_same_split():
    smiles = ["c1ccccc1C", "c1ccccc1O"] + [f"C{'C' * i}O" for i in range(10)]
    c = scaffold_split(from_smiles(smiles, [0, 1] * 6))
    assert c.assignment[0] == c.assignment[1]


def test_roc_auc():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([1, 2, 3], [0, 1, 1]) == 1.0
    assert roc_auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    with pytest.raises(SingleClass):
        roc_auc([1, 2], [1, 1])
    r = np.random.default_rng(0)
    assert 0.45 <= roc_auc(r.random(1000), r.integers(0, 2, 1000)) <= 0.55


def test_roc_auc_matches_pair_count(rng):
    s, y = rng.integers(0, 5, 40).astype(float), rng.integers(0, 2, 40)
    pos, neg = s[y == 1], s[y == 0]
    pairs = [(p > n) + 0.5 * (p == n) for p in pos for n in neg]
    assert roc_auc(s, y) == pytest.approx(np.mean(pairs), abs=1e-12)


def test_rmse():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))


# ---------------------------------------------------------------- pretraining

@pytest.fixture(scope="module")
def mols():
    return synthetic_molecules(24, seed=5, halogen_fraction=0.5)


@pytest.fixture(scope="module")
def pretrained(mols, ref_kg, ref_emb):
    return pretrain(mols, ref_kg, ref_emb, tiny(epochs=2))


def test_pretrain_deterministic(mols, ref_kg, ref_emb, pretrained):
    again = pretrain(mols, ref_kg, ref_emb, tiny(epochs=2))
    assert again.epoch_losses == pretrained.epoch_losses
    assert len(pretrained.epoch_losses) == 2
    for k, t in pretrained.model.params.items():
        assert np.array_equal(t.data, again.model.params[k].data)


def test_zero_epochs_is_initialisation(mols, ref_kg, ref_emb):
    cfg = tiny(epochs=0)
    res = pretrain(mols, ref_kg, ref_emb, cfg)
    init = KclModel.create(res.model.vocab, ref_kg, ref_emb, cfg)
    assert res.epoch_losses == []
    for k, t in res.model.params.items():
        assert np.array_equal(t.data, init.params[k].data)


def test_pretrain_errors(mols, ref_kg, ref_emb):
    with pytest.raises(CorpusTooSmall):
        pretrain(mols[:1], ref_kg, ref_emb, tiny())
    with pytest.raises(ConfigInvalid):
        pretrain(mols, ref_kg, ref_emb, tiny(gcn_hidden=8))


def test_kg_rows_stay_frozen(mols, ref_kg, ref_emb, pretrained):
    init = KclModel.create(pretrained.model.vocab, ref_kg, ref_emb, tiny())
    assert np.array_equal(pretrained.model.params["tables.attr"].data,
                          init.params["tables.attr"].data)
    assert not np.array_equal(pretrained.model.params["kmpnn.W0"].data,
                              init.params["kmpnn.W0"].data)


def test_checkpoint_drops_head_and_roundtrips(tmp_path, pretrained):
    exported = pretrained.model.drop_head()
    assert not any(k.startswith("head.") for k in exported.params)
    exported.save(tmp_path / "a.ckpt")
    exported.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back, meta = KclModel.load(tmp_path / "a.ckpt")
    assert back.head is None and meta["format"] == "kcl-checkpoint"
    for k, t in exported.params.items():
        assert np.array_equal(back.params[k].data, t.data)


def test_hard_batches_more_similar_than_random(mols, ref_kg, ref_emb):
    hard = pretrain(mols, ref_kg, ref_emb, tiny(epochs=1))
    rand = pretrain(mols, ref_kg, ref_emb, tiny(epochs=1, negative_mining=False))
    assert hard.batch_similarity[0] >= rand.batch_similarity[0]


# ---------------------------------------------------------------- fine-tuning

def params_snapshot(model):
    return {k: t.data.tobytes() for k, t in model.params.items()}


def test_linear_protocol_leaves_encoder_untouched(tmp_path, pretrained, ref_kg):
    enc = pretrained.model.drop_head()
    before = params_snapshot(enc)
    enc.save(tmp_path / "before.ckpt")
    corpus = random_split(halogen_corpus(40, seed=2), 0)
    res = finetune(enc, corpus, ref_kg, "linear", tiny(ft_epochs=5))
    assert params_snapshot(enc) == before
    enc.save(tmp_path / "after.ckpt")
    assert (tmp_path / "before.ckpt").read_bytes() == (tmp_path / "after.ckpt").read_bytes()
    assert res.metric == "roc_auc" and 0.0 <= res.test <= 1.0


def test_fine_tune_reaches_perfect_auc_on_single_bit(pretrained, ref_kg):
    corpus = random_split(halogen_corpus(80, seed=11), 1)
    res = finetune(pretrained.model.drop_head(), corpus, ref_kg, "fine_tune",
                   tiny(ft_epochs=40, ft_lr=3e-3, patience=20, downstream_encoder="gcn"))
    assert res.test == 1.0


def test_constant_regression(pretrained, ref_kg):
    c = halogen_corpus(30, seed=3)
    corpus = random_split(LabeledCorpus(c.smiles, c.molecules, np.full(30, 2.5), "regression"), 0)
    res = finetune(pretrained.model.drop_head(), corpus, ref_kg, "fine_tune", tiny(ft_epochs=3))
    assert res.metric == "rmse" and res.test < 1e-2


def test_finetune_errors_and_determinism(pretrained, ref_kg):
    enc = pretrained.model.drop_head()
    corpus = random_split(halogen_corpus(30, seed=3), 0)
    with pytest.raises(ProtocolUnknown):
        finetune(enc, corpus, ref_kg, "zero_shot", tiny())
    empty = corpus.with_assignment(["train"] * len(corpus))
    with pytest.raises(EmptySplit):
        finetune(enc, empty, ref_kg, "linear", tiny())
    a = finetune(enc, corpus, ref_kg, "fine_tune", tiny(ft_epochs=2))
    b = finetune(enc, corpus, ref_kg, "fine_tune", tiny(ft_epochs=2))
    assert a.test == b.test and a.train_losses == b.train_losses


def test_metrics_csv_roundtrip(pretrained, ref_kg):
    corpus = random_split(halogen_corpus(30, seed=3), 0)
    res = finetune(pretrained.model.drop_head(), corpus, ref_kg, "linear", tiny(ft_epochs=2))
    text = metrics_csv([res])
    assert text.splitlines()[0] == "dataset,protocol,metric,value,seed"
    row = read_metrics_csv(text)[0]
    assert row["value"] == res.test and row["protocol"] == "linear"


# ---------------------------------------------------------------- attention

def test_attention_dump(pretrained, ref_kg, mols):
    model = pretrained.model.drop_head()
    dump = dump_attention(model, mols[:8], ref_kg)
    sums = dump.atom_sums()
    assert sums and all(abs(s - 1.0) < 1e-6 for s in sums.values())
    assert dump_attention(model, mols[:8], ref_kg).to_csv() == dump.to_csv()
    assert {e.neighbor_kind for e in dump.entries} == {"atom", "attribute"}
    assert dump.to_csv().splitlines()[0] == "mol_index,atom_index,neighbor_kind,neighbor_label,weight"


def test_single_neighbor_gets_full_weight(pretrained):
    from kcl.elementkg import ElementKG, Entity
    bare = ElementKG({"C": Entity("C", "element"), "O": Entity("O", "element")}, ())
    model = pretrained.model.drop_head()
    dump = dump_attention(model, [parse_smiles("CO")], bare)
    assert [(e.atom_index, e.neighbor_label, e.weight) for e in dump.entries] == \
        [(0, "O1", 1.0), (1, "C0", 1.0)]


# ---------------------------------------------------------------- ablation

def test_ablation_table_shape_and_roundtrip(mols, ref_kg, ref_emb):
    data = random_split(halogen_corpus(30, seed=8), 0)
    table = ablation_run(mols, [data], ref_kg, ref_emb, tiny(epochs=1, ft_epochs=2),
                         protocol="linear", columns=["w/oALL", "w/oInit", "w/oNS", "ALL",
                                                     "NoContrast"])
    text = table.to_csv()
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert body[0] == "Dataset,w/oALL,w/oInit,w/oNS,ALL,NoContrast"
    assert body[1].startswith(data.name + ",") and body[2].startswith("Ave(Cls),")
    rows = read_ablation_csv(text)
    assert {r["variant"] for r in rows} == set(table.columns)
    header = [ln for ln in text.splitlines() if ln.startswith("# config")]
    all_on = next(h for h in header if h.startswith("# config ALL:"))
    all_off = next(h for h in header if h.startswith("# config w/oALL:"))
    assert all_on.split(": ", 1)[1] != all_off.split(": ", 1)[1]
    assert "epoch=0" in next(h for h in header if h.startswith("# config NoContrast:"))
    assert isinstance(table, AblationTable)

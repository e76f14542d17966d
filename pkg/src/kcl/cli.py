"""Command-line entry point: ``kcl <command> [flags]``.

Exit codes: 0 success, 1 domain error, 2 usage error.  Every command takes
``--config`` (default ``$KCL_CONFIG``) and ``--seed``; the remaining config
keys are available as flags of the commands that use them and override the
file.  Logs go to standard error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from kcl.augment import augment, export_edges
from kcl.elementkg import (bundled_path, build_kg, kg_stats, read_binning, read_element_table,
                           read_kg_tsv, write_kg_tsv)
from kcl.errors import KclError
from kcl.kgembed import RotateConfig, load_embedding, rank_eval, save_embedding, train_rotate
from kcl.pipeline.config import FILE_KEYS, PretrainConfig, coerce, load_config, paper_scale
from kcl.smiles import parse_smiles

log = logging.getLogger("kcl")

STATS_LABELS = (("Elements", "elements"), ("Attributes", "attributes"),
                ("Entities", "entities"), ("Relation Types", "relation_types"),
                ("KG Triples", "triples"))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _config_flag(name: str) -> str:
    inverse = {v: k for k, v in FILE_KEYS.items()}
    return "--" + inverse.get(name, name)


def _add_config_flags(p, names):
    for name in names:
        p.add_argument(_config_flag(name), dest=f"cfg_{name}", metavar="VALUE", default=None)


def _resolve_config(args) -> PretrainConfig:
    cfg = load_config(args.config)
    if getattr(args, "paper_scale", False):
        cfg = paper_scale(cfg)
    overrides = {}
    for f in fields(PretrainConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = coerce(f.name, raw)
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = cfg.with_overrides(**overrides)
    cfg.validate()
    return cfg


def _load_kg(path):
    if path is None:
        from kcl.elementkg import load_reference_kg
        return load_reference_kg()
    return read_kg_tsv(path)


def _kg_embedding(args, kg, cfg):
    if getattr(args, "kg_emb", None):
        return load_embedding(args.kg_emb)
    log.info("training KG embedding (%d epochs)", cfg.kg_epochs)
    return train_rotate(kg, RotateConfig(epochs=cfg.kg_epochs, lr=cfg.kg_lr, seed=cfg.seed))


def _molecules(args):
    from kcl.pipeline.data import load_unlabeled
    if getattr(args, "smiles", None):
        return [parse_smiles(s) for s in args.smiles]
    return load_unlabeled(args.corpus or bundled_path("molecules.tsv"))


def _labeled(args, cfg):
    from kcl.pipeline.data import load_labeled
    from kcl.pipeline.split import split
    path = args.corpus or bundled_path("molecules.tsv")
    corpus = load_labeled(path, args.label_column, args.task, args.name or Path(path).stem)
    return split(corpus, args.split, cfg.seed)


# ---------------------------------------------------------------- commands

def cmd_build_kg(args, cfg):
    table = read_element_table(args.table or bundled_path("periodic_table.csv"))
    binning = read_binning(args.binning or bundled_path("binning.tsv"))
    kg = build_kg(table, binning)
    write_kg_tsv(kg, args.out)
    for label, key in STATS_LABELS:
        log.info("%s: %d", label, kg_stats(kg)[key])


def cmd_stats(args, cfg):
    stats = kg_stats(_load_kg(args.kg))
    width = max(len(label) for label, _ in STATS_LABELS)
    for label, key in STATS_LABELS:
        print(f"{label:<{width}}  {stats[key]}")


def cmd_embed_kg(args, cfg):
    kg = _load_kg(args.kg)
    emb = train_rotate(kg, RotateConfig(epochs=cfg.kg_epochs, lr=cfg.kg_lr, seed=cfg.seed))
    save_embedding(emb, args.out)
    log.info("filtered tail ranking: %s", rank_eval(emb, kg))


def cmd_augment(args, cfg):
    kg = _load_kg(args.kg)
    blocks = []
    for i, mol in enumerate(_molecules(args)):
        blocks.append(f"# molecule {i} {mol.source_text}\n" + export_edges(augment(mol, kg)))
    Path(args.out).write_text("".join(blocks), encoding="utf-8")


def cmd_pretrain(args, cfg):
    from kcl.pipeline.model import file_sha256
    from kcl.pipeline.pretrain import pretrain
    kg = _load_kg(args.kg)
    emb = _kg_embedding(args, kg, cfg)
    res = pretrain(_molecules(args), kg, emb, cfg)
    res.model.drop_head().save(args.out, {"pretrain_config": cfg.dumps(),
                                          "epoch_losses": res.epoch_losses})
    if args.losses:
        Path(args.losses).write_text("".join(f"{i + 1}\t{v!r}\n"
                                             for i, v in enumerate(res.epoch_losses)))
    log.info("checkpoint %s sha256 %s", args.out, file_sha256(args.out))


def cmd_finetune(args, cfg):
    from kcl.pipeline.finetune import finetune, metrics_csv
    from kcl.pipeline.model import KclModel
    model, _ = KclModel.load(args.checkpoint)
    kg = _load_kg(args.kg)
    res = finetune(model, _labeled(args, cfg), kg, args.protocol, cfg)
    Path(args.out).write_text(metrics_csv([res]), encoding="utf-8")
    log.info("%s %s test %s = %.4f", res.dataset, res.protocol, res.metric, res.test)


def cmd_split(args, cfg):
    corpus = _labeled(args, cfg)
    lines = [f"{s}\t{a}\n" for s, a in zip(corpus.smiles, corpus.assignment)]
    Path(args.out).write_text("".join(lines), encoding="utf-8")
    log.info("split sizes %s", corpus.split_sizes())


def cmd_explain(args, cfg):
    from kcl.pipeline.attention import dump_attention
    from kcl.pipeline.model import KclModel
    model, _ = KclModel.load(args.checkpoint)
    dump = dump_attention(model, _molecules(args), _load_kg(args.kg))
    Path(args.out).write_text(dump.to_csv(), encoding="utf-8")


def cmd_ablate(args, cfg):
    from kcl.pipeline.ablation import NO_CONTRAST, VARIANTS, ablation_run
    from kcl.pipeline.data import load_labeled, load_unlabeled
    from kcl.pipeline.split import split
    kg = _load_kg(args.kg)
    emb = _kg_embedding(args, kg, cfg)
    mols = load_unlabeled(args.corpus or bundled_path("molecules.tsv"))
    path = args.dataset or bundled_path("molecules.tsv")
    data = split(load_labeled(path, args.label_column, args.task, args.name or Path(path).stem),
                 args.split, cfg.seed)
    columns = list(VARIANTS) + ([NO_CONTRAST] if args.no_contrast else [])
    table = ablation_run(mols, [data], kg, emb, cfg, args.protocol, columns)
    Path(args.out).write_text(table.to_csv(), encoding="utf-8")


PRETRAIN_KEYS = ["epochs", "batch_size", "lr", "tau", "negative_mining", "knowledge_init",
                 "proj_hidden", "proj_dim", "gcn_layers", "gcn_hidden", "kmpnn_steps",
                 "kmpnn_hidden", "kmpnn_edge_hidden", "set2set_steps", "kg_epochs", "kg_lr"]
DOWNSTREAM_KEYS = ["downstream_encoder", "hidden_size", "ft_lr", "ft_epochs", "ft_batch_size",
                   "patience"]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kcl", description="Knowledge-enhanced molecular contrastive learning")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def command(name, func, help_text, keys=()):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key = value config file (default $KCL_CONFIG)")
        p.add_argument("--seed", type=int, default=None)
        _add_config_flags(p, keys)
        return p

    def kg_flag(p):
        p.add_argument("--kg", help="triple TSV (default: bundled reference KG)")

    def mol_flags(p):
        p.add_argument("--corpus", help="SMILES file (default: bundled corpus)")
        p.add_argument("--smiles", nargs="+", help="SMILES given inline")

    def labeled_flags(p, corpus_flag="--corpus"):
        p.add_argument(corpus_flag, help="SMILES<TAB>label file (default: bundled corpus)")
        p.add_argument("--label-column", type=int, default=0)
        p.add_argument("--task", choices=("classification", "regression"),
                       default="classification")
        p.add_argument("--name", help="dataset name in outputs")
        p.add_argument("--split", choices=("random", "scaffold"), default="random")

    p = command("build-kg", cmd_build_kg, "build the element KG from a periodic table CSV")
    p.add_argument("--table")
    p.add_argument("--binning")
    p.add_argument("--out", required=True)

    p = command("stats", cmd_stats, "print KG statistics")
    kg_flag(p)

    p = command("embed-kg", cmd_embed_kg, "train rotation embeddings of the KG",
                ["kg_epochs", "kg_lr"])
    kg_flag(p)
    p.add_argument("--out", required=True)

    p = command("augment", cmd_augment, "write augmented-graph edge lists")
    kg_flag(p)
    mol_flags(p)
    p.add_argument("--out", required=True)

    p = command("pretrain", cmd_pretrain, "contrastive pretraining", PRETRAIN_KEYS)
    kg_flag(p)
    mol_flags(p)
    p.add_argument("--kg-emb", help="embedding file from embed-kg (default: train one)")
    p.add_argument("--paper-scale", action="store_true",
                   help="batch 256, 20 epochs, tau 0.1, lr 1e-4")
    p.add_argument("--losses", help="write per-epoch losses here")
    p.add_argument("--out", required=True)

    p = command("finetune", cmd_finetune, "evaluate a checkpoint downstream", DOWNSTREAM_KEYS)
    kg_flag(p)
    labeled_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=("fine_tune", "linear"), default="fine_tune")
    p.add_argument("--out", required=True)

    p = command("split", cmd_split, "assign train/valid/test")
    labeled_flags(p)
    p.add_argument("--out", required=True)

    p = command("explain", cmd_explain, "dump final-round KMPNN attention")
    kg_flag(p)
    mol_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = command("ablate", cmd_ablate, "run the ablation matrix",
                PRETRAIN_KEYS + DOWNSTREAM_KEYS)
    kg_flag(p)
    p.add_argument("--corpus", help="unlabeled pretraining SMILES (default: bundled corpus)")
    labeled_flags(p, "--dataset")
    p.add_argument("--kg-emb")
    p.add_argument("--protocol", choices=("fine_tune", "linear"), default="fine_tune")
    p.add_argument("--no-contrast", action="store_true", help="add the NoContrast column")
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--out", required=True)
    return parser


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve_config(args)
        args.func(args, cfg)
    except (KclError, OSError) as exc:
        print(f"kcl {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

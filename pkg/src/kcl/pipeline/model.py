"""The pretraining model: feature tables, both encoders and the projection head."""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from kcl import numcore as nc
from kcl.augment import AugmentedGraph, augment
from kcl.contrast import ProjectionHead, project
from kcl.elementkg import ElementKG
from kcl.encoders import (EncoderConfig, FeatureTables, GcnParams, KmpnnParams, gcn_forward,
                          kmpnn_forward, pack_augmented, pack_molecules)
from kcl.errors import ConfigInvalid
from kcl.kgembed import KgEmbedding
from kcl.numcore import CheckpointError, ParameterSet
from kcl.pipeline.config import PretrainConfig
from kcl.smiles import AtomVocabulary, MolecularGraph

CHECKPOINT_FORMAT = "kcl-checkpoint"


class KclModel:
    def __init__(self, params: ParameterSet, vocab: AtomVocabulary, encoder: EncoderConfig,
                 attr_names, rel_names, head: bool = True):
        self.params = params
        self.vocab = vocab
        self.encoder = encoder
        self.tables = FeatureTables(params, vocab, attr_names, rel_names)
        self.kmpnn = KmpnnParams(params, encoder)
        self.gcn = GcnParams(params, encoder)
        self.head = ProjectionHead(params) if head else None

    @classmethod
    def create(cls, vocab: AtomVocabulary, kg: ElementKG, kg_emb: KgEmbedding | None,
               config: PretrainConfig) -> "KclModel":
        enc = config.encoder_config()
        if 2 * enc.gcn_hidden != enc.embed_dim:
            raise ConfigInvalid("GCN_node_hidden must equal KMPNN_node_hidden so both "
                                "encoders share one projection head")
        rng = np.random.default_rng(config.seed)
        params = ParameterSet()
        if kg_emb is None:
            names = (kg.attributes + kg.elements, sorted(kg.relation_types))
        else:
            names = (kg_emb.entity_names, kg_emb.relation_names)
        tables = FeatureTables.create(params, vocab, enc, rng, kg_emb, *names)
        KmpnnParams.create(params, enc, rng)
        GcnParams.create(params, enc, rng)
        ProjectionHead.create(params, rng, enc.embed_dim, config.proj_hidden, config.proj_dim)
        return cls(params, vocab, enc, tables.attr_names, tables.rel_names)

    # ------------------------------------------------------------ encoding

    def cover(self, mols: list[MolecularGraph]):
        """Give every unseen atom type of ``mols`` a (randomly initialised) row."""
        for m in mols:
            for a in m.atoms:
                if a.key not in self.vocab:
                    self.vocab.add(a.key)

    def encode_gcn(self, mols: list[MolecularGraph]):
        return gcn_forward(pack_molecules(mols, self.tables), self.tables, self.gcn)

    def encode_kmpnn(self, augs: list[AugmentedGraph], trace=None):
        return kmpnn_forward(pack_augmented(augs, self.tables), self.tables, self.kmpnn, trace)

    def project(self, h):
        return project(self.head, h)

    def embed(self, mols, kg: ElementKG, encoder: str = "kmpnn", augs=None):
        """Graph embeddings used downstream (no gradient bookkeeping required)."""
        if encoder == "gcn":
            return self.encode_gcn(mols)
        if augs is None:
            augs = [augment(m, kg) for m in mols]
        return self.encode_kmpnn(augs)

    # ------------------------------------------------------------ persistence

    def drop_head(self) -> "KclModel":
        """A copy without the ``head.*`` parameters."""
        keep = ParameterSet()
        for k, t in self.params.items():
            if not k.startswith("head."):
                keep.add(k, t.data.copy(), self.params.trainable[k])
        return KclModel(keep, AtomVocabulary.from_json(self.vocab.to_json()), self.encoder,
                        self.tables.attr_names, self.tables.rel_names, head=False)

    def copy(self) -> "KclModel":
        ps = ParameterSet()
        for k, t in self.params.items():
            ps.add(k, t.data.copy(), self.params.trainable[k])
        return KclModel(ps, AtomVocabulary.from_json(self.vocab.to_json()), self.encoder,
                        self.tables.attr_names, self.tables.rel_names,
                        head=self.head is not None)

    def meta(self, extra: dict | None = None) -> dict:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "encoder": self.encoder.to_dict(),
            "vocab": self.vocab.to_json(),
            "attr_names": self.tables.attr_names,
            "rel_names": self.tables.rel_names,
            "has_head": self.head is not None,
        }
        meta.update(extra or {})
        return meta

    def save(self, path, extra: dict | None = None):
        nc.save_parameters(path, self.params, self.meta(extra))

    @classmethod
    def load(cls, path) -> tuple["KclModel", dict]:
        params, meta = nc.load_parameters(path)
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a kcl checkpoint")
        model = cls(params, AtomVocabulary.from_json(meta["vocab"]),
                    EncoderConfig(**meta["encoder"]), meta["attr_names"], meta["rel_names"],
                    head=meta["has_head"])
        return model, meta


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

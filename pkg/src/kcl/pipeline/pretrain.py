"""Contrastive pretraining: GCN on originals vs. KMPNN on knowledge-augmented views."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from kcl import numcore as nc
from kcl.augment import augment
from kcl.contrast import (build_hard_batches, mean_intra_batch_similarity, morgan_fingerprint,
                          nt_xent, random_batches, tanimoto_matrix)
from kcl.elementkg import ElementKG
from kcl.errors import KclError
from kcl.kgembed import KgEmbedding
from kcl.pipeline.config import PretrainConfig
from kcl.pipeline.data import CorpusTooSmall
from kcl.pipeline.model import KclModel
from kcl.smiles import AtomVocabulary, MolecularGraph

log = logging.getLogger(__name__)


@dataclass
class PretrainResult:
    model: KclModel                      # head included; use ``model.drop_head()`` to export
    epoch_losses: list[float] = field(default_factory=list)
    batch_similarity: list[float] = field(default_factory=list)  # mean intra-batch Tanimoto


def epoch_batches(n: int, config: PretrainConfig, epoch: int, sim: np.ndarray | None):
    seed = config.seed + 1000 * (epoch + 1)
    size = min(config.batch_size, n)
    if config.negative_mining:
        return build_hard_batches([None] * n, size, seed, similarity=sim)
    return random_batches(n, size, seed)


def similarity_matrix(mols: list[MolecularGraph]) -> np.ndarray:
    return tanimoto_matrix([morgan_fingerprint(m) for m in mols])


def pretrain(corpus: list[MolecularGraph], kg: ElementKG, kg_emb: KgEmbedding | None,
             config: PretrainConfig, vocab: AtomVocabulary | None = None) -> PretrainResult:
    """Train both encoders and the projection head with NT-Xent.

    Each epoch re-partitions the corpus (similarity batches when negative
    mining is on, seeded random batches otherwise).  Batches of one molecule
    carry no negatives and are skipped.
    """
    if len(corpus) < 2:
        raise CorpusTooSmall("pretraining needs at least 2 molecules")
    config.validate()
    if kg_emb is not None:
        missing = set(kg.attributes) - set(kg_emb.entity_names)
        if missing:
            raise KclError(f"KG embedding lacks {len(missing)} attribute(s) of the KG")
    vocab = vocab or AtomVocabulary.from_graphs(corpus)
    model = KclModel.create(vocab, kg, kg_emb, config)
    model.cover(corpus)
    augs = [augment(m, kg) for m in corpus]
    sim = similarity_matrix(corpus)

    result = PretrainResult(model)
    for epoch in range(config.epochs):
        batches = epoch_batches(len(corpus), config, epoch, sim)
        result.batch_similarity.append(mean_intra_batch_similarity(batches, sim))
        losses, weights = [], []
        for batch in batches:
            if len(batch) < 2:
                continue
            idx = list(batch.indices)
            z = model.project(model.encode_gcn([corpus[i] for i in idx]))
            z_aug = model.project(model.encode_kmpnn([augs[i] for i in idx]))
            loss = nt_xent(z, z_aug, config.tau)
            loss.backward()
            nc.adam_step(model.params, lr=config.lr)
            losses.append(loss.item())
            weights.append(len(idx))
        mean_loss = float(np.average(losses, weights=weights))
        result.epoch_losses.append(mean_loss)
        log.info("epoch %d/%d  loss %.6f  batch tanimoto %.4f", epoch + 1, config.epochs,
                 mean_loss, result.batch_similarity[-1])
    return result

"""Ablation matrix: knowledge initialisation and hard negatives switched on and off."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from kcl.elementkg import ElementKG
from kcl.errors import KclError
from kcl.kgembed import KgEmbedding
from kcl.pipeline.config import PretrainConfig
from kcl.pipeline.data import LabeledCorpus
from kcl.pipeline.finetune import finetune
from kcl.pipeline.pretrain import pretrain
from kcl.smiles import AtomVocabulary, MolecularGraph

log = logging.getLogger(__name__)

# column order of the published ablation tables
VARIANTS = {
    "w/oALL": {"knowledge_init": False, "negative_mining": False},
    "w/oInit": {"knowledge_init": False},
    "w/oNS": {"negative_mining": False},
    "ALL": {},
}
NO_CONTRAST = "NoContrast"


@dataclass
class AblationTable:
    columns: list[str]
    metrics: dict[str, str] = field(default_factory=dict)             # dataset -> metric
    values: dict[str, dict[str, float]] = field(default_factory=dict)  # dataset -> column -> v
    configs: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    batch_similarity: dict[str, float] = field(default_factory=dict)

    def averages(self) -> dict[str, dict[str, float]]:
        out = {}
        for label, metric in (("Ave(Cls)", "roc_auc"), ("Ave(Reg)", "rmse")):
            names = [d for d, m in self.metrics.items() if m == metric]
            if names:
                out[label] = {c: float(np.mean([self.values[d][c] for d in names]))
                              for c in self.columns}
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        for col in self.columns:
            pairs = " ".join(f"{k}={v}" for k, v in self.configs.get(col, []))
            buf.write(f"# config {col}: {pairs}\n")
        for col, s in self.batch_similarity.items():
            buf.write(f"# batch_tanimoto {col}: {s!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Dataset", *self.columns])
        for d in self.values:
            w.writerow([d, *(repr(self.values[d][c]) for c in self.columns)])
        for label, row in self.averages().items():
            w.writerow([label, *(repr(row[c]) for c in self.columns)])
        return buf.getvalue()


def read_ablation_csv(text: str) -> list[dict]:
    """Rows in the metrics schema: ``dataset, protocol (column), metric, value``."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if not header or header[0] != "Dataset":
        raise KclError("not an ablation table")
    out = []
    for row in reader:
        for col, val in zip(header[1:], row[1:]):
            out.append({"dataset": row[0], "variant": col, "value": float(val)})
    return out


def variant_config(base: PretrainConfig, column: str) -> PretrainConfig:
    if column == NO_CONTRAST:
        return base.with_overrides(epochs=0)
    return base.with_overrides(**{"knowledge_init": True, "negative_mining": True,
                                  **VARIANTS[column]})


def ablation_run(pretrain_mols: list[MolecularGraph], datasets: list[LabeledCorpus],
                 kg: ElementKG, kg_emb: KgEmbedding, base: PretrainConfig,
                 protocol: str = "fine_tune", columns: list[str] | None = None) -> AblationTable:
    """Pretrain once per variant, then evaluate every dataset with ``protocol``.

    ``NoContrast`` skips pretraining, so its encoders only ever see the
    downstream loss.
    """
    columns = list(columns or VARIANTS)
    for c in columns:
        if c not in VARIANTS and c != NO_CONTRAST:
            raise KclError(f"unknown ablation column {c!r}")
    vocab = AtomVocabulary.from_graphs(pretrain_mols + [m for d in datasets for m in d.molecules])
    table = AblationTable(columns)
    for col in columns:
        cfg = variant_config(base, col)
        log.info("ablation column %s", col)
        res = pretrain(pretrain_mols, kg, kg_emb, cfg,
                       vocab=AtomVocabulary.from_json(vocab.to_json()))
        table.configs[col] = cfg.to_pairs()
        if res.batch_similarity:
            table.batch_similarity[col] = float(np.mean(res.batch_similarity))
        encoder = res.model.drop_head()
        for data in datasets:
            r = finetune(encoder, data, kg, protocol, cfg)
            table.metrics[data.name] = r.metric
            table.values.setdefault(data.name, {})[col] = float(r.test)
    return table

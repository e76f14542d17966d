"""Pretraining, downstream evaluation, splits, metrics and attention extraction."""
from kcl.pipeline.ablation import AblationTable, ablation_run, read_ablation_csv  # noqa: F401
from kcl.pipeline.attention import AttentionDump, AttentionEntry, dump_attention  # noqa: F401
from kcl.pipeline.config import (PretrainConfig, load_config, paper_scale,  # noqa: F401
                                 parse_config)
from kcl.pipeline.data import (CorpusTooSmall, EmptySplit, LabeledCorpus,  # noqa: F401
                               bundled_corpus, halogen_corpus, synthetic_molecules)
from kcl.pipeline.finetune import (FinetuneResult, ProtocolUnknown, finetune,  # noqa: F401
                                   metrics_csv, read_metrics_csv)
from kcl.pipeline.metrics import SingleClass, rmse, roc_auc  # noqa: F401
from kcl.pipeline.model import KclModel  # noqa: F401
from kcl.pipeline.pretrain import PretrainResult, pretrain  # noqa: F401
from kcl.pipeline.split import random_split, scaffold_key, scaffold_split, split  # noqa: F401

"""ROC-AUC and RMSE."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from kcl.errors import KclError


class SingleClass(KclError):
    pass


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape or scores.size == 0:
        raise KclError("scores and labels must be nonempty and equally long")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both classes present")
    ranks = rankdata(scores)  # average ranks handle ties
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def rmse(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if preds.shape != targets.shape or preds.size == 0:
        raise KclError("preds and targets must be nonempty and equally long")
    return float(np.sqrt(np.mean((preds - targets) ** 2)))

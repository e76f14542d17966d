"""Downstream evaluation: fine-tune and linear protocols with early stopping."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from kcl import numcore as nc
from kcl.augment import augment
from kcl.elementkg import ElementKG
from kcl.errors import KclError
from kcl.numcore import ParameterSet
from kcl.pipeline.config import PretrainConfig
from kcl.pipeline.data import EmptySplit, LabeledCorpus
from kcl.pipeline.metrics import SingleClass, rmse, roc_auc
from kcl.pipeline.model import KclModel
from kcl.pipeline.split import random_split

log = logging.getLogger(__name__)

PROTOCOLS = ("fine_tune", "linear")
METRICS_HEADER = ("dataset", "protocol", "metric", "value", "seed")


class ProtocolUnknown(KclError):
    pass


@dataclass
class FinetuneResult:
    dataset: str
    protocol: str
    metric: str             # "roc_auc" | "rmse"
    test: float
    valid: float
    seed: int
    epochs_run: int
    train_losses: list[float] = field(default_factory=list)
    model: KclModel | None = None

    def rows(self) -> list[tuple]:
        return [(self.dataset, self.protocol, self.metric, self.test, self.seed)]


def metrics_csv(results: list[FinetuneResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in results:
        for row in r.rows():
            w.writerow(row[:3] + (repr(float(row[3])),) + row[4:])
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        r["value"] = float(r["value"])
        r["seed"] = int(r["seed"])
    return rows


# ---------------------------------------------------------------- predictor heads

def _glorot(rng, a, b):
    lim = np.sqrt(6.0 / (a + b))
    return rng.uniform(-lim, lim, (a, b))


def add_predictor(params: ParameterSet, rng, in_dim: int, protocol: str, hidden: int,
                  out_bias: float = 0.0):
    if protocol == "linear":
        params.add("pred.W", _glorot(rng, in_dim, 1))
        params.add("pred.b", np.full(1, out_bias))
    else:
        params.add("pred.W1", _glorot(rng, in_dim, hidden))
        params.add("pred.b1", np.zeros(hidden))
        params.add("pred.W2", _glorot(rng, hidden, 1))
        params.add("pred.b2", np.full(1, out_bias))


def predict(params: ParameterSet, h, protocol: str):
    if protocol == "linear":
        out = nc.add(nc.matmul(h, params["pred.W"]), params["pred.b"])
    else:
        hid = nc.relu(nc.add(nc.matmul(h, params["pred.W1"]), params["pred.b1"]))
        out = nc.add(nc.matmul(hid, params["pred.W2"]), params["pred.b2"])
    return nc.reshape(out, (-1,))


def bce_with_logits(logits, y: np.ndarray):
    """Mean of ``softplus(x) - y x``, with softplus as a two-term logsumexp."""
    zeros = nc.Tensor(np.zeros(logits.shape[0]))
    softplus = nc.logsumexp(nc.stack([zeros, logits], axis=1), axis=1)
    return nc.mean(nc.sub(softplus, nc.mul(logits, y)))


def mse(pred, y: np.ndarray):
    return nc.mean(nc.square(nc.sub(pred, y)))


# ---------------------------------------------------------------- training

def _score(task: str, preds: np.ndarray, y: np.ndarray, loss: float) -> tuple[float, float]:
    """(metric value, selection key where larger is better)."""
    if task == "classification":
        try:
            auc = roc_auc(preds, y)
            return auc, auc
        except SingleClass:
            return float("nan"), -loss
    value = rmse(preds, y)
    return value, -value


def finetune(model: KclModel, corpus: LabeledCorpus, kg: ElementKG, protocol: str,
             config: PretrainConfig) -> FinetuneResult:
    """Train a predictor on ``corpus`` and report the test metric.

    ``fine_tune`` trains the encoder together with a one-hidden-layer MLP;
    ``linear`` keeps the encoder fixed and trains one affine layer on its
    embeddings.  The caller's model is never modified.  Model selection uses
    the validation metric with ``config.patience`` epochs of patience.
    """
    if protocol not in PROTOCOLS:
        raise ProtocolUnknown(f"protocol must be one of {PROTOCOLS}, not {protocol!r}")
    if corpus.assignment is None:
        corpus = random_split(corpus, config.seed)
    idx = {s: corpus.indices(s) for s in ("train", "valid", "test")}
    for s, ix in idx.items():
        if len(ix) == 0:
            raise EmptySplit(f"the {s} split is empty")

    work = model.copy()
    work.cover(corpus.molecules)
    encoder = config.downstream_encoder
    mols = corpus.molecules
    augs = [augment(m, kg) for m in mols] if encoder == "kmpnn" else None
    y = corpus.labels
    task = corpus.task

    # regression targets are standardised on the training split
    mu, sd = 0.0, 1.0
    if task == "regression":
        mu = float(y[idx["train"]].mean())
        sd = float(y[idx["train"]].std()) or 1.0
    target = (y - mu) / sd
    prior = 0.0
    if task == "classification":
        p = float(np.clip(y[idx["train"]].mean(), 1e-3, 1 - 1e-3))
        prior = float(np.log(p / (1 - p)))

    rng = np.random.default_rng(config.seed)
    pred_params = ParameterSet()
    in_dim = work.encoder.embed_dim if encoder == "kmpnn" else 2 * work.encoder.gcn_hidden
    add_predictor(pred_params, rng, in_dim, protocol, config.hidden_size, prior)

    if protocol == "linear":
        with nc.no_grad():
            feats = _embed_all(work, mols, augs, kg, encoder).data
        trainable = pred_params

        def embed(ix):
            return nc.Tensor(feats[ix])
    else:
        trainable = ParameterSet()
        for k, t in work.params.items():
            if not k.startswith("head."):
                trainable.params[k] = t
                trainable.trainable[k] = work.params.trainable[k]
                trainable.m[k] = np.zeros_like(t.data)
                trainable.v[k] = np.zeros_like(t.data)
        for k, t in pred_params.items():
            trainable.params[k] = t
            trainable.trainable[k] = True
            trainable.m[k] = pred_params.m[k]
            trainable.v[k] = pred_params.v[k]

        def embed(ix):
            return _embed_subset(work, mols, augs, kg, encoder, ix)

    def evaluate(ix):
        with nc.no_grad():
            out = predict(pred_params, embed(ix), protocol)
            t = target[ix]
            loss = (bce_with_logits(out, t) if task == "classification" else mse(out, t)).item()
        preds = out.data if task == "classification" else out.data * sd + mu
        return preds, loss

    loss_fn = bce_with_logits if task == "classification" else mse
    best_key, best_valid, best_state, bad, epochs_run = -np.inf, float("nan"), None, 0, 0
    losses = []
    train_ix = idx["train"]
    for epoch in range(config.ft_epochs):
        order = np.random.default_rng(config.seed + 7919 * (epoch + 1)).permutation(train_ix)
        epoch_loss = []
        for s in range(0, len(order), config.ft_batch_size):
            b = np.sort(order[s:s + config.ft_batch_size])
            loss = loss_fn(predict(pred_params, embed(b), protocol), target[b])
            loss.backward()
            nc.adam_step(trainable, lr=config.ft_lr)
            epoch_loss.append(loss.item())
        losses.append(float(np.mean(epoch_loss)))
        epochs_run = epoch + 1
        preds, vloss = evaluate(idx["valid"])
        value, key = _score(task, preds, y[idx["valid"]], vloss)
        if key > best_key:
            best_key, best_valid, bad = key, value, 0
            best_state = {k: t.data.copy() for k, t in trainable.items()}
        else:
            bad += 1
            if bad >= config.patience:
                log.info("early stop after epoch %d", epochs_run)
                break
    if best_state is not None:
        trainable.load_values(best_state)

    preds, tloss = evaluate(idx["test"])
    test_value, _ = _score(task, preds, y[idx["test"]], tloss)
    metric = "roc_auc" if task == "classification" else "rmse"
    return FinetuneResult(corpus.name, protocol, metric, test_value, best_valid, config.seed,
                          epochs_run, losses, work if protocol == "fine_tune" else None)


def _embed_subset(model, mols, augs, kg, encoder, ix):
    if encoder == "gcn":
        return model.encode_gcn([mols[i] for i in ix])
    return model.encode_kmpnn([augs[i] for i in ix])


def _embed_all(model, mols, augs, kg, encoder, chunk: int = 64):
    parts = [_embed_subset(model, mols, augs, kg, encoder, np.arange(s, min(s + chunk, len(mols))))
             for s in range(0, len(mols), chunk)]
    return nc.concat(parts, axis=0)


def embeddings(model: KclModel, mols, kg: ElementKG, encoder: str = "kmpnn") -> np.ndarray:
    """Frozen graph embeddings of ``mols`` as a plain array."""
    work = model.copy()
    work.cover(mols)
    augs = [augment(m, kg) for m in mols] if encoder == "kmpnn" else None
    with nc.no_grad():
        return _embed_all(work, mols, augs, kg, encoder).data

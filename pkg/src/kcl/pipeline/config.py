"""Training configuration and the ``key = value`` config-file format.

File keys follow the hyperparameter names used for the original model
(``epoch``, ``batch_size``, ``GCN_layers``, ``KMPNN_step`` ...).  Lines are
``key = value``; ``#`` starts a comment.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from kcl.encoders import EncoderConfig
from kcl.errors import ConfigInvalid

CONFIG_ENV = "KCL_CONFIG"


@dataclass
class PretrainConfig:
    # contrastive pretraining
    epochs: int = 20
    batch_size: int = 32
    lr: float = 5e-4
    tau: float = 0.1
    seed: int = 0
    negative_mining: bool = True
    knowledge_init: bool = True
    proj_hidden: int = 128
    proj_dim: int = 64
    # encoders
    gcn_layers: int = 2
    gcn_hidden: int = 64
    kmpnn_steps: int = 6
    kmpnn_hidden: int = 64
    kmpnn_edge_hidden: int = 64
    set2set_steps: int = 3
    # element KG embedding
    kg_epochs: int = 200
    kg_lr: float = 0.01
    # downstream
    downstream_encoder: str = "kmpnn"
    hidden_size: int = 64
    ft_lr: float = 1e-3
    ft_epochs: int = 100
    ft_batch_size: int = 32
    patience: int = 20

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.tau > 0:
            raise ConfigInvalid(f"tau must be positive, got {self.tau}")
        for name in ("epochs", "kg_epochs", "ft_epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be >= 0")
        for name in ("batch_size", "ft_batch_size", "gcn_layers", "gcn_hidden", "kmpnn_steps",
                     "kmpnn_hidden", "kmpnn_edge_hidden", "set2set_steps", "proj_hidden",
                     "proj_dim", "hidden_size"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")
        if self.lr <= 0 or self.ft_lr <= 0 or self.kg_lr <= 0:
            raise ConfigInvalid("learning rates must be positive")
        if self.downstream_encoder not in ("kmpnn", "gcn"):
            raise ConfigInvalid(f"downstream_encoder must be kmpnn or gcn, "
                                f"not {self.downstream_encoder!r}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(hidden=self.kmpnn_hidden, edge_hidden=self.kmpnn_edge_hidden,
                             kmpnn_steps=self.kmpnn_steps, set2set_steps=self.set2set_steps,
                             gcn_layers=self.gcn_layers, gcn_hidden=self.gcn_hidden,
                             random_init=not self.knowledge_init)

    def with_overrides(self, **kw) -> "PretrainConfig":
        return replace(self, **kw)

    def to_pairs(self) -> list[tuple[str, str]]:
        """File-key / value pairs in declaration order."""
        inverse = {v: k for k, v in FILE_KEYS.items()}
        return [(inverse.get(f.name, f.name), _format(getattr(self, f.name))) for f in fields(self)]

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_pairs())


def paper_scale(config: PretrainConfig | None = None) -> PretrainConfig:
    """Full-scale pretraining: batch 256, 20 epochs, tau 0.1, lr 1e-4."""
    return replace(config or PretrainConfig(), batch_size=256, epochs=20, tau=0.1, lr=1e-4)


# file key -> field name; field names are accepted as keys too
FILE_KEYS = {
    "epoch": "epochs",
    "GCN_layers": "gcn_layers",
    "GCN_node_hidden": "gcn_hidden",
    "KMPNN_step": "kmpnn_steps",
    "KMPNN_node_hidden": "kmpnn_hidden",
    "KMPNN_edge_hidden": "kmpnn_edge_hidden",
    "set2set_step": "set2set_steps",
}

_FIELD_TYPES = {f.name: f.type for f in fields(PretrainConfig)}


def field_for_key(key: str) -> str:
    name = FILE_KEYS.get(key, key)
    if name not in _FIELD_TYPES:
        raise ConfigInvalid(f"unknown config key {key!r}")
    return name


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def coerce(name: str, text: str):
    kind = _FIELD_TYPES[name]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigInvalid(f"bad value {text!r} for {name} ({kind})") from None
    return text


def parse_config(text: str, base: PretrainConfig | None = None) -> PretrainConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        name = field_for_key(key)
        values[name] = coerce(name, val)
    return replace(base or PretrainConfig(), **values)


def load_config(path=None) -> PretrainConfig:
    """Read ``path``; without one, fall back to ``$KCL_CONFIG`` or the defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PretrainConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    return parse_config(text)

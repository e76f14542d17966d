from __future__ import annotations

import numpy as np

from kcl.errors import KclError
from kcl.numcore.tensor import Tensor


class MissingGradient(KclError):
    pass


class ParameterSet:
    """Named trainable tensors plus Adam moment buffers.

    Parameters added with ``trainable=False`` are carried along (and
    checkpointed) but never receive gradients or updates.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.trainable: dict[str, bool] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(np.array(value, dtype=np.float64))
        t.requires_grad = trainable
        self.params[name] = t
        self.trainable[name] = trainable
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def set_trainable(self, name: str, flag: bool):
        self.trainable[name] = flag
        self.params[name].requires_grad = flag

    def freeze(self, prefix: str = ""):
        for name in self.params:
            if name.startswith(prefix):
                self.set_trainable(name, False)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for k, arr in values.items():
            if k in self.params:
                if self.params[k].shape != np.shape(arr):
                    raise KclError(f"{k}: checkpoint shape {np.shape(arr)} "
                                   f"!= parameter shape {self.params[k].shape}")
                self.params[k].data = np.array(arr, dtype=np.float64)

    def subset(self, prefix: str) -> "ParameterSet":
        """A view sharing tensors (not optimizer state) for names under ``prefix``."""
        out = ParameterSet()
        for k, t in self.params.items():
            if k.startswith(prefix):
                out.params[k] = t
                out.trainable[k] = self.trainable[k]
                out.m[k] = np.zeros_like(t.data)
                out.v[k] = np.zeros_like(t.data)
        return out


def adam_step(params: ParameterSet, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update over trainable parameters, then zero grads.

    Trainable parameters the loss never touched (``grad is None``) are skipped;
    if no trainable parameter has a gradient at all, that is an error.
    """
    names = [k for k in params if params.trainable[k]]
    if not any(params[k].grad is not None for k in names):
        raise MissingGradient("no trainable parameter has a gradient; call backward() first")
    b1, b2 = betas
    params.step += 1
    c1 = 1.0 - b1 ** params.step
    c2 = 1.0 - b2 ** params.step
    for k in names:
        t = params[k]
        if t.grad is None:
            continue
        g = t.grad
        params.m[k] = b1 * params.m[k] + (1.0 - b1) * g
        params.v[k] = b2 * params.v[k] + (1.0 - b2) * g * g
        t.data = t.data - lr * (params.m[k] / c1) / (np.sqrt(params.v[k] / c2) + eps)
    params.zero_grad()

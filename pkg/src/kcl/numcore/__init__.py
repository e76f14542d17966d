"""Minimal float64 autodiff: tensors, reverse-mode gradients, Adam, checkpoints."""
from kcl.numcore.tensor import (  # noqa: F401
    DetachedLoss, NonScalarLoss, RecordReleased, Tensor, abs, add, as_tensor, concat,
    cos, cosine_similarity, div, exp, grad_enabled, hadamard, leaky_relu, log,
    logsumexp, matmul, max, mean, mul, neg, negate, no_grad, norm, normalize_rows,
    relu, reshape, segment_softmax, segment_sum, sigmoid, sin, softmax, softmax_over,
    sqrt, square, stack, sub, sum, take, tanh, transpose,
)
from kcl.numcore.optim import MissingGradient, ParameterSet, adam_step  # noqa: F401
from kcl.numcore.io import (  # noqa: F401
    CheckpointError, dumps_tensors, load_parameters, load_tensors, loads_tensors,
    save_parameters, save_tensors,
)

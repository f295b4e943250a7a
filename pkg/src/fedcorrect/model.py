"""Word-classifier model core: exact gradients, activation recomputation, and
analytic peak-memory accounting.

Each utterance is a (T, feature_dim) block of per-word feature vectors; the
model classifies every position independently through the hidden ReLU stack and
the decoder projection.  The loss is the mean softmax cross-entropy over
positions.  All arithmetic runs in float64 and gradients are stored as float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, ShapeError
from .params import ModelArch, ParameterSet, PRECISION_BYTES

_ACTIVATION_BYTES = 4  # activations stay f32 regardless of the payload policy


@dataclass
class ForwardTrace:
    """Everything backward() needs; `preacts` is None under recomputation."""

    features: np.ndarray              # (T, F) float64
    hiddens: list[np.ndarray]         # layer-boundary outputs, post-ReLU
    preacts: list[np.ndarray] | None  # pre-ReLU buffers, absent when checkpointing
    logits: np.ndarray                # (T, vocab)
    checkpointing: bool


def _dense_stack(params: ParameterSet) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Widen variables to float64 matrices/rows in layer order."""
    weights, biases = [], []
    by_layer: dict[int, dict[str, np.ndarray]] = {}
    for v in params:
        by_layer.setdefault(v.layer_index, {})[v.kind] = v.as_matrix().astype(np.float64)
    for i in sorted(by_layer):
        weights.append(np.ascontiguousarray(by_layer[i]["matrix"]))
        biases.append(np.ascontiguousarray(by_layer[i]["bias"]))
    return weights, biases


def _check_features(params: ParameterSet, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be 2-d (positions, feature_dim), got ndim={x.ndim}")
    feature_dim = params.get("layer0/matrix").shape[0]
    if x.shape[1] != feature_dim:
        raise ShapeError(f"feature dim {x.shape[1]} != model feature dim {feature_dim}")
    return np.ascontiguousarray(x)


def forward(params: ParameterSet, features: np.ndarray, checkpointing: bool = False) -> ForwardTrace:
    """Forward pass over one utterance.  Logits are bit-identical with
    checkpointing on or off; only the retained buffers differ."""
    x = _check_features(params, features)
    weights, biases = _dense_stack(params)
    preacts, hiddens, out = kernels.forward(x, weights, biases, not checkpointing)
    return ForwardTrace(features=x, hiddens=hiddens, preacts=preacts,
                        logits=out, checkpointing=checkpointing)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mean_xent(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy over positions."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


def _check_labels(labels, n_positions: int, vocab: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1 or len(y) != n_positions:
        raise DataError(f"labels length {y.shape} != sequence length {n_positions}")
    if len(y) and (y.min() < 0 or y.max() >= vocab):
        raise DataError(f"label id outside [0, {vocab})")
    return y


def backward(params: ParameterSet, trace: ForwardTrace, labels) -> dict[str, np.ndarray]:
    """Gradient of the mean cross-entropy for every trainable variable.

    Frozen variables are absent from the returned map.  Backpropagation stops
    below the lowest layer holding a trainable variable.
    """
    vocab = trace.logits.shape[1]
    y = _check_labels(labels, trace.logits.shape[0], vocab)

    trainable_layers = sorted({v.layer_index for v in params if v.trainable})
    if not trainable_layers:
        return {}
    start_layer = trainable_layers[0]

    t = trace.logits.shape[0]
    dlogits = softmax(trace.logits)
    dlogits[np.arange(t), y] -= 1.0
    dlogits /= t

    weights, biases = _dense_stack(params)
    dws, dbs = kernels.backward(trace.features, weights, biases, trace.hiddens,
                                trace.preacts, dlogits, start_layer)

    grads: dict[str, np.ndarray] = {}
    for v in params:
        if not v.trainable:
            continue
        g = dws[v.layer_index] if v.kind == "matrix" else dbs[v.layer_index]
        grads[v.name] = np.ascontiguousarray(g, dtype=np.float64).ravel().astype(np.float32)
    return grads


def example_loss(params: ParameterSet, features, labels) -> float:
    trace = forward(params, features, checkpointing=True)
    y = _check_labels(labels, trace.logits.shape[0], trace.logits.shape[1])
    return mean_xent(trace.logits, y)


def batch_loss(params: ParameterSet, batch: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean of per-example losses."""
    return float(np.mean([example_loss(params, f, y) for f, y in batch]))


def batch_gradient(params: ParameterSet, batch: list[tuple[np.ndarray, np.ndarray]],
                   checkpointing: bool = False) -> dict[str, np.ndarray]:
    """Mean of per-example gradients (the FedSGD single-batch gradient)."""
    total: dict[str, np.ndarray] = {}
    for features, labels in batch:
        g = backward(params, forward(params, features, checkpointing), labels)
        for name, arr in g.items():
            acc = total.setdefault(name, np.zeros(arr.shape, dtype=np.float64))
            acc += arr
    return {name: (arr / len(batch)).astype(np.float32) for name, arr in total.items()}


def predict(params: ParameterSet, features: np.ndarray) -> np.ndarray:
    """Argmax word ids for one utterance."""
    x = _check_features(params, features)
    weights, biases = _dense_stack(params)
    return np.argmax(kernels.logits(x, weights, biases), axis=1)


def predict_many(params: ParameterSet, feature_blocks: list[np.ndarray]) -> list[np.ndarray]:
    """Batched prediction: stacks all utterances into one kernel call."""
    if not feature_blocks:
        return []
    lengths = [len(f) for f in feature_blocks]
    stacked = _check_features(params, np.concatenate(feature_blocks, axis=0))
    weights, biases = _dense_stack(params)
    ids = np.argmax(kernels.logits(stacked, weights, biases), axis=1)
    out, pos = [], 0
    for n in lengths:
        out.append(ids[pos:pos + n])
        pos += n
    return out


@dataclass(frozen=True)
class MemoryEstimate:
    parameter_bytes: int
    activation_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.parameter_bytes + self.activation_bytes


def peak_memory_estimate(arch: ModelArch, checkpointing: bool, policy=None,
                         trainable: set[str] | None = None, seq_len: int = 1) -> MemoryEstimate:
    """Analytic on-device peak memory: parameter storage plus live activations.

    Without recomputation every layer keeps its pre- and post-activation buffer
    alive for the backward pass; with recomputation only the layer-boundary
    checkpoints stay resident plus a single recompute buffer for the widest
    layer.  Parameter widths follow the precision policy (f16 matrices on
    non-trainable layers when compression is on).
    """
    omc = bool(policy is not None and getattr(policy, "omc_enabled", bool(policy)))
    if trainable is None:
        trainable = set(arch.variable_names())

    param_bytes = 0
    for layer, (fi, fo) in enumerate(arch.layer_dims()):
        prefix = "decoder" if layer == arch.decoder_index else f"layer{layer}"
        mat_w = 2 if omc and f"{prefix}/matrix" not in trainable else 4
        param_bytes += fi * fo * mat_w + fo * PRECISION_BYTES["f32"]

    widths = list(arch.hidden_dims)
    if checkpointing:
        act_units = arch.feature_dim + sum(widths) + max(widths) + arch.vocab_size
    else:
        act_units = arch.feature_dim + 2 * sum(widths) + arch.vocab_size
    return MemoryEstimate(parameter_bytes=param_bytes,
                          activation_bytes=_ACTIVATION_BYTES * seq_len * act_units)

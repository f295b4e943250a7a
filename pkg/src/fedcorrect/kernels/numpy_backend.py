"""Pure-numpy reference implementation of the dense MLP kernels.

All arrays are float64 and C-contiguous; `weights` holds one (fan_in, fan_out)
matrix per layer with the decoder last, `biases` the matching (fan_out,) rows.
"""

from __future__ import annotations

import numpy as np


def forward(x, weights, biases, keep_preacts):
    """Run the full stack.

    Returns (preacts, hiddens, logits).  `hiddens` are the post-ReLU layer
    outputs (the layer-boundary values); `preacts` are the pre-ReLU buffers,
    kept only when `keep_preacts` is true (no activation recomputation).
    """
    preacts = [] if keep_preacts else None
    hiddens = []
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        z = a @ w + b
        if keep_preacts:
            preacts.append(z)
        a = np.maximum(z, 0.0)
        hiddens.append(a)
    out = a @ weights[-1] + biases[-1]
    return preacts, hiddens, out


def logits(x, weights, biases):
    """Forward pass keeping only the running activation; used for evaluation."""
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
    return a @ weights[-1] + biases[-1]


def backward(x, weights, biases, hiddens, preacts, dlogits, start_layer):
    """Backpropagate `dlogits` down to `start_layer` (0 = bottom hidden layer).

    When `preacts` is None the pre-activation of each layer is recomputed from
    the stored layer-boundary values, one layer at a time.  Returns (dws, dbs)
    aligned with `weights`; entries below `start_layer` are None.
    """
    n = len(weights) - 1  # hidden layer count; index n is the decoder
    dws: list = [None] * (n + 1)
    dbs: list = [None] * (n + 1)

    inp_top = hiddens[-1] if n > 0 else x
    dws[n] = inp_top.T @ dlogits
    dbs[n] = dlogits.sum(axis=0)
    if start_layer >= n:
        return dws, dbs

    delta = dlogits
    for i in range(n - 1, start_layer - 1, -1):
        d_out = delta @ weights[i + 1].T
        inp = hiddens[i - 1] if i > 0 else x
        if preacts is not None:
            z = preacts[i]
        else:
            z = inp @ weights[i] + biases[i]  # recompute buffer
        delta = d_out * (z > 0.0)
        dws[i] = inp.T @ delta
        dbs[i] = delta.sum(axis=0)
    return dws, dbs

"""Pure-numpy MLP kernels: the fallback backend.

Layer convention: weights[l] has shape (out, in); a forward layer computes
``A @ W.T + b`` with ReLU on every layer except the last. The compiled
backend in ``_kernels.pyx`` implements the same signatures.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def forward_batch(weights, biases, x, want_cache: bool = False):
    """Logits for a (n, d) batch; optionally also the hidden activations.

    The cache is the list of post-ReLU activations, one per hidden layer,
    as needed by ``input_grad_batch``.
    """
    a = x
    acts = []
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        if l < last:
            a = np.maximum(z, 0.0)
            if want_cache:
                acts.append(a)
        else:
            z_out = z
    if want_cache:
        return z_out, acts
    return z_out


def input_grad_batch(weights, acts, dl_ds):
    """Reverse-mode input gradient for a batch.

    ``acts`` is the cache from ``forward_batch(..., want_cache=True)``;
    ``dl_ds`` is dL/dlogits of shape (n, K). ReLU subgradient at 0 is 0
    (the mask is activation > 0).
    """
    g = dl_ds
    for l in range(len(weights) - 1, 0, -1):
        g = (g @ weights[l]) * (acts[l - 1] > 0.0)
    return g @ weights[0]

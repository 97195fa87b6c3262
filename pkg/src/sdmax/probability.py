"""Softmax geometry: normalization, label statistics and the closed-form
gradients of the two optimization directions (lowering the true-label
probability vs raising the strongest competitor), with their inner product
and cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SeededRng, ensure_finite, sort_descending, stable_argmax
from .errors import ContractViolationError, SingularityError


def softmax(s: np.ndarray) -> np.ndarray:
    """Stable softmax of a logit vector (max-subtraction)."""
    s = np.asarray(s, dtype=np.float64)
    ensure_finite(s, "logits")
    e = np.exp(s - np.max(s))
    return e / np.sum(e)


def softmax_batch(s: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of an (n, K) logit matrix."""
    e = np.exp(s - np.max(s, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


def log_softmax_batch(s: np.ndarray) -> np.ndarray:
    m = np.max(s, axis=1, keepdims=True)
    z = s - m
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def ce_loss(s: np.ndarray, y: int) -> float:
    """Cross-entropy -log softmax(s)[y], computed via log-sum-exp."""
    s = np.asarray(s, dtype=np.float64)
    if not 0 <= y < s.shape[0]:
        raise ContractViolationError(f"label {y} out of range for K={s.shape[0]}")
    m = float(np.max(s))
    return m + float(np.log(np.sum(np.exp(s - m)))) - float(s[y])


def ce_loss_batch(s: np.ndarray, y: np.ndarray) -> np.ndarray:
    ls = log_softmax_batch(s)
    return -ls[np.arange(s.shape[0]), y]


@dataclass
class LabelInfo:
    """Derived label statistics of one probability vector.

    ``tau`` is the stable argmax over labels != y; ``sorted_p`` holds the
    probabilities in descending order with ``perm`` the matching original
    indices (``sorted_p[i] == p[perm[i]]``).
    """

    y: int
    tau: int
    sorted_p: np.ndarray
    perm: np.ndarray
    p: np.ndarray = field(repr=False)

    def n_index(self, n: int) -> int:
        """Original index of the n-th largest probability (1-based n)."""
        if not 1 <= n <= self.perm.shape[0]:
            raise ContractViolationError(f"n={n} out of [1, {self.perm.shape[0]}]")
        return int(self.perm[n - 1])

    def nth_largest(self, n: int) -> float:
        if not 1 <= n <= self.sorted_p.shape[0]:
            raise ContractViolationError(f"n={n} out of [1, {self.sorted_p.shape[0]}]")
        return float(self.sorted_p[n - 1])


def label_info(p: np.ndarray, y: int) -> LabelInfo:
    p = np.asarray(p, dtype=np.float64)
    k = p.shape[0]
    if k < 2:
        raise ContractViolationError("label_info needs K >= 2")
    if not 0 <= y < k:
        raise ContractViolationError(f"label {y} out of range for K={k}")
    masked = p.copy()
    masked[y] = -np.inf
    tau = stable_argmax(masked)
    sorted_p, perm = sort_descending(p)
    return LabelInfo(y=int(y), tau=tau, sorted_p=sorted_p, perm=perm, p=p)


def tau_batch(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Stable argmax over labels != y, per row."""
    masked = p.copy()
    masked[np.arange(p.shape[0]), y] = -np.inf
    return np.argmax(masked, axis=1)


def phi_sq_sum(p: np.ndarray) -> float:
    """Sum of squared probabilities; lies in [1/K, 1] on the simplex."""
    p = np.asarray(p, dtype=np.float64)
    return float(np.sum(p * p))


def _check_not_onehot(value: float, name: str) -> None:
    if value >= 1.0:
        raise SingularityError(f"{name} = 1 is a one-hot singularity")


def grad_reduce_py(p: np.ndarray, y: int) -> np.ndarray:
    """Direction the distribution moves when pushing the true-label
    probability down: (p - e_y) / (1 - p_y). Components sum to zero."""
    p = np.asarray(p, dtype=np.float64)
    _check_not_onehot(float(p[y]), "P_y")
    v = p.copy()
    v[y] -= 1.0
    return v / (1.0 - p[y])


def grad_raise_ptau(p: np.ndarray, tau: int) -> np.ndarray:
    """Direction the distribution moves when pushing the strongest
    competitor up: (p - e_tau) / (p_tau - 1). Components sum to zero."""
    p = np.asarray(p, dtype=np.float64)
    _check_not_onehot(float(p[tau]), "P_tau")
    v = p.copy()
    v[tau] -= 1.0
    return v / (p[tau] - 1.0)


def _direction_terms(p: np.ndarray, y: int, tau: int):
    # regrouped so nothing cancels when one coordinate approaches 1:
    #   p_y + p_tau - sum p^2        = p_y(1-p_y) + p_tau(1-p_tau) - rest
    #   sum p^2 - 2 p_y + 1          = rest + p_tau^2 + (1-p_y)^2
    # with rest = sum of squares over the other coordinates
    sq = p * p
    mask = np.ones(p.shape[0], dtype=bool)
    mask[y] = mask[tau] = False
    rest = float(np.sum(sq[mask]))
    py, ptau = float(p[y]), float(p[tau])
    inner_num = py * (1.0 - py) + ptau * (1.0 - ptau) - rest
    return py, ptau, rest, inner_num


def direction_inner_product(p: np.ndarray, y: int, tau: int) -> float:
    """Closed-form inner product of the two direction gradients:
    (p_y + p_tau - sum p_k^2) / ((1 - p_y)(1 - p_tau))."""
    if y == tau:
        raise ContractViolationError("y and tau must differ")
    p = np.asarray(p, dtype=np.float64)
    py, ptau = float(p[y]), float(p[tau])
    _check_not_onehot(py, "P_y")
    _check_not_onehot(ptau, "P_tau")
    _, _, _, inner_num = _direction_terms(p, y, tau)
    return inner_num / ((1.0 - py) * (1.0 - ptau))


def direction_cosine(p: np.ndarray, y: int, tau: int) -> float:
    """Closed-form cosine of the two direction gradients:
    (p_y + p_tau - phi) / sqrt((phi - 2 p_y + 1)(phi - 2 p_tau + 1))
    with phi the sum of squared probabilities."""
    if y == tau:
        raise ContractViolationError("y and tau must differ")
    p = np.asarray(p, dtype=np.float64)
    py, ptau = float(p[y]), float(p[tau])
    _check_not_onehot(py, "P_y")
    _check_not_onehot(ptau, "P_tau")
    _, _, rest, inner_num = _direction_terms(p, y, tau)
    sq_y = rest + ptau * ptau + (1.0 - py) ** 2
    sq_tau = rest + py * py + (1.0 - ptau) ** 2
    return inner_num / np.sqrt(sq_y * sq_tau)


def sample_simplex_interior(rng: SeededRng, k: int, size: int, min_coord: float = 1e-6) -> np.ndarray:
    """Symmetric Dirichlet(1) draws with any coordinate < min_coord rejected.

    Used by the property sweeps; rejection keeps the draws away from the
    one-hot singularities excluded by the closed forms' preconditions.
    """
    out = np.empty((size, k))
    filled = 0
    while filled < size:
        draw = rng.dirichlet(np.ones(k), size=size - filled)
        keep = draw[np.min(draw, axis=1) >= min_coord]
        take = keep[: size - filled]
        out[filled : filled + take.shape[0]] = take
        filled += take.shape[0]
    return out

"""Attack objectives over logits and their analytic gradients.

Four loss kinds: cross-entropy, negative true-label probability, the
stagewise probability-difference-ratio (the sequential attack's per-stage
objective), and the logit-margin comparator. Gradients are returned with
respect to the logits; the ratio loss treats its bias term, sign switch
and sort permutation as constants during differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import sort_descending_rows
from .errors import ContractViolationError, NumericalError
from .probability import ce_loss_batch, softmax_batch, tau_batch

DEFAULT_ZETA = 1e-10
TIE_EPS = 1e-12


@dataclass(frozen=True)
class LossKind:
    """Which objective drives the attack step.

    ``name`` is one of ``ce``, ``nprob``, ``dpdr``, ``margin``; ``n`` is the
    stage index of the dpdr variant (the rank whose probability gets
    compressed) and 0 otherwise.
    """

    name: str
    n: int = 0

    def __post_init__(self):
        if self.name not in ("ce", "nprob", "dpdr", "margin"):
            raise ContractViolationError(f"unknown loss kind {self.name!r}")
        if self.name == "dpdr" and self.n < 2:
            raise ContractViolationError(f"dpdr stage index must be >= 2, got {self.n}")
        if self.name != "dpdr" and self.n != 0:
            raise ContractViolationError(f"stage index only applies to dpdr, got n={self.n}")

    @classmethod
    def ce(cls) -> "LossKind":
        return cls("ce")

    @classmethod
    def nprob(cls) -> "LossKind":
        return cls("nprob")

    @classmethod
    def dpdr(cls, n: int) -> "LossKind":
        return cls("dpdr", n)

    @classmethod
    def margin(cls) -> "LossKind":
        return cls("margin")

    def label(self) -> str:
        return f"dpdr({self.n})" if self.name == "dpdr" else self.name


@dataclass(frozen=True)
class DpdrContext:
    """Frozen per-step context of the ratio loss: the batch-level bias and
    the stability constant. Both are constants under differentiation."""

    phi: float
    zeta: float = DEFAULT_ZETA

    def __post_init__(self):
        if not self.zeta > 0:
            raise ContractViolationError(f"zeta must be positive, got {self.zeta}")
        if self.phi < 0:
            raise ContractViolationError(f"phi must be nonnegative, got {self.phi}")


class TieCounter:
    """Advisory count of near-ties adjacent to the compressed rank.

    A tie does not change the returned gradient (the sort permutation is
    frozen), but callers can inspect how often the frozen choice was
    arbitrary to within 1e-12.
    """

    def __init__(self):
        self.count = 0

    def add(self, k: int) -> None:
        self.count += int(k)

    def reset(self) -> None:
        self.count = 0


tie_counter = TieCounter()


def _check_stage(n: int, k: int) -> None:
    if not 2 <= n <= k:
        raise ContractViolationError(f"dpdr stage index n={n} out of [2, K={k}]")


def nprob_loss(p: np.ndarray, y: int) -> float:
    """Negative probability of the true label; range [-1, 0]."""
    return -float(p[y])


def dpdr_phi(p_batch: np.ndarray, y_batch: np.ndarray, n: int) -> float:
    """Batch-level bias: half the largest gap between the strongest
    competitor and the n-th largest probability across the batch.

    Nonnegative because the competitor is always the first or second
    largest probability, so for n >= 2 it is >= the n-th largest.
    """
    p_batch = np.atleast_2d(np.asarray(p_batch, dtype=np.float64))
    y_batch = np.atleast_1d(np.asarray(y_batch))
    _check_stage(n, p_batch.shape[1])
    tau = tau_batch(p_batch, y_batch)
    p_tau = p_batch[np.arange(p_batch.shape[0]), tau]
    sorted_p, _ = sort_descending_rows(p_batch)
    return 0.5 * float(np.max(p_tau - sorted_p[:, n - 1]))


def dpdr_loss(p: np.ndarray, y: int, n: int, ctx: DpdrContext) -> float:
    p = np.asarray(p, dtype=np.float64)
    values = dpdr_loss_batch(p[None, :], np.array([y]), n, ctx)
    return float(values[0])


def dpdr_loss_batch(p: np.ndarray, y: np.ndarray, n: int, ctx: DpdrContext) -> np.ndarray:
    """Ratio loss per row: (P_tau - P_y) / (phi - sign(P_tau - P_y)·(P_tau - P̀_n - phi) + zeta)."""
    _check_stage(n, p.shape[1])
    rows = np.arange(p.shape[0])
    tau = tau_batch(p, y)
    p_tau = p[rows, tau]
    p_y = p[rows, y]
    sorted_p, _ = sort_descending_rows(p)
    gap = p_tau - sorted_p[:, n - 1]
    num = p_tau - p_y
    den = ctx.phi - np.sign(num) * (gap - ctx.phi) + ctx.zeta
    out = num / den
    if not np.all(np.isfinite(out)):
        raise NumericalError("ratio loss produced a non-finite value")
    return out


def margin_loss(s: np.ndarray, y: int) -> float:
    """Logit margin of the strongest competitor over the true label;
    positive iff the example is currently misclassified."""
    s = np.asarray(s, dtype=np.float64)
    masked = s.copy()
    masked[y] = -np.inf
    return float(masked.max() - s[y])


def margin_loss_batch(s: np.ndarray, y: np.ndarray) -> np.ndarray:
    rows = np.arange(s.shape[0])
    masked = s.copy()
    masked[rows, y] = -np.inf
    return masked.max(axis=1) - s[rows, y]


def loss_values_batch(kind: LossKind, scores: np.ndarray, y: np.ndarray, ctx: DpdrContext | None = None) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    if kind.name == "ce":
        return ce_loss_batch(scores, y)
    if kind.name == "margin":
        return margin_loss_batch(scores, y)
    p = softmax_batch(scores)
    if kind.name == "nprob":
        return -p[np.arange(p.shape[0]), y]
    if ctx is None:
        raise ContractViolationError("dpdr loss needs a DpdrContext")
    return dpdr_loss_batch(p, y, kind.n, ctx)


def _chain_softmax(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    # dL/dS_j = P_j * (g_j - <g, P>) for g = dL/dP, row-wise.
    inner = np.sum(g * p, axis=1, keepdims=True)
    return p * (g - inner)


def _dpdr_grad_core(p, y, n, ctx, rows, tau, sorted_p, perm) -> np.ndarray:
    p_tau = p[rows, tau]
    p_y = p[rows, y]
    idx_n = perm[:, n - 1]
    num = p_tau - p_y
    sgn = np.sign(num)
    den = ctx.phi - sgn * (p_tau - sorted_p[:, n - 1] - ctx.phi) + ctx.zeta

    near = np.abs(sorted_p[:, n - 1] - sorted_p[:, n - 2]) < TIE_EPS
    if n < p.shape[1]:
        near = near | (np.abs(sorted_p[:, n] - sorted_p[:, n - 1]) < TIE_EPS)
    tie_counter.add(np.count_nonzero(near))

    # Quotient rule with den's sign, bias and permutation frozen:
    # dL/dP_j = (d_jtau - d_jy)/den + num*sgn*(d_jtau - d_j,idx_n)/den^2.
    g = np.zeros_like(p)
    coef = num * sgn / (den * den)
    np.add.at(g, (rows, tau), 1.0 / den + coef)
    np.add.at(g, (rows, y), -1.0 / den)
    np.add.at(g, (rows, idx_n), -coef)
    return _chain_softmax(p, g)


def _dpdr_grad_scores(p: np.ndarray, y: np.ndarray, n: int, ctx: DpdrContext) -> np.ndarray:
    rows = np.arange(p.shape[0])
    tau = tau_batch(p, y)
    sorted_p, perm = sort_descending_rows(p)
    return _dpdr_grad_core(p, y, n, ctx, rows, tau, sorted_p, perm)


def dpdr_grad_scores_live(scores: np.ndarray, y: np.ndarray, n: int, zeta: float = DEFAULT_ZETA):
    """Gradient with the bias recomputed from the live batch, as the
    sequential attack does every step. One softmax/argmax/sort pass feeds
    both the bias and the gradient; numerically identical to composing
    dpdr_phi with loss_grad_scores_batch. Returns (grad, context)."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    _check_stage(n, scores.shape[1])
    p = softmax_batch(scores)
    rows = np.arange(p.shape[0])
    sorted_p, perm = sort_descending_rows(p)
    # the stable sort's leading columns give the strongest competitor with
    # the same tie-breaking as the masked argmax
    top = perm[:, 0]
    tau = np.where(top == y, perm[:, 1], top)
    phi = 0.5 * float(np.max(p[rows, tau] - sorted_p[:, n - 1]))
    ctx = DpdrContext(phi=phi, zeta=zeta)
    return _dpdr_grad_core(p, y, n, ctx, rows, tau, sorted_p, perm), ctx


def loss_grad_scores_batch(kind: LossKind, scores: np.ndarray, y: np.ndarray, ctx: DpdrContext | None = None) -> np.ndarray:
    """d(loss)/d(logits), one row per example."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    rows = np.arange(scores.shape[0])
    if kind.name == "margin":
        masked = scores.copy()
        masked[rows, y] = -np.inf
        kstar = np.argmax(masked, axis=1)
        g = np.zeros_like(scores)
        g[rows, kstar] = 1.0
        g[rows, y] = -1.0
        return g
    p = softmax_batch(scores)
    if kind.name == "ce":
        g = p.copy()
        g[rows, y] -= 1.0
        return g
    if kind.name == "nprob":
        gp = np.zeros_like(p)
        gp[rows, y] = -1.0
        return _chain_softmax(p, gp)
    if ctx is None:
        raise ContractViolationError("dpdr gradient needs a DpdrContext")
    _check_stage(kind.n, scores.shape[1])
    return _dpdr_grad_scores(p, y, kind.n, ctx)


def loss_value(kind: LossKind, scores: np.ndarray, y: int, ctx: DpdrContext | None = None) -> float:
    values = loss_values_batch(kind, np.asarray(scores, dtype=np.float64)[None, :], np.array([y]), ctx)
    return float(values[0])


def loss_grad_wrt_scores(kind: LossKind, scores: np.ndarray, y: int, ctx: DpdrContext | None = None) -> np.ndarray:
    grads = loss_grad_scores_batch(kind, np.asarray(scores, dtype=np.float64)[None, :], np.array([y]), ctx)
    return grads[0]


def stage_loss(n: int) -> LossKind:
    """Objective of stage n in the sequential attack: nprob first, then the
    ratio loss aimed at the n-th largest probability."""
    if n < 1:
        raise ContractViolationError(f"stage index must be >= 1, got {n}")
    return LossKind.nprob() if n == 1 else LossKind.dpdr(n)


__all__ = [
    "DEFAULT_ZETA",
    "DpdrContext",
    "LossKind",
    "TieCounter",
    "dpdr_grad_scores_live",
    "dpdr_loss",
    "dpdr_loss_batch",
    "dpdr_phi",
    "loss_grad_scores_batch",
    "loss_grad_wrt_scores",
    "loss_value",
    "loss_values_batch",
    "margin_loss",
    "margin_loss_batch",
    "nprob_loss",
    "stage_loss",
    "tie_counter",
]

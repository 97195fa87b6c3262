"""Gradient attack drivers: single-step sign attack, iterative
cross-entropy and margin ascent, and the cycle/stage/step sequential
difference maximization attack, under l-infinity or l2 budgets.

Per-example work is chunked identically regardless of thread count, and
the sequential attack's batch-level bias is folded over the merged batch,
so outcomes are invariant to the degree of parallelism.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import SeededRng, derive_seed, run_chunked
from .errors import ConfigError, ContractViolationError, NumericalError
from .losses import (
    DEFAULT_ZETA,
    LossKind,
    dpdr_grad_scores_live,
    loss_grad_scores_batch,
    loss_values_batch,
    stage_loss,
)
from .probability import softmax_batch, tau_batch

SCHEDULE_TABLE = {
    10: (1, 5, 2),
    20: (1, 5, 4),
    50: (2, 5, 5),
    100: (2, 5, 10),
    200: (4, 5, 10),
    500: (4, 5, 25),
    1000: (5, 5, 40),
}

METHODS = ("fgsm", "pgd", "margin_pgd", "sdm")
NORMS = ("linf", "l2")


@dataclass(frozen=True)
class Schedule:
    """Cycle/stage/step split of a total step budget."""

    c: int
    n: int
    t: int

    def __post_init__(self):
        if self.c < 1 or self.n < 1 or self.t < 1:
            raise ContractViolationError(f"schedule parts must be >= 1, got {(self.c, self.n, self.t)}")

    @property
    def total(self) -> int:
        return self.c * self.n * self.t


def schedule_for_total_steps(z: int) -> Schedule:
    """Standard schedule for a listed total budget; other budgets need an
    explicit (cycles, stages, steps) triple."""
    if z not in SCHEDULE_TABLE:
        options = ", ".join(str(k) for k in sorted(SCHEDULE_TABLE))
        raise ConfigError(
            f"no standard schedule for total steps {z}; pass an explicit"
            f" (cycles, stages, steps) schedule or choose one of {options}"
        )
    return Schedule(*SCHEDULE_TABLE[z])


@dataclass
class AttackConfig:
    method: str = "pgd"
    norm: str = "linf"
    epsilon: float = 8.0 / 255.0
    alpha: float = 2.0 / 255.0
    total_steps: int = 100
    schedule: Schedule | None = None
    random_start: bool | None = None
    clamp01: bool = True
    l2_step_mode: str = "normalized"
    zeta: float = DEFAULT_ZETA
    early_stop: bool = False
    trace: bool = False
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r} (expected one of {METHODS})")
        if self.norm not in NORMS:
            raise ConfigError(f"unknown norm {self.norm!r} (expected one of {NORMS})")
        if self.method == "fgsm" and self.norm != "linf":
            raise ConfigError("fgsm is a sign step; only the linf norm is defined for it")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.norm == "linf" and self.epsilon > 1:
            raise ConfigError(f"linf epsilon is in [0,1] units, got {self.epsilon}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.l2_step_mode not in ("normalized", "sign"):
            raise ConfigError(f"unknown l2_step_mode {self.l2_step_mode!r}")
        if not self.zeta > 0:
            raise ConfigError(f"zeta must be positive, got {self.zeta}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.schedule is not None:
            if isinstance(self.schedule, tuple):
                self.schedule = Schedule(*self.schedule)
            if self.schedule.total != self.total_steps:
                raise ConfigError(
                    f"schedule {self.schedule} totals {self.schedule.total} steps"
                    f" but total_steps is {self.total_steps}"
                )
        if self.norm == "linf" and self.alpha > self.epsilon > 0:
            warnings.warn(
                f"alpha={self.alpha} exceeds epsilon={self.epsilon}; every step saturates the budget",
                stacklevel=2,
            )

    def resolved_random_start(self) -> bool:
        if self.random_start is not None:
            return self.random_start
        return self.method in ("pgd", "margin_pgd")


@dataclass
class AttackOutcome:
    """Adversarial batch plus per-example bookkeeping.

    ``success`` is the misclassification predicate on the target model;
    ``stage_trace`` is the executed loss-kind sequence; ``grad_steps`` the
    number of gradient steps taken per example.
    """

    adv: np.ndarray
    success: np.ndarray
    ce_loss: np.ndarray
    p_y: np.ndarray
    p_tau: np.ndarray
    linf_norm: np.ndarray
    l2_norm: np.ndarray
    grad_steps: int
    stage_trace: list
    trace: list = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.success))


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp every component of a perturbation to [-epsilon, epsilon]."""
    if epsilon < 0:
        raise ContractViolationError(f"epsilon must be nonnegative, got {epsilon}")
    return np.clip(delta, -epsilon, epsilon)


def step_linf(x_nat, x_prev, grad, alpha: float, epsilon: float, clamp01: bool = True) -> np.ndarray:
    """One ascent step with sign(grad), re-projected onto the budget box."""
    x_nat = np.asarray(x_nat, dtype=np.float64)
    if x_nat.shape != np.shape(x_prev) or x_nat.shape != np.shape(grad):
        raise ContractViolationError("step_linf shapes disagree")
    x = x_nat + project_linf(x_prev - x_nat + alpha * np.sign(grad), epsilon)
    if clamp01:
        x = np.clip(x, 0.0, 1.0)
    return x


def normalize_grad_l2(grad: np.ndarray, zeta: float = DEFAULT_ZETA) -> np.ndarray:
    """grad / (||grad||_2 + zeta); row-wise on matrices. Zero stays zero."""
    if not zeta > 0:
        raise ContractViolationError(f"zeta must be positive, got {zeta}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim == 1:
        return grad / (np.sqrt(np.sum(grad * grad)) + zeta)
    norms = np.sqrt(np.sum(grad * grad, axis=1, keepdims=True))
    return grad / (norms + zeta)


def step_l2(
    x_nat,
    x_prev,
    grad,
    alpha: float,
    epsilon: float,
    mode: str = "normalized",
    zeta: float = DEFAULT_ZETA,
    clamp01: bool = True,
) -> np.ndarray:
    """One l2 ascent step: normalize, move, rescale into the budget ball.

    ``normalized`` steps along the unit gradient; ``sign`` applies sign()
    after normalization, which turns the step into a sign step.
    """
    if epsilon < 0:
        raise ContractViolationError(f"epsilon must be nonnegative, got {epsilon}")
    x_nat = np.asarray(x_nat, dtype=np.float64)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    squeeze = x_nat.ndim == 1
    if squeeze:
        x_nat, x_prev, grad = x_nat[None, :], x_prev[None, :], np.asarray(grad)[None, :]
    direction = normalize_grad_l2(grad, zeta)
    if mode == "sign":
        direction = np.sign(direction)
    elif mode != "normalized":
        raise ContractViolationError(f"unknown l2 step mode {mode!r}")
    delta = x_prev + alpha * direction - x_nat
    norms = np.sqrt(np.sum(delta * delta, axis=1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > epsilon, np.where(norms > 0, epsilon / norms, 1.0), 1.0)
    x = x_nat + delta * scale
    if clamp01:
        x = np.clip(x, 0.0, 1.0)
    return x[0] if squeeze else x


def _forward_cached(model, x: np.ndarray, threads: int):
    n = x.shape[0]
    scores = np.empty((n, model.k))
    acts = [np.empty((n, h)) for h in model.dims[1:-1]]

    def fn(lo, hi):
        s, a = model.forward_batch(x[lo:hi], want_cache=True)
        scores[lo:hi] = s
        for l, al in enumerate(a):
            acts[l][lo:hi] = al

    run_chunked(fn, n, threads)
    return scores, acts


def _forward_scores(model, x: np.ndarray, threads: int) -> np.ndarray:
    n = x.shape[0]
    scores = np.empty((n, model.k))

    def fn(lo, hi):
        scores[lo:hi] = model.forward_batch(x[lo:hi])

    run_chunked(fn, n, threads)
    return scores


def _input_grads(model, acts, dl_ds: np.ndarray, threads: int) -> np.ndarray:
    n = dl_ds.shape[0]
    gx = np.empty((n, model.d))

    def fn(lo, hi):
        gx[lo:hi] = model.input_grad_batch([a[lo:hi] for a in acts], dl_ds[lo:hi])

    run_chunked(fn, n, threads)
    return gx


def _check_batch(model, x: np.ndarray, y: np.ndarray):
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ContractViolationError(f"expected a non-empty (n, d) batch, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ContractViolationError(f"labels shape {y.shape} does not match batch of {x.shape[0]}")
    if x.shape[1] != model.d:
        raise ContractViolationError(f"batch dim {x.shape[1]} does not match model input dim {model.d}")
    if y.size and (y.min() < 0 or y.max() >= model.k):
        raise ContractViolationError(f"labels out of range for K={model.k}")
    return x, y


def _finish(model, x_nat, x_adv, y, cfg_like, grad_steps, stage_trace, trace, threads=1):
    scores = _forward_scores(model, x_adv, threads)
    p = softmax_batch(scores)
    rows = np.arange(x_adv.shape[0])
    tau = tau_batch(p, y)
    delta = x_adv - x_nat
    m = np.max(scores, axis=1, keepdims=True)
    ce = (m[:, 0] + np.log(np.sum(np.exp(scores - m), axis=1))) - scores[rows, y]
    outcome = AttackOutcome(
        adv=x_adv,
        success=np.argmax(scores, axis=1) != y,
        ce_loss=ce,
        p_y=p[rows, y],
        p_tau=p[rows, tau],
        linf_norm=np.max(np.abs(delta), axis=1),
        l2_norm=np.sqrt(np.sum(delta * delta, axis=1)),
        grad_steps=grad_steps,
        stage_trace=stage_trace,
        trace=trace,
    )
    _check_budget(outcome, cfg_like)
    return outcome


def _check_budget(outcome: AttackOutcome, cfg: AttackConfig):
    eps = cfg.epsilon
    if cfg.norm == "linf":
        worst = float(np.max(outcome.linf_norm)) if outcome.linf_norm.size else 0.0
        if worst > eps + 1e-9:
            raise NumericalError(f"linf budget violated: {worst} > {eps}")
    else:
        worst = float(np.max(outcome.l2_norm)) if outcome.l2_norm.size else 0.0
        if worst > eps * (1.0 + 1e-6) + 1e-12:
            raise NumericalError(f"l2 budget violated: {worst} > {eps}")
    if cfg.clamp01 and outcome.adv.size:
        lo, hi = float(np.min(outcome.adv)), float(np.max(outcome.adv))
        if lo < 0.0 or hi > 1.0:
            raise NumericalError(f"clamped outputs left [0,1]: range [{lo}, {hi}]")


def _random_start(x_nat: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    rng = SeededRng(derive_seed(cfg.seed, 31), stream=5)
    if cfg.norm == "linf":
        x = x_nat + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x_nat.shape)
    else:
        g = rng.normal(0.0, 1.0, size=x_nat.shape)
        direction = normalize_grad_l2(g, DEFAULT_ZETA)
        radius = rng.uniform(0.0, cfg.epsilon, size=(x_nat.shape[0], 1))
        x = x_nat + radius * direction
    if cfg.clamp01:
        x = np.clip(x, 0.0, 1.0)
    return x


def _step(x_nat, x_prev, grad, cfg: AttackConfig) -> np.ndarray:
    if cfg.norm == "linf":
        return step_linf(x_nat, x_prev, grad, cfg.alpha, cfg.epsilon, cfg.clamp01)
    return step_l2(x_nat, x_prev, grad, cfg.alpha, cfg.epsilon, cfg.l2_step_mode, cfg.zeta, cfg.clamp01)


def _run_plan(model, x_nat, y, cfg: AttackConfig, plan) -> AttackOutcome:
    """Shared iteration engine: one gradient step per loss kind in plan."""
    x = _random_start(x_nat, cfg) if cfg.resolved_random_start() else x_nat.copy()
    active = np.ones(x_nat.shape[0], dtype=bool)
    stage_trace, trace = [], []
    for step_i, kind in enumerate(plan):
        scores, acts = _forward_cached(model, x, cfg.threads)
        ctx = None
        if kind.name == "dpdr":
            # one softmax/sort pass feeds both the live bias and the gradient
            dl_ds, ctx = dpdr_grad_scores_live(scores, y, kind.n, cfg.zeta)
        else:
            dl_ds = loss_grad_scores_batch(kind, scores, y, ctx)
        gx = _input_grads(model, acts, dl_ds, cfg.threads)
        x_next = _step(x_nat, x, gx, cfg)
        if cfg.early_stop:
            # freeze rows that are already misclassified, permanently
            active &= np.argmax(scores, axis=1) == y
            x = np.where(active[:, None], x_next, x)
        else:
            x = x_next
        stage_trace.append(kind.label())
        if cfg.trace:
            trace.append(
                {
                    "step": step_i,
                    "loss": kind.label(),
                    "mean_loss": float(np.mean(loss_values_batch(kind, scores, y, ctx))),
                }
            )
    return _finish(model, x_nat, x, y, cfg, len(plan), stage_trace, trace, cfg.threads)


def fgsm(model, inputs, labels, epsilon: float, clamp01: bool = True, threads: int = 1) -> AttackOutcome:
    """Single sign step of size epsilon along the cross-entropy gradient."""
    x_nat, y = _check_batch(model, inputs, labels)
    cfg = AttackConfig(method="fgsm", norm="linf", epsilon=epsilon, alpha=epsilon, total_steps=1, clamp01=clamp01, threads=threads)
    scores, acts = _forward_cached(model, x_nat, threads)
    dl_ds = loss_grad_scores_batch(LossKind.ce(), scores, y)
    gx = _input_grads(model, acts, dl_ds, threads)
    x = x_nat + epsilon * np.sign(gx)
    if clamp01:
        x = np.clip(x, 0.0, 1.0)
    return _finish(model, x_nat, x, y, cfg, 1, ["ce"], [], threads)


def pgd(model, inputs, labels, cfg: AttackConfig) -> AttackOutcome:
    """Iterative ascent on cross-entropy under the configured budget."""
    if cfg.method != "pgd":
        raise ConfigError(f"config method is {cfg.method!r}, expected 'pgd'")
    x_nat, y = _check_batch(model, inputs, labels)
    return _run_plan(model, x_nat, y, cfg, [LossKind.ce()] * cfg.total_steps)


def margin_pgd(model, inputs, labels, cfg: AttackConfig) -> AttackOutcome:
    """Iterative ascent on the logit margin under the configured budget."""
    if cfg.method != "margin_pgd":
        raise ConfigError(f"config method is {cfg.method!r}, expected 'margin_pgd'")
    x_nat, y = _check_batch(model, inputs, labels)
    return _run_plan(model, x_nat, y, cfg, [LossKind.margin()] * cfg.total_steps)


def sdm_plan(schedule: Schedule) -> list:
    """Loss sequence of the sequential attack: stage 1 lowers the true-label
    probability, stages 2..N each compress the n-th largest probability."""
    plan = []
    for _ in range(schedule.c):
        for n in range(1, schedule.n + 1):
            plan.extend([stage_loss(n)] * schedule.t)
    return plan


def sdm(model, inputs, labels, cfg: AttackConfig) -> AttackOutcome:
    """Cycle/stage/step sequential attack; starts from the natural inputs."""
    if cfg.method != "sdm":
        raise ConfigError(f"config method is {cfg.method!r}, expected 'sdm'")
    x_nat, y = _check_batch(model, inputs, labels)
    schedule = cfg.schedule if cfg.schedule is not None else schedule_for_total_steps(cfg.total_steps)
    if schedule.n > model.k:
        raise ConfigError(
            f"schedule has {schedule.n} stages but the model only has K={model.k}"
            f" classes; supply an explicit schedule with stages <= {model.k}"
        )
    return _run_plan(model, x_nat, y, cfg, sdm_plan(schedule))


def run_attack(model, inputs, labels, cfg: AttackConfig) -> AttackOutcome:
    """Dispatch on cfg.method."""
    if cfg.method == "fgsm":
        return fgsm(model, inputs, labels, cfg.epsilon, cfg.clamp01, cfg.threads)
    if cfg.method == "pgd":
        return pgd(model, inputs, labels, cfg)
    if cfg.method == "margin_pgd":
        return margin_pgd(model, inputs, labels, cfg)
    return sdm(model, inputs, labels, cfg)

"""Measurement suite for attack outcomes: success rates, per-method
success-set overlaps, the high-loss failure analysis, input-interference
robustness, probability-landscape sampling with a hand-rolled 2-component
PCA, and per-step timing.
"""

from __future__ import annotations

import gc
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .core import SeededRng, derive_seed, run_chunked
from .errors import ContractViolationError, DegenerateSubspaceError
from .probability import softmax_batch, tau_batch

INTERFERENCE_KINDS = ("hflip", "translate", "uniform_noise", "gaussian_noise")


@dataclass
class EvalReport:
    """Per-example evaluation records plus aggregates."""

    success: np.ndarray
    ce_loss: np.ndarray
    p_y: np.ndarray
    p_tau: np.ndarray
    linf_norm: np.ndarray
    l2_norm: np.ndarray

    @property
    def n(self) -> int:
        return self.success.shape[0]

    @property
    def attack_success_rate(self) -> float:
        return float(np.count_nonzero(self.success)) / self.n

    @property
    def mean_ce_loss(self) -> float:
        return float(np.mean(self.ce_loss))

    def records(self):
        for i in range(self.n):
            yield {
                "index": i,
                "success": bool(self.success[i]),
                "ce_loss": float(self.ce_loss[i]),
                "p_y": float(self.p_y[i]),
                "p_tau": float(self.p_tau[i]),
                "linf_norm": float(self.linf_norm[i]),
                "l2_norm": float(self.l2_norm[i]),
            }

    def to_jsonl(self, path: str) -> None:
        """One JSON record per example, then a JSON aggregate footer."""
        with open(path, "w") as f:
            for rec in self.records():
                f.write(json.dumps(rec) + "\n")
            f.write(
                json.dumps(
                    {
                        "aggregate": {
                            "n": self.n,
                            "attack_success_rate": self.attack_success_rate,
                            "mean_ce_loss": self.mean_ce_loss,
                        }
                    }
                )
                + "\n"
            )


def evaluate(model, inputs, labels, naturals=None, threads: int = 1) -> EvalReport:
    """Classify a batch and report the misclassification predicate per
    example; norms are relative to ``naturals`` when given, else zero."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.ndim != 2 or labels.shape != (inputs.shape[0],):
        raise ContractViolationError(
            f"inputs {inputs.shape} and labels {labels.shape} do not align"
        )
    n = inputs.shape[0]
    scores = np.empty((n, model.k))

    def fn(lo, hi):
        scores[lo:hi] = model.forward_batch(inputs[lo:hi])

    run_chunked(fn, n, threads)
    p = softmax_batch(scores)
    rows = np.arange(n)
    tau = tau_batch(p, labels)
    m = np.max(scores, axis=1, keepdims=True)
    ce = (m[:, 0] + np.log(np.sum(np.exp(scores - m), axis=1))) - scores[rows, labels]
    if naturals is None:
        delta = np.zeros_like(inputs)
    else:
        naturals = np.asarray(naturals, dtype=np.float64)
        if naturals.shape != inputs.shape:
            raise ContractViolationError("naturals shape does not match inputs")
        delta = inputs - naturals
    return EvalReport(
        success=np.argmax(scores, axis=1) != labels,
        ce_loss=ce,
        p_y=p[rows, labels],
        p_tau=p[rows, tau],
        linf_norm=np.max(np.abs(delta), axis=1),
        l2_norm=np.sqrt(np.sum(delta * delta, axis=1)),
    )


@dataclass
class SetComparison:
    """Pairwise overlap/difference proportions of per-method success sets."""

    n: int
    masks: dict
    pairs: dict = field(default_factory=dict)

    def proportions(self, a: str, b: str) -> dict:
        return self.pairs[(a, b)]

    def to_json(self) -> dict:
        out = {"n": self.n, "success_counts": {k: int(np.count_nonzero(v)) for k, v in self.masks.items()}}
        out["pairs"] = {
            f"{a}|{b}": props for (a, b), props in sorted(self.pairs.items())
        }
        return out


def success_set_analysis(masks: dict) -> SetComparison:
    """Intersections and set differences of success masks, as proportions
    of the dataset size."""
    names = list(masks)
    if not names:
        raise ContractViolationError("need at least one mask")
    arrays = {k: np.asarray(v, dtype=bool) for k, v in masks.items()}
    n = arrays[names[0]].shape[0]
    for k, v in arrays.items():
        if v.shape != (n,):
            raise ContractViolationError(f"mask {k!r} has shape {v.shape}, expected ({n},)")
    comp = SetComparison(n=n, masks=arrays)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            inter = np.count_nonzero(arrays[a] & arrays[b])
            only_a = np.count_nonzero(arrays[a] & ~arrays[b])
            only_b = np.count_nonzero(arrays[b] & ~arrays[a])
            comp.pairs[(a, b)] = {
                "intersection": inter / n,
                f"{a}_only": only_a / n,
                f"{b}_only": only_b / n,
            }
    return comp


def mean_over_difference(values: np.ndarray, mask_a: np.ndarray, mask_b: np.ndarray):
    """Mean of values over the set A-minus-B; None when that set is empty."""
    sel = np.asarray(mask_a, dtype=bool) & ~np.asarray(mask_b, dtype=bool)
    if not np.any(sel):
        return None
    return float(np.mean(np.asarray(values)[sel]))


def high_loss_analysis(model, advs_pgd, advs_sdm, advs_baseline, labels, threads: int = 1) -> dict:
    """Failure set h = {pgd fails, baseline succeeds}; reports how the
    cross-entropy of the failed pgd iterates compares with the baseline's
    successes, and how often the sequential attack also fails on h.

    Means are over h only; with h empty they are reported as None.
    """
    advs_pgd = np.asarray(advs_pgd, dtype=np.float64)
    advs_sdm = np.asarray(advs_sdm, dtype=np.float64)
    advs_baseline = np.asarray(advs_baseline, dtype=np.float64)
    if not (advs_pgd.shape == advs_sdm.shape == advs_baseline.shape):
        raise ContractViolationError("adversarial sets are misaligned")
    rep_pgd = evaluate(model, advs_pgd, labels, threads=threads)
    rep_sdm = evaluate(model, advs_sdm, labels, threads=threads)
    rep_base = evaluate(model, advs_baseline, labels, threads=threads)
    h = ~rep_pgd.success & rep_base.success
    h_count = int(np.count_nonzero(h))
    if h_count == 0:
        return {"h_count": 0, "mean_l1": None, "sdm_fail_count": 0, "mean_l2": None}
    return {
        "h_count": h_count,
        "mean_l1": float(np.mean(rep_pgd.ce_loss[h] - rep_base.ce_loss[h])),
        "sdm_fail_count": int(np.count_nonzero(~rep_sdm.success & h)),
        "mean_l2": float(np.mean(rep_sdm.ce_loss[h] - rep_base.ce_loss[h])),
    }


@dataclass
class InterferenceSpec:
    """One input-corruption condition with its standard parameters."""

    kind: str
    translate_fraction: float = 0.125
    uniform_low: float = -0.15
    uniform_high: float = 0.15
    gaussian_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in INTERFERENCE_KINDS:
            raise ContractViolationError(
                f"unknown interference kind {self.kind!r} (expected one of {INTERFERENCE_KINDS})"
            )


def _as_grid(inputs: np.ndarray, grid_shape):
    if grid_shape is None:
        raise ContractViolationError("spatial interference needs a (channels, height, width) grid_shape")
    c, h, w = grid_shape
    if c * h * w != inputs.shape[1]:
        raise ContractViolationError(
            f"grid_shape {tuple(grid_shape)} does not cover input dim {inputs.shape[1]}"
        )
    return inputs.reshape(inputs.shape[0], c, h, w), (c, h, w)


def _shift_pixels(fraction: float, size: int) -> int:
    # half-up rounding so 12.5% of 32 is exactly 4 and of 28 is 4 (3.5 up)
    return int(np.floor(fraction * size + 0.5))


def apply_interference(inputs: np.ndarray, spec: InterferenceSpec, grid_shape=None) -> np.ndarray:
    """Corrupted copy of the batch; every output lies in [0, 1]."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise ContractViolationError(f"expected an (n, d) batch, got shape {inputs.shape}")
    n = inputs.shape[0]
    rng = SeededRng(derive_seed(spec.seed, INTERFERENCE_KINDS.index(spec.kind)), stream=13)
    if spec.kind == "hflip":
        grid, _ = _as_grid(inputs, grid_shape)
        out = grid[:, :, :, ::-1].reshape(n, -1)
    elif spec.kind == "translate":
        grid, (c, h, w) = _as_grid(inputs, grid_shape)
        directions = rng.integers(0, 4, size=n)
        out_grid = np.zeros_like(grid)
        dh = _shift_pixels(spec.translate_fraction, h)
        dw = _shift_pixels(spec.translate_fraction, w)
        for i in range(n):
            g = grid[i]
            o = out_grid[i]
            d = directions[i]
            if d == 0 and dh < h:  # up
                o[:, : h - dh, :] = g[:, dh:, :]
            elif d == 1 and dh < h:  # down
                o[:, dh:, :] = g[:, : h - dh, :]
            elif d == 2 and dw < w:  # left
                o[:, :, : w - dw] = g[:, :, dw:]
            elif d == 3 and dw < w:  # right
                o[:, :, dw:] = g[:, :, : w - dw]
        out = out_grid.reshape(n, -1)
    elif spec.kind == "uniform_noise":
        out = inputs + rng.uniform(spec.uniform_low, spec.uniform_high, size=inputs.shape)
    else:
        out = inputs + rng.normal(0.0, spec.gaussian_std, size=inputs.shape)
    return np.clip(out, 0.0, 1.0)


def interference_suite(model, adv_inputs, labels, seed: int, grid_shape, threads: int = 1) -> dict:
    """Attack success rate of the same adversarial batch under each
    corruption condition, plus the untouched baseline."""
    table = {"raw": evaluate(model, adv_inputs, labels, threads=threads).attack_success_rate}
    for kind in INTERFERENCE_KINDS:
        spec = InterferenceSpec(kind=kind, seed=seed)
        shifted = apply_interference(adv_inputs, spec, grid_shape)
        table[kind] = evaluate(model, shifted, labels, threads=threads).attack_success_rate
    return table


def _power_iteration(cov: np.ndarray, rng: SeededRng, tol: float = 1e-10, max_iters: int = 10_000):
    d = cov.shape[0]
    v = rng.normal(0.0, 1.0, size=d)
    v /= np.sqrt(np.sum(v * v))
    for _ in range(max_iters):
        w = cov @ v
        norm_w = np.sqrt(np.sum(w * w))
        if norm_w < 1e-300:
            return v, 0.0
        w /= norm_w
        if w @ v < 0:
            w = -w
        if np.max(np.abs(w - v)) < tol:
            v = w
            break
        v = w
    return v, float(v @ cov @ v)


def pca_2d(samples: np.ndarray):
    """Top-2 principal components via power iteration with deflation.

    Returns ``(coords, components)`` with components unit-norm, mutually
    orthogonal, and signed so each one's largest-magnitude entry is
    positive. A vanishing second eigenvalue is a degeneracy error.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 3 or samples.shape[1] < 2:
        raise ContractViolationError(f"pca_2d needs an (m >= 3, d >= 2) matrix, got {samples.shape}")
    centered = samples - samples.mean(axis=0)
    cov = (centered.T @ centered) / (samples.shape[0] - 1)
    rng = SeededRng(20_210_531, stream=2)
    components = []
    for _ in range(2):
        v, lam = _power_iteration(cov, rng)
        if lam <= 1e-12:
            raise DegenerateSubspaceError(
                f"sample covariance has rank < 2 (eigenvalue {lam:.3e});"
                " perturbations do not span a plane"
            )
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components.append(v)
        cov = cov - lam * np.outer(v, v)
    components = np.vstack(components)
    coords = centered @ components.T
    return coords, components


def idw_grid(coords: np.ndarray, values: np.ndarray, grid_x: np.ndarray, grid_y: np.ndarray, k: int = 16) -> np.ndarray:
    """Inverse-distance-squared interpolation onto a regular grid; a node
    sitting on a sample reproduces that sample's value."""
    k = min(k, coords.shape[0])
    out = np.empty((grid_y.shape[0], grid_x.shape[0]))
    for iy, gy in enumerate(grid_y):
        for ix, gx in enumerate(grid_x):
            d2 = (coords[:, 0] - gx) ** 2 + (coords[:, 1] - gy) ** 2
            nearest = np.argpartition(d2, k - 1)[:k]
            d2n = d2[nearest]
            hit = d2n < 1e-24
            if np.any(hit):
                out[iy, ix] = values[nearest[np.argmax(hit)]]
                continue
            w = 1.0 / d2n
            out[iy, ix] = float(np.sum(w * values[nearest]) / np.sum(w))
    return out


@dataclass
class LandscapeGrid:
    """Sampled probability landscape around one input, on a regular grid
    over the top-2 principal coordinates of the perturbations."""

    coords: np.ndarray
    sample_p_y: np.ndarray
    sample_p_diff: np.ndarray
    grid_x: np.ndarray
    grid_y: np.ndarray
    grid_p_y: np.ndarray
    grid_p_diff: np.ndarray
    components: np.ndarray

    def to_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("px,py,p_y,p_diff\n")
            for iy in range(self.grid_y.shape[0]):
                for ix in range(self.grid_x.shape[0]):
                    f.write(
                        f"{self.grid_x[ix]:.9g},{self.grid_y[iy]:.9g},"
                        f"{self.grid_p_y[iy, ix]:.12g},{self.grid_p_diff[iy, ix]:.12g}\n"
                    )


def landscape(model, x, y: int, epsilon: float, m_samples: int = 500, grid_res: int = 64, seed: int = 0) -> LandscapeGrid:
    """Probability landscape in a budget ball around one natural input.

    Draws uniform ball perturbations, records the true-label probability
    and its gap to the strongest competitor, and interpolates both onto a
    grid over the perturbations' top-2 principal coordinates.
    """
    if m_samples < 50:
        raise ContractViolationError(f"need at least 50 samples, got {m_samples}")
    if grid_res < 8:
        raise ContractViolationError(f"grid resolution must be >= 8, got {grid_res}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolationError(f"landscape takes a single input vector, got shape {x.shape}")
    rng = SeededRng(derive_seed(seed, 47), stream=9)
    deltas = rng.uniform(-epsilon, epsilon, size=(m_samples, x.shape[0]))
    scores = model.forward_batch(x[None, :] + deltas)
    p = softmax_batch(scores)
    rows = np.arange(m_samples)
    y_arr = np.full(m_samples, y, dtype=np.int64)
    tau = tau_batch(p, y_arr)
    p_y = p[rows, y_arr]
    p_diff = p_y - p[rows, tau]
    coords, components = pca_2d(deltas)
    grid_x = np.linspace(coords[:, 0].min(), coords[:, 0].max(), grid_res)
    grid_y = np.linspace(coords[:, 1].min(), coords[:, 1].max(), grid_res)
    return LandscapeGrid(
        coords=coords,
        sample_p_y=p_y,
        sample_p_diff=p_diff,
        grid_x=grid_x,
        grid_y=grid_y,
        grid_p_y=idw_grid(coords, p_y, grid_x, grid_y),
        grid_p_diff=idw_grid(coords, p_diff, grid_x, grid_y),
        components=components,
    )


def timing_bench(model, methods, z: int, inputs, labels, repeats: int = 5, seed: int = 0) -> dict:
    """Wall-clock milliseconds per gradient step for each method over
    repeats, first (warm-up) run excluded. Single-threaded. The median is
    the robust figure; scheduler noise only ever inflates the mean."""
    from .attacks import AttackConfig, run_attack

    if repeats < 3:
        raise ContractViolationError(f"need at least 3 repeats, got {repeats}")
    plans = {}
    per_step = {}
    for method in methods:
        steps = 1 if method == "fgsm" else z
        plans[method] = (AttackConfig(method=method, total_steps=steps, seed=seed, threads=1), steps)
        per_step[method] = []
    # methods interleave within each repeat so background load hits them
    # alike, and the collector is paused so its sweeps (triggered by
    # allocation counts, which differ per method) don't skew the split
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for rep in range(repeats + 1):
            for method in methods:
                cfg, steps = plans[method]
                t0 = time.perf_counter()
                run_attack(model, inputs, labels, cfg)
                elapsed_ms = (time.perf_counter() - t0) * 1000.0
                if rep > 0:
                    per_step[method].append(elapsed_ms / steps)
    finally:
        if was_enabled:
            gc.enable()
    table = {}
    for method in methods:
        arr = np.array(per_step[method])
        table[method] = {
            "per_step_ms_mean": float(np.mean(arr)),
            "per_step_ms_median": float(np.median(arr)),
            "per_step_ms_std": float(np.std(arr)),
            "steps": plans[method][1],
        }
    return table

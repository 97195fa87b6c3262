"""Small ReLU MLP classifiers, synthetic datasets, SGD training (clean or
adversarial) and the binary weight/dataset file formats.

Models emit raw logits; softmax lives in the probability module so the
score-space gradients stay testable in isolation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import backend
from .core import SeededRng, derive_seed, ensure_finite
from .errors import ContractViolationError, FormatError, NumericalError

MODEL_MAGIC = b"SDMW"
DATA_MAGIC = b"SDMD"
FORMAT_VERSION = 1


class MlpModel:
    """Fully-connected ReLU network; weights[l] has shape (out, in)."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ContractViolationError("need one bias vector per weight matrix")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        dims = [self.weights[0].shape[1]]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ContractViolationError(f"layer {l}: weight {w.shape} incompatible with bias {b.shape}")
            if w.shape[1] != dims[-1]:
                raise ContractViolationError(f"layer {l}: expects input dim {w.shape[1]}, got {dims[-1]}")
            ensure_finite(w, f"layer {l} weights")
            ensure_finite(b, f"layer {l} biases")
            dims.append(w.shape[0])
        if dims[-1] < 3:
            raise ContractViolationError(f"output dim K={dims[-1]} must be >= 3")
        self.dims = dims

    @property
    def d(self) -> int:
        return self.dims[0]

    @property
    def k(self) -> int:
        return self.dims[-1]

    def forward_batch(self, x: np.ndarray, want_cache: bool = False):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ContractViolationError(f"batch shape {x.shape} does not match input dim {self.d}")
        return backend.forward_batch(self.weights, self.biases, x, want_cache)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits for a single input vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ContractViolationError(f"forward expects a vector, got shape {x.shape}")
        return self.forward_batch(x[None, :])[0]

    def input_grad_batch(self, acts, dl_ds: np.ndarray) -> np.ndarray:
        """dL/dx for a batch given the forward cache and dL/dlogits."""
        dl_ds = np.ascontiguousarray(dl_ds, dtype=np.float64)
        return backend.input_grad_batch(self.weights, acts, dl_ds)

    def input_gradient(self, x: np.ndarray, dl_ds: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        dl_ds = np.asarray(dl_ds, dtype=np.float64)
        if dl_ds.shape != (self.k,):
            raise ContractViolationError(f"dl_ds shape {dl_ds.shape} does not match K={self.k}")
        ensure_finite(dl_ds, "dl_ds")
        _, acts = self.forward_batch(x[None, :], want_cache=True)
        return self.input_grad_batch(acts, dl_ds[None, :])[0]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(dims, seed: int) -> MlpModel:
    """He-initialized MLP with zero biases; deterministic under seed."""
    if len(dims) < 2:
        raise ContractViolationError("need at least input and output dims")
    rng = SeededRng(seed, stream=11)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def finite_diff_input_gradient(model: MlpModel, x: np.ndarray, loss_eval, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar loss_eval(model, x)."""
    if not step > 0:
        raise ContractViolationError(f"step must be positive, got {step}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        hi, lo = float(loss_eval(model, xp)), float(loss_eval(model, xm))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericalError(f"loss evaluation non-finite at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * step)
    return grad


@dataclass
class DatasetSplit:
    """Inputs in [0,1]^d with zero-based integer labels."""

    inputs: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractViolationError(
                f"inputs {self.inputs.shape} and labels {self.labels.shape} do not align"
            )
        if self.inputs.shape[0] < 1:
            raise ContractViolationError("dataset must be non-empty")
        ensure_finite(self.inputs, "dataset inputs")
        if np.min(self.inputs) < 0.0 or np.max(self.inputs) > 1.0:
            raise ContractViolationError("dataset inputs must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ContractViolationError(f"labels out of range for K={self.k}")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


def synth_dataset(kind: str, n: int, d: int, k: int, spread: float, seed: int) -> DatasetSplit:
    """Balanced class-conditional synthetic data scaled into [0,1]^d.

    ``blobs`` puts Gaussian clouds around well-separated random centers;
    ``rings`` nests noisy circles in the first two coordinates.
    """
    if n < k:
        raise ContractViolationError(f"need n >= K, got n={n}, K={k}")
    if d < 2:
        raise ContractViolationError(f"need d >= 2, got d={d}")
    if k < 3:
        raise ContractViolationError(f"need K >= 3, got K={k}")
    if spread < 0:
        raise ContractViolationError(f"spread must be nonnegative, got {spread}")
    rng = SeededRng(seed, stream=7)
    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    xs, ys = [], []
    if kind == "blobs":
        centers = rng.uniform(0.2, 0.8, size=(k, d))
        for c, m in enumerate(counts):
            xs.append(centers[c] + rng.normal(0.0, spread, size=(m, d)))
            ys.append(np.full(m, c, dtype=np.int64))
    elif kind == "rings":
        radii = 0.1 + 0.35 * np.arange(k) / max(k - 1, 1)
        for c, m in enumerate(counts):
            theta = rng.uniform(0.0, 2.0 * np.pi, size=m)
            pts = np.full((m, d), 0.5)
            pts[:, 0] += radii[c] * np.cos(theta)
            pts[:, 1] += radii[c] * np.sin(theta)
            xs.append(pts + rng.normal(0.0, spread, size=(m, d)))
            ys.append(np.full(m, c, dtype=np.int64))
    else:
        raise ContractViolationError(f"unknown dataset kind {kind!r} (expected blobs or rings)")
    inputs = np.clip(np.concatenate(xs), 0.0, 1.0)
    labels = np.concatenate(ys)
    order = rng.permutation(n)
    return DatasetSplit(inputs[order], labels[order], k)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.1
    seed: int = 0
    adv_epsilon: float = 0.0
    adv_alpha: float = 0.0
    adv_steps: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ContractViolationError("epochs >= 0, batch_size >= 1, lr > 0 required")
        if self.adv_epsilon < 0 or self.adv_epsilon > 0.5:
            raise ContractViolationError(f"adversarial epsilon must be in [0, 0.5], got {self.adv_epsilon}")
        if self.adv_epsilon > 0 and (self.adv_alpha <= 0 or self.adv_steps < 1):
            raise ContractViolationError("adversarial training needs alpha > 0 and steps >= 1")

    @property
    def adversarial(self) -> bool:
        return self.adv_epsilon > 0


def _backward_params(model: MlpModel, x: np.ndarray, acts, dl_ds: np.ndarray):
    """Per-layer weight/bias gradients, summed over the batch."""
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    g = dl_ds
    for l in range(len(model.weights) - 1, -1, -1):
        a_in = x if l == 0 else acts[l - 1]
        grads_w[l] = g.T @ a_in
        grads_b[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ model.weights[l]) * (acts[l - 1] > 0.0)
    return grads_w, grads_b


def accuracy(model: MlpModel, inputs: np.ndarray, labels: np.ndarray) -> float:
    scores = model.forward_batch(inputs)
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def train(model: MlpModel, data: DatasetSplit, cfg: TrainConfig):
    """Minibatch SGD on cross-entropy; returns (model, per-epoch trace).

    With the adversarial block set, each batch is replaced by its PGD
    perturbation before the update. Fixed seed fixes the weight bytes.
    """
    if data.k != model.k:
        raise ContractViolationError(f"dataset K={data.k} does not match model K={model.k}")
    if data.d != model.d:
        raise ContractViolationError(f"dataset d={data.d} does not match model d={model.d}")
    from .attacks import AttackConfig, pgd

    trace = []
    n = data.n
    for epoch in range(cfg.epochs):
        order = SeededRng(derive_seed(cfg.seed, 101, epoch), stream=3).permutation(n)
        epoch_loss = 0.0
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = data.inputs[idx], data.labels[idx]
            if cfg.adversarial:
                adv_cfg = AttackConfig(
                    method="pgd",
                    norm="linf",
                    epsilon=cfg.adv_epsilon,
                    alpha=cfg.adv_alpha,
                    total_steps=cfg.adv_steps,
                    random_start=True,
                    seed=derive_seed(cfg.seed, 202, epoch, bi),
                )
                xb = pgd(model, xb, yb, adv_cfg).adv
            scores, acts = model.forward_batch(xb, want_cache=True)
            p = np.exp(scores - np.max(scores, axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            rows = np.arange(xb.shape[0])
            batch_loss = float(np.mean(-np.log(np.maximum(p[rows, yb], 1e-300))))
            if not np.isfinite(batch_loss):
                raise NumericalError(f"training diverged at epoch {epoch}, batch {bi}")
            dl_ds = p
            dl_ds[rows, yb] -= 1.0
            dl_ds /= xb.shape[0]
            grads_w, grads_b = _backward_params(model, xb, acts, dl_ds)
            for l in range(len(model.weights)):
                model.weights[l] -= cfg.lr * grads_w[l]
                model.biases[l] -= cfg.lr * grads_b[l]
            epoch_loss += batch_loss * xb.shape[0]
        trace.append(
            {
                "epoch": epoch,
                "loss": epoch_loss / n,
                "accuracy": accuracy(model, data.inputs, data.labels),
            }
        )
    return model, trace


def _read_exact(f, count: int, what: str):
    buf = f.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated file: wanted {count} bytes for {what} at offset {f.tell() - len(buf)}")
    return buf


def save_model(model: MlpModel, path: str) -> None:
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(model.weights)))
        f.write(struct.pack(f"<{len(model.dims)}I", *model.dims))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path: str) -> MlpModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0 (expected {MODEL_MAGIC!r})")
        version, layers = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version} at offset 4")
        if layers < 1 or layers > 64:
            raise FormatError(f"implausible layer count {layers} at offset 8")
        dims = struct.unpack(f"<{layers + 1}I", _read_exact(f, 4 * (layers + 1), "dims"))
        weights, biases = [], []
        for l in range(layers):
            out_d, in_d = dims[l + 1], dims[l]
            w = np.frombuffer(_read_exact(f, 8 * out_d * in_d, f"layer {l} weights"), dtype="<f8")
            b = np.frombuffer(_read_exact(f, 8 * out_d, f"layer {l} bias"), dtype="<f8")
            weights.append(w.reshape(out_d, in_d).copy())
            biases.append(b.copy())
        if f.read(1):
            raise FormatError(f"trailing bytes at offset {f.tell() - 1}")
    return MlpModel(weights, biases)


def write_sdmd(path: str, inputs: np.ndarray, labels: np.ndarray, k: int) -> None:
    """Raw tensor+labels writer; used for datasets and adversarial outputs."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    n, d = inputs.shape
    with open(path, "wb") as f:
        f.write(DATA_MAGIC)
        f.write(struct.pack("<IIII", FORMAT_VERSION, n, d, k))
        f.write(inputs.astype("<f8").tobytes())
        f.write(labels.astype("<u4").tobytes())


def read_sdmd(path: str):
    """Raw reader: (inputs, labels, k) without the [0,1] dataset checks."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DATA_MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0 (expected {DATA_MAGIC!r})")
        version, n, d, k = struct.unpack("<IIII", _read_exact(f, 16, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version} at offset 4")
        if n < 1 or d < 1:
            raise FormatError(f"implausible shape n={n}, d={d} at offset 8")
        inputs = np.frombuffer(_read_exact(f, 8 * n * d, "features"), dtype="<f8").reshape(n, d).copy()
        labels = np.frombuffer(_read_exact(f, 4 * n, "labels"), dtype="<u4").astype(np.int64)
        if f.read(1):
            raise FormatError(f"trailing bytes at offset {f.tell() - 1}")
    if labels.size and labels.max() >= k:
        raise FormatError(f"label {int(labels.max())} out of range for K={k}")
    return inputs, labels, k


def save_dataset(data: DatasetSplit, path: str) -> None:
    write_sdmd(path, data.inputs, data.labels, data.k)


def load_dataset(path: str) -> DatasetSplit:
    inputs, labels, k = read_sdmd(path)
    return DatasetSplit(inputs, labels, k)

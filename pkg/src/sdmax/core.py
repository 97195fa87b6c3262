"""Deterministic dense-array kernel: validation, elementary linear algebra,
norms, stable sorting and counter-based seeded randomness.

Everything operates on 64-bit float numpy arrays. All functions are pure;
values may be shared freely across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ContractViolationError

# Fixed chunk width for batch-parallel maps. Results must not depend on the
# thread count, so the chunking itself never does either.
DEFAULT_CHUNK = 128

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_U64 = (1 << 64) - 1


def as_tensor(data, shape=None) -> np.ndarray:
    """Return a C-contiguous float64 array, checking finiteness.

    ``shape``, when given, is enforced (reshape of a flat input is allowed).
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ContractViolationError(f"non-positive extent in shape {shape}")
        if arr.shape != shape:
            if arr.size != int(np.prod(shape)):
                raise ContractViolationError(
                    f"data length {arr.size} does not match shape {shape}"
                )
            arr = arr.reshape(shape)
    ensure_finite(arr, "tensor")
    return arr


def ensure_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ContractViolationError(f"{name} contains non-finite values")
    return arr


def matvec(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product W @ v with an explicit shape contract."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if w.ndim != 2 or v.ndim != 1 or w.shape[1] != v.shape[0]:
        raise ContractViolationError(
            f"matvec shape mismatch: W is {w.shape}, v is {v.shape}"
        )
    return w @ v


def sort_descending(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort a vector in non-increasing order.

    Returns ``(sorted, perm)`` with ``sorted[i] == v[perm[i]]``. Ties keep
    the original index order (stable).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ContractViolationError(f"sort_descending expects a non-empty vector, got shape {v.shape}")
    ensure_finite(v, "sort input")
    perm = np.argsort(-v, kind="stable")
    return v[perm], perm


def sort_descending_rows(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise stable descending sort of a (n, K) matrix."""
    perm = np.argsort(-p, axis=1, kind="stable")
    return np.take_along_axis(p, perm, axis=1), perm


def norm(v: np.ndarray, p: str) -> float:
    """Vector norm; ``p`` is ``"l2"`` or ``"linf"``."""
    v = np.asarray(v, dtype=np.float64)
    ensure_finite(v, "norm input")
    if p == "l2":
        return float(np.sqrt(np.sum(v * v)))
    if p == "linf":
        return float(np.max(np.abs(v))) if v.size else 0.0
    raise ContractViolationError(f"unknown norm {p!r} (expected 'l2' or 'linf')")


def clamp(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Elementwise max(lo, min(v, hi))."""
    if not lo <= hi:
        raise ContractViolationError(f"clamp bounds reversed: lo={lo} > hi={hi}")
    return np.clip(v, lo, hi)


def stable_argmax(v: np.ndarray) -> int:
    """Index of the maximum; ties resolve to the lowest index."""
    return int(np.argmax(v))


def derive_seed(seed: int, *parts: int) -> int:
    """Mix a base seed with integer tags into a new 64-bit seed (splitmix64)."""
    state = (int(seed) & _U64)
    for part in parts:
        state = (state + _SPLITMIX_GAMMA + (int(part) & _U64)) & _U64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
        state = z ^ (z >> 31)
    return state


class SeededRng:
    """Counter-based random stream keyed by (seed, stream index).

    Identical (seed, stream) pairs produce identical sequences on every
    platform; distinct streams are independent by Philox key separation.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _U64
        self.stream = int(stream) & _U64
        key = (self.stream << 64) | self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float, scale: float, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def dirichlet(self, alpha, size=None) -> np.ndarray:
        return self._gen.dirichlet(alpha, size)


def chunk_ranges(n: int, chunk: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def run_chunked(fn, n: int, threads: int = 1, chunk: int = DEFAULT_CHUNK) -> None:
    """Apply ``fn(lo, hi)`` over fixed-size row ranges, optionally threaded.

    The chunk boundaries are independent of ``threads`` and results are
    written into caller-owned slices, so outputs are identical at any
    thread count.
    """
    ranges = chunk_ranges(n, chunk)
    if threads <= 1 or len(ranges) <= 1:
        for lo, hi in ranges:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda r: fn(*r), ranges))

"""Compare the compiled kernel backend against the numpy fallback.

Times the two hot paths of an attack sweep -- the batched forward pass
and the batched input-gradient -- and one full attack run, for each
available backend. Also cross-checks that both backends produce the
same numbers before trusting the timings.

Run from a built checkout:

    python3 benchmarks/backend_bench.py
    python3 benchmarks/backend_bench.py --batch 2048 --dims 128,64,64,10
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from sdmax import backend
from sdmax.attacks import AttackConfig, run_attack
from sdmax.core import SeededRng
from sdmax.models import init_mlp


def parse_dims(text: str) -> tuple[int, ...]:
    dims = tuple(int(part) for part in text.split(","))
    if len(dims) < 2:
        raise argparse.ArgumentTypeError("need at least input,output dims")
    return dims


def time_kernels(model, x, dl_ds, repeats: int) -> tuple[float, float]:
    best_fwd = best_grad = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        scores, acts = model.forward_batch(x, want_cache=True)
        t1 = time.perf_counter()
        model.input_grad_batch(acts, dl_ds)
        t2 = time.perf_counter()
        best_fwd = min(best_fwd, t1 - t0)
        best_grad = min(best_grad, t2 - t1)
    return best_fwd * 1e3, best_grad * 1e3


def time_attack(model, x, y, repeats: int) -> float:
    cfg = AttackConfig(method="pgd", epsilon=0.1, alpha=0.025, total_steps=20, seed=3)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        run_attack(model, x, y, cfg)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=parse_dims, default=(64, 48, 48, 10),
                    help="comma-separated layer sizes (default 64,48,48,10)")
    ap.add_argument("--batch", type=int, default=512, help="batch size (default 512)")
    ap.add_argument("--repeats", type=int, default=20, help="timing repeats, best-of (default 20)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    names = backend.available()
    if len(names) < 2:
        print("compiled backend not built; timing the numpy fallback only", file=sys.stderr)

    model = init_mlp(args.dims, seed=args.seed)
    rng = SeededRng(args.seed, stream=3)
    x = np.asarray(rng.uniform(0.0, 1.0, size=(args.batch, args.dims[0])))
    y = np.asarray(rng.integers(0, args.dims[-1], size=args.batch))
    dl_ds = np.asarray(rng.normal(0.0, 1.0, size=(args.batch, args.dims[-1])))

    # agreement check first: timings of disagreeing kernels are meaningless
    outputs = {}
    for name in names:
        backend.use(name)
        scores, acts = model.forward_batch(x, want_cache=True)
        outputs[name] = (scores, model.input_grad_batch(acts, dl_ds))
    if len(names) == 2:
        ref_s, ref_g = outputs[names[0]]
        alt_s, alt_g = outputs[names[1]]
        worst = max(float(np.max(np.abs(ref_s - alt_s))), float(np.max(np.abs(ref_g - alt_g))))
        print(f"backend agreement: max |diff| = {worst:.3e}")
        if worst > 1e-12:
            print("backends disagree beyond 1e-12; aborting", file=sys.stderr)
            return 1

    print(f"dims={args.dims} batch={args.batch} repeats={args.repeats} (best-of)")
    print(f"{'backend':>8} {'forward ms':>12} {'input-grad ms':>14} {'pgd 20-step ms':>15}")
    rows = {}
    for name in names:
        backend.use(name)
        fwd, grad = time_kernels(model, x, dl_ds, args.repeats)
        atk = time_attack(model, x, y, max(3, args.repeats // 4))
        rows[name] = (fwd, grad, atk)
        print(f"{name:>8} {fwd:>12.3f} {grad:>14.3f} {atk:>15.1f}")
    if len(names) == 2:
        a, b = (rows[n] for n in names)
        print("speedup (numpy / compiled): "
              f"forward {b[0] / a[0]:.2f}x  input-grad {b[1] / a[1]:.2f}x  attack {b[2] / a[2]:.2f}x")
    backend.use("auto")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

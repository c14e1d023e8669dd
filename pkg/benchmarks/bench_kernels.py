"""Compare the compiled and numpy kernel backends.

Times each kernel on the shapes the default network produces for a batch of
32 inputs at 64x64, then one full training step (forward + backward) with
each backend swapped in. Also checks that both backends agree bit for bit.

    python benchmarks/bench_kernels.py [--repeats N] [--json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from cmr_orient import model as M
from cmr_orient.nn import backend

BATCH = 32
# (channels, height/width) seen by each conv block in the default network
CONV_SHAPES = [(3, 64), (16, 32), (32, 16)]
KERNEL = 3


def kernel_cases(rng):
    cases = []
    for c, s in CONV_SHAPES:
        xp = rng.random((BATCH, c, s + 2, s + 2)).astype(np.float32)
        cols_shape = (BATCH * s * s, c * KERNEL * KERNEL)
        dcols = rng.random(cols_shape).astype(np.float32)
        cases.append((f"im2col   C={c:<2d} {s}x{s}", lambda k, xp=xp, s=s: k.im2col(xp, KERNEL, 1, s, s)))
        cases.append((
            f"col2im   C={c:<2d} {s}x{s}",
            lambda k, d=dcols, c=c, s=s: k.col2im(d, BATCH, c, s + 2, s + 2, KERNEL, 1, s, s),
        ))
    for f, s in [(16, 64), (32, 32), (64, 16)]:
        x = rng.standard_normal((BATCH, f, s, s)).astype(np.float32)
        dout = rng.standard_normal((BATCH, f, s // 2, s // 2)).astype(np.float32)
        cases.append((f"pool fwd F={f:<2d} {s}x{s}", lambda k, x=x: k.maxpool2x2_forward(x)))
        _, idx = backend.load("python").maxpool2x2_forward(x)
        cases.append((f"pool bwd F={f:<2d} {s}x{s}", lambda k, d=dout, i=idx, s=s: k.maxpool2x2_backward(d, i, s, s)))
    return cases


def best_of(fn, repeats):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeats, number=number)) / number


def train_step_time(kernels, repeats):
    rng = np.random.default_rng(0)
    params = M.init_params(M.OrientNetConfig(), rng)
    x = rng.random((BATCH, 3, 64, 64)).astype(np.float32)
    y = rng.integers(0, 8, BATCH)
    saved = backend.kernels
    backend.kernels = kernels
    try:
        return best_of(lambda: M.loss_and_grad(params, x, y, training=True), repeats)
    finally:
        backend.kernels = saved


def check_agreement(cases, names):
    mods = [backend.load(n) for n in names]
    for label, fn in cases:
        outs = [fn(m) for m in mods]
        ref = outs[0] if isinstance(outs[0], tuple) else (outs[0],)
        for other in outs[1:]:
            other = other if isinstance(other, tuple) else (other,)
            for a, b in zip(ref, other):
                if not np.array_equal(a, b):
                    raise SystemExit(f"backends disagree on {label}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    names = backend.available()
    if "cython" not in names:
        print("compiled kernels not built; only the numpy backend is available", file=sys.stderr)
    cases = kernel_cases(np.random.default_rng(0))
    check_agreement(cases, names)

    rows = []
    for label, fn in cases:
        rows.append({"case": label, **{n: best_of(lambda f=fn, m=backend.load(n): f(m), args.repeats) for n in names}})
    rows.append({"case": "train step (batch 32)", **{n: train_step_time(backend.load(n), args.repeats) for n in names}})

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    header = f"{'case':<26}" + "".join(f"{n + ' ms':>12}" for n in names) + ("     speedup" if len(names) > 1 else "")
    print(header)
    print("-" * len(header))
    for r in rows:
        line = f"{r['case']:<26}" + "".join(f"{r[n] * 1e3:12.3f}" for n in names)
        if len(names) > 1:
            line += f"{r['python'] / r['cython']:11.2f}x"
        print(line)


if __name__ == "__main__":
    main()

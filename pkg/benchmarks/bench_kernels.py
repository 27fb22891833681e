#!/usr/bin/env python3
"""Compare the numba kernels with their pure-numpy fallbacks.

Each kernel is timed on shapes the desk-scale model actually produces, after
a warm-up call that pays the JIT cost, and both outputs are checked for
agreement.  ``--end-to-end`` also times one forward+backward pass over a
synthetic clip in two subprocesses, one per backend.

    python benchmarks/bench_kernels.py [--repeat N] [--end-to-end]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from textkg import kernels


def timeit(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def cases(rng):
    rows, keys, d = 4 * 120, 120, 64
    logits = rng.standard_normal((rows, keys))
    mask = np.where(rng.random((keys, keys)) < 0.3, -np.inf, 0.0)
    mask[:, 0] = 0.0
    y = kernels.np_masked_softmax(logits, mask)[0]
    dy = rng.standard_normal(y.shape)
    x = rng.standard_normal((keys, d))
    gain, bias = rng.standard_normal(d), rng.standard_normal(d)
    _, xhat, rstd = kernels.np_layer_norm(x, gain, bias)
    h = rng.standard_normal((keys, 4 * d))
    a = rng.integers(0, 40, 60)
    b = rng.integers(0, 40, 60)
    return [
        ("masked_softmax", "masked_softmax", (logits, mask)),
        ("softmax_backward", "softmax_backward", (y, dy)),
        ("layer_norm", "layer_norm", (x, gain, bias)),
        ("layer_norm_backward", "layer_norm_backward", (rng.standard_normal(x.shape), xhat, rstd, gain)),
        ("gelu", "gelu", (h,)),
        ("gelu_backward", "gelu_backward", (h, rng.standard_normal(h.shape))),
        ("lcs_length", "lcs_length", (a, b)),
    ]


def kernel_table(repeat):
    if kernels.BACKEND != "numba":
        print("numba backend disabled (TEXTKG_DISABLE_NUMBA set); nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy us':>12}{'numba us':>12}{'speedup':>10}{'max diff':>12}")
    for label, name, args in cases(rng):
        np_fn = getattr(kernels, "np_" + name)
        nb_fn = getattr(kernels, name)
        t_np = timeit(np_fn, args, repeat)
        t_nb = timeit(nb_fn, args, repeat)
        diff = max_diff(np_fn(*args), nb_fn(*args))
        print(f"{label:<22}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}{diff:>12.2e}")


CLIP_SNIPPET = """
import time, tempfile
from textkg import autograd as ag, pipeline, synthetic, kernels
from textkg.config import RunConfig
from textkg.training import clip_loss
d = tempfile.mkdtemp()
synthetic.generate(d, seed=0)
cfg = RunConfig.load(d + "/config.json")
res = pipeline.load_resources(cfg)
clips = pipeline.prepare_clips(res, cfg)
model = pipeline.new_model(res, cfg)
def step():
    model.zero_grad()
    for c in clips:
        ag.backward(clip_loss(model, c, 0.5, 0.5))
step()
best = min(timed(step) for _ in range({repeat}))
print(kernels.BACKEND, best / len(clips))
"""


def end_to_end(repeat):
    snippet = "import time\ndef timed(f):\n    s = time.perf_counter(); f(); return time.perf_counter() - s\n"
    snippet += CLIP_SNIPPET.format(repeat=repeat)
    print("\nforward+backward per clip (d_model=64, N=2)")
    for flag in ("0", "1"):
        env = dict(os.environ, TEXTKG_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", snippet], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:<8}{float(out[1]) * 1e3:8.2f} ms")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--end-to-end", action="store_true")
    args = parser.parse_args()
    kernel_table(args.repeat)
    if args.end_to_end:
        end_to_end(max(3, args.repeat // 10))


if __name__ == "__main__":
    main()

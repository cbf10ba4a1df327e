"""Time the numba kernels against the numpy fallback on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Each kernel is called once untimed (JIT compilation), then timed as the best
of ``--repeat`` calls. A final row times one LeNet-300-100 training step per
backend in a subprocess, since the backend is fixed at import.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from sltgates import kernels

NP = kernels.numpy_impl
NB = kernels.numba_impl


def best_of(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    f32 = np.float32
    mu = rng.normal(0.5, 0.5, size=(300, 784)).astype(f32)
    g = rng.normal(size=mu.shape).astype(f32)
    x64 = rng.normal(size=266_200)
    logits = rng.normal(size=(128, 10)).astype(f32)
    labels = rng.integers(0, 10, size=128)
    img = rng.normal(size=(128, 32, 14, 14)).astype(f32)
    conv_in = rng.normal(size=(128, 1, 28, 28)).astype(f32)

    def im2col(x):
        return lambda impl: (lambda: impl.im2col(x, 3, 3, 1, 1))

    def col2im(x):
        cols = NP.im2col(x, 3, 3, 1, 1)
        return lambda impl: (lambda: impl.col2im(cols, x.shape, 3, 3, 1, 1))

    def pool_grad(impl):
        out, arg = impl.maxpool2d(img, 2)
        return lambda: impl.maxpool2d_grad(out, arg, img.shape, 2)

    def adam(impl):
        p, m, v = np.zeros_like(mu), np.zeros_like(mu), np.zeros_like(mu)
        return lambda: impl.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)

    return {
        "clamp01 300x784": lambda impl: (lambda: impl.clamp01(mu)),
        "clamp01_grad 300x784": lambda impl: (lambda: impl.clamp01_grad(mu, g)),
        "relu_grad 300x784": lambda impl: (lambda: impl.relu_grad(mu, g)),
        "normal_cdf 266200": lambda impl: (lambda: impl.normal_cdf(x64)),
        "softmax_xent 128x10": lambda impl: (lambda: impl.softmax_xent(logits, labels)),
        "im2col 128x1x28x28": im2col(conv_in),
        "col2im 128x1x28x28": col2im(conv_in),
        "im2col 128x32x14x14": im2col(img),
        "col2im 128x32x14x14": col2im(img),
        "maxpool2d 128x32x14x14": lambda impl: (lambda: impl.maxpool2d(img, 2)),
        "maxpool2d_grad 128x32x14x14": pool_grad,
        "adam_update 300x784": adam,
    }


STEP_SNIPPET = """
import time, numpy as np
from sltgates.pipeline import RunConfig, build_network, _Method, DataSplits
from sltgates.data import Dataset
from sltgates.gates import NoiseSource
from sltgates.optim import Adam
from sltgates.tensor import Tape, Tensor, backward, precision
rng = np.random.default_rng(0)
ds = Dataset(rng.normal(size=(128, 1, 28, 28)).astype(np.float32), rng.integers(0, 10, 128))
cfg = RunConfig(arch=ARCH)
with precision("float32"):
    net = build_network(cfg, DataSplits(ds, ds, ds))
    method = _Method(net, cfg)
    opt = Adam(method.params)
    noise = NoiseSource(0)
    tape = Tape()
    x = Tensor._wrap(ds.images, False)
    def step():
        tape.reset()
        with tape:
            loss, _, _ = method.step_loss(x, ds.labels, noise)
            backward(loss)
        opt.step()
        opt.zero_grad()
    step()
    best = min((lambda t0: (step(), time.perf_counter() - t0)[1])(time.perf_counter()) for _ in range(REPEAT))
print(best)
"""


def train_step_time(arch: str, backend_flag: str, repeat: int) -> float:
    env = {**os.environ, "SLT_NUMBA": backend_flag}
    code = STEP_SNIPPET.replace("ARCH", repr(arch)).replace("REPEAT", str(repeat))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", default=None)
    ap.add_argument("--skip-steps", action="store_true", help="kernel rows only")
    args = ap.parse_args(argv)
    if NB is None:
        print("numba not installed; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    for name, make in cases(rng).items():
        t_np = best_of(make(NP), args.repeat)
        t_nb = best_of(make(NB), args.repeat)
        rows.append({"case": name, "numpy_ms": 1e3 * t_np, "numba_ms": 1e3 * t_nb,
                     "speedup": t_np / t_nb})
    if not args.skip_steps:
        for arch in ("lenet300", "smallconv"):
            reps = max(3, args.repeat // 4)
            t_np = train_step_time(arch, "0", reps)
            t_nb = train_step_time(arch, "1", reps)
            rows.append({"case": f"train step {arch} bs128", "numpy_ms": 1e3 * t_np,
                         "numba_ms": 1e3 * t_nb, "speedup": t_np / t_nb})
    width = max(len(r["case"]) for r in rows)
    print(f"{'case':<{width}}  {'numpy ms':>10}  {'numba ms':>10}  {'speedup':>8}")
    for r in rows:
        print(f"{r['case']:<{width}}  {r['numpy_ms']:>10.3f}  {r['numba_ms']:>10.3f}  {r['speedup']:>7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())

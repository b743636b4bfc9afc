"""Compare the compiled kernels with the numpy fallback on mnist-qcnn shapes.

    python benchmarks/bench_kernels.py [--repeat N]

Also times one full training step with each backend (run in a subprocess,
because the backend is fixed at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from qvnn import _kernels_py as py

try:
    from qvnn import _ckernels as cy
except ImportError:
    cy = None

STEP = """
import numpy as np, qvnn
from qvnn import preset, loss_and_grads
m = preset("mnist-qcnn")
rng = np.random.default_rng(0)
x, y = rng.uniform(size=(4, 32, 1, 28, 28)), rng.integers(0, 10, 32)
loss_and_grads(m, x, y, rng)
import timeit
print(qvnn.BACKEND, min(timeit.repeat(lambda: loss_and_grads(m, x, y, rng), number=1, repeat={n})))
"""


def cases(rng):
    x1 = rng.normal(size=(4, 32, 1, 28, 28))
    x2 = rng.normal(size=(4, 32, 16, 13, 13))
    p1 = rng.normal(size=(4, 32, 16, 26, 26))
    out = {}
    for name, x, k in (("im2col conv1", x1, 3), ("im2col conv2", x2, 3)):
        cols = py.im2col(x, k, k, 1, 0)
        out[name] = (lambda m, x=x, k=k: m.im2col(x, k, k, 1, 0))
        out[name.replace("im2col", "col2im")] = (lambda m, c=cols, s=x.shape, k=k: m.col2im(c, s, k, k, 1, 0))
    _, arg = py.maxpool_forward(p1, 2)
    g = rng.normal(size=(4, 32, 16, 13, 13))
    out["maxpool fwd"] = lambda m: m.maxpool_forward(p1, 2)
    out["maxpool bwd"] = lambda m: m.maxpool_backward(g, arg, p1.shape, 2)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if cy is None:
        sys.exit("compiled extension not built; run `pip install --no-build-isolation -e .` first")
    print(f"{'kernel':<16}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_py:>10.2f}{t_cy:>11.2f}{t_py / t_cy:>8.1f}x")
    print("\ntraining step, batch 32 (seconds):")
    for flag in ("1", "0"):
        env = {**os.environ, "QVNN_PURE_PYTHON": flag}
        res = subprocess.run([sys.executable, "-c", STEP.format(n=args.repeat)], env=env,
                             capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        print(f"  {backend:<8}{float(secs):.4f}")


if __name__ == "__main__":
    main()

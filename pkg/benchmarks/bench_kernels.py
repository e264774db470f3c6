"""Time the numba and numpy patch kernels and one conv forward/backward.

    python benchmarks/bench_kernels.py [--repeat 20]

Each backend runs in its own interpreter because the choice is fixed at
import time by MMV_KERNELS.
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, timeit
import numpy as np
from mmv import _kernels as K
from mmv import tensor as T

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
cases = {
    "stem 3x3x3 s1": ((8, 8, 32, 32, 8), (3, 3, 3), (1, 1, 1)),
    "block 3x3x3 s2": ((8, 8, 16, 16, 16), (3, 3, 3), (1, 2, 2)),
    "audio 1x3x3": ((8, 1, 64, 80, 8), (1, 3, 3), (1, 1, 1)),
}
out = {"backend": K.BACKEND}
for name, (shape, k, s) in cases.items():
    x = rng.standard_normal(shape).astype(np.float32)
    xp = np.pad(x, [(0, 0)] + [(kk // 2, kk // 2) for kk in k] + [(0, 0)])
    osz = tuple((xp.shape[i + 1] - k[i]) // s[i] + 1 for i in range(3))
    K.im2col(xp, k, s, osz)  # warm-up / jit compile
    cols = K.im2col(xp, k, s, osz)
    K.col2im(cols, xp.shape, s)
    w = T.Tensor(rng.standard_normal((*k, shape[-1], 16)).astype(np.float32) * 0.1, requires_grad=True)
    xt = T.Tensor(x, requires_grad=True)
    pad = tuple((kk // 2, kk // 2) for kk in k)

    def fwd_bwd():
        with T.GradientTape() as tape:
            y = T.sum(T.conv3d(xt, w, None, s, pad))
        tape.gradient(y, {"w": w, "x": xt})

    fwd_bwd()
    out[name] = {
        "im2col_ms": 1e3 * min(timeit.repeat(lambda: K.im2col(xp, k, s, osz), number=1, repeat=repeat)),
        "col2im_ms": 1e3 * min(timeit.repeat(lambda: K.col2im(cols, xp.shape, s), number=1, repeat=repeat)),
        "conv_fwd_bwd_ms": 1e3 * min(timeit.repeat(fwd_bwd, number=1, repeat=max(3, repeat // 4))),
    }
print(json.dumps(out))
"""


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    results = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, MMV_KERNELS=backend)
        proc = subprocess.run([sys.executable, "-c", CHILD, str(args.repeat)], env=env,
                              capture_output=True, text=True, check=True)
        results[backend] = json.loads(proc.stdout)
    print(f"{'case':<16} {'metric':<16} {'numba ms':>10} {'numpy ms':>10} {'ratio':>7}")
    for case, row in results["numba"].items():
        if case == "backend":
            continue
        for metric, t_nb in row.items():
            t_np = results["numpy"][case][metric]
            print(f"{case:<16} {metric:<16} {t_nb:10.2f} {t_np:10.2f} {t_np / t_nb:7.2f}")


if __name__ == "__main__":
    main()

"""Compare the numba and numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``.  Each kernel is timed on the
augmented lattice of the 66-node slice (P~ = 80**2 lattice pairs); a full
structured fit is timed in a subprocess per backend, since the backend is
fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ssvm import _kernels
from ssvm._kernels import HINGE, NUMPY_KERNELS, NUMBA_KERNELS
from ssvm.connectome import build_augmentation
from ssvm.simulate import reference_slice

FIT_SNIPPET = """
import time
import numpy as np
from ssvm import SolverConfig, fit, BACKEND
from ssvm.simulate import SimulationParams, generate_dataset
params = SimulationParams.reference_default(seed=0)
data, _ = generate_dataset(params, 50, 50)
cfg = SolverConfig("{reg}", lam=2**-7, gamma=2**-8, max_iters={iters}, eps=1e-12)
fit(data, SolverConfig("{reg}", lam=2**-7, gamma=2**-8, max_iters=2), parc=params.parc)
t0 = time.perf_counter()
m = fit(data, cfg, parc=params.parc)
print(BACKEND, m.iterations_run, time.perf_counter() - t0)
"""


def _time(fn, repeat):
    fn()  # compile / warm
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat):
    amap = build_augmentation(reference_slice())
    shape = amap.shape6
    P = amap.p_tilde
    rng = np.random.default_rng(0)
    w = rng.normal(size=P)
    z = rng.normal(size=12 * P)
    t = rng.normal(size=12 * P)
    mask = amap.mask
    margins = rng.normal(size=100)
    cases = {
        "diff_forward": lambda k: k["diff_forward"](w, shape),
        "diff_adjoint": lambda k: k["diff_adjoint"](z, shape),
        "soft_threshold": lambda k: k["soft_threshold"](t, 0.1),
        "vc_fused": lambda k: k["vc_fused"](t, mask, 0.1),
        "vc_graphnet": lambda k: k["vc_graphnet"](t, mask, 0.1, 1.0),
        "loss_prox": lambda k: k["loss_prox"](HINGE, margins, 0.01, 0.0),
    }
    print(f"lattice shape {shape}, P~={P}, rows={12 * P}")
    print(f"{'kernel':<16}{'numpy [us]':>12}{'numba [us]':>12}{'speedup':>10}")
    for name, call in cases.items():
        t_np = _time(lambda: call(NUMPY_KERNELS), repeat) * 1e6
        if NUMBA_KERNELS:
            t_nb = _time(lambda: call(NUMBA_KERNELS), repeat) * 1e6
            print(f"{name:<16}{t_np:12.1f}{t_nb:12.1f}{t_np / t_nb:10.2f}")
        else:
            print(f"{name:<16}{t_np:12.1f}{'n/a':>12}")


def bench_fit(reg, iters):
    print(f"\nfull {reg} fit, {iters} iterations, n=100, p=2145")
    for flag in ("0", "1"):
        if flag == "1" and not _kernels.HAVE_NUMBA:
            continue
        env = dict(os.environ, SSVM_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", FIT_SNIPPET.format(reg=reg, iters=iters)],
                             env=env, capture_output=True, text=True, check=True)
        backend, n, secs = res.stdout.split()
        print(f"  {backend:<6} {float(secs):8.3f} s  ({1e3 * float(secs) / int(n):.2f} ms/iter)")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--skip-fit", action="store_true")
    args = ap.parse_args(argv)
    bench_kernels(args.repeat)
    if not args.skip_fit:
        for reg in ("fused_lasso", "graphnet"):
            bench_fit(reg, args.iters)


if __name__ == "__main__":
    main()

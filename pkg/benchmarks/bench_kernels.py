"""Time the compiled kernels against the NumPy fallback on burst-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from dopplersync import codec, kernels, pf, rw
from dopplersync.channel import PriorSpec, rng_stream
from dopplersync.graph import uniform_pmfs


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    H, _ = codec.load_code()
    row_ptr, edge_col = H.csr
    c = codec.encode(rng.integers(0, 2, H.k), H)
    llr = 1.2 * (1 - 2.0 * c) + rng.normal(0, 1.6, H.n_cols)

    L = 534
    y = np.exp(1j * rng.uniform(-np.pi, np.pi)) * (1 - 2.0 * rng.integers(0, 2, L))
    y = y + 0.5 * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    inc = uniform_pmfs(L)
    inc[:30] = [1.0, 0.0]
    grid = rw.build_kernel(100, rw.sigma_w2_from_priors(PriorSpec(), L))
    local = rw.local_messages(y, inc, 0.5, grid.angles)

    return {
        "bp_decode (504 bits, 50 it max)": lambda be: kernels.bp_decode(llr, row_ptr, edge_col, 50, 38.0, be),
        "forward_backward (L=534, N_q=100)": lambda be: kernels.forward_backward(local, grid.kernel, be),
        "pf_filter (L=534, N=400)": lambda be: pf.run_filter(
            y, inc, 0.5, PriorSpec(), pf.PFConfig(400, backend=be), rng_stream(1), 30),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["python"] + (["compiled"] if kernels.HAVE_COMPILED else [])
    print(f"{'kernel':40s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases().items():
        t = [best_of(lambda: fn(b), args.repeat) for b in backends]
        line = f"{name:40s}" + "".join(f"{x * 1e3:10.2f}ms" for x in t)
        if len(t) > 1:
            line += f"{t[0] / t[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()

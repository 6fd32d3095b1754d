"""Compare the numba kernels with their numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``. Kernel timings use both
implementations in one process. The end-to-end timing runs a short chain on
the reference map in two subprocesses, one with ``AREALWOMB_DISABLE_NUMBA=1``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from arealwomb import _kernels as k

CHAIN = """
import time
from arealwomb.sampler import ChainConfig, PriorSpec, run_chain
from arealwomb.simulate import SimScenario, generate
out = generate(SimScenario(seed=1))
cfg = ChainConfig(iterations={it}, burn_in={it} // 2, seed=1, K=15)
run_chain(out.observed(0), out.graph, out.scenario.disease_graph, PriorSpec(),
          ChainConfig(iterations=4, burn_in=2, seed=1, K=15))  # compile
t = time.perf_counter()
run_chain(out.observed(0), out.graph, out.scenario.disease_graph, PriorSpec(), cfg)
print(time.perf_counter() - t)
"""


def sweep_inputs(rng, n, K=15):
    M = rng.normal(size=(n, n))
    prec = M @ M.T / n + np.eye(n)
    gamma = rng.normal(size=n)
    sd = rng.uniform(0.5, 2, size=n)
    cum = np.cumsum(rng.dirichlet(np.ones(K)))
    cum[-1] = 1.0
    return dict(gamma=gamma, pg=prec @ gamma, prec=prec, sd=sd, cum=cum, theta=rng.normal(size=K),
                lin=rng.normal(size=n), y=rng.poisson(3, size=n).astype(float), obs=np.ones(n, bool),
                step=np.full(n, 0.5), normals=rng.normal(size=n), logu=np.log(rng.random(n)),
                labels=k.assign_labels_numpy(gamma / sd, cum))


def best_of(fn, repeat):
    fn()  # warm up, triggers compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    inp = sweep_inputs(rng, 232)  # q * n for the reference design
    for name, fn in (("numba", k.gamma_sweep_numba), ("numpy", k.gamma_sweep_numpy)):
        rows.append(("gamma_sweep n=232", name, best_of(
            lambda fn=fn: fn(**{a: (v.copy() if isinstance(v, np.ndarray) else v) for a, v in inp.items()}),
            repeat)))
    z = rng.normal(size=232)
    for name, fn in (("numba", k.assign_labels_numba), ("numpy", k.assign_labels_numpy)):
        rows.append(("assign_labels n=232", name, best_of(lambda fn=fn: fn(z, inp["cum"]), repeat)))
    labels = rng.integers(0, 15, size=(2500, 232)).astype(np.int64)
    a = rng.integers(0, 58, size=139).astype(np.int64)
    b = rng.integers(0, 58, size=139).astype(np.int64)
    for name, fn in (("numba", k.edge_inequality_freq_numba), ("numpy", k.edge_inequality_freq_numpy)):
        rows.append(("edge_freq S=2500 m=139", name, best_of(lambda fn=fn: fn(labels, a, b, a, b, True), repeat)))
    return rows


def bench_chain(iterations):
    out = {}
    for name, flag in (("numba", ""), ("numpy", "1")):
        env = dict(os.environ, AREALWOMB_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", CHAIN.format(it=iterations)], env=env,
                             capture_output=True, text=True, check=True)
        out[name] = float(res.stdout.strip().splitlines()[-1])
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--iterations", type=int, default=400, help="chain length for the end-to-end timing")
    p.add_argument("--skip-chain", action="store_true")
    args = p.parse_args()
    if not k.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    print(f"{'kernel':<26}{'backend':<9}{'seconds':>12}")
    rows = bench_kernels(args.repeat)
    for label, name, t in rows:
        print(f"{label:<26}{name:<9}{t:>12.6f}")
    for i in range(0, len(rows), 2):
        print(f"{rows[i][0]:<26}{'speedup':<9}{rows[i + 1][2] / rows[i][2]:>11.1f}x")
    if not args.skip_chain:
        t = bench_chain(args.iterations)
        print(f"\nreference chain, {args.iterations} iterations")
        for name, s in t.items():
            print(f"  {name:<7}{s:8.2f} s")
        print(f"  speedup {t['numpy'] / t['numba']:.1f}x")


if __name__ == "__main__":
    main()

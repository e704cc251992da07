"""Compare the compiled and pure-python kernels on propagation workloads.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--nodes 500] [--channels 12]

Reports wall time per kernel for both backends plus the speedup.  The
results also sanity-check agreement between the two implementations.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dirinet import _corepy, backend
from dirinet.graph import build_adjacency, transition_coupled

try:
    from dirinet import _core
except ImportError:
    _core = None


def build_case(n_nodes: int, n_channels: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_nodes - 1):
        rows.append((f"s{i}", f"s{i + 1}", float(rng.uniform(400, 1200))))
        rows.append((f"s{i + 1}", f"s{i}", float(rng.uniform(400, 1200))))
    extra = n_nodes * 3
    seen = {(a, b) for a, b, _ in rows}
    while extra:
        i, j = rng.integers(0, n_nodes, 2)
        pair = (f"s{i}", f"s{j}")
        if i != j and pair not in seen:
            seen.add(pair)
            rows.append((*pair, float(rng.uniform(600, 4000))))
            extra -= 1
    g = build_adjacency(rows, sigma=1500.0)
    m = transition_coupled(g).matrix
    obs = np.sort(rng.choice(n_nodes, size=n_nodes // 2, replace=False))
    vals = np.ascontiguousarray(rng.uniform(20, 70, (obs.size, n_channels)))
    x0 = np.zeros((n_nodes, n_channels))
    x0[obs] = vals
    return m, x0, obs.astype(np.int32), vals


def timeit(fn, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=500)
    ap.add_argument("--channels", type=int, default=12)
    ap.add_argument("--iters", type=int, default=90)
    args = ap.parse_args()

    if _core is None:
        print("compiled extension not built; nothing to compare")
        return

    m, x0, obs, vals = build_case(args.nodes, args.channels)
    indptr, indices, data = backend.csr_components(m)
    m_t = m.T.tocsr()
    indptr_t, indices_t, data_t = backend.csr_components(m_t)
    dense = np.ascontiguousarray(np.random.default_rng(1).normal(
        size=(args.nodes, args.channels)))

    cases = {
        "csr_matmat": (
            lambda: _core.csr_matmat(indptr, indices, data, args.nodes, dense),
            lambda: _corepy.csr_matmat(indptr, indices, data, args.nodes, dense),
        ),
        "propagate_sweeps": (
            lambda: _core.propagate_sweeps(
                indptr, indices, data, x0, obs, vals, args.iters, 0.0
            ),
            lambda: _corepy.propagate_sweeps(
                indptr, indices, data, x0, obs, vals, args.iters, 0.0
            ),
        ),
        "sweep_gradient": (
            lambda: _core.sweep_gradient(
                indptr_t, indices_t, data_t, dense, obs, args.iters
            ),
            lambda: _corepy.sweep_gradient(
                indptr_t, indices_t, data_t, dense, obs, args.iters
            ),
        ),
    }

    print(f"nodes={args.nodes} channels={args.channels} iters={args.iters}")
    print(f"{'kernel':<18}{'compiled':>12}{'python':>12}{'speedup':>10}")
    for name, (fast, slow) in cases.items():
        a, b = fast(), slow()
        ref = a[0] if isinstance(a, tuple) else a
        alt = b[0] if isinstance(b, tuple) else b
        assert np.allclose(ref, alt, atol=1e-12), f"{name}: backends disagree"
        t_fast = timeit(fast)
        t_slow = timeit(slow)
        print(
            f"{name:<18}{t_fast * 1e3:>10.2f}ms{t_slow * 1e3:>10.2f}ms"
            f"{t_slow / t_fast:>9.1f}x"
        )


if __name__ == "__main__":
    main()

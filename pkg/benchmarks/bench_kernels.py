"""Benchmark: compiled kernel core vs the pure-numpy fallback.

Times the two hot primitives (edge gather/scatter and grouped max) across
batch sizes, then a full training epoch routed through each backend.

Usage:
    python benchmarks/bench_kernels.py [--repeats 5]

Select a backend globally with HGNN_KERNELS=python|compiled; this script
times both explicitly regardless of the default selection.
"""

import argparse
import time

import numpy as np

from hgnn import kernels
from hgnn.eventlog import BinningPolicy, encode_dataset, generate_synthetic_log
from hgnn.models import LayerSpec, ModelConfig, build_model
from hgnn.training import OptimizerConfig, SchedulerConfig, TrialConfig, train


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_primitives(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for n_nodes, n_edges, d in [(500, 450, 32), (5_000, 4_500, 64), (50_000, 45_000, 128)]:
        x = rng.normal(size=(n_nodes, d))
        src = rng.integers(0, n_nodes, size=n_edges).astype(np.int64)
        dst = rng.integers(0, n_nodes, size=n_edges).astype(np.int64)
        w = rng.random(n_edges)
        for name in kernels.available_backends():
            mod = kernels.get_backend(name)

            def scatter():
                out = np.zeros((n_nodes, d))
                mod.edge_scatter_add(out, src, dst, w, x)

            def emax():
                mod.edge_max(src, dst, x, n_nodes)

            rows.append((f"scatter n={n_nodes} d={d}", name, _time(scatter, repeats)))
            rows.append((f"edge_max n={n_nodes} d={d}", name, _time(emax, repeats)))
    return rows


def bench_epoch(repeats):
    traces, schema = generate_synthetic_log(200, seed=0)
    ds = encode_dataset(traces, schema, BinningPolicy("< 5", 4), seed=0)
    cfg = TrialConfig(
        model=ModelConfig(
            architecture="two_level", operator="gin",
            gnn_layers=[LayerSpec(64, "relu"), LayerSpec(64, "relu")],
            sequence_dense_layers=[LayerSpec(32, "relu")],
            final_dense_layers=[LayerSpec(32, "relu")],
            pooling="add", output_size=ds.dims["n_classes"],
        ),
        optimizer=OptimizerConfig(kind="adam", learning_rate=1e-3,
                                  adam_beta1=0.9, adam_beta2=0.999),
        scheduler=SchedulerConfig(kind="exponential", gamma=0.99),
        loss="cross_entropy", batch_size=64,
    )
    rows = []
    for name in kernels.available_backends():
        mod = kernels.get_backend(name)
        saved = (kernels.edge_scatter_add, kernels.scatter_add_rows,
                 kernels.edge_max, kernels.edge_max_backward)
        kernels.edge_scatter_add = mod.edge_scatter_add
        kernels.scatter_add_rows = mod.scatter_add_rows
        kernels.edge_max = mod.edge_max
        kernels.edge_max_backward = mod.edge_max_backward
        try:
            def one_epoch():
                model = build_model(cfg.model, ds.dims, seed=1)
                train(model, ds.train, ds.val, cfg, max_epochs=1, patience=None, seed=1)

            rows.append(("train epoch (200 cases, 2x64 gin)", name, _time(one_epoch, repeats)))
        finally:
            (kernels.edge_scatter_add, kernels.scatter_add_rows,
             kernels.edge_max, kernels.edge_max_backward) = saved
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"available backends: {backends} (default: {kernels.backend_name()})\n")
    rows = bench_primitives(args.repeats) + bench_epoch(max(2, args.repeats // 2))

    by_case = {}
    for case, backend, seconds in rows:
        by_case.setdefault(case, {})[backend] = seconds
    width = max(len(c) for c in by_case)
    print(f"{'case'.ljust(width)}  {'python':>12} {'compiled':>12} {'speedup':>8}")
    for case, times in by_case.items():
        py = times.get("python")
        cy = times.get("compiled")
        speed = f"{py / cy:7.2f}x" if py and cy else "     n/a"
        cy_s = f"{cy * 1e3:9.2f}ms" if cy else "        -"
        print(f"{case.ljust(width)}  {py * 1e3:9.2f}ms {cy_s} {speed}")


if __name__ == "__main__":
    main()

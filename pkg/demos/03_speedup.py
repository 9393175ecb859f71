"""How much work does skipping the full traversal save?

A handful of random trees near 300 nodes, each fed telemetry no condition
watches (sparse) and single condition flips (dense). R is classical time over
asynchronous time.
"""

from abtm.bench import BenchConfig, run_bench

cfg = BenchConfig(tree_count=6, target_nodes=300, target_band=0.1, samples=500, repetitions=2, seed=1)
report = run_bench(cfg)
for row in report.rows:
    print(f"tree {row.tree_id}  {row.nodes:3d} nodes  {row.mode:6}  R = {row.R:6.2f}  same outputs: {row.equivalent}")
for mode, stats in report.aggregate().items():
    print(f"{mode}: median R {stats['median_R']:.2f}")

"""Desk-scale ablation: IDW vs implicit volume, with and without pose refinement.

Takes a few minutes on one core.  Writes demo_metrics.csv in the working
directory in the same eight-column layout the CLI uses.

Run:  python demos/03_implicit_vs_explicit.py [seed]
"""
import sys

from implicitvol import benchmark, metrics

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = benchmark.BenchmarkConfig()
print(f"phantom {cfg.side}^3, {cfg.n_slices} slices of {cfg.image_size}^2, {cfg.epochs} epochs")

results = benchmark.run_all(cfg, seed)
rows = []
for name, r in results.items():
    rows += r.rows
    ssim = "  ".join(f"{p} {v:.3f}" for p, v in r.ssim.items())
    print(f"{name:15s} SSIM {ssim}   angle {r.angle_initial:.3f} -> {r.angle_final:.3f} rad"
          f"   distance {r.distance_initial:.2f} -> {r.distance_final:.2f} px   ({r.seconds:.0f} s)")

metrics.write_metrics_csv("demo_metrics.csv", rows)
print("wrote demo_metrics.csv")

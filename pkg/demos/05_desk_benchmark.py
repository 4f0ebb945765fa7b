"""Compare TCAN against the geometric-mean and ridge baselines on a reduced synthetic benchmark.

Pass a cascade count to change the size, e.g. ``python3 05_desk_benchmark.py 2000``.
"""
import sys

from tcan.baseline import feature_baseline, geometric_mean_report
from tcan.benchmark import make_benchmark
from tcan.model import ModelConfig
from tcan.training import evaluate, train

n = int(sys.argv[1]) if len(sys.argv) > 1 else 500
b = make_benchmark(n_keep=n, seed=0)
print(f"{n} cascades, t_obs={b.t_obs:.3f}, drawn {b.n_raw} raw cascades")
print(f"geometric mean  test MSLE {geometric_mean_report(b.split).msle:.3f}")
print(f"ridge           test MSLE {feature_baseline(b.split)[0].msle:.3f}")
for variant in ("full", "NT"):
    params, h = train(b.split, ModelConfig(variant=variant, max_epochs=30))
    rep = evaluate(b.split.test, params)
    print(f"TCAN-{variant:4s}      test MSLE {rep.msle:.3f}  (best epoch {h.best_epoch}, R2 {rep.r2:.3f})")

"""Generate synthetic cascades, look at their size distribution, then window and split them."""
import numpy as np

from tcan.benchmark import join_time_quantile
from tcan.cascade import build_views, filter_dataset, split_dataset
from tcan.synthgen import GenConfig, generate

for mu in (0.5, 0.9):
    cs = generate(GenConfig(n_cascades=1000, branching_mean=mu, seed=0))
    sizes = np.array([c.size for c in cs])
    print(f"mu={mu}: mean size {sizes.mean():.2f}, median {np.median(sizes):.0f}, max {sizes.max()}, "
          f"singletons {np.mean(sizes == 1):.2f}")

cs = generate(GenConfig(n_cascades=1000, seed=0))
t_obs = join_time_quantile(cs, 0.3)
views = filter_dataset([build_views(c, t_obs, 10.0) for c in cs], 10)
split = split_dataset(views, (0.7, 0.15, 0.15), 0)
print(f"observation window [0, {t_obs:.3f}] keeps {len(views)} cascades with >= 10 observed nodes")
print(f"split sizes {len(split.train)}/{len(split.val)}/{len(split.test)}")
v = split.train[0]
print(f"cascade {v.cascade_id}: {v.observed_size} observed nodes, {v.label} more join by t=10")

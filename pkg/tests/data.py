"""Small corpora shared by the training, baseline and CLI tests."""
from tcan.cascade import build_views, filter_dataset, split_dataset
from tcan.model import ModelConfig
from tcan.synthgen import GenConfig, generate

TINY = dict(d=8, d_t=8, heads=2, d_h=8, mlp_dims=(16, 16, 1), cgat_layers=2, batch_size=8)


def tiny_views(n=40, seed=0, min_obs=2, max_size=30):
    cs = generate(GenConfig(n_cascades=4 * n, seed=seed, max_size=max_size))
    views = filter_dataset([build_views(c, 1.5, 10.0) for c in cs], min_obs)
    return views[:n]


def tiny_split(n=40, seed=0):
    return split_dataset(tiny_views(n, seed), (0.6, 0.2, 0.2), seed)


def tiny_cfg(**kw):
    return ModelConfig(**{**TINY, **kw})


def overfit_views(n=16):
    """Small cascades (3 to 20 observed nodes) used by the overfit checks."""
    cs = generate(GenConfig(n_cascades=400, seed=0, max_size=40))
    views = [build_views(c, 1.5, 10.0) for c in cs]
    return [v for v in views if 3 <= v.observed_size <= 20][:n]


def overfit_cascades(n=16):
    ids = {v.cascade_id for v in overfit_views(n)}
    return [c for c in generate(GenConfig(n_cascades=400, seed=0, max_size=40)) if c.id in ids]

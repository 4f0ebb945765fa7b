"""Drive the training loss on 16 small cascades close to zero, as a wiring check."""
from tcan.cascade import build_views, split_dataset
from tcan.model import ModelConfig
from tcan.synthgen import GenConfig, generate
from tcan.training import evaluate, train

cs = generate(GenConfig(n_cascades=400, seed=0, max_size=40))
views = [v for v in (build_views(c, 1.5, 10.0) for c in cs) if 3 <= v.observed_size <= 20][:16]
split = split_dataset(views, (1, 0, 0), 0)
split.val = views  # validate on the training cascades themselves
params, hist = train(split, ModelConfig(batch_size=16, max_steps=2000, max_epochs=2000, patience=2000),
                     on_epoch=lambda e, tl, v: print(f"epoch {e:3d}  train {tl:.4f}  msle {v:.4f}"),
                     stop_below=0.05)
print(f"reached {evaluate(views, params).msle:.4f} after {hist.steps} steps ({hist.stop_reason})")

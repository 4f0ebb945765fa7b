"""Train briefly, then read the graph-attention weights for one cascade, layer by layer.

Each layer only lets a node attend to itself and its parent, so information
from further ancestors arrives one hop per layer.
"""
import numpy as np

from tcan.cascade import Cascade, Record, build_views, filter_dataset, split_dataset
from tcan.model import ModelConfig, forward
from tcan.numerics import no_grad
from tcan.synthgen import GenConfig, generate
from tcan.training import train

# a root with three direct reposts, one of which starts a chain
recs = [Record(None, "r", 0.0), Record("r", "a", 0.1), Record("r", "b", 0.2), Record("r", "c", 0.3),
        Record("a", "d", 0.5), Record("d", "e", 0.8)]
probe = build_views(Cascade("probe", "r", 0.0, recs), 1.0, 10.0)

views = filter_dataset([build_views(c, 1.0, 10.0) for c in generate(GenConfig(n_cascades=600, seed=1))], 3)
split = split_dataset(views + [probe], (0.8, 0.2, 0.0), 0)
if not any(v is probe for v in split.train):
    split.train.append(probe)
cfg = ModelConfig(d=16, d_t=16, heads=2, d_h=16, max_epochs=3)
params, _ = train(split, cfg)
with no_grad():
    out, info = forward(probe, params, explain=True)
np.set_printoptions(precision=2, suppress=True)
print("nodes", probe.node_ids, "predicted log2(1+y)", float(out.data[0, 0]))
for l, layer in enumerate(info["trace"]):
    print(f"layer {l}, head 0 (each row attends to itself and its parent)")
    print(layer[0])

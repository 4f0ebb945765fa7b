"""The full popularity model: features + time embedding -> graph and sequence
encoders -> MLP head predicting log2(1 + incremental popularity)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Sequence

import numpy as np

from .cascade import CascadeViews
from .graph_encoder import CGATLayerParams, attention_mask, encode_graph
from .numerics import T
from .numerics.tensor import Parameter, Tensor
from .rng import stream
from .sequence_encoder import APParams, BiLSTMLayer, LSTMParams, attn_pool, bilstm_stack
from .time_embedding import NodeFeatureTable, TEParams, embed_sequence, fuse, time_dim

VARIANTS = ("full", "NT", "PL", "G", "S", "RNN")


@dataclass
class ModelConfig:
    d: int = 32
    d_t: int = 32
    cgat_layers: int = 3
    heads: int = 4
    csat_layers: int = 2
    d_h: int = 64
    mlp_dims: tuple[int, ...] = (64, 64, 1)
    ffn_mult: int = 2
    lr: float = 1e-3
    weight_decay: float = 5e-4
    dropout: float = 0.1
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 100
    max_steps: int | None = None
    seed: int = 0
    variant: str = "full"
    mask: str = "directed"  # or "symmetric"
    residual: str = "outer"  # or "conventional"
    normalize_time: bool = False

    def __post_init__(self):
        self.mlp_dims = tuple(int(x) for x in self.mlp_dims)
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d < 1 or self.d_t < 3:
            raise ValueError("need d >= 1 and d_t >= 3 (one periodic channel plus linear and sqrt)")
        if self.d_h < 2 or self.d_h % 2:
            raise ValueError("d_h must be even (split across the two directions)")
        if self.cgat_layers < 1 or self.csat_layers < 1:
            raise ValueError("need at least one CGAT and one CSAT layer")
        if not self.mlp_dims or self.mlp_dims[-1] != 1:
            raise ValueError("mlp_dims must end in 1")
        if self.mask not in ("directed", "symmetric"):
            raise ValueError(f"unknown mask mode {self.mask!r}")
        if self.residual not in ("outer", "conventional"):
            raise ValueError(f"unknown residual mode {self.residual!r}")
        if self.width % self.cgat_heads:
            raise ValueError(f"{self.cgat_heads} heads do not divide CGAT width {self.width}")

    @property
    def periodic_dim(self) -> int:
        return self.d_t - 2

    @property
    def te_mode(self) -> str:
        return {"NT": "none", "PL": "pl"}.get(self.variant, "full")

    @property
    def width(self) -> int:
        """Node-row width after fusing features and time embedding (the CGAT width)."""
        return self.d + time_dim(self.periodic_dim, self.te_mode)

    @property
    def cgat_heads(self) -> int:
        # the PL width (d + d_t - 1) is usually odd: fall back to the largest divisor
        for k in range(self.heads, 0, -1):
            if self.width % k == 0:
                return k
        return 1

    @property
    def uses_graph(self) -> bool:
        return self.variant != "S"

    @property
    def uses_sequence(self) -> bool:
        return self.variant != "G"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mlp_dims"] = list(self.mlp_dims)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DataStats:
    t_obs: float
    gap_range: tuple[float, float]
    label_mean: float = 0.0


def data_stats(views: Sequence[CascadeViews]) -> DataStats:
    """Quantities used to initialise the time embedding and the output bias."""
    if not views:
        raise ValueError("no views")
    gaps = []
    for v in views:
        par = np.asarray(v.parents)
        child = np.nonzero(par >= 0)[0]
        gaps.append(v.times[child] - v.times[par[child]])
    gaps = np.concatenate(gaps) if gaps else np.zeros(0)
    gaps = gaps[gaps > 0]
    t_obs = float(max(v.t_obs for v in views))
    gap_range = (float(gaps.min()), float(gaps.max())) if gaps.size else (t_obs, t_obs)
    label_mean = float(np.mean([np.log2(v.label + 1.0) for v in views]))
    return DataStats(t_obs, gap_range, label_mean)


@dataclass
class TCANParams:
    cfg: ModelConfig
    features: NodeFeatureTable
    te: TEParams | None
    cgat: list[CGATLayerParams]
    csat: list[BiLSTMLayer]
    ap: APParams | None
    mlp: list[tuple[Parameter, Parameter]]
    stats: DataStats = field(default=None)

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        yield "features", self.features.F
        if self.te is not None:
            yield from self.te.named_parameters("te")
        for i, layer in enumerate(self.cgat):
            yield from layer.named_parameters(f"cgat.layer{i}")
        for i, layer in enumerate(self.csat):
            yield from layer.fwd.named_parameters(f"csat.layer{i}.fwd")
            yield from layer.bwd.named_parameters(f"csat.layer{i}.bwd")
        if self.ap is not None:
            yield from self.ap.named_parameters("csat.ap")
        for i, (w, b) in enumerate(self.mlp):
            yield f"mlp.layer{i}.w", w
            yield f"mlp.layer{i}.b", b

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for name, p in self.named_parameters():
            p.name = name
            out[name] = p
        return out

    def load_state(self, arrays: dict[str, np.ndarray]):
        mine = self.parameters()
        missing = set(mine) - set(arrays)
        extra = set(arrays) - set(mine)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in mine.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {a.shape} vs {p.data.shape}")
            p.data[...] = a

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}


def init_params(cfg: ModelConfig, vocab: Sequence[str], stats: DataStats) -> TCANParams:
    """Fresh parameters; each tensor draws from its own named stream so variants
    share initial values wherever shapes agree."""
    rng_for = lambda name: stream(cfg.seed, "init/" + name)
    features = NodeFeatureTable(vocab, cfg.d, rng_for("features"))
    te = None
    if cfg.te_mode != "none":
        te = TEParams.init(cfg.periodic_dim, stats.t_obs, stats.gap_range, rng_for("te"))
    cgat = []
    if cfg.uses_graph:
        cgat = [CGATLayerParams.init(cfg.width, cfg.cgat_heads, cfg.ffn_mult * cfg.width, rng_for,
                                     f"cgat.layer{i}", conventional=cfg.residual == "conventional")
                for i in range(cfg.cgat_layers)]
    csat, ap = [], None
    if cfg.uses_sequence:
        hid = cfg.d_h // 2
        in_dim = cfg.width
        for i in range(cfg.csat_layers):
            csat.append(BiLSTMLayer(LSTMParams.init(in_dim, hid, rng_for, f"csat.layer{i}.fwd"),
                                    LSTMParams.init(in_dim, hid, rng_for, f"csat.layer{i}.bwd")))
            in_dim = cfg.d_h
        if cfg.variant != "RNN":
            ap = APParams.init(cfg.d_h, rng_for)
    mlp = []
    fan_in = cfg.width + cfg.d_h
    for i, out in enumerate(cfg.mlp_dims):
        lim = np.sqrt(6.0 / (fan_in + out))
        w = rng_for(f"mlp.layer{i}.w").uniform(-lim, lim, size=(fan_in, out))
        b = np.zeros((1, out))
        if i == len(cfg.mlp_dims) - 1:
            b[:] = stats.label_mean
        mlp.append((Parameter(w, f"mlp.layer{i}.w"), Parameter(b, f"mlp.layer{i}.b")))
        fan_in = out
    params = TCANParams(cfg, features, te, cgat, csat, ap, mlp, stats)
    params.parameters()  # assign names
    return params


@dataclass
class Batch:
    """Cascades padded to a common length ``n``; row b's valid prefix is ``lengths[b]``."""

    ids: list[str]
    views: list[CascadeViews]
    node_ids: list[list[str]]
    lengths: np.ndarray  # (B,)
    node_mask: np.ndarray  # (B, n) bool
    times: np.ndarray  # (B, n), 0 on padding
    parents: np.ndarray  # (B, n) dense parent index, -1 for root and padding
    t_obs: np.ndarray  # (B,)
    labels: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return len(self.ids)

    def attention_mask(self, symmetric: bool = False) -> np.ndarray:
        """B x n x n: row i sees itself and (directed) its parent; padded rows see only themselves."""
        B, n = self.node_mask.shape
        adj = np.zeros((B, n, n), dtype=bool)
        b, i = np.nonzero(self.parents >= 0)
        adj[b, self.parents[b, i], i] = True
        mask = np.swapaxes(adj, 1, 2).copy()
        if symmetric:
            mask |= adj
        mask[:, np.arange(n), np.arange(n)] = True
        return mask


def make_batch(views: Sequence[CascadeViews]) -> Batch:
    if not views:
        raise ValueError("empty batch")
    B = len(views)
    n = max(v.observed_size for v in views)
    lengths = np.array([v.observed_size for v in views], dtype=np.int64)
    node_mask = np.arange(n)[None, :] < lengths[:, None]
    times = np.zeros((B, n))
    parents = np.full((B, n), -1, dtype=np.int64)
    for b, v in enumerate(views):
        times[b, :v.observed_size] = v.times
        parents[b, :v.observed_size] = v.parents
    return Batch(
        ids=[v.cascade_id for v in views],
        views=list(views),
        node_ids=[list(v.node_ids) for v in views],
        lengths=lengths,
        node_mask=node_mask,
        times=times,
        parents=parents,
        t_obs=np.array([v.t_obs for v in views], dtype=np.float64),
        labels=np.array([v.label for v in views], dtype=np.float64),
    )


def forward_batch(batch: Batch, params: TCANParams, train: bool = False,
                  rng: np.random.Generator | None = None, explain: bool = False):
    """Predicted log2(1 + popularity) for every cascade in the batch, shape B x 1."""
    cfg = params.cfg
    p_drop = cfg.dropout if train else 0.0
    B, n = batch.node_mask.shape
    rows = np.zeros((B, n), dtype=np.int64)
    for b, ids in enumerate(batch.node_ids):
        rows[b, :len(ids)] = params.features.rows(ids)
    fmask = batch.node_mask.astype(np.float64)[..., None]
    x = T.mul(T.take_rows(params.features.F, rows), fmask)
    times = batch.times / batch.t_obs[:, None] if cfg.normalize_time else batch.times
    h_t = embed_sequence(times, params.te, cfg.te_mode) if params.te is not None else None
    xbar = fuse(x, h_t)
    if xbar.shape[-1] != cfg.width:
        raise RuntimeError(f"fused width {xbar.shape[-1]} != expected {cfg.width}")

    info = {}
    if cfg.uses_graph:
        mask = batch.attention_mask(symmetric=cfg.mask == "symmetric")
        h_g, trace = encode_graph(xbar, mask, params.cgat, train, rng, p_drop, cfg.residual,
                                  node_mask=batch.node_mask)
        info["trace"] = trace
    else:
        h_g = T.Tensor(np.zeros((B, cfg.width)))
    if cfg.uses_sequence:
        h_s_all, lhs = bilstm_stack(xbar, params.csat, lengths=batch.lengths)
        h_s = lhs if cfg.variant == "RNN" else attn_pool(h_s_all, params.ap, node_mask=batch.node_mask)
    else:
        h_s = T.Tensor(np.zeros((B, cfg.d_h)))
    h = T.concat([h_g, h_s], axis=-1)
    info["h_g"], info["h_s"] = h_g.data, h_s.data

    last = len(params.mlp) - 1
    for i, (w, b) in enumerate(params.mlp):
        h = T.add(T.matmul(h, w), b)
        if i < last:
            h = T.dropout(T.tanh(h), p_drop, train, rng)
            if i == last - 1:
                info["representation"] = h.data.copy()
    if explain:
        return h, info
    return h


def forward(views: CascadeViews, params: TCANParams, train: bool = False,
            rng: np.random.Generator | None = None, explain: bool = False):
    """Single-cascade forward; returns a 1 x 1 tensor (and an info dict with ``explain``).

    ``info["trace"][l][h]`` is the n x n attention matrix of head ``h`` in layer ``l``;
    ``info["representation"]`` the penultimate MLP activation.
    """
    out = forward_batch(make_batch([views]), params, train, rng, explain)
    if not explain:
        return out
    o, info = out
    if "trace" in info:
        info["trace"] = [[a[0] for a in layer] for layer in info["trace"]]
    return o, info


def to_popularity(o) -> np.ndarray:
    """Map log-space outputs to non-negative popularity: 2**o - 1, clamped at 0."""
    o = np.minimum(np.asarray(o, dtype=np.float64), 1000.0)
    return np.maximum(np.exp2(o) - 1.0, 0.0)

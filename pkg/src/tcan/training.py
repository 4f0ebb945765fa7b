"""Training loop, evaluation metrics and model checkpoints.

Every quantity is measured on the ``log2(x + 1)`` scale.  The network output
``o`` already lives there, so the training loss is a plain squared error in
``o``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cascade import CascadeViews, DatasetSplit
from .model import (Batch, DataStats, ModelConfig, TCANParams, data_stats, forward_batch,
                    init_params, make_batch, to_popularity)
from .numerics import T
from .numerics.checkpoint import dump_params, load_params
from .numerics.optim import AdamHyper, adam_step
from .numerics.tensor import NonFiniteError
from .rng import stream

log = logging.getLogger(__name__)

# max padded node rows (batch rows x longest cascade) in one forward pass
TOKEN_BUDGET = 2048


class TrainingDiverged(FloatingPointError):
    """Loss or an intermediate became NaN/Inf; carries where it happened."""

    def __init__(self, msg: str, diagnostics: dict):
        super().__init__(msg)
        self.diagnostics = diagnostics


def log2p(x) -> np.ndarray:
    return np.log2(np.asarray(x, dtype=np.float64) + 1.0)


def msle_loss(y: Sequence[float], y_hat: Sequence[float]) -> float:
    """Mean of (log2(y+1) - log2(y_hat+1))**2."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.size == 0:
        raise ValueError("msle_loss of an empty sample")
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if (y <= -1).any() or (y_hat <= -1).any():
        raise ValueError("values must exceed -1 for the log2(x+1) shift")
    return float(np.mean((log2p(y) - log2p(y_hat)) ** 2))


def log_metrics(y, y_hat) -> dict[str, float]:
    """MSLE, MAE and R^2 of the log2(x+1)-transformed values."""
    a = log2p(y)
    b = log2p(y_hat)
    if a.size == 0:
        raise ValueError("metrics of an empty sample")
    err = a - b
    ss_res = float(np.sum(err ** 2))
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    return {"msle": float(np.mean(err ** 2)), "mae": float(np.mean(np.abs(err))), "r2": r2}


@dataclass
class EvalReport:
    msle: float
    mae: float
    r2: float
    rows: list[tuple[str, float, float]]  # (cascade id, y, y_hat)
    curves: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, ids, y, y_hat, curves=None) -> "EvalReport":
        order = sorted(range(len(ids)), key=lambda i: _id_key(ids[i]))
        rows = [(str(ids[i]), float(y[i]), float(y_hat[i])) for i in order]
        m = log_metrics([r[1] for r in rows], [r[2] for r in rows])
        return cls(m["msle"], m["mae"], m["r2"], rows, dict(curves or {}))

    def to_dict(self) -> dict:
        return {"msle": self.msle, "mae": self.mae, "r2": self.r2, "n": len(self.rows),
                "predictions": [list(r) for r in self.rows], "curves": self.curves}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        rows = [(str(i), float(y), float(p)) for i, y, p in d["predictions"]]
        return cls(d["msle"], d["mae"], d["r2"], rows, d.get("curves", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "y", "y_hat"])
        for i, y, p in self.rows:
            w.writerow([i, repr(y), repr(p)])
        return buf.getvalue()

    def write(self, stem):
        """Write ``<stem>.json`` and ``<stem>.csv``; returns both paths."""
        stem = Path(stem)
        js, cs = stem.with_suffix(".json"), stem.with_suffix(".csv")
        js.write_text(self.to_json())
        cs.write_text(self.to_csv())
        return js, cs


def _id_key(cid):
    # numeric ids sort numerically, everything else after them lexically
    s = str(cid)
    return (0, int(s), s) if s.isdigit() else (1, 0, s)


def micro_batches(views: Sequence[CascadeViews], budget: int = TOKEN_BUDGET) -> list[list[int]]:
    """Split indices into size-sorted groups whose padded area stays within ``budget``."""
    order = sorted(range(len(views)), key=lambda i: (views[i].observed_size, i))
    groups, cur = [], []
    for i in order:
        n = views[i].observed_size
        if cur and (len(cur) + 1) * n > budget:
            groups.append(cur)
            cur = []
        cur.append(i)
    if cur:
        groups.append(cur)
    return groups


def predict_log(views: Sequence[CascadeViews], params: TCANParams, workers: int = 1) -> np.ndarray:
    """Eval-mode network outputs o = log2(1 + y_hat), in input order."""
    if not views:
        raise ValueError("no cascades to predict")
    groups = micro_batches(views)

    def run(g):
        with T.no_grad():
            return forward_batch(make_batch([views[i] for i in g]), params).data[:, 0]

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            outs = list(ex.map(run, groups))
    else:
        outs = [run(g) for g in groups]
    o = np.empty(len(views))
    for g, out in zip(groups, outs):
        o[g] = out
    return o


def evaluate(views: Sequence[CascadeViews], params: TCANParams, workers: int = 1) -> EvalReport:
    """Metrics of the eval-mode model on ``views``; rows ordered by cascade id."""
    o = predict_log(views, params, workers)
    return EvalReport.from_predictions([v.cascade_id for v in views],
                                       [v.label for v in views], to_popularity(o))


def batch_loss_backward(views: Sequence[CascadeViews], params: TCANParams, rng, train: bool = True) -> float:
    """Mean squared log error over ``views``; accumulates its gradient into the parameters.

    The batch is run as padded micro-batches; each contributes
    ``sum((o - log2(y+1))**2) / len(views)`` so the gradients add up to those of the
    batch mean.
    """
    total = 0.0
    for g in micro_batches(views):
        b = make_batch([views[i] for i in g])
        o = forward_batch(b, params, train=train, rng=rng)
        target = log2p(b.labels)[:, None]
        loss = T.scale(T.sum(T.square(T.sub(o, target))), 1.0 / len(views))
        T.backward(loss)
        total += loss.item()
    return total


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)  # mean batch loss per epoch
    val_msle: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    steps: int = 0
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def build_vocab(split: DatasetSplit) -> list[str]:
    """Every node id in the split, in first-seen order (train, val, test)."""
    seen = {}
    for part in (split.train, split.val, split.test):
        for v in part:
            for n in v.node_ids:
                seen.setdefault(n, None)
    return list(seen)


def train(split: DatasetSplit, cfg: ModelConfig, params: TCANParams | None = None,
          on_epoch: Callable[[int, float, float], None] | None = None, stop_below: float | None = None):
    """Mini-batch Adam on the batch-mean squared log error, with early stopping.

    An epoch that does not lower the best validation MSLE counts against
    ``cfg.patience``; training stops once more than ``patience`` such epochs
    have run in a row, at ``cfg.max_epochs``, or after ``cfg.max_steps``
    optimizer steps.  With ``stop_below`` it also stops as soon as the
    validation MSLE drops below that value.  Returns the parameters of the best validation epoch and
    the history.
    """
    if not split.train or not split.val:
        raise ValueError("training needs non-empty train and validation sets")
    if params is None:
        params = init_params(cfg, build_vocab(split), data_stats(split.train))
    named = params.parameters()
    plist = list(named.values())
    for p in plist:
        p.zero_grad()
        p.adam_m[...] = 0.0
        p.adam_v[...] = 0.0
    hyper = AdamHyper(lr=cfg.lr, weight_decay=cfg.weight_decay)
    hist = History()
    best_state = params.state()
    bad = 0
    train_views = list(split.train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = stream(cfg.seed, "shuffle", epoch).permutation(len(train_views))
        drop_rng = stream(cfg.seed, "dropout", epoch)
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_views[i] for i in order[lo:lo + cfg.batch_size]]
            try:
                loss = batch_loss_backward(batch, params, drop_rng)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"batch loss is {loss}")
            except NonFiniteError as e:
                diag = {"epoch": epoch, "step": hist.steps + 1, "batch_ids": [v.cascade_id for v in batch],
                        "last_losses": hist.step_loss[-5:], "error": str(e)}
                T.clear_tape()
                raise TrainingDiverged(f"training diverged at epoch {epoch}, step {hist.steps + 1}: {e}", diag) from e
            hist.steps += 1
            adam_step(plist, hyper, hist.steps)
            losses.append(loss)
            hist.step_loss.append(loss)
            if cfg.max_steps is not None and hist.steps >= cfg.max_steps:
                break
        val = evaluate(split.val, params).msle
        hist.epoch.append(epoch)
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_msle.append(val)
        log.info("epoch %d  train %.4f  val %.4f", epoch, hist.train_loss[-1], val)
        if on_epoch is not None:
            on_epoch(epoch, hist.train_loss[-1], val)
        if val < hist.best_val:
            hist.best_val, hist.best_epoch, bad = val, epoch, 0
            best_state = params.state()
        else:
            bad += 1
        if stop_below is not None and val < stop_below:
            hist.stop_reason = "target"
            break
        if bad > cfg.patience:
            hist.stop_reason = "early_stop"
            break
        if cfg.max_steps is not None and hist.steps >= cfg.max_steps:
            hist.stop_reason = "max_steps"
            break
    else:
        hist.stop_reason = "max_epochs"
    params.load_state(best_state)
    return params, hist


# -- checkpoints ------------------------------------------------------------

def model_to_json(params: TCANParams, extra: dict | None = None) -> str:
    meta = {
        "config": params.cfg.to_dict(),
        "vocab": list(params.features.vocab),
        "stats": {"t_obs": params.stats.t_obs, "gap_range": list(params.stats.gap_range),
                  "label_mean": params.stats.label_mean},
    }
    if extra:
        meta["extra"] = extra
    return dump_params(params.parameters(), meta)


def model_from_json(text: str) -> TCANParams:
    arrays, meta = load_params(text)
    for key in ("config", "vocab", "stats"):
        if key not in meta:
            raise ValueError(f"checkpoint metadata lacks {key!r}")
    cfg = ModelConfig.from_dict(meta["config"])
    s = meta["stats"]
    stats = DataStats(s["t_obs"], tuple(s["gap_range"]), s["label_mean"])
    params = init_params(cfg, meta["vocab"], stats)
    params.load_state({k: v.data for k, v in arrays.items()})
    return params


def save_model(path, params: TCANParams, extra: dict | None = None):
    Path(path).write_text(model_to_json(params, extra))


def load_model(path) -> TCANParams:
    return model_from_json(Path(path).read_text())

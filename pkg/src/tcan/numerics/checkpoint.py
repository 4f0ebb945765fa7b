"""JSON checkpoints: name -> shape + flat float list, plus free-form metadata.

Python's float repr is the shortest string that round-trips, so values
come back bit-for-bit.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Parameter

FORMAT_VERSION = 1


def dump_params(params: Mapping[str, Parameter], meta: dict | None = None) -> str:
    body = {
        "format": "tcan-checkpoint",
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in params.items()
        },
    }
    return json.dumps(body)


def load_params(text: str) -> tuple[dict[str, Parameter], dict]:
    body = json.loads(text)
    if body.get("format") != "tcan-checkpoint":
        raise ValueError("not a tcan checkpoint")
    if body.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {body.get('version')}")
    params = {}
    for name, rec in body["params"].items():
        arr = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        params[name] = Parameter(arr, name=name)
    return params, body.get("meta", {})


def save_checkpoint(path, params: Mapping[str, Parameter], meta: dict | None = None):
    Path(path).write_text(dump_params(params, meta))


def load_checkpoint(path) -> tuple[dict[str, Parameter], dict]:
    return load_params(Path(path).read_text())

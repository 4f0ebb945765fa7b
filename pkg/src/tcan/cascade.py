"""Cascade data model: parsing, observation windows, filtering and splitting.

A cascade is a repost tree with timestamps.  The on-disk format is one
cascade per line::

    <id>\t<root>\t<publish_time>\t<num_records>\t<path>:<t> <path>:<t> ...

where each path is ``root/.../parent/child`` and ``t`` is the child's join
time as an offset from ``publish_time``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .rng import stream


class CascadeFormatError(ValueError):
    """Raised for malformed or inconsistent cascade lines."""


@dataclass(frozen=True)
class Record:
    parent: str | None
    child: str
    time: float


@dataclass
class Cascade:
    id: str
    root: str
    publish_time: float
    records: list[Record]

    def __post_init__(self):
        self._parent = {r.child: r.parent for r in self.records}
        self._time = {r.child: r.time for r in self.records}

    @property
    def size(self) -> int:
        return len(self.records)

    def join_time(self, node: str) -> float:
        return self._time[node]

    def parent(self, node: str) -> str | None:
        return self._parent[node]

    def path(self, node: str) -> list[str]:
        out = [node]
        while (p := self._parent[out[-1]]) is not None:
            out.append(p)
        return out[::-1]

    def edges(self) -> list[tuple[str, str, float]]:
        return [(r.parent, r.child, r.time) for r in self.records if r.parent is not None]


@dataclass
class CascadeGraph:
    node_index: dict[str, int]
    adjacency: np.ndarray  # bool, (a, b) true iff edge a -> b


@dataclass
class CascadeSequence:
    nodes: list[int]
    times: list[float]


@dataclass
class CascadeViews:
    cascade_id: str
    node_ids: list[str]
    graph: CascadeGraph
    sequence: CascadeSequence
    times: np.ndarray
    observed_size: int
    label: int
    t_obs: float
    t_end: float
    parents: list[int] = field(default_factory=list)  # dense parent index, -1 for root


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    split_seed: int
    ratios: tuple[float, float, float]


def format_number(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _parse_float(tok: str, lineno: int, what: str) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise CascadeFormatError(f"line {lineno}: bad {what} {tok!r}") from None
    if not math.isfinite(val) or val < 0:
        raise CascadeFormatError(f"line {lineno}: {what} must be finite and non-negative, got {tok!r}")
    return val


def _sort_key(root: str):
    return lambda r: (r.time, r.child != root, r.child)


def parse_line(line: str, lineno: int = 1) -> Cascade:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 5:
        raise CascadeFormatError(f"line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
    cid, root, pub, num, body = parts
    if not cid or not root:
        raise CascadeFormatError(f"line {lineno}: empty id or root")
    publish_time = _parse_float(pub, lineno, "publish_time")
    try:
        num_records = int(num)
    except ValueError:
        raise CascadeFormatError(f"line {lineno}: bad record count {num!r}") from None
    toks = body.split()
    if not toks:
        raise CascadeFormatError(f"line {lineno}: no records")

    parent_of: dict[str, str | None] = {root: None}
    time_of: dict[str, float] = {root: 0.0}
    paths: dict[str, str] = {}
    for tok in toks:
        path, sep, t = tok.rpartition(":")
        if not sep or not path:
            raise CascadeFormatError(f"line {lineno}: malformed record {tok!r}")
        t = _parse_float(t, lineno, f"time in {tok!r}")
        nodes = path.split("/")
        if any(not n for n in nodes):
            raise CascadeFormatError(f"line {lineno}: empty node id in {tok!r}")
        if nodes[0] != root:
            raise CascadeFormatError(f"line {lineno}: path {path!r} does not start at root {root!r}")
        if len(nodes) == 1:
            if t != 0:
                raise CascadeFormatError(f"line {lineno}: root record must have time 0, got {tok!r}")
            continue
        parent, child = nodes[-2], nodes[-1]
        if parent == child:
            raise CascadeFormatError(f"line {lineno}: self-loop in path {path!r}")
        if child == root:
            raise CascadeFormatError(f"line {lineno}: cycle through root in path {path!r}")
        if child not in parent_of:
            parent_of[child] = parent
            time_of[child] = t
            paths[child] = path
        elif parent_of[child] == parent:
            time_of[child] = min(time_of[child], t)
        # a later record giving the child a different parent is discarded

    for child, parent in parent_of.items():
        if parent is None:
            continue
        if parent not in parent_of:
            raise CascadeFormatError(f"line {lineno}: path {paths[child]!r} references unknown parent {parent!r}")
        if time_of[parent] > time_of[child]:
            raise CascadeFormatError(
                f"line {lineno}: non-monotone time on path {paths[child]!r}: "
                f"{parent!r} joins at {format_number(time_of[parent])}, after {child!r} at {format_number(time_of[child])}"
            )

    # everything must hang off the root; anything else sits on a cycle
    reached = {root}
    children: dict[str, list[str]] = {}
    for c, p in parent_of.items():
        if p is not None:
            children.setdefault(p, []).append(c)
    stack = [root]
    while stack:
        for c in children.get(stack.pop(), ()):
            reached.add(c)
            stack.append(c)
    if len(reached) != len(parent_of):
        bad = sorted(set(parent_of) - reached)
        raise CascadeFormatError(f"line {lineno}: cycle among nodes {bad}")

    # the header may count raw records or distinct nodes (duplicates collapsed)
    if num_records not in (len(toks), len(parent_of)):
        raise CascadeFormatError(
            f"line {lineno}: header says {num_records} records, found {len(toks)} "
            f"({len(parent_of)} distinct nodes)")
    records = [Record(parent_of[n], n, time_of[n]) for n in parent_of]
    records.sort(key=_sort_key(root))
    return Cascade(cid, root, publish_time, records)


def parse_cascade_file(text: str | bytes | Iterable[str]) -> list[Cascade]:
    """Parse every non-empty line into a :class:`Cascade`."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines() if isinstance(text, str) else text
    out = []
    for i, line in enumerate(lines, start=1):
        if line.strip():
            out.append(parse_line(line, i))
    return out


def serialize_cascade(c: Cascade) -> str:
    recs = []
    for r in c.records:
        recs.append("/".join(c.path(r.child)) + ":" + format_number(r.time))
    return "\t".join([c.id, c.root, format_number(c.publish_time), str(len(recs)), " ".join(recs)])


def write_cascade_file(cascades: Iterable[Cascade]) -> str:
    return "".join(serialize_cascade(c) + "\n" for c in cascades)


def build_views(c: Cascade, t_obs: float, t_end: float) -> CascadeViews:
    """Restrict a cascade to the window ``[0, t_obs]`` and count joins in ``(t_obs, t_end]``."""
    if not (0 < t_obs <= t_end):
        raise ValueError(f"need 0 < t_obs <= t_end, got t_obs={t_obs}, t_end={t_end}")
    observed = [r for r in c.records if r.time <= t_obs]
    if not observed:
        raise ValueError(f"cascade {c.id}: no nodes observed by t_obs={t_obs}")
    if observed[0].child != c.root:
        raise ValueError(f"cascade {c.id}: root is not inside the observation window")
    label = sum(1 for r in c.records if t_obs < r.time <= t_end)

    index = {r.child: i for i, r in enumerate(observed)}
    n = len(observed)
    adj = np.zeros((n, n), dtype=bool)
    parents = []
    for r in observed:
        if r.parent is None:
            parents.append(-1)
        else:
            adj[index[r.parent], index[r.child]] = True
            parents.append(index[r.parent])
    times = np.array([r.time for r in observed], dtype=np.float64)
    return CascadeViews(
        cascade_id=c.id,
        node_ids=[r.child for r in observed],
        graph=CascadeGraph(index, adj),
        sequence=CascadeSequence(list(range(n)), times.tolist()),
        times=times,
        observed_size=n,
        label=label,
        t_obs=float(t_obs),
        t_end=float(t_end),
        parents=parents,
    )


def filter_dataset(views: Sequence[CascadeViews], min_obs: int) -> list[CascadeViews]:
    if min_obs < 1:
        raise ValueError("min_obs must be >= 1")
    return [v for v in views if v.observed_size >= min_obs]


def filter_publish_time(cascades: Sequence[Cascade], lo: float, hi: float,
                        period: float | None = None) -> list[Cascade]:
    """Keep cascades published in ``[lo, hi)``, optionally modulo ``period``.

    With ``period=86400`` and seconds-since-midnight bounds this is the
    usual daytime-only filter for micro-blog corpora.
    """
    out = []
    for c in cascades:
        t = c.publish_time % period if period else c.publish_time
        if lo <= t < hi:
            out.append(c)
    return out


def split_dataset(items: Sequence, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> DatasetSplit:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(items)
    if n < 3:
        raise ValueError(f"need at least 3 items to split, got {n}")
    order = stream(seed, "split").permutation(n)
    b1 = int(round(n * ratios[0]))
    b2 = int(round(n * (ratios[0] + ratios[1])))
    pick = lambda idx: [items[i] for i in idx]
    return DatasetSplit(pick(order[:b1]), pick(order[b1:b2]), pick(order[b2:]), seed, ratios)

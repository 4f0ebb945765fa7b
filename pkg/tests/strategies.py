"""Hypothesis strategies for valid cascades."""
from hypothesis import strategies as st

from tcan.cascade import Cascade, Record, _sort_key

node_ids = st.from_regex(r"[A-Za-z0-9_]{1,6}", fullmatch=True)
gaps = st.one_of(st.just(0.0), st.integers(0, 1000).map(float),
                 st.floats(0, 100, allow_nan=False, allow_infinity=False))


@st.composite
def cascades(draw, max_nodes: int = 30):
    n = draw(st.integers(1, max_nodes))
    ids = draw(st.lists(node_ids, min_size=n, max_size=n, unique=True))
    times, parents = [0.0], [None]
    for i in range(1, n):
        p = draw(st.integers(0, i - 1))
        parents.append(ids[p])
        times.append(times[p] + draw(gaps))
    records = [Record(parents[i], ids[i], times[i]) for i in range(n)]
    records.sort(key=_sort_key(ids[0]))
    cid = draw(node_ids)
    publish = draw(st.one_of(st.just(0.0), st.floats(0, 1e6, allow_nan=False, allow_infinity=False)))
    return Cascade(cid, ids[0], publish, records)

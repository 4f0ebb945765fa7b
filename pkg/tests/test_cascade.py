import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcan.cascade import (Cascade, CascadeFormatError, Record, build_views, filter_dataset,
                          filter_publish_time, format_number, parse_cascade_file, parse_line,
                          serialize_cascade, split_dataset, write_cascade_file)

from .strategies import cascades


def chain():
    return parse_line("42\tA\t0\t3\tA:0 A/B:120 A/B/C:300")


class TestParse:
    def test_chain_line(self):
        c = chain()
        assert c.id == "42" and c.root == "A" and c.publish_time == 0
        assert c.edges() == [("A", "B", 120.0), ("B", "C", 300.0)]

    def test_singleton(self):
        c = parse_line("7\tA\t0\t1\tA:0")
        assert c.size == 1
        assert c.edges() == []

    def test_duplicate_edge_keeps_earliest(self):
        c = parse_line("9\tA\t0\t2\tA:0 A/B:50 A/B:80")
        assert c.edges() == [("A", "B", 50.0)]

    def test_duplicate_listed_late_first(self):
        c = parse_line("9\tA\t0\t2\tA:0 A/B:80 A/B:50")
        assert c.edges() == [("A", "B", 50.0)]

    def test_records_sorted_with_id_tiebreak(self):
        c = parse_line("1\tA\t0\t4\tA:0 A/C:5 A/B:5 A/D:1")
        assert [r.child for r in c.records] == ["A", "D", "B", "C"]

    def test_self_loop_rejected(self):
        with pytest.raises(CascadeFormatError, match="self-loop"):
            parse_line("1\tA\t0\t2\tA:0 A/A:3")

    def test_non_monotone_path_names_path(self):
        with pytest.raises(CascadeFormatError, match="A/B/C"):
            parse_line("1\tA\t0\t3\tA:0 A/B:10 A/B/C:5")

    def test_wrong_record_count(self):
        with pytest.raises(CascadeFormatError, match="line 1"):
            parse_line("1\tA\t0\t5\tA:0 A/B:10")

    def test_count_may_include_duplicates(self):
        c = parse_line("9\tA\t0\t3\tA:0 A/B:50 A/B:80")
        assert c.size == 2

    def test_missing_field_reports_line_number(self):
        text = "1\tA\t0\t1\tA:0\nbroken line\n"
        with pytest.raises(CascadeFormatError, match="line 2"):
            parse_cascade_file(text)

    def test_unknown_parent(self):
        with pytest.raises(CascadeFormatError):
            parse_line("1\tA\t0\t2\tA:0 A/X/B:10")

    def test_path_not_from_root(self):
        with pytest.raises(CascadeFormatError):
            parse_line("1\tA\t0\t2\tA:0 Z/B:10")

    def test_second_parent_ignored(self):
        # one parent per node: the later record through another parent is dropped
        c = parse_line("1\tA\t0\t4\tA:0 A/B:1 A/C:2 A/C/B:3")
        assert c.parent("B") == "A"
        assert c.size == 3

    def test_cycle_rejected(self):
        # B's only parent is C and C's only parent is B: neither is reachable from A
        with pytest.raises(CascadeFormatError, match="cycle|reachable"):
            parse_line("1\tA\t0\t3\tA:0 A/C/B:5 A/B/C:5")

    def test_bytes_and_blank_lines(self):
        cs = parse_cascade_file(b"7\tA\t0\t1\tA:0\n\n8\tB\t1.5\t1\tB:0\n")
        assert [c.id for c in cs] == ["7", "8"]
        assert cs[1].publish_time == 1.5

    def test_negative_time_rejected(self):
        with pytest.raises(CascadeFormatError):
            parse_line("1\tA\t0\t2\tA:0 A/B:-1")


class TestRoundTrip:
    def test_canonical_line(self):
        line = "42\tA\t0\t3\tA:0 A/B:120 A/B/C:300"
        assert serialize_cascade(parse_line(line)) == line

    def test_format_number(self):
        assert format_number(3.0) == "3"
        assert format_number(0.1) == "0.1"
        assert float(format_number(1 / 3)) == 1 / 3

    @settings(max_examples=200, deadline=None)
    @given(cascades())
    def test_parse_serialize(self, c):
        again = parse_line(serialize_cascade(c))
        assert again == c
        assert serialize_cascade(again) == serialize_cascade(c)

    def test_file_round_trip(self):
        cs = [chain(), parse_line("7\tA\t0\t1\tA:0")]
        assert parse_cascade_file(write_cascade_file(cs)) == cs


class TestViews:
    def test_partial_window(self):
        v = build_views(chain(), 200, 400)
        assert v.node_ids == ["A", "B"]
        assert v.observed_size == 2 and v.label == 1
        assert v.graph.adjacency.sum() == 1 and v.graph.adjacency[0, 1]

    def test_empty_prediction_interval(self):
        assert build_views(chain(), 400, 400).label == 0

    def test_root_only(self):
        v = build_views(chain(), 50, 400)
        assert v.node_ids == ["A"] and v.graph.adjacency.sum() == 0 and v.label == 2

    def test_bad_window(self):
        with pytest.raises(ValueError):
            build_views(chain(), 0, 10)
        with pytest.raises(ValueError):
            build_views(chain(), 20, 10)

    @settings(max_examples=150, deadline=None)
    @given(cascades(), st.floats(0.01, 50), st.floats(0.01, 50))
    def test_structure(self, c, a, b):
        t_obs, t_end = min(a, b), max(a, b)
        v = build_views(c, t_obs, t_end)
        n = v.observed_size
        assert len(v.sequence.nodes) == n == v.graph.adjacency.shape[0]
        assert v.graph.adjacency.sum() == n - 1
        assert np.all(np.diff(v.times) >= 0)
        assert np.all(v.times <= t_obs)
        assert v.label == sum(t_obs < r.time <= t_end for r in c.records)

    @settings(max_examples=150, deadline=None)
    @given(cascades(), st.floats(0.01, 20), st.floats(0.0, 20), st.floats(20, 40))
    def test_monotone_in_t_obs(self, c, t1, dt, t_end):
        t_end = max(t_end, t1 + dt)
        lo = build_views(c, t1, t_end)
        hi = build_views(c, t1 + dt, t_end)
        assert hi.observed_size >= lo.observed_size
        assert hi.label <= lo.label


class TestFilterAndSplit:
    def sized(self, sizes):
        out = []
        for i, n in enumerate(sizes):
            recs = [Record(None, "r", 0.0)] + [Record("r", f"x{k}", float(k)) for k in range(1, n)]
            out.append(build_views(Cascade(str(i), "r", 0.0, recs), 100, 200))
        return out

    def test_filter(self):
        views = self.sized([3, 10, 25])
        assert [v.observed_size for v in filter_dataset(views, 10)] == [10, 25]
        assert filter_dataset(views, 1) == views
        assert filter_dataset(views, 100) == []
        with pytest.raises(ValueError):
            filter_dataset(views, 0)

    def test_split_sizes(self):
        assert [len(p) for p in (lambda s: (s.train, s.val, s.test))(split_dataset(range(1000), seed=1))] == [700, 150, 150]
        s = split_dataset(range(10), (0.8, 0.1, 0.1), seed=3)
        assert (len(s.train), len(s.val), len(s.test)) == (8, 1, 1)

    def test_split_deterministic(self):
        a, b = split_dataset(range(50), seed=5), split_dataset(range(50), seed=5)
        assert (a.train, a.val, a.test) == (b.train, b.val, b.test)

    def test_split_errors(self):
        with pytest.raises(ValueError):
            split_dataset([1, 2], seed=0)
        with pytest.raises(ValueError):
            split_dataset(range(10), (0.5, 0.2, 0.2))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(3, 500), st.integers(0, 2 ** 31), st.floats(0.05, 0.9), st.floats(0.0, 1.0))
    def test_partition(self, n, seed, r0, frac):
        r1 = (1 - r0) * frac
        ratios = (r0, r1, 1 - r0 - r1)
        s = split_dataset(list(range(n)), ratios, seed)
        parts = [s.train, s.val, s.test]
        assert sorted(s.train + s.val + s.test) == list(range(n))
        for p, r in zip(parts, ratios):
            assert abs(len(p) - n * r) < 1 + 1e-9

    def test_publish_time_filter(self):
        cs = [Cascade(str(i), "r", t, [Record(None, "r", 0.0)]) for i, t in enumerate([3600 * 7, 3600 * 9, 86400 + 3600 * 10])]
        kept = filter_publish_time(cs, 8 * 3600, 18 * 3600, period=86400)
        assert [c.id for c in kept] == ["1", "2"]

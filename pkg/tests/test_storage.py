import numpy as np
import pytest
from hypothesis import given, strategies as st

from aggforge.catalog import AttrKind, AttributeInfo, Catalog, RelationSchema, favorita_config_path, \
    load_config
from aggforge.errors import ArityMismatch, NotSorted, ParseError, UnknownAttribute
from aggforge.storage import (
    Database, Dictionary, distinct_ranges, is_sorted_by, load_csv, sort_table, table_from_columns,
)

R = RelationSchema("R", ("a", "b"))


def test_load_three_rows(tmp_path):
    p = tmp_path / "R.csv"
    p.write_text("1,2.5\n1,3.0\n2,1.0\n")
    t = load_csv(p, R, header=False)
    assert t.rows() == [(1, 2.5), (1, 3.0), (2, 1.0)]
    assert t.columns["a"].dtype == np.int64 and t.columns["b"].dtype == np.float64


def test_header_only_and_reordered_header(tmp_path):
    p = tmp_path / "R.csv"
    p.write_text("a,b\n")
    assert load_csv(p, R).row_count == 0
    p.write_text("b,a\n2.5,1\n")
    assert load_csv(p, R).rows() == [(1, 2.5)]


def test_missing_column_names_line(tmp_path):
    p = tmp_path / "R.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(ParseError) as ei:
        load_csv(p, R)
    assert ei.value.line == 3
    p.write_text("a,b\n1,x\n")
    with pytest.raises(ParseError, match="line 2"):
        load_csv(p, R)


def test_arity_mismatch(tmp_path):
    p = tmp_path / "R.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ArityMismatch):
        load_csv(p, R)


def test_delimiter_and_categorical_encoding(tmp_path):
    cat = Catalog([R], [AttributeInfo("b", AttrKind.CATEGORICAL)])
    p = tmp_path / "R.csv"
    p.write_text("a|b\n1|x\n2|y\n3|x\n")
    dicts = {}
    t = load_csv(p, R, cat, dicts, delimiter="|")
    assert t.columns["b"].tolist() == [0, 1, 0]
    assert t.decoded("b", t.columns["b"]) == ["x", "y", "x"]
    assert dicts["b"].lookup("y") == 1


def test_sort_examples():
    t = table_from_columns(R, {"a": [2, 1, 1], "b": [10, 20, 30]})
    s = sort_table(t, ["a"])
    assert s.rows() == [(1, 20), (1, 30), (2, 10)]
    assert s.sort_order == ("a",)
    assert sort_table(s, ["a"]) is s
    with pytest.raises(UnknownAttribute):
        sort_table(t, ["zz"])


def test_distinct_ranges_examples():
    t = sort_table(table_from_columns(R, {"a": [1, 1, 2], "b": [0, 1, 0]}), ["a", "b"])
    got = [(v, r.lo, r.hi) for v, r in distinct_ranges(t, {}, "a")]
    assert got == [(1, 0, 2), (2, 2, 3)]
    assert list(distinct_ranges(t, {"a": 5}, "b")) == []
    assert [(v, r.size) for v, r in distinct_ranges(t, [1], "b")] == [(0, 1), (1, 1)]
    with pytest.raises(NotSorted):
        list(distinct_ranges(t, {}, "b"))


def test_range_size_equals_filter_count():
    # a leaf range size answers |sigma_{item=i,date=d,store=s} S| with no enumeration
    cat = load_config(favorita_config_path())
    db = Database.from_csv_dir(cat, favorita_config_path().parent / "favorita_toy")
    S = db.table("Sales")
    s = sort_table(S, ["item", "date", "store"])
    for i, ri in distinct_ranges(s, {}, "item"):
        for d, rd in distinct_ranges(s, [i], "date", ri):
            for st_, rs in distinct_ranges(s, [i, d], "store", rd):
                naive = int(np.sum((S.columns["item"] == i) & (S.columns["date"] == d)
                                   & (S.columns["store"] == st_)))
                assert rs.size == naive
        break


rows = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3)), max_size=40)


@given(rows, st.permutations(["x", "y", "z"]))
def test_leaf_ranges_partition_and_match_naive_distinct(data, order):
    schema = RelationSchema("T", ("x", "y", "z"))
    cols = {a: [r[i] for r in data] for i, a in enumerate("xyz")}
    t = sort_table(table_from_columns(schema, cols), order)
    assert is_sorted_by(t, order)

    leaves = []

    def walk(prefix, within, depth):
        for v, r in distinct_ranges(t, prefix, order[depth], within):
            if depth + 1 == len(order):
                leaves.append((tuple(prefix + [v]), r))
            else:
                walk(prefix + [v], r, depth + 1)
    walk([], None, 0)
    covered = sorted(i for _, r in leaves for i in range(r.lo, r.hi))
    assert covered == list(range(len(data)))
    naive = sorted({tuple(r[["x", "y", "z"].index(a)] for a in order) for r in data})
    assert [k for k, _ in leaves] == naive


@given(rows)
def test_sort_is_stable(data):
    schema = RelationSchema("T", ("x", "y", "z"))
    cols = {a: [r[i] for r in data] for i, a in enumerate("xyz")}
    t = sort_table(table_from_columns(schema, cols), ["x"])
    expected = sorted(data, key=lambda r: r[0])
    assert t.rows() == expected


@given(st.lists(st.text(alphabet="abc xyz", min_size=0, max_size=5), max_size=30))
def test_dictionary_round_trip(values):
    d = Dictionary("v")
    codes = [d.encode(v) for v in values]
    assert [d.decode(c) for c in codes] == values
    assert sorted(set(codes)) == list(range(len(set(values))))


def test_csv_dir_round_trip(tmp_path):
    cat = load_config(favorita_config_path())
    db = Database.from_csv_dir(cat, favorita_config_path().parent / "favorita_toy")
    db.write_csv_dir(tmp_path)
    again = Database.from_csv_dir(cat, tmp_path)
    for name, t in db.tables.items():
        for a in t.schema.attributes:
            assert db.decode(a, t.columns[a]) == again.decode(a, again.tables[name].columns[a])
    assert db.distinct_count("Sales", "store") == len(np.unique(db.table("Sales").columns["store"]))

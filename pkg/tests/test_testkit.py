import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aggforge.applications import (
    covar_batch, data_cube_batch, mutual_information_batch, poly_regression_batch,
)
from aggforge.catalog import validate_join_tree
from aggforge.executor import Engine, materialize_join
from aggforge.applications import cart_train
from aggforge.testkit import (
    RandomDbSpec, cart_oracle, categorical_attrs, continuous_attrs, favorita_db, generate_db,
    prufer_trees, random_databases, trees_match,
)


def _same(a, b):
    if a.catalog.tree.edge_list() != b.catalog.tree.edge_list():
        return False
    for name, t in a.tables.items():
        u = b.tables[name]
        if t.schema != u.schema:
            return False
        for col in t.columns:
            if not np.array_equal(t.columns[col], u.columns[col]):
                return False
    return True


def test_seed_is_deterministic():
    assert _same(generate_db(RandomDbSpec(seed=42)), generate_db(RandomDbSpec(seed=42)))
    assert not _same(generate_db(RandomDbSpec(seed=42)), generate_db(RandomDbSpec(seed=43)))


def test_star_has_depth_one():
    db = generate_db(RandomDbSpec(seed=3, relations=4, pattern="star"))
    assert db.catalog.tree.depth_from("R0") == 1
    chain = generate_db(RandomDbSpec(seed=3, relations=4, pattern="chain"))
    assert chain.catalog.tree.depth_from("R0") == 3


def test_joins_are_mostly_nonempty():
    nonempty = sum(len(materialize_join(generate_db(RandomDbSpec(seed=s)))) > 0 for s in range(100))
    assert nonempty >= 90


@settings(max_examples=30)
@given(st.integers(0, 100_000))
def test_generated_schemas_validate_and_stay_small(seed):
    db = generate_db(RandomDbSpec(seed=seed, relations=1 + seed % 5))
    validate_join_tree(list(db.catalog.relations.values()), db.catalog.tree)
    assert len(db.tables) <= 5
    for t in db.tables.values():
        assert t.row_count <= 1000 and len(t.schema.attributes) <= 8


@settings(max_examples=15)
@given(st.integers(0, 100_000))
def test_application_batches_run_on_any_instance(seed):
    db = generate_db(RandomDbSpec(seed=seed, relations=1 + seed % 5, max_rows=40))
    cont, cats = continuous_attrs(db), categorical_attrs(db)
    attrs = list(db.catalog.attributes)
    batches = [mutual_information_batch(attrs[:3]), data_cube_batch(attrs[:2], cont[:1] or attrs[:1])]
    if cont:
        label = cont[-1]
        feats = [a for a in attrs if a != label]
        batches.append(covar_batch(feats, label, db.catalog.is_categorical))
        batches.append(poly_regression_batch(cont[:-1][:2], label, 2, db.catalog.is_categorical))
    engine = Engine(db)
    for b in batches:
        engine.run(b)


def test_random_databases_count_and_sizes():
    dbs = random_databases(5, base_seed=9)
    assert len(dbs) == 5
    assert all(1 <= len(db.tables) <= 5 for db in dbs)


def test_favorita_shape():
    db = favorita_db(500, seed=1, dates=10, stores=5, items=20)
    assert set(db.tables) == {"Sales", "Holidays", "StoRes", "Items", "Transactions", "Oil"}
    assert db.size("Sales") == 500
    assert len(db.catalog.tree.edges) == 5


def test_prufer_enumerates_all_labelled_trees():
    for n in range(2, 7):
        trees = {frozenset(t) for t in prufer_trees(n)}
        assert len(trees) == n ** (n - 2)
        assert all(len(t) == n - 1 for t in trees)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_cart_oracle_agrees_with_engine(seed):
    db = generate_db(RandomDbSpec(seed=seed, relations=3, max_rows=80))
    label = continuous_attrs(db)[0] if continuous_attrs(db) else None
    if label is None:
        pytest.skip("no continuous label")
    feats = [a for a in db.catalog.attributes if a != label]
    got = cart_train(Engine(db), label, feats, max_depth=3, buckets=5)
    want = cart_oracle(db, label, feats, max_depth=3, buckets=5)
    assert trees_match(got, want) is None


def test_trees_match_reports_path():
    db = generate_db(RandomDbSpec(seed=1, relations=2, max_rows=60))
    label = continuous_attrs(db)[0]
    feats = [a for a in db.catalog.attributes if a != label]
    a = cart_oracle(db, label, feats, max_depth=2, buckets=4)
    b = cart_oracle(db, label, feats, max_depth=0, buckets=4)
    msg = trees_match(a, b)
    if not a.is_leaf:
        assert msg is not None and msg.startswith("root")

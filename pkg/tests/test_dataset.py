import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choicefit.dataset import (
    UNMODELED,
    BinningSpec,
    Dataset,
    DatasetError,
    ParseError,
    PartitionKey,
    Schema,
    SchemaError,
    VariableSpec,
    bin_dataset,
    compile_taxonomy,
    complete_cases,
    derive_indicator,
    describe,
    load_dataset,
    partition,
)
from choicefit.pipeline import default_schema_path
from helpers import make_dataset

SCHEMA = {
    "variables": [
        {"name": "age", "kind": "quantitative"},
        {"name": "limit", "kind": "quantitative"},
        {"name": "female", "kind": "indicator"},
    ]
}


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def test_load_three_rows_one_missing(tmp_path):
    p = write(tmp_path, "age,limit\n22,30\n,55\n40,45\n")
    ds = load_dataset(p, {"variables": SCHEMA["variables"][:2]})
    assert len(ds) == 3
    assert ds.n_missing() == 1
    assert np.isnan(ds["age"][1])
    np.testing.assert_array_equal(ds["limit"], [30, 55, 45])


def test_na_token_is_missing(tmp_path):
    p = write(tmp_path, "age,limit,female\nNA,30,1\n")
    ds = load_dataset(p, SCHEMA)
    assert ds.n_missing("age") == 1


def test_indicator_value_two_is_rejected_with_location(tmp_path):
    p = write(tmp_path, "age,limit,female\n22,30,0\n31,55,2\n")
    with pytest.raises(ParseError) as err:
        load_dataset(p, SCHEMA)
    assert err.value.row == 3
    assert err.value.column == "female"


def test_coerce_policy_turns_violations_into_missing(tmp_path):
    p = write(tmp_path, "age,limit,female\n22,abc,2\n")
    ds = load_dataset(p, SCHEMA, policy="coerce")
    assert np.isnan(ds["limit"][0]) and np.isnan(ds["female"][0])


def test_strict_unparseable_number(tmp_path):
    p = write(tmp_path, "age,limit,female\n22,abc,1\n")
    with pytest.raises(ParseError, match="limit"):
        load_dataset(p, SCHEMA)


def test_header_only_file(tmp_path):
    p = write(tmp_path, "age,limit,female\n")
    ds = load_dataset(p, SCHEMA)
    assert len(ds) == 0
    assert ds.names == ["age", "limit", "female"]


def test_schema_variable_missing_from_header(tmp_path):
    p = write(tmp_path, "age,limit\n22,30\n")
    with pytest.raises(SchemaError, match="female"):
        load_dataset(p, SCHEMA)


def test_extra_file_columns_are_ignored_and_order_preserved(tmp_path):
    p = write(tmp_path, "junk,female,limit,age\nx,1,30,22\ny,0,70,64\n")
    ds = load_dataset(p, SCHEMA)
    assert ds.names == ["age", "limit", "female"]
    np.testing.assert_array_equal(ds["age"], [22, 64])


def test_custom_delimiter_and_missing_tokens(tmp_path):
    p = write(tmp_path, "age;limit;female\n-99;30;1\n")
    ds = load_dataset(p, SCHEMA, delimiter=";", missing=["-99"])
    assert np.isnan(ds["age"][0])


def test_derived_indicator_computed_at_load(tmp_path):
    doc = {"variables": SCHEMA["variables"] + [
        {"name": "young", "kind": "derived-indicator", "derivation": {"var": "age", "op": "<", "value": 25}}]}
    p = write(tmp_path, "age,limit,female\n22,30,1\n40,55,0\n,45,1\n")
    ds = load_dataset(p, doc)
    np.testing.assert_array_equal(ds["young"][:2], [1, 0])
    assert np.isnan(ds["young"][2])


def test_csv_roundtrip(tmp_path):
    ds = make_dataset({"age": [22, None, 40.5], "female": [1, 0, None]}, {"female": "indicator"})
    p = tmp_path / "out.csv"
    ds.to_csv(p)
    back = load_dataset(p, ds.schema_json())
    for n in ds.names:
        np.testing.assert_array_equal(back[n], ds[n])


def test_default_schema_document():
    schema = Schema.load(default_schema_path())
    assert {"X29", "X34", "X35", "X20", "severity"} <= set(schema.names)
    assert schema["X35"].kind == "indicator"
    causes = schema["X20"].levels
    positive = schema.extra["causation"]["positive_codes"]
    assert sorted(causes[float(c)] for c in positive) == ["speed too fast for weather conditions", "unsafe speed"]
    assert len(compile_taxonomy(schema.extra["taxonomy"])) == 30


def test_schema_json_roundtrip():
    schema = Schema.load(default_schema_path())
    again = Schema.from_json(json.loads(json.dumps(schema.to_json())))
    assert again == schema


def test_schema_rejects_duplicates_and_dangling_base():
    with pytest.raises(SchemaError):
        Schema.from_json({"variables": [{"name": "a"}, {"name": "a"}]})
    with pytest.raises(SchemaError):
        Schema.from_json({"variables": [
            {"name": "d", "kind": "derived-indicator", "derivation": {"var": "zz", "op": "<", "value": 1}}]})


def test_variable_kinds_validated():
    with pytest.raises(SchemaError):
        VariableSpec("a", "ordinal")
    with pytest.raises(SchemaError):
        VariableSpec("d", "derived-indicator")
    with pytest.raises(SchemaError, match="one base variable"):
        VariableSpec("d", "derived-indicator", {"and": [{"var": "a", "op": "<", "value": 1},
                                                        {"var": "b", "op": ">", "value": 0}]})


def test_dataset_invariants():
    with pytest.raises(DatasetError):
        make_dataset({"f": [0, 1, 2]}, {"f": "indicator"})
    with pytest.raises(DatasetError):
        make_dataset({"x": [1.0, np.inf]})
    with pytest.raises(DatasetError):
        Dataset((VariableSpec("x"),), {"x": np.zeros(2), "y": np.zeros(2)})
    ds = make_dataset({"x": [1.0, 2.0]})
    with pytest.raises(ValueError):
        ds["x"][0] = 5.0


# ---------------------------------------------------------------------------
# derived indicators
# ---------------------------------------------------------------------------

YOUNG = VariableSpec("young", "derived-indicator", {"var": "age", "op": "<", "value": 25})
MEDIUM_LOW = VariableSpec(
    "medium_low", "derived-indicator",
    {"and": [{"var": "X29", "op": ">", "value": 30}, {"var": "X29", "op": "<=", "value": 50}]},
)


def test_young_driver():
    ds = derive_indicator(make_dataset({"age": [22, 25, 60, None]}), YOUNG)
    np.testing.assert_array_equal(ds["young"][:3], [1, 0, 0])
    assert np.isnan(ds["young"][3])


def test_medium_low_speed_limit():
    ds = derive_indicator(make_dataset({"X29": [50, 30, 31, 55]}), MEDIUM_LOW)
    np.testing.assert_array_equal(ds["medium_low"], [1, 0, 1, 0])


@pytest.mark.parametrize(
    "pred, expected",
    [
        ({"var": "c", "op": "in", "values": [1, 3]}, [1, 0, 1, 0]),
        ({"var": "c", "op": "not in", "values": [1, 3]}, [0, 1, 0, 1]),
        ({"not": {"var": "c", "op": "==", "value": 2}}, [1, 0, 1, 1]),
        ({"or": [{"var": "c", "op": "==", "value": 1}, {"var": "c", "op": ">=", "value": 4}]}, [1, 0, 0, 1]),
        ({"var": "c", "op": "!=", "value": 3}, [1, 1, 0, 1]),
    ],
)
def test_predicate_forms(pred, expected):
    ds = derive_indicator(make_dataset({"c": [1, 2, 3, 4]}), VariableSpec("d", "derived-indicator", pred))
    np.testing.assert_array_equal(ds["d"], expected)


def test_derive_name_collision():
    ds = derive_indicator(make_dataset({"age": [20]}), YOUNG)
    with pytest.raises(DatasetError):
        derive_indicator(ds, YOUNG)


def test_derive_is_idempotent_in_effect():
    ds = derive_indicator(make_dataset({"age": [20, 30, None, 24.9]}), YOUNG)
    again = derive_indicator(ds, VariableSpec("young2", "derived-indicator", YOUNG.derivation))
    np.testing.assert_array_equal(again["young"], again["young2"])


# ---------------------------------------------------------------------------
# complete cases
# ---------------------------------------------------------------------------


def test_complete_cases_counts():
    v = [1.0] * 10
    v[2] = v[7] = None
    ds = make_dataset({"v": v, "w": list(range(10))})
    assert len(complete_cases(ds, ["v"])) == 8
    assert complete_cases(ds, []) is ds


def test_complete_cases_all_schema_one_full_row():
    ds = make_dataset({"a": [1, None, 3], "b": [None, 2, 3]})
    out = complete_cases(ds, ds.names)
    assert len(out) == 1 and out["a"][0] == 3


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=0, max_size=30))
def test_complete_cases_composes(mask):
    cols = {n: [None if m[i] else float(k) for k, m in enumerate(mask)] for i, n in enumerate("abc")}
    ds = make_dataset(cols) if mask else Dataset(tuple(VariableSpec(n) for n in "abc"),
                                                {n: np.zeros(0) for n in "abc"})
    one = complete_cases(ds, ["a", "b", "c"])
    two = complete_cases(complete_cases(ds, ["a"]), ["b", "c"])
    for n in "abc":
        np.testing.assert_array_equal(one[n], two[n])


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------

RULES = {
    "rules": [
        {"road_class": "county", "accident_type": "one vehicle", "where": {"type": [1]}},
        {"road_class": "county", "accident_type": "car+car", "where": {"type": [2]}},
    ]
}


def test_unmatched_rows_go_to_unmodeled():
    ds = make_dataset({"type": [1, 2, 3, 3, 1]})  # 3 = two trucks
    parts = partition(ds, RULES)
    assert len(parts[UNMODELED]) == 2
    assert len(parts[PartitionKey("county", "", "one vehicle")]) == 2


def test_empty_dataset_partitions_empty():
    ds = Dataset((VariableSpec("type"),), {"type": np.zeros(0)})
    parts = partition(ds, RULES)
    assert all(len(d) == 0 for d in parts.values())


def test_overlapping_rules_rejected():
    bad = {"rules": [{"road_class": "a", "where": {"t": [1, 2]}}, {"road_class": "b", "where": {"t": [2]}}]}
    with pytest.raises(SchemaError, match="overlap"):
        compile_taxonomy(bad)


def test_rule_on_unknown_variable():
    with pytest.raises(SchemaError):
        partition(make_dataset({"x": [1]}), RULES)


def test_grid_of_thirty(rng):
    grid = json.loads(default_schema_path().read_text())["taxonomy"]
    n = 500
    ds = make_dataset({"road_class": rng.integers(1, 6, n), "area": rng.integers(1, 3, n),
                       "accident_type": rng.integers(1, 5, n)})
    parts = partition(ds, grid)
    nonempty = [k for k, d in parts.items() if k != UNMODELED and len(d)]
    assert len(parts) == 31 and len(nonempty) <= 30
    assert len(parts[UNMODELED]) == int((ds["accident_type"] == 4).sum())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=40))
def test_partition_is_lossless(types):
    ds = make_dataset({"type": types}) if types else Dataset((VariableSpec("type"),), {"type": np.zeros(0)})
    parts = partition(ds, RULES)
    assert sum(len(d) for d in parts.values()) == len(ds)
    merged = np.sort(np.concatenate([d["type"] for d in parts.values()]))
    np.testing.assert_array_equal(merged, np.sort(ds["type"]))


# ---------------------------------------------------------------------------
# binning
# ---------------------------------------------------------------------------


def test_bin_sizes():
    ds = make_dataset({"X29": [25, 30, 55]})
    b = bin_dataset(ds, BinningSpec("X29", ((5, 30), (30, 50), (50, 60))))
    assert b.sizes == (1, 1, 1)


def test_left_edge_belongs_to_bin_and_missing_excluded():
    spec = BinningSpec("X29", ((0, 30), (30, None)))
    ds = make_dataset({"X29": [30, 29.999, None, 70, -5]})
    b = bin_dataset(ds, spec)
    assert b.sizes == (1, 2)
    assert b.n_missing == 1 and b.n_dropped == 1


def test_empty_bins_permitted():
    ds = make_dataset({"X29": [65, 70, 65]})
    b = bin_dataset(ds, BinningSpec("X29", ((5, 30), (30, 60), (60, None))))
    assert b.sizes == (0, 0, 3)


@pytest.mark.parametrize("edges", [((0, 30), (20, 40)), ((30, 20),), ((0, None), (10, 20)), ((10, 20), (0, 5))])
def test_bad_edges(edges):
    with pytest.raises(ValueError):
        BinningSpec("x", edges)


def test_binning_variable_must_be_quantitative():
    ds = make_dataset({"f": [0, 1]}, {"f": "indicator"})
    with pytest.raises(SchemaError):
        bin_dataset(ds, BinningSpec("f", ((0, None),)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from([15.0, 25.0, 30.0, 45.0, 55.0, 65.0, 70.0]), min_size=1, max_size=40), st.randoms())
def test_bin_sizes_invariant_under_permutation(values, random):
    spec = BinningSpec("v", ((0, 30), (30, 50), (50, 60), (60, None)))
    shuffled = list(values)
    random.shuffle(shuffled)
    a = bin_dataset(make_dataset({"v": values}), spec).sizes
    b = bin_dataset(make_dataset({"v": shuffled}), spec).sizes
    assert a == b and sum(a) == len(values)


# ---------------------------------------------------------------------------
# describe
# ---------------------------------------------------------------------------


def test_describe_shares():
    levels = {1.0: "fatal", 2.0: "injury", 3.0: "PDO"}
    y = [1] + [2] * 3 + [3] * 6
    ds = Dataset((VariableSpec("sev", "categorical", levels=levels),), {"sev": np.array(y, float)})
    d = describe(ds, "sev")
    assert d.shares == pytest.approx({"fatal": 10.0, "injury": 30.0, "PDO": 60.0})
    assert abs(sum(d.shares.values()) - 100.0) < 1e-9
    assert "PDO" in d.to_text()


def test_describe_single_category_and_errors():
    ds = make_dataset({"f": [1, 1, None]}, {"f": "indicator"})
    assert describe(ds, "f").shares == {"0": 0.0, "1": 100.0}
    with pytest.raises(DatasetError):
        describe(make_dataset({"f": [None, None]}, {"f": "indicator"}), "f")
    with pytest.raises(SchemaError):
        describe(make_dataset({"x": [1.0]}), "x")


def test_describe_per_bin_shape(rng):
    n = 4000
    limit = rng.choice([25.0, 40.0, 55.0, 65.0], n)
    y = (rng.random(n) < 0.1).astype(float)
    ds = Dataset((VariableSpec("limit"), VariableSpec("speed", "indicator")), {"limit": limit, "speed": y})
    spec = BinningSpec("limit", ((0, 30.5), (30.5, 50.5), (50.5, 60.5), (60.5, None)))
    per_bin = [describe(d, "speed") for d in bin_dataset(ds, spec)]
    assert len(per_bin) == 4
    for d, value in zip(per_bin, [25, 40, 55, 65]):
        expected = 100.0 * y[limit == value].mean()
        assert d.shares["1"] == pytest.approx(expected)

"""Tabular data ingestion, derived indicators, partitioning and binning.

Data are stored column-wise as float64 arrays with NaN marking a missing
value.  Categorical variables hold their integer codes; the code -> label
map lives in the schema.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("quantitative", "indicator", "derived-indicator", "categorical")
DEFAULT_MISSING = ("", "NA")


class DatasetError(Exception):
    pass


class SchemaError(DatasetError):
    pass


class ParseError(DatasetError):
    def __init__(self, message: str, row: int, column: str):
        super().__init__(f"{message} (row {row}, column {column!r})")
        self.row = row
        self.column = column


# ---------------------------------------------------------------------------
# Predicates for derived indicators
# ---------------------------------------------------------------------------

_COMPARISONS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


def _predicate_vars(pred: Mapping[str, Any]) -> set[str]:
    if "and" in pred or "or" in pred:
        parts = pred.get("and", pred.get("or"))
        if len(parts) != 2:
            raise SchemaError("boolean combinations take exactly two predicates")
        return _predicate_vars(parts[0]) | _predicate_vars(parts[1])
    if "not" in pred:
        return _predicate_vars(pred["not"])
    if "var" not in pred:
        raise SchemaError(f"predicate without 'var': {pred!r}")
    return {pred["var"]}


def _evaluate(pred: Mapping[str, Any], columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Boolean array; missing handling is done by the caller."""
    if "and" in pred:
        a, b = pred["and"]
        return _evaluate(a, columns) & _evaluate(b, columns)
    if "or" in pred:
        a, b = pred["or"]
        return _evaluate(a, columns) | _evaluate(b, columns)
    if "not" in pred:
        return ~_evaluate(pred["not"], columns)
    x = columns[pred["var"]]
    op = pred["op"]
    if op == "in":
        return np.isin(x, np.asarray(pred["values"], dtype=float))
    if op == "not in":
        return ~np.isin(x, np.asarray(pred["values"], dtype=float))
    if op not in _COMPARISONS:
        raise SchemaError(f"unknown predicate operator {op!r}")
    with np.errstate(invalid="ignore"):
        return _COMPARISONS[op](x, float(pred["value"]))


# ---------------------------------------------------------------------------
# Schema and dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str = "quantitative"
    derivation: Mapping[str, Any] | None = None
    description: str = ""
    levels: Mapping[float, str] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "derived-indicator":
            if self.derivation is None:
                raise SchemaError(f"derived indicator {self.name!r} needs a derivation")
            if len(_predicate_vars(self.derivation)) != 1:
                raise SchemaError(
                    f"derived indicator {self.name!r} must depend on exactly one base variable"
                )

    @property
    def is_indicator(self) -> bool:
        return self.kind in ("indicator", "derived-indicator")

    @property
    def base(self) -> str | None:
        if self.derivation is None:
            return None
        return next(iter(_predicate_vars(self.derivation)))

    def to_json(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.description:
            d["description"] = self.description
        if self.levels is not None:
            d["levels"] = {_fmt_code(k): v for k, v in self.levels.items()}
        if self.derivation is not None:
            d["derivation"] = self.derivation
        return d

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "VariableSpec":
        levels = d.get("levels")
        if levels is not None:
            levels = {float(k): str(v) for k, v in levels.items()}
        return cls(
            name=d["name"],
            kind=d.get("kind", "quantitative"),
            derivation=d.get("derivation"),
            description=d.get("description", ""),
            levels=levels,
        )


def _fmt_code(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class Schema:
    variables: tuple[VariableSpec, ...]
    missing_tokens: tuple[str, ...] = DEFAULT_MISSING
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __iter__(self) -> Iterator[VariableSpec]:
        return iter(self.variables)

    def __contains__(self, name: str) -> bool:
        return any(v.name == name for v in self.variables)

    def __getitem__(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def to_json(self) -> dict:
        d = dict(self.extra)
        d["missing"] = list(self.missing_tokens)
        d["variables"] = [v.to_json() for v in self.variables]
        return d

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "Schema":
        variables = tuple(VariableSpec.from_json(v) for v in doc["variables"])
        names = [v.name for v in variables]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise SchemaError(f"duplicate variables in schema: {sorted(dup)}")
        for v in variables:
            if v.kind == "derived-indicator" and v.base not in names:
                raise SchemaError(f"{v.name!r}: base variable {v.base!r} not in schema")
        extra = {k: val for k, val in doc.items() if k not in ("variables", "missing")}
        return cls(variables, tuple(doc.get("missing", DEFAULT_MISSING)), extra)

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store.  ``columns[name]`` is a read-only float array."""

    schema: tuple[VariableSpec, ...]
    columns: Mapping[str, np.ndarray]
    provenance: str = ""

    def __post_init__(self):
        lengths = {len(c) for c in self.columns.values()}
        if len(lengths) > 1:
            raise DatasetError(f"ragged columns: {sorted(lengths)}")
        names = [v.name for v in self.schema]
        if set(names) != set(self.columns):
            raise DatasetError("columns do not match schema")
        for v in self.schema:
            col = self.columns[v.name]
            col.setflags(write=False)
            if v.is_indicator:
                obs = col[~np.isnan(col)]
                if np.any((obs != 0) & (obs != 1)):
                    raise DatasetError(f"indicator {v.name!r} has values outside {{0, 1}}")
            elif np.any(np.isinf(col)):
                raise DatasetError(f"variable {v.name!r} has non-finite values")

    @classmethod
    def from_columns(
        cls,
        columns: Mapping[str, Sequence[float]],
        kinds: Mapping[str, str] | None = None,
        provenance: str = "",
        schema: Iterable[VariableSpec] | None = None,
    ) -> "Dataset":
        """Convenience constructor; ``None`` entries become missing."""
        kinds = kinds or {}
        if schema is None:
            schema = [VariableSpec(n, kinds.get(n, "quantitative")) for n in columns]
        cols = {
            n: np.array([np.nan if v is None else v for v in vals], dtype=float)
            for n, vals in columns.items()
        }
        return cls(tuple(schema), cols, provenance)

    def __len__(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.schema]

    def spec(self, name: str) -> VariableSpec:
        for v in self.schema:
            if v.name == name:
                return v
        raise KeyError(name)

    def take(self, rows: np.ndarray) -> "Dataset":
        """Sub-dataset by boolean mask or integer index array."""
        return Dataset(
            self.schema, {n: c[rows] for n, c in self.columns.items()}, self.provenance
        )

    def with_column(self, spec: VariableSpec, values: np.ndarray) -> "Dataset":
        if spec.name in self.columns:
            raise DatasetError(f"variable {spec.name!r} already exists")
        cols = dict(self.columns)
        cols[spec.name] = np.asarray(values, dtype=float)
        return Dataset(self.schema + (spec,), cols, self.provenance)

    def without(self, names: Iterable[str]) -> "Dataset":
        drop = set(names)
        return Dataset(
            tuple(v for v in self.schema if v.name not in drop),
            {n: c for n, c in self.columns.items() if n not in drop},
            self.provenance,
        )

    def n_missing(self, name: str | None = None) -> int:
        if name is not None:
            return int(np.isnan(self.columns[name]).sum())
        return int(sum(np.isnan(c).sum() for c in self.columns.values()))

    def rows(self) -> list[dict[str, float | None]]:
        names = self.names
        out = []
        for i in range(len(self)):
            out.append({n: _cell(self.columns[n][i]) for n in names})
        return out

    def to_csv(self, path: str | Path, delimiter: str = ",") -> None:
        names = self.names
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(names)
            for i in range(len(self)):
                w.writerow(_fmt_cell(self.columns[n][i]) for n in names)

    def schema_json(self) -> dict:
        return Schema(self.schema).to_json()


def _cell(v: float) -> float | None:
    return None if math.isnan(v) else float(v)


def _fmt_cell(v: float) -> str:
    if math.isnan(v):
        return ""
    return _fmt_code(v)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def load_dataset(
    path: str | Path,
    schema: Schema | Mapping[str, Any] | str | Path,
    *,
    policy: str = "strict",
    delimiter: str = ",",
    missing: Sequence[str] | None = None,
) -> Dataset:
    """Read a delimited text file with a header row.

    Columns not named in the schema are ignored.  Derived indicators absent
    from the header are computed after loading.  Under ``policy="strict"`` an
    unparseable cell or an indicator value outside {0, 1} raises
    :class:`ParseError`; under ``policy="coerce"`` it becomes missing.
    """
    if policy not in ("strict", "coerce"):
        raise ValueError(f"unknown policy {policy!r}")
    if not isinstance(schema, Schema):
        schema = Schema.load(schema) if isinstance(schema, (str, Path)) else Schema.from_json(schema)
    tokens = set(missing if missing is not None else schema.missing_tokens)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file has no header row", 0, "") from None
        records = list(reader)

    derived_later = [
        v for v in schema if v.kind == "derived-indicator" and v.name not in header
    ]
    loaded = [v for v in schema if v not in derived_later]
    unknown = [v.name for v in loaded if v.name not in header]
    if unknown:
        raise SchemaError(f"schema variables not in file header: {unknown}")

    idx = {h: i for i, h in enumerate(header)}
    cols: dict[str, np.ndarray] = {}
    for v in loaded:
        j = idx[v.name]
        col = np.empty(len(records))
        for r, rec in enumerate(records):
            raw = rec[j].strip() if j < len(rec) else ""
            col[r] = _parse_cell(raw, v, tokens, policy, r + 2)
        cols[v.name] = col

    ds = Dataset(tuple(loaded), cols, provenance=str(path))
    for v in derived_later:
        ds = derive_indicator(ds, v)
    # restore schema order
    return Dataset(tuple(schema.variables), {v.name: ds[v.name] for v in schema}, str(path))


def _parse_cell(raw: str, v: VariableSpec, tokens: set[str], policy: str, line: int) -> float:
    if raw in tokens:
        return np.nan
    try:
        x = float(raw)
    except ValueError:
        if policy == "strict":
            raise ParseError(f"cannot parse {raw!r} as a number", line, v.name) from None
        return np.nan
    bad = not math.isfinite(x) or (v.is_indicator and x not in (0.0, 1.0))
    if v.levels is not None and x not in v.levels:
        bad = True
    if bad:
        if policy == "strict":
            raise ParseError(f"value {raw!r} violates {v.kind} variable", line, v.name)
        return np.nan
    return x


def derive_indicator(ds: Dataset, spec: VariableSpec) -> Dataset:
    """Append a 0/1 column computed from a predicate over one base variable."""
    if spec.kind != "derived-indicator":
        raise SchemaError(f"{spec.name!r} is not a derived indicator")
    if spec.name in ds:
        raise DatasetError(f"variable {spec.name!r} already exists")
    base = spec.base
    if base not in ds:
        raise SchemaError(f"base variable {base!r} not in dataset")
    x = ds[base]
    values = _evaluate(spec.derivation, ds.columns).astype(float)
    values[np.isnan(x)] = np.nan
    return ds.with_column(spec, values)


def complete_cases(ds: Dataset, variables: Iterable[str]) -> Dataset:
    """Drop rows missing any of ``variables``."""
    variables = list(dict.fromkeys(variables))
    if not variables:
        return ds
    unknown = [v for v in variables if v not in ds]
    if unknown:
        raise SchemaError(f"unknown variables: {unknown}")
    keep = np.ones(len(ds), dtype=bool)
    for v in variables:
        keep &= ~np.isnan(ds[v])
    removed = int(len(ds) - keep.sum())
    if removed:
        log.debug("complete_cases: removed %d of %d rows", removed, len(ds))
    return ds.take(keep)


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class PartitionKey:
    road_class: str
    area: str = ""
    accident_type: str = ""

    @property
    def label(self) -> str:
        return " / ".join(p for p in (self.road_class, self.area, self.accident_type) if p)

    @property
    def slug(self) -> str:
        return "__".join(
            "".join(ch if ch.isalnum() else "-" for ch in p)
            for p in (self.road_class, self.area, self.accident_type)
            if p
        )


UNMODELED = PartitionKey("unmodeled")


@dataclass(frozen=True)
class PartitionRule:
    key: PartitionKey
    where: Mapping[str, tuple[float, ...]]

    def matches(self, ds: Dataset) -> np.ndarray:
        m = np.ones(len(ds), dtype=bool)
        for var, values in self.where.items():
            m &= np.isin(ds[var], np.asarray(values, dtype=float))
        return m


def compile_taxonomy(taxonomy: Mapping[str, Any]) -> list[PartitionRule]:
    """Build partition rules from a taxonomy document.

    Two forms are accepted::

        {"rules": [{"road_class": "county", "area": "rural",
                    "accident_type": "one-vehicle",
                    "where": {"road": [1], "area": [1], "type": [1]}}, ...]}

        {"grid": {"road_class": {"variable": "road", "levels": {"county": [1], ...}},
                  "area": {...}, "accident_type": {...}}}

    The grid form expands to the cross product of its dimensions.  Rules that
    could match the same row raise :class:`SchemaError`.
    """
    rules: list[PartitionRule] = []
    for r in taxonomy.get("rules", []):
        key = PartitionKey(r["road_class"], r.get("area", ""), r.get("accident_type", ""))
        where = {v: tuple(float(x) for x in vals) for v, vals in r["where"].items()}
        rules.append(PartitionRule(key, where))
    grid = taxonomy.get("grid")
    if grid:
        dims = [d for d in ("road_class", "area", "accident_type") if d in grid]
        choices = []
        for d in dims:
            var = grid[d]["variable"]
            choices.append([(lab, var, vals) for lab, vals in grid[d]["levels"].items()])
        for combo in _product(choices):
            labels = {d: lab for d, (lab, _, _) in zip(dims, combo)}
            where: dict[str, tuple[float, ...]] = {}
            for _, var, vals in combo:
                where[var] = tuple(float(x) for x in vals)
            rules.append(PartitionRule(PartitionKey(**labels), where))

    keys = [r.key for r in rules]
    if len(set(keys)) != len(keys) or UNMODELED in keys:
        raise SchemaError("duplicate or reserved partition keys")
    for i, a in enumerate(rules):
        for b in rules[i + 1:]:
            if _may_overlap(a, b):
                raise SchemaError(f"partition rules overlap: {a.key.label} / {b.key.label}")
    return rules


def _product(choices):
    if not choices:
        yield ()
        return
    for c in choices[0]:
        for rest in _product(choices[1:]):
            yield (c,) + rest


def _may_overlap(a: PartitionRule, b: PartitionRule) -> bool:
    for var in set(a.where) & set(b.where):
        if not set(a.where[var]) & set(b.where[var]):
            return False
    return True


def partition(
    ds: Dataset, taxonomy: Mapping[str, Any] | Sequence[PartitionRule]
) -> dict[PartitionKey, Dataset]:
    """Route every row to exactly one partition or to ``UNMODELED``."""
    rules = compile_taxonomy(taxonomy) if isinstance(taxonomy, Mapping) else list(taxonomy)
    for r in rules:
        for var in r.where:
            if var not in ds:
                raise SchemaError(f"partition rule references unknown variable {var!r}")
    claimed = np.zeros(len(ds), dtype=bool)
    out: dict[PartitionKey, Dataset] = {}
    for r in rules:
        m = r.matches(ds)
        if np.any(m & claimed):
            raise DatasetError(f"row matched by more than one rule at {r.key.label}")
        claimed |= m
        out[r.key] = ds.take(m)
    out[UNMODELED] = ds.take(~claimed)
    return out


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinningSpec:
    """Half-open intervals ``[a, b)``; ``b=None`` means unbounded above."""

    variable: str
    edges: tuple[tuple[float, float | None], ...]

    def __post_init__(self):
        prev_hi = -math.inf
        for i, (lo, hi) in enumerate(self.edges):
            if hi is not None and not lo < hi:
                raise ValueError(f"interval {i} is empty or reversed: [{lo}, {hi})")
            if lo < prev_hi:
                raise ValueError(f"intervals are unordered or overlapping at {i}")
            if hi is None and i != len(self.edges) - 1:
                raise ValueError("only the final interval may be unbounded")
            prev_hi = math.inf if hi is None else hi

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "BinningSpec":
        return cls(d["variable"], tuple((float(a), None if b is None else float(b)) for a, b in d["edges"]))

    def to_json(self) -> dict:
        return {"variable": self.variable, "edges": [list(e) for e in self.edges]}

    def labels(self) -> list[str]:
        return [f"[{_fmt_code(a)},{_fmt_code(b)})" if b is not None else f">={_fmt_code(a)}" for a, b in self.edges]

    def assign(self, x: np.ndarray) -> np.ndarray:
        """Bin index per value; -1 for missing or out-of-range."""
        out = np.full(len(x), -1, dtype=int)
        for i, (lo, hi) in enumerate(self.edges):
            with np.errstate(invalid="ignore"):
                m = x >= lo
                if hi is not None:
                    m &= x < hi
            out[m] = i
        return out


@dataclass(frozen=True)
class Binned:
    spec: BinningSpec
    datasets: tuple[Dataset, ...]
    n_missing: int
    n_dropped: int

    def __iter__(self):
        return iter(self.datasets)

    def __len__(self):
        return len(self.datasets)

    def __getitem__(self, i):
        return self.datasets[i]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(d) for d in self.datasets)


def bin_dataset(ds: Dataset, spec: BinningSpec) -> Binned:
    """Split rows by the interval containing ``spec.variable``."""
    if spec.variable not in ds:
        raise SchemaError(f"unknown binning variable {spec.variable!r}")
    if ds.spec(spec.variable).kind != "quantitative":
        raise SchemaError(f"binning variable {spec.variable!r} is not quantitative")
    x = ds[spec.variable]
    which = spec.assign(x)
    n_missing = int(np.isnan(x).sum())
    n_dropped = int((which < 0).sum()) - n_missing
    if n_dropped:
        log.info("bin: %d rows fall outside every interval of %s", n_dropped, spec.variable)
    return Binned(spec, tuple(ds.take(which == i) for i in range(len(spec.edges))), n_missing, n_dropped)


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Distribution:
    variable: str
    counts: Mapping[str, int]
    n: int

    @property
    def shares(self) -> dict[str, float]:
        return {k: 100.0 * c / self.n for k, c in self.counts.items()}

    def to_json(self) -> dict:
        return {"variable": self.variable, "n": self.n, "counts": dict(self.counts), "percent": self.shares}

    def to_text(self, title: str | None = None) -> str:
        width = max([len(k) for k in self.counts] + [8])
        lines = [title or self.variable]
        for k, pct in self.shares.items():
            lines.append(f"  {k:<{width}}  {self.counts[k]:>8d}  {pct:6.2f}%")
        lines.append(f"  {'total':<{width}}  {self.n:>8d}  100.00%")
        return "\n".join(lines)


def describe(ds: Dataset, var: str) -> Distribution:
    """Percentage distribution of an indicator or categorical variable."""
    spec = ds.spec(var)
    if not (spec.is_indicator or spec.kind == "categorical"):
        raise SchemaError(f"{var!r} is neither an indicator nor categorical")
    x = ds[var]
    x = x[~np.isnan(x)]
    if len(x) == 0:
        raise DatasetError(f"all values of {var!r} are missing")
    if spec.levels is not None:
        codes = list(spec.levels)
        labels = dict(spec.levels)
    elif spec.is_indicator:
        codes = [0.0, 1.0]
        labels = {0.0: "0", 1.0: "1"}
    else:
        codes = sorted(set(x.tolist()))
        labels = {c: _fmt_code(c) for c in codes}
    counts = {labels[c]: int((x == c).sum()) for c in codes}
    return Distribution(var, counts, int(len(x)))

"""Run configuration and the per-partition analysis behind the command line.

A run is described by one JSON document (:class:`RunConfig`).  The grid
analysis routes every accident to a road-class / area / accident-type
partition, runs stepwise selection on each, probes the focal variables that
did not survive, and computes averaged elasticities for the ones that did.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .dataset import (
    UNMODELED,
    BinningSpec,
    Dataset,
    DatasetError,
    PartitionKey,
    Schema,
    VariableSpec,
    bin_dataset,
    compile_taxonomy,
    describe,
    load_dataset,
    partition,
)
from .elasticity import averaged_elasticities
from .inference import PartitionTestResult, bin_structure_test, pooling_test
from .logit import ModelSpec
from .mle import EstimationError, OptimizerConfig
from .report import FocalCell, ModelTableRow, render_causation_table
from .selection import SelectionConfig, SelectionResult, probe_variable, select_model

log = logging.getLogger(__name__)

MODES = ("causation", "severity")
PROCEDURES = ("A", "B", "auto")
CAUSATION_OUTCOME = "unsafe_speed"


class ConfigError(ValueError):
    """Invalid run configuration; the command line exits with status 2."""


def default_schema_path() -> Path:
    return Path(str(resources.files("choicefit") / "data" / "default_schema.json"))


@dataclass
class RunConfig:
    """Everything one run needs.  Paths are resolved against the config file's folder."""

    data: str | None = None
    schema: str | None = None
    mode: str = "causation"
    taxonomy: dict | None = None
    binning: dict | None = None
    candidates: list[str] = field(default_factory=list)
    forced: list[str] = field(default_factory=list)
    focal: list[str] = field(default_factory=list)
    splits: list[str] = field(default_factory=list)
    describe: list[str] = field(default_factory=list)
    procedure: str = "auto"
    level: float = 0.05
    optimizer: dict = field(default_factory=dict)
    merge_bins: bool = False
    out: str = "out"
    seed: int = 0
    jobs: int | None = None
    fixtures: str | None = None

    @classmethod
    def from_json(cls, doc: Mapping[str, Any], base_dir: str | Path = ".") -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**dict(doc))
        base = Path(base_dir)
        for name in ("data", "schema", "fixtures"):
            p = getattr(cfg, name)
            if p is not None and not Path(p).is_absolute():
                setattr(cfg, name, str(base / p))
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(doc, Path(path).parent)

    def override(self, **kw: Any) -> "RunConfig":
        """Command-line values win over the file; ``None`` means "not given"."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_json(self) -> dict:
        return asdict(self)

    def validate(self, need_data: bool = True) -> None:
        if not 0 < self.level < 1:
            raise ConfigError(f"level must be in (0, 1), got {self.level}")
        if self.procedure not in PROCEDURES:
            raise ConfigError(f"procedure must be one of {PROCEDURES}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if need_data and not self.data:
            raise ConfigError("no data file configured")
        for name in ("data", "schema", "fixtures"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} path does not exist: {p}")
        try:
            OptimizerConfig.from_json(self.optimizer)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad optimizer settings: {exc}") from exc

    @property
    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig.from_json(self.optimizer)

    @property
    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(level=self.level, optimizer=self.optimizer_config)

    @property
    def n_jobs(self) -> int:
        return self.jobs or os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Data and outcome
# ---------------------------------------------------------------------------


def load_schema(cfg: RunConfig) -> Schema:
    try:
        return Schema.load(cfg.schema or default_schema_path())
    except (KeyError, TypeError, DatasetError) as exc:
        raise ConfigError(f"bad schema document: {exc}") from exc


def load_run_data(cfg: RunConfig) -> tuple[Schema, Dataset]:
    schema = load_schema(cfg)
    ds = load_dataset(cfg.data, schema)
    return schema, with_outcome(ds, schema, cfg.mode)


def with_outcome(ds: Dataset, schema: Schema, mode: str) -> Dataset:
    """Add the causation outcome column (severity uses its column as is)."""
    if mode == "severity":
        return ds
    if CAUSATION_OUTCOME in ds:
        return ds
    spec = schema.extra.get("causation")
    if spec is None:
        raise ConfigError("schema has no 'causation' block mapping cause codes to the outcome")
    cause = ds[spec["variable"]]
    positive = np.isin(cause, np.asarray(spec["positive_codes"], dtype=float))
    y = np.where(np.isnan(cause), np.nan, np.where(positive, 1.0, 2.0))
    labels = spec.get("labels", ["unsafe speed", "other cause"])
    return ds.with_column(
        VariableSpec(CAUSATION_OUTCOME, "categorical", description="outcome", levels={1.0: labels[0], 2.0: labels[1]}),
        y,
    )


def template_spec(schema: Schema, mode: str) -> ModelSpec:
    """Intercept-only model defining the outcome of ``mode``."""
    if mode == "causation":
        labels = schema.extra.get("causation", {}).get("labels", ["unsafe speed", "other cause"])
        return ModelSpec.shared(CAUSATION_OUTCOME, (1.0, 2.0), (), labels=labels)
    spec = schema.extra.get("severity")
    if spec is None:
        raise ConfigError("schema has no 'severity' block")
    var = spec["variable"]
    order = [float(o) for o in spec["order"]]
    levels = schema[var].levels or {}
    labels = [levels.get(o, f"{o:g}") for o in order]
    return ModelSpec.shared(var, order, (), labels=labels)


def check_variables(cfg: RunConfig, ds: Dataset) -> None:
    for group in ("candidates", "forced", "focal", "splits", "describe"):
        for v in getattr(cfg, group):
            if v not in ds:
                raise ConfigError(f"{group}: unknown variable {v!r}")
    for v in list(cfg.candidates) + list(cfg.forced) + list(cfg.focal):
        if ds.spec(v).kind == "categorical":
            raise ConfigError(f"{v!r} is categorical; declare derived indicators for its levels instead")


def taxonomy_of(cfg: RunConfig, schema: Schema) -> dict:
    tax = cfg.taxonomy or schema.extra.get("taxonomy")
    if tax is None:
        raise ConfigError("no partition taxonomy configured")
    return tax


def binning_of(cfg: RunConfig) -> BinningSpec:
    if cfg.binning is None:
        raise ConfigError("no binning spec configured (required for bin-structure tests)")
    try:
        return BinningSpec.from_json(cfg.binning)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad binning spec: {exc}") from exc


# ---------------------------------------------------------------------------
# Describe
# ---------------------------------------------------------------------------


def describe_blocks(ds: Dataset, variables: Sequence[str], bins: BinningSpec | None) -> list[dict]:
    """One block per variable overall, plus one per bin when ``bins`` is given."""
    blocks = []
    for var in variables:
        groups: list[tuple[str, Dataset]] = [("all", ds)]
        if bins is not None:
            groups += list(zip(bins.labels(), bin_dataset(ds, bins)))
        for label, d in groups:
            block: dict[str, Any] = {"variable": var, "subset": label}
            try:
                block.update(describe(d, var).to_json())
            except DatasetError:
                block.update({"n": 0, "no_data": True})
            blocks.append(block)
    return blocks


def describe_text(blocks: Sequence[Mapping[str, Any]]) -> str:
    out = []
    for b in blocks:
        title = f"{b['variable']} [{b['subset']}]"
        if b.get("no_data"):
            out.append(f"{title}\n  no data")
            continue
        width = max([len(k) for k in b["counts"]] + [8])
        lines = [title]
        for k, c in b["counts"].items():
            lines.append(f"  {k:<{width}}  {c:>8d}  {b['percent'][k]:6.2f}%")
        lines.append(f"  {'total':<{width}}  {b['n']:>8d}  100.00%")
        out.append("\n".join(lines))
    return "\n\n".join(out)


# ---------------------------------------------------------------------------
# Per-partition analysis
# ---------------------------------------------------------------------------


@dataclass
class PartitionJob:
    key: PartitionKey
    data: Dataset
    template: ModelSpec
    candidates: list[str]
    forced: list[str]
    focal: list[str]
    procedure: str
    selection: SelectionConfig


def focal_cells(result: SelectionResult, var: str, base: Dataset, opt: OptimizerConfig) -> tuple[list, list[str]]:
    """Per-outcome focal cells: significant ones from the final model, the rest probed."""
    final, aic_fit = result.final, result.aic_optimal
    spec = final.spec
    blocks = len(spec.covariates)
    flags: list[str] = []
    quantitative = base.spec(var).kind == "quantitative"
    elast = None
    if any(var in cov for cov in spec.covariates) and quantitative:
        try:
            elast = averaged_elasticities(final, var)
        except ValueError as exc:
            flags.append(f"elasticity:{exc}")
    probe = None
    if any(var not in cov for cov in aic_fit.spec.covariates):
        try:
            probe = probe_variable(aic_fit, var, base, opt)
        except EstimationError as exc:
            flags.append(f"probe-failed:{type(exc).__name__}")
    labels = spec.outcome_labels
    cells: list[FocalCell | None] = []
    for j in range(blocks):
        lab = labels[j]
        if var in spec.covariates[j]:
            direct = cross = None
            if elast is not None:
                direct = elast.direct[lab]
                cross = next(v for (s, _), v in elast.cross.items() if s == lab)
            cells.append(FocalCell(final.coef(j, var), final.t(j, var), False, direct, cross))
        elif var in aic_fit.spec.covariates[j]:
            cells.append(FocalCell(aic_fit.coef(j, var), aic_fit.t(j, var), True))
        elif probe is not None and lab in probe.coefficients:
            cells.append(FocalCell(probe.coefficients[lab], probe.t_ratios[lab], True))
        else:
            cells.append(None)
    return cells, flags


def analyze_partition(job: PartitionJob) -> tuple[dict, str]:
    """Selection, probes and elasticities for one partition.

    Returns the table row document and the selection trace (JSON lines).
    Estimation failures are recorded as flags, never raised.
    """
    label = job.key.label
    row: dict[str, Any] = {"partition": label, "slug": job.key.slug, "n_rows": len(job.data)}
    if len(job.data) == 0:
        row["flags"] = ["no data"]
        return row, ""
    try:
        result = select_model(job.data, job.template, job.candidates, job.procedure, job.forced, job.selection)
    except EstimationError as exc:
        row["flags"] = [f"{type(exc).__name__}: {exc}"]
        return row, ""
    final = result.final
    rows_focal = {}
    flags: list[str] = [] if result.converged else ["selection-restored"]
    for var in job.focal:
        cells, f = focal_cells(result, var, job.data, job.selection.optimizer)
        flags += [f"{var}:{x}" for x in f]
        rows_focal[var] = ModelTableRow(label, cells, final.ll, final.ll_restricted, final.rho2).to_json()
    row.update(
        {
            "procedure": result.procedure,
            "n_used": final.n_used,
            "ll": final.ll,
            "ll_restricted": final.ll_restricted,
            "rho2": final.rho2,
            "aic": final.aic,
            "aic_optimal_terms": [[j, v] for j, v in result.aic_optimal_terms],
            "final_terms": [[j, v] for j, v in result.final_terms],
            "final": final.to_json(),
            "focal": rows_focal,
            "flags": flags,
        }
    )
    return row, result.trace.to_jsonl()


def grid_jobs(cfg: RunConfig, schema: Schema, ds: Dataset) -> list[PartitionJob]:
    parts = partition(ds, compile_taxonomy(taxonomy_of(cfg, schema)))
    template = template_spec(schema, cfg.mode)
    sel = cfg.selection_config
    return [
        PartitionJob(key, d, template, list(cfg.candidates), list(cfg.forced), list(cfg.focal), cfg.procedure, sel)
        for key, d in parts.items()
        if key != UNMODELED
    ]


def run_jobs(jobs: Sequence[PartitionJob], n_jobs: int) -> list[tuple[dict, str]]:
    """Analyze partitions, in input order whatever the pool size."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [analyze_partition(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n_jobs, len(jobs))) as pool:
        return list(pool.map(analyze_partition, jobs))


def focal_table(rows: Sequence[Mapping[str, Any]], var: str, outcomes: Sequence[str]) -> tuple[str, dict]:
    table_rows = []
    for r in rows:
        doc = r.get("focal", {}).get(var)
        if doc is None:
            table_rows.append(ModelTableRow(r["partition"], [None] * len(outcomes), flags=list(r.get("flags", []))))
            continue
        cells = [None if c is None else FocalCell(**c) for c in doc["cells"]]
        table_rows.append(
            ModelTableRow(r["partition"], cells, doc["ll"], doc["ll_restricted"], doc["rho2"], list(r.get("flags", [])))
        )
    return render_causation_table(table_rows, outcomes, var)


def dump_json(obj: Any, path: str | Path) -> None:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, ensure_ascii=False, allow_nan=True)
        fh.write("\n")


def run_grid(cfg: RunConfig, schema: Schema, ds: Dataset, out: str | Path) -> dict:
    """Analyze every partition and write ``grid.json``, text tables and traces."""
    jobs = grid_jobs(cfg, schema, ds)
    results = run_jobs(jobs, cfg.n_jobs)
    out = Path(out)
    rows = []
    for job, (row, trace) in zip(jobs, results):
        rows.append(row)
        if trace:
            tpath = out / "traces" / f"{job.key.slug}.jsonl"
            tpath.parent.mkdir(parents=True, exist_ok=True)
            tpath.write_text(trace, encoding="utf-8")
    template = template_spec(schema, cfg.mode)
    outcomes = list(template.outcome_labels[:-1])
    doc = {"mode": cfg.mode, "procedure": cfg.procedure, "level": cfg.level, "rows": rows, "tables": {}}
    texts = []
    for var in cfg.focal:
        text, tdoc = focal_table(rows, var, outcomes)
        doc["tables"][var] = tdoc
        texts.append(f"focal variable {var}\n{text}")
    dump_json(doc, out / "grid.json")
    (out / "grid.txt").write_text("\n\n".join(texts) + "\n", encoding="utf-8")
    return doc


# ---------------------------------------------------------------------------
# Structure tests
# ---------------------------------------------------------------------------


def partition_tests(
    cfg: RunConfig, schema: Schema, ds: Dataset
) -> list[tuple[str, str, PartitionTestResult | None, str]]:
    """Pooling tests per configured split, and bin tests when a binning is set.

    Each entry is ``(kind, label, result or None, error message)``.
    """
    if cfg.mode == "severity" and cfg.binning is None:
        raise ConfigError("severity-mode tests need a binning spec")
    bins = binning_of(cfg) if cfg.binning is not None else None
    out = []
    opt = cfg.optimizer_config
    for job in grid_jobs(cfg, schema, ds):
        label = job.key.label
        if len(job.data) == 0:
            continue
        try:
            result = select_model(job.data, job.template, job.candidates, job.procedure, job.forced, job.selection)
        except EstimationError as exc:
            out.append(("selection", label, None, str(exc)))
            continue
        spec = result.final.spec
        for split in cfg.splits:
            try:
                res = pooling_test(spec.without_variables([split]), job.data, split, opt, cfg.level)
                out.append((f"pooling:{split}", label, res, ""))
            except (EstimationError, ValueError) as exc:
                out.append((f"pooling:{split}", label, None, str(exc)))
        if bins is not None:
            try:
                res = bin_structure_test(spec, job.data, bins, opt, cfg.level, cfg.merge_bins)
                out.append(("bins", label, res, ""))
            except (EstimationError, ValueError) as exc:
                out.append(("bins", label, None, str(exc)))
    return out

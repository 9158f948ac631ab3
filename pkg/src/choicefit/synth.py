"""Synthetic data from known logit models, and brute-force oracles.

Random streams come from numpy's PCG64 bit generator.  Every (seed,
purpose) pair gets its own stream through ``SeedSequence(seed,
spawn_key=(crc32(purpose),))``, so adding a covariate never perturbs the
draws of another.
"""

from __future__ import annotations

import itertools
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .dataset import Dataset, VariableSpec, complete_cases
from .logit import CONST, ModelSpec, softmax
from .mle import EstimationError, FitResult, OptimizerConfig, fit

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.PCG64 / SeedSequence(seed, spawn_key=(crc32(purpose),))"


def rng_stream(seed: int, purpose: str) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(purpose.encode()),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class GeneratorSpec:
    """Known-truth logit data generator.

    ``beta`` has one mapping per non-base outcome, variable name -> true
    coefficient, with ``"const"`` for the intercept.  ``covariates`` maps
    each variable to a distribution::

        {"dist": "normal", "mean": 0, "sd": 1}
        {"dist": "uniform", "low": 0, "high": 1}
        {"dist": "bernoulli", "p": 0.3}                       # indicator
        {"dist": "choice", "values": [25, 55], "p": [.5, .5]} # quantitative
        {"dist": "categorical", "levels": {"1": "a", "2": "b"}, "p": [.5, .5]}
    """

    beta: Sequence[Mapping[str, float]]
    covariates: Mapping[str, Mapping[str, Any]]
    n: int
    seed: int = 0
    missing: Mapping[str, float] = field(default_factory=dict)
    outcome: str = "y"
    outcomes: Sequence[float] | None = None
    labels: Sequence[str] | None = None

    def __post_init__(self):
        for b in self.beta:
            unknown = set(b) - set(self.covariates) - {CONST}
            if unknown:
                raise ValueError(f"coefficients for undeclared covariates: {sorted(unknown)}")
        if self.outcomes is None:
            self.outcomes = [float(i + 1) for i in range(len(self.beta) + 1)]
        if len(self.outcomes) != len(self.beta) + 1:
            raise ValueError("need one beta mapping per non-base outcome")
        for v, r in self.missing.items():
            if not 0 <= r < 1:
                raise ValueError(f"missing rate for {v!r} must be in [0, 1)")

    @property
    def n_outcomes(self) -> int:
        return len(self.beta) + 1

    def model_spec(self, variables: Sequence[str] | None = None) -> ModelSpec:
        """Shared-covariate spec over ``variables`` (default: all covariates)."""
        variables = list(self.covariates) if variables is None else list(variables)
        return ModelSpec.shared(self.outcome, self.outcomes, variables, labels=self.labels)

    def true_spec(self) -> ModelSpec:
        """Spec whose terms are exactly the non-zero true coefficients."""
        terms = [(j, v) for j, b in enumerate(self.beta) for v in self.covariates if b.get(v, 0.0) != 0.0]
        return self.model_spec().with_terms(terms)

    def true_vector(self, spec: ModelSpec) -> np.ndarray:
        return np.array([self.beta[spec.outcome_labels.index(o)].get(v, 0.0) for o, v in spec.param_names])

    def to_json(self) -> dict:
        return {
            "beta": [dict(b) for b in self.beta],
            "covariates": {k: dict(v) for k, v in self.covariates.items()},
            "n": self.n,
            "seed": self.seed,
            "missing": dict(self.missing),
            "outcome": self.outcome,
            "outcomes": list(self.outcomes),
            "labels": None if self.labels is None else list(self.labels),
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "GeneratorSpec":
        return cls(
            beta=d["beta"], covariates=d["covariates"], n=int(d["n"]), seed=int(d.get("seed", 0)),
            missing=d.get("missing", {}), outcome=d.get("outcome", "y"),
            outcomes=d.get("outcomes"), labels=d.get("labels"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _draw(rng: np.random.Generator, dist: Mapping[str, Any], n: int) -> tuple[np.ndarray, VariableSpec | None]:
    kind = dist["dist"]
    if kind == "normal":
        return rng.normal(dist.get("mean", 0.0), dist.get("sd", 1.0), n), None
    if kind == "uniform":
        return rng.uniform(dist.get("low", 0.0), dist.get("high", 1.0), n), None
    if kind == "bernoulli":
        return (rng.random(n) < dist["p"]).astype(float), None
    if kind == "choice":
        return rng.choice(np.asarray(dist["values"], dtype=float), size=n, p=dist.get("p")), None
    if kind == "categorical":
        levels = {float(k): str(v) for k, v in dist["levels"].items()}
        return rng.choice(np.array(list(levels)), size=n, p=dist.get("p")), levels
    raise ValueError(f"unknown distribution {kind!r}")


def _kind(dist: Mapping[str, Any]) -> str:
    return {"bernoulli": "indicator", "categorical": "categorical"}.get(dist["dist"], "quantitative")


def generate(spec: GeneratorSpec) -> Dataset:
    """Draw covariates, then outcomes from the model probabilities, then missingness."""
    n = spec.n
    cols: dict[str, np.ndarray] = {}
    schema: list[VariableSpec] = []
    for name, dist in spec.covariates.items():
        values, levels = _draw(rng_stream(spec.seed, f"covariate:{name}"), dist, n)
        cols[name] = values
        schema.append(VariableSpec(name, _kind(dist), levels=levels))

    v = np.zeros((n, spec.n_outcomes))
    for j, b in enumerate(spec.beta):
        v[:, j] = b.get(CONST, 0.0)
        for name, coef in b.items():
            if name != CONST:
                v[:, j] += coef * cols[name]
    p = softmax(v)
    u = rng_stream(spec.seed, "outcome").random(n)
    idx = (u[:, None] > np.cumsum(p, axis=1)[:, :-1]).sum(axis=1)
    y = np.asarray(spec.outcomes, dtype=float)[idx]

    for name, rate in spec.missing.items():
        if rate > 0:
            mask = rng_stream(spec.seed, f"missing:{name}").random(n) < rate
            cols[name] = np.where(mask, np.nan, cols[name])

    labels = spec.labels or [str(int(o)) if float(o).is_integer() else str(o) for o in spec.outcomes]
    out_spec = VariableSpec(spec.outcome, "categorical", levels=dict(zip(map(float, spec.outcomes), labels)))
    cols[spec.outcome] = y
    return Dataset(tuple(schema) + (out_spec,), cols, provenance=f"synthetic seed={spec.seed}; rng={RNG_ALGORITHM}")


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


@dataclass
class ExhaustiveResult:
    terms: list[tuple[int, str]]
    aic: float
    fit: FitResult
    n_subsets: int
    n_failed: int


def exhaustive_aic(
    ds: Dataset,
    template: ModelSpec,
    candidates: Sequence[str],
    cfg: OptimizerConfig | None = None,
) -> ExhaustiveResult:
    """Globally AIC-minimal set of terms by enumerating every subset.

    Terms are ``(outcome index, variable)`` pairs over the non-base outcomes.
    Ties go to the smaller subset, then to the lexicographically first one in
    candidate order.
    """
    blocks = template.n_outcomes - 1
    terms = [(j, v) for v in candidates for j in range(blocks)]
    if len(terms) > 12:
        raise ValueError(f"{len(terms)} candidate terms; the oracle enumerates at most 12")
    if len(complete_cases(ds, [template.outcome] + list(candidates))) != len(ds):
        raise ValueError("exhaustive oracle requires data without missing values")
    best = None
    failed = 0
    total = 0
    for size in range(len(terms) + 1):
        for subset in itertools.combinations(range(len(terms)), size):
            total += 1
            chosen = [terms[i] for i in subset]
            try:
                res = fit(template.with_terms(chosen), ds, cfg)
            except EstimationError as exc:
                failed += 1
                log.debug("exhaustive: subset %s skipped: %s", chosen, exc)
                continue
            rank = (res.aic, size, subset)
            if best is None or rank < best[0]:
                best = (rank, chosen, res)
    if best is None:
        raise EstimationError("no subset could be fitted")
    return ExhaustiveResult(best[1], best[2].aic, best[2], total, failed)


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float | None = None) -> np.ndarray:
    """Central differences with ``h_k = max(1e-5, 1e-7 |x_k|)`` unless ``step`` is given."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(len(x)):
        h = step if step is not None else max(1e-5, 1e-7 * abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_jacobian(g: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        h = step if step is not None else max(1e-5, 1e-7 * abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((np.asarray(g(xp)) - np.asarray(g(xm))) / (2.0 * h))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Crash-like layout
# ---------------------------------------------------------------------------

#: speed-limit values drawn for each road class code (county, interstate, state, city, US)
_LIMITS = {1: [30, 40, 45, 50, 55], 2: [55, 60, 65], 3: [40, 45, 50, 55], 4: [20, 25, 30, 35, 40], 5: [40, 45, 55, 60]}
_OTHER_CAUSES = [1, 3, 7, 8, 13, 16, 25]


def crash_dataset(seed: int, n_per_partition: int = 300, schema: Mapping[str, Any] | None = None) -> Dataset:
    """Synthetic accidents on the 5 x 2 x 3 road-class / area / type layout.

    Both outcomes are generated: the primary-cause code ``X20`` from a binary
    logit in speed limit ``X29``, driver age ``X34`` and gender ``X35``, and
    ``severity`` from a three-outcome logit in the same variables plus fire
    ``X33``.  Coefficients vary mildly by partition.  About 3% of ``X34``
    values are missing.  ``schema`` (a schema document, by default the
    bundled one) supplies variable kinds and levels.
    """
    from importlib import resources

    from .dataset import Schema

    if schema is None:
        with resources.files("choicefit").joinpath("data/default_schema.json").open(encoding="utf-8") as fh:
            schema = json.load(fh)
    sch = Schema.from_json(schema)
    names = ["road_class", "area", "accident_type", "X20", "severity", "X27", "X29", "X33", "X34", "X35"]
    cols: dict[str, list[np.ndarray]] = {n: [] for n in names}
    cell = 0
    for road in range(1, 6):
        for area in (1, 2):
            for kind in (1, 2, 3):
                rng = rng_stream(seed, f"crash:{road}:{area}:{kind}")
                n = n_per_partition
                limit = rng.choice(np.asarray(_LIMITS[road], dtype=float), size=n)
                age = np.clip(rng.normal(40.0, 15.0, n), 16, 90).round()
                female = (rng.random(n) < 0.45).astype(float)
                fire = (rng.random(n) < 0.04).astype(float)
                occupants = rng.integers(1, 5, n).astype(float)
                shift = 0.3 * (cell % 3 - 1)
                v_speed = -1.8 + shift + 0.025 * (limit - 45) - 0.03 * (age - 40) - 0.3 * female
                p_speed = 1.0 / (1.0 + np.exp(-v_speed))
                speed = rng.random(n) < p_speed
                cause = np.where(
                    speed,
                    rng.choice([6.0, 27.0], size=n, p=[0.8, 0.2]),
                    rng.choice(np.asarray(_OTHER_CAUSES, dtype=float), size=n),
                )
                v = np.zeros((n, 3))
                v[:, 0] = -3.0 + 0.02 * (limit - 45) + 1.5 * fire + 0.01 * (age - 40)
                v[:, 1] = -1.0 + shift + 0.01 * (limit - 45) + 0.3 * female + 0.5 * fire
                p = softmax(v)
                u = rng.random(n)
                idx = (u[:, None] > np.cumsum(p, axis=1)[:, :-1]).sum(axis=1)
                severity = np.array([3.0, 2.0, 1.0])[idx]  # fatality, injury, PDO codes
                age[rng.random(n) < 0.03] = np.nan
                for name, vals in zip(
                    names,
                    [np.full(n, road, float), np.full(n, area, float), np.full(n, kind, float), cause, severity,
                     occupants, limit, fire, age, female],
                ):
                    cols[name].append(vals)
                cell += 1
    columns = {n: np.concatenate(v) for n, v in cols.items()}
    specs = tuple(sch[n] for n in names)
    return Dataset(specs, columns, provenance=f"synthetic crash layout seed={seed}; rng={RNG_ALGORITHM}")


def crash_schema(schema: Mapping[str, Any] | None = None) -> dict:
    """The bundled schema document restricted to :func:`crash_dataset`'s columns."""
    from importlib import resources

    if schema is None:
        with resources.files("choicefit").joinpath("data/default_schema.json").open(encoding="utf-8") as fh:
            schema = json.load(fh)
    keep = {"road_class", "area", "accident_type", "X20", "severity", "X27", "X29", "X33", "X34", "X35"}
    doc = dict(schema)
    doc["variables"] = [v for v in schema["variables"] if v["name"] in keep]
    return doc

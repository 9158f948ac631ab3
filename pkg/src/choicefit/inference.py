"""Likelihood-ratio tests across data partitions.

The statistic ``-2 [LL(pooled) - sum_m LL(bin m)]`` is referred to a
chi-squared distribution with ``(M - 1) K`` degrees of freedom.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .dataset import BinningSpec, Dataset, bin_dataset, complete_cases
from .logit import ModelSpec
from .mle import EstimationError, FitResult, OptimizerConfig, fit

log = logging.getLogger(__name__)

NESTING_TOL = 1e-6

#: (reject, accept) conclusion strings of the two test harnesses
POOLING_LABELS = ("separately", "together")
BIN_LABELS = ("SL effect", "no SL effect")


class NestingError(ValueError):
    pass


class BinTooSmallError(EstimationError):
    pass


# ---------------------------------------------------------------------------
# Regularized incomplete gamma
# ---------------------------------------------------------------------------

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_p_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_cf(a: float, x: float) -> float:
    # modified Lentz
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Q(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_p_series(a, x))
    return min(1.0, _gamma_q_cf(a, x))


def chi_squared_sf(x: float, df: int) -> float:
    """``Pr(chi2_df > x)``."""
    if df < 0:
        raise ValueError("df must be non-negative")
    if x < 0:
        warnings.warn(f"negative chi-squared statistic {x!r} clamped to 0", RuntimeWarning, stacklevel=2)
        x = 0.0
    if df == 0:
        return 1.0 if x <= 0 else 0.0
    if df == 2:
        return math.exp(-x / 2.0)
    return gamma_q(df / 2.0, x / 2.0)


# ---------------------------------------------------------------------------
# LR test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LRTestResult:
    ll_pooled: float
    ll_bins: tuple[float, ...]
    k: int
    level: float
    statistic: float
    df: int
    p_value: float

    @property
    def m(self) -> int:
        return len(self.ll_bins)

    @property
    def ll_sum(self) -> float:
        return math.fsum(self.ll_bins)

    @property
    def reject(self) -> bool:
        return self.p_value < self.level

    def to_json(self) -> dict:
        return {
            "ll_pooled": self.ll_pooled,
            "ll_bins": list(self.ll_bins),
            "ll_sum": self.ll_sum,
            "M": self.m,
            "K": self.k,
            "level": self.level,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "reject": self.reject,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "LRTestResult":
        return cls(
            d["ll_pooled"], tuple(d["ll_bins"]), d["K"], d["level"], d["statistic"], d["df"], d["p_value"]
        )


def lr_test(ll_pooled: float, ll_bins: Sequence[float], k: int, level: float = 0.05) -> LRTestResult:
    """Likelihood-ratio test of a pooled model against M separately fitted bins."""
    ll_bins = tuple(float(v) for v in ll_bins)
    if len(ll_bins) < 2:
        raise ValueError("need at least two bins (M >= 2)")
    if k < 0:
        raise ValueError("K must be non-negative")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    total = math.fsum(ll_bins)
    if total < ll_pooled - NESTING_TOL:
        raise NestingError(
            f"sum of bin log-likelihoods {total} is below the pooled {ll_pooled}; "
            "the bins do not partition the pooled sample"
        )
    stat = -2.0 * (ll_pooled - total)
    df = (len(ll_bins) - 1) * k
    p = chi_squared_sf(max(stat, 0.0), df)
    return LRTestResult(float(ll_pooled), ll_bins, int(k), level, stat, df, p)


def lr_test_from_sum(ll_pooled: float, ll_sum: float, m: int, k: int, level: float = 0.05) -> LRTestResult:
    """Same test when only the summed bin log-likelihood is published."""
    if m < 2:
        raise ValueError("need at least two bins (M >= 2)")
    if ll_sum < ll_pooled - NESTING_TOL:
        raise NestingError(f"sum of bin log-likelihoods {ll_sum} is below the pooled {ll_pooled}")
    stat = -2.0 * (ll_pooled - ll_sum)
    df = (m - 1) * k
    p = chi_squared_sf(max(stat, 0.0), df)
    # spread the sum evenly so that ll_sum round-trips
    bins = (ll_sum / m,) * m
    return LRTestResult(float(ll_pooled), bins, int(k), level, stat, df, p)


# ---------------------------------------------------------------------------
# Test harnesses
# ---------------------------------------------------------------------------


@dataclass
class PartitionTestResult:
    lr: LRTestResult
    pooled: FitResult
    fits: list[FitResult]
    groups: list[str]
    spec: ModelSpec
    removed: list[dict] = field(default_factory=list)
    labels: tuple[str, str] = POOLING_LABELS

    def conclusion(self, reject_label: str | None = None, accept_label: str | None = None) -> str:
        reject_label = self.labels[0] if reject_label is None else reject_label
        accept_label = self.labels[1] if accept_label is None else accept_label
        return reject_label if self.lr.reject else accept_label

    def to_json(self) -> dict:
        return {
            "test": self.lr.to_json(),
            "model": self.spec.to_json(),
            "groups": self.groups,
            "n_pooled": self.pooled.n_used,
            "n_groups": [f.n_used for f in self.fits],
            "removed": self.removed,
            "conclusion": self.conclusion(),
        }


def _split_values(ds: Dataset, var: str) -> list[float]:
    x = ds[var]
    return sorted(set(x[~np.isnan(x)].tolist()))


def pooling_test(
    spec: ModelSpec,
    pooled: Dataset,
    split: str,
    cfg: OptimizerConfig | None = None,
    level: float = 0.05,
) -> PartitionTestResult:
    """Can the subsets defined by ``split`` share one model?

    The pooled model and one model per distinct value of ``split`` are fitted
    on the same complete-case rows with identical variable lists.
    """
    sample = complete_cases(pooled, [spec.outcome, split] + spec.variables)
    values = _split_values(sample, split)
    if len(values) < 2:
        raise ValueError(f"split variable {split!r} defines fewer than two subsets")
    pooled_fit = fit(spec, sample, cfg)
    fits = []
    labels = []
    for v in values:
        sub = sample.take(sample[split] == v)
        label = f"{split}={v:g}"
        try:
            fits.append(fit(spec, sub, cfg))
        except EstimationError as exc:
            raise EstimationError(f"subset {label}: {exc}") from exc
        labels.append(label)
    lr = lr_test(pooled_fit.ll, [f.ll for f in fits], pooled_fit.k, level)
    return PartitionTestResult(lr, pooled_fit, fits, labels, spec, [], POOLING_LABELS)


def constant_within(ds: Dataset, var: str) -> bool:
    x = ds[var]
    return len(x) > 0 and float(np.var(x)) == 0.0


def bin_structure_test(
    spec: ModelSpec,
    ds: Dataset,
    bins: BinningSpec,
    cfg: OptimizerConfig | None = None,
    level: float = 0.05,
    merge: bool = False,
) -> PartitionTestResult:
    """Does the binning variable change the structure of ``spec``?

    The binning variable and any variable constant inside some bin are removed
    from the model first.  Empty bins are dropped.  A bin with ``n <= K`` is
    merged into its smaller adjacent neighbour when ``merge`` is set.
    """
    removed: list[dict] = []
    if bins.variable in spec.variables:
        spec = spec.without_variables([bins.variable])
        removed.append({"variable": bins.variable, "reason": "binning variable"})

    sample = complete_cases(ds, [spec.outcome, bins.variable] + spec.variables)
    binned = bin_dataset(sample, bins)
    groups = [(lab, d) for lab, d in zip(bins.labels(), binned) if len(d) > 0]
    if len(groups) < 2:
        raise ValueError(f"fewer than two non-empty bins ({len(groups)})")

    while True:
        const = [
            v for v in spec.variables if any(constant_within(d, v) for _, d in groups)
        ]
        for v in const:
            removed.append({"variable": v, "reason": "constant inside a bin"})
        if const:
            spec = spec.without_variables(const)
        k = spec.n_params
        small = [i for i, (_, d) in enumerate(groups) if len(d) <= k]
        if not small:
            break
        if not merge:
            lab, d = groups[small[0]]
            raise BinTooSmallError(f"bin {lab} has n={len(d)} <= K={k}")
        groups = _merge_bin(groups, small[0])
        if len(groups) < 2:
            raise BinTooSmallError("merging left fewer than two bins")

    keep = np.zeros(len(sample), dtype=bool)
    which = bins.assign(sample[bins.variable])
    keep[which >= 0] = True
    pooled_sample = sample.take(keep)
    pooled_fit = fit(spec, pooled_sample, cfg)
    fits = []
    for lab, d in groups:
        try:
            fits.append(fit(spec, d, cfg))
        except EstimationError as exc:
            raise EstimationError(f"bin {lab}: {exc}") from exc
    lr = lr_test(pooled_fit.ll, [f.ll for f in fits], pooled_fit.k, level)
    return PartitionTestResult(lr, pooled_fit, fits, [lab for lab, _ in groups], spec, removed, BIN_LABELS)


def _merge_bin(groups: list[tuple[str, Dataset]], i: int) -> list[tuple[str, Dataset]]:
    neighbours = [j for j in (i - 1, i + 1) if 0 <= j < len(groups)]
    j = min(neighbours, key=lambda j: (len(groups[j][1]), j))
    a, b = sorted((i, j))
    (la, da), (lb, db) = groups[a], groups[b]
    merged = Dataset(da.schema, {n: np.concatenate([da[n], db[n]]) for n in da.names}, da.provenance)
    log.info("merging bin %s into %s", groups[i][0], groups[j][0])
    return groups[:a] + [(f"{la}+{lb}", merged)] + groups[b + 1:]

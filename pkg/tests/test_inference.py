import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from choicefit.dataset import BinningSpec, VariableSpec
from choicefit.inference import (
    BIN_LABELS,
    POOLING_LABELS,
    BinTooSmallError,
    LRTestResult,
    NestingError,
    bin_structure_test,
    chi_squared_sf,
    gamma_q,
    lr_test,
    lr_test_from_sum,
    pooling_test,
)
from choicefit.synth import GeneratorSpec, generate


def chi2_sf_quad(x, df):
    """Independent oracle: 1 - integral of the chi-squared density over [0, x]."""
    k = df / 2.0
    log_norm = -k * math.log(2.0) - math.lgamma(k)

    def density(t):
        return math.exp(log_norm + (k - 1.0) * math.log(t) - t / 2.0) if t > 0 else 0.0

    if x == 0:
        return 1.0
    tail, _ = integrate.quad(density, x, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return tail


# ---------------------------------------------------------------------------
# chi-squared tail
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("df", [1, 3, 7, 14, 30, 60])
@pytest.mark.parametrize("x", [0.5, 3.0, 16.26, 40.0, 95.5])
def test_sf_against_quadrature(df, x):
    assert chi_squared_sf(x, df) == pytest.approx(chi2_sf_quad(x, df), abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 200))
def test_df2_branch_is_exponential(x):
    assert abs(chi_squared_sf(x, 2) - math.exp(-x / 2)) <= 1e-12


def test_df1_closed_form():
    for x in [0.1, 1.0, 3.84, 10.0]:
        assert chi_squared_sf(x, 1) == pytest.approx(math.erfc(math.sqrt(x / 2)), abs=1e-13)


def test_df0_and_boundaries():
    assert chi_squared_sf(0.0, 0) == 1.0
    assert chi_squared_sf(3.0, 0) == 0.0
    assert chi_squared_sf(0.0, 5) == 1.0
    assert gamma_q(2.5, 0.0) == 1.0
    with pytest.raises(ValueError):
        chi_squared_sf(1.0, -1)


def test_negative_statistic_warns_and_clamps():
    with pytest.warns(RuntimeWarning, match="clamped"):
        assert chi_squared_sf(-1e-9, 4) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.floats(0, 150), st.floats(0, 150))
def test_sf_is_monotone_in_x(df, a, b):
    lo, hi = sorted((a, b))
    assert chi_squared_sf(lo, df) >= chi_squared_sf(hi, df) - 1e-15


# ---------------------------------------------------------------------------
# LR test arithmetic
# ---------------------------------------------------------------------------


def test_pooling_row_from_published_values():
    r = lr_test_from_sum(-1426.61, -1418.48, 3, 7)
    assert r.statistic == pytest.approx(16.26, abs=0.01)
    assert r.df == 14
    assert r.p_value == pytest.approx(0.30, abs=0.01)
    assert not r.reject


@pytest.mark.parametrize(
    "ll_pooled, ll_bins, k, stat, df",
    [(-100.0, [-40.0, -55.0], 3, 10.0, 3), (-50.0, [-10.0, -20.0, -20.0], 2, 0.0, 4), (-10.0, [-4.0, -5.0], 0, 2.0, 0)],
)
def test_lr_examples(ll_pooled, ll_bins, k, stat, df):
    r = lr_test(ll_pooled, ll_bins, k)
    assert r.statistic == pytest.approx(stat)
    assert r.df == df
    assert r.p_value == pytest.approx(chi_squared_sf(stat, df))


def test_nesting_violation():
    with pytest.raises(NestingError):
        lr_test(-100.0, [-60.0, -45.0], 3)
    with pytest.raises(NestingError):
        lr_test_from_sum(-100.0, -105.0, 2, 3)
    # tiny deficits from rounding are tolerated
    assert lr_test(-100.0, [-50.0, -50.0000000001], 3).statistic == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("bins", [[], [-10.0]])
def test_needs_two_bins(bins):
    with pytest.raises(ValueError):
        lr_test(-10.0, bins, 2)
    with pytest.raises(ValueError):
        lr_test_from_sum(-10.0, -9.0, len(bins), 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, -1), min_size=2, max_size=6), st.integers(1, 10), st.randoms())
def test_lr_is_permutation_invariant(bins, k, random):
    pooled = math.fsum(bins) - 3.0
    shuffled = list(bins)
    random.shuffle(shuffled)
    a, b = lr_test(pooled, bins, k), lr_test(pooled, shuffled, k)
    assert a.df == b.df
    assert a.statistic == pytest.approx(b.statistic, abs=1e-9)
    assert a.p_value == pytest.approx(b.p_value, abs=1e-12)


def test_lr_json_roundtrip():
    r = lr_test(-100.0, [-40.0, -55.0], 3, level=0.1)
    doc = r.to_json()
    assert doc["M"] == 2 and doc["ll_sum"] == -95.0 and doc["reject"] is True
    assert LRTestResult.from_json(doc) == r


# ---------------------------------------------------------------------------
# harnesses on simulated data
# ---------------------------------------------------------------------------


def split_data(gap, n=1500, seed=3):
    """Two subsets with a coefficient ``gap`` on x1 between them."""
    parts = []
    for g, shift in enumerate((0.0, gap)):
        gen = GeneratorSpec(
            beta=[{"const": -0.3, "x1": 0.5 + shift, "x2": -0.4}],
            covariates={"x1": {"dist": "normal"}, "x2": {"dist": "normal"}},
            n=n, seed=seed * 10 + g,
        )
        parts.append(generate(gen))
    a, b = parts
    cols = {name: np.concatenate([a[name], b[name]]) for name in a.names}
    ds = a.__class__(a.schema, cols)
    return ds.with_column(VariableSpec("pair", "indicator"), np.repeat([0.0, 1.0], n)), gen.model_spec()


def test_pooling_homogeneous_keeps_together():
    ds, spec = split_data(0.0)
    res = pooling_test(spec, ds, "pair")
    assert res.lr.df == (2 - 1) * 3
    assert res.groups == ["pair=0", "pair=1"]
    assert res.lr.ll_sum == pytest.approx(sum(f.ll for f in res.fits))
    assert res.conclusion() == POOLING_LABELS[1] == "together"
    assert res.to_json()["conclusion"] == "together"


def test_pooling_heterogeneous_separates():
    ds, spec = split_data(1.0)
    res = pooling_test(spec, ds, "pair")
    assert res.lr.p_value < 1e-6
    assert res.conclusion() == "separately"


def test_pooling_requires_two_subsets():
    ds, spec = split_data(0.0)
    with pytest.raises(ValueError):
        pooling_test(spec, ds.take(ds["pair"] == 0), "pair")


def bin_data(seed=5, n=3000, effect=0.0, limit_coef=0.0):
    gen = GeneratorSpec(
        beta=[{"const": -1.0, "x1": 0.6, "limit": limit_coef}],
        covariates={"x1": {"dist": "normal"}, "limit": {"dist": "choice", "values": [25, 40, 55, 65]},
                    "flag": {"dist": "bernoulli", "p": 0.5}},
        n=n, seed=seed,
    )
    ds = generate(gen)
    y = ds["y"].copy()
    if effect:
        # outcome 1 more likely with x1 only in the fast bins
        rng = np.random.default_rng(seed)
        fast = (ds["limit"] >= 55) & (rng.random(n) < effect * (ds["x1"] > 0))
        y[fast] = 1.0
    flag = np.where(ds["limit"] == 65, 1.0, ds["flag"])  # constant inside the top bin
    ds = ds.without(["y", "flag"]).with_column(ds.spec("y"), y).with_column(VariableSpec("flag", "indicator"), flag)
    return ds, gen.model_spec(["x1", "limit", "flag"])


BINS = BinningSpec("limit", ((0, 30.5), (30.5, 50.5), (50.5, 60.5), (60.5, None)))


def test_bin_test_removes_binning_and_constant_variables():
    ds, spec = bin_data()
    res = bin_structure_test(spec, ds, BINS)
    assert [r["variable"] for r in res.removed] == ["limit", "flag"]
    assert [r["reason"] for r in res.removed] == ["binning variable", "constant inside a bin"]
    assert res.spec.variables == ["x1"]
    assert res.lr.m == 4 and res.lr.df == 3 * 2
    assert res.labels == BIN_LABELS


def test_bin_test_detects_structure_change():
    ds, spec = bin_data(effect=0.5)
    res = bin_structure_test(spec, ds, BINS)
    assert res.lr.reject and res.conclusion() == "SL effect"
    # a level shift across bins also counts: the intercept is re-estimated per bin
    ds1, _ = bin_data(limit_coef=0.03)
    assert bin_structure_test(spec, ds1, BINS).lr.reject
    ds0, _ = bin_data()
    assert bin_structure_test(spec, ds0, BINS).conclusion() == "no SL effect"


def test_bin_test_drops_empty_bins():
    ds, spec = bin_data()
    bins = BinningSpec("limit", ((0, 20), (20, 30.5), (30.5, 50.5), (50.5, None)))
    res = bin_structure_test(spec, ds, bins)
    assert res.groups == bins.labels()[1:]


def test_small_bin_refused_or_merged():
    ds, spec = bin_data()
    slow = np.flatnonzero(ds["limit"] == 25)
    keep = np.ones(len(ds), dtype=bool)
    keep[slow[2:]] = False  # two rows left, n <= K = 2
    ds = ds.take(keep)
    with pytest.raises(BinTooSmallError):
        bin_structure_test(spec, ds, BINS)
    res = bin_structure_test(spec, ds, BINS, merge=True)
    assert res.lr.m == 3
    assert res.groups[0] == "[0,30.5)+[30.5,50.5)"


def test_bin_test_needs_two_bins():
    ds, spec = bin_data()
    with pytest.raises(ValueError):
        bin_structure_test(spec, ds.take(ds["limit"] == 40), BINS)


def test_no_warnings_on_regular_use():
    ds, spec = split_data(0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pooling_test(spec, ds, "pair")

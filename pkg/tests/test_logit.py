import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from choicefit.logit import (
    Design,
    ModelSpec,
    binary_probabilities,
    gradient,
    hessian,
    log_likelihood,
    probabilities,
    softmax,
)
from choicefit.synth import fd_gradient, fd_jacobian
from helpers import make_dataset


def design_1obs(y=0, x=1.0, outcomes=2):
    """One observation with a single regressor and no intercept."""
    blocks = [np.array([0]) for _ in range(outcomes - 1)]
    return Design(np.array([[x]]), np.array([y]), blocks, ["x"])


def random_design(rng, n, k, i, intercept=True):
    x = rng.normal(size=(n, k))
    if intercept:
        x[:, 0] = 1.0
    y = rng.integers(0, i, n)
    blocks = [np.sort(rng.choice(k, rng.integers(1, k + 1), replace=False)) for _ in range(i - 1)]
    return Design(x, y, blocks, [f"c{j}" for j in range(k)])


# ---------------------------------------------------------------------------
# probabilities
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "v, expected",
    [
        ([0.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]),
        ([math.log(3.0), 0.0], [0.75, 0.25]),
        ([math.log(2.0), 0.0, 0.0], [0.5, 0.25, 0.25]),
    ],
)
def test_probability_examples(v, expected):
    np.testing.assert_allclose(softmax(np.array([v])), [expected], atol=1e-15)


def test_large_linear_predictors_are_stable():
    p = softmax(np.array([[500.0, 0.0, -500.0], [-500.0, -500.0, 0.0]]))
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)
    assert p[0, 0] == 1.0
    p1, p2 = binary_probabilities(np.array([500.0, -500.0, 0.0]))
    assert np.all(np.isfinite(p1)) and np.all(np.isfinite(p2))
    np.testing.assert_allclose(p1 + p2, 1.0, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(float, (5, 4), elements=st.floats(-500, 500)), st.floats(-300, 300))
def test_common_factor_leaves_probabilities_unchanged(v, c):
    # explicit unnormalized form: exp(v_i) / sum exp(v_j), with every term multiplied by exp(c)
    p = softmax(v)
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(v + c), p, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(float, 20, elements=st.floats(-60, 60)))
def test_binary_closed_form(eta):
    p1, p2 = binary_probabilities(eta)
    np.testing.assert_allclose(p1, 1.0 / (1.0 + np.exp(-eta)), rtol=1e-14, atol=1e-300)
    v = np.column_stack([eta, np.zeros_like(eta)])
    np.testing.assert_allclose(softmax(v)[:, 0], p1, rtol=1e-14, atol=1e-300)
    np.testing.assert_allclose(softmax(v)[:, 1], p2, rtol=1e-14, atol=1e-300)


def test_trinary_closed_form(rng):
    d = random_design(rng, 30, 3, 3)
    beta = rng.normal(size=d.n_params)
    v1, v2 = d.utilities(beta)[:, 0], d.utilities(beta)[:, 1]
    denom = np.exp(v1) + np.exp(v2) + 1.0
    expected = np.column_stack([np.exp(v1) / denom, np.exp(v2) / denom, 1.0 / denom])
    np.testing.assert_allclose(probabilities(beta, d), expected, rtol=1e-14)


# ---------------------------------------------------------------------------
# log-likelihood
# ---------------------------------------------------------------------------


def test_loglik_single_observation():
    assert log_likelihood(np.zeros(1), design_1obs()) == pytest.approx(math.log(0.5), abs=1e-15)


def test_loglik_is_additive_over_rows(rng):
    d = random_design(rng, 40, 4, 3)
    beta = rng.normal(size=d.n_params)
    a = Design(d.x[:15], d.y[:15], d.blocks, d.columns)
    b = Design(d.x[15:], d.y[15:], d.blocks, d.columns)
    assert log_likelihood(beta, d) == pytest.approx(log_likelihood(beta, a) + log_likelihood(beta, b), abs=1e-10)


def test_loglik_brute_force_product(rng):
    d = random_design(rng, 12, 3, 4)
    beta = rng.normal(size=d.n_params) * 0.5
    v = d.utilities(beta)
    lik = 1.0
    for n in range(d.n):
        lik *= math.exp(v[n, d.y[n]]) / sum(math.exp(x) for x in v[n])
    assert log_likelihood(beta, d) == pytest.approx(math.log(lik), rel=1e-12)


def test_empty_design_has_zero_loglik():
    d = Design(np.zeros((0, 1)), np.zeros(0, int), [np.array([0])], ["x"])
    assert log_likelihood(np.zeros(1), d) == 0.0


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("y, expected", [(0, 0.5), (1, -0.5)])
def test_gradient_single_observation(y, expected):
    assert gradient(np.zeros(1), design_1obs(y)) == pytest.approx([expected])


def test_hessian_single_observation():
    assert hessian(np.zeros(1), design_1obs())[0, 0] == pytest.approx(-0.25)


def test_gradient_vanishes_at_intercept_only_mle():
    y = np.array([0] * 20 + [1] * 30 + [2] * 50)
    d = Design(np.ones((100, 1)), y, [np.array([0]), np.array([0])], ["const"])
    beta = np.log([0.2 / 0.5, 0.3 / 0.5])
    assert np.max(np.abs(gradient(beta, d))) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.integers(2, 6))
def test_derivatives_match_finite_differences(seed, i, k):
    rng = np.random.default_rng(seed)
    d = random_design(rng, 60, k, i)
    beta = rng.normal(size=d.n_params) * 0.5
    g = gradient(beta, d)
    g_fd = fd_gradient(lambda b: log_likelihood(b, d), beta)
    np.testing.assert_allclose(g, g_fd, rtol=1e-6, atol=1e-6 * max(1.0, np.max(np.abs(g))))
    h = hessian(beta, d)
    h_fd = fd_jacobian(lambda b: gradient(b, d), beta)
    np.testing.assert_allclose(h, h_fd, rtol=1e-5, atol=1e-5 * max(1.0, np.max(np.abs(h))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_hessian_symmetric_and_negative_semidefinite(seed, i):
    rng = np.random.default_rng(seed)
    d = random_design(rng, 50, 5, i)
    h = hessian(rng.normal(size=d.n_params) * 2, d)
    assert np.max(np.abs(h - h.T)) <= 1e-12
    assert np.max(np.linalg.eigvalsh(h)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_loglik_is_concave(seed, lam):
    rng = np.random.default_rng(seed)
    d = random_design(rng, 40, 3, 3)
    b1, b2 = rng.normal(size=(2, d.n_params)) * 3
    mix = log_likelihood(lam * b1 + (1 - lam) * b2, d)
    assert mix >= lam * log_likelihood(b1, d) + (1 - lam) * log_likelihood(b2, d) - 1e-9


# ---------------------------------------------------------------------------
# specifications and designs
# ---------------------------------------------------------------------------


def test_model_spec_parameter_layout():
    spec = ModelSpec("y", (1.0, 2.0, 3.0), (("a", "b"), ("b",)), labels=("fatal", "injury", "PDO"))
    assert spec.param_names == [("fatal", "const"), ("fatal", "a"), ("fatal", "b"), ("injury", "const"), ("injury", "b")]
    assert spec.n_params == 5
    assert spec.variables == ["a", "b"]
    assert ModelSpec.from_json(spec.to_json()) == spec
    assert spec.without_variables(["b"]).covariates == (("a",), ())


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(outcomes=(1.0,), covariates=()),
        dict(outcomes=(1.0, 1.0), covariates=((),)),
        dict(outcomes=(1.0, 2.0), covariates=((), ())),
        dict(outcomes=(1.0, 2.0), covariates=(("a", "a"),)),
        dict(outcomes=(1.0, 2.0), covariates=(("const",),)),
    ],
)
def test_model_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ModelSpec("y", **kwargs)


def test_design_from_dataset():
    ds = make_dataset({"y": [1, 2, 2, 1], "a": [0.5, 1.5, 2.5, 3.5]})
    spec = ModelSpec.shared("y", [1, 2], ["a"])
    d = Design.from_dataset(spec, ds)
    np.testing.assert_array_equal(d.y, [0, 1, 1, 0])
    np.testing.assert_array_equal(d.x[:, 0], 1.0)
    with pytest.raises(ValueError, match="outcome"):
        Design.from_dataset(ModelSpec.shared("y", [1, 3], ["a"]), ds)
    with pytest.raises(ValueError, match="coefficients"):
        d.utilities(np.zeros(3))

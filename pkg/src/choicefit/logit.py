"""Multinomial logit probabilities, log-likelihood and its derivatives.

Outcome ``I-1`` (the last listed outcome) is the base: its linear predictor
is identically zero.  Each non-base outcome ``j`` has its own list of
explanatory variables, with an intercept in front unless suppressed.  The
free parameters are stacked block by block in outcome order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset

CONST = "const"


@dataclass(frozen=True)
class ModelSpec:
    """One logit model.

    Parameters
    ----------
    outcome : str
        Name of the outcome column.
    outcomes : tuple of float
        Outcome codes in model order; the last one is the base outcome.
    covariates : tuple of tuple of str
        Explanatory variables per non-base outcome, ``len(outcomes) - 1``
        entries.
    intercept : bool
        Whether each non-base outcome carries a constant.
    labels : tuple of str, optional
        Display names for the outcomes.
    """

    outcome: str
    outcomes: tuple[float, ...]
    covariates: tuple[tuple[str, ...], ...]
    intercept: bool = True
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.outcomes) < 2:
            raise ValueError("a logit model needs at least two outcomes")
        if len(set(self.outcomes)) != len(self.outcomes):
            raise ValueError("duplicate outcome codes")
        if len(self.covariates) != len(self.outcomes) - 1:
            raise ValueError("need one covariate list per non-base outcome")
        for cov in self.covariates:
            if len(set(cov)) != len(cov):
                raise ValueError(f"variable listed twice for one outcome: {cov}")
            if CONST in cov:
                raise ValueError(f"{CONST!r} is reserved for the intercept")
        if self.labels is not None and len(self.labels) != len(self.outcomes):
            raise ValueError("labels must match outcomes")

    @classmethod
    def shared(
        cls,
        outcome: str,
        outcomes: Sequence[float],
        variables: Iterable[str],
        intercept: bool = True,
        labels: Sequence[str] | None = None,
    ) -> "ModelSpec":
        """Same explanatory variables in every non-base outcome."""
        variables = tuple(variables)
        return cls(
            outcome,
            tuple(float(o) for o in outcomes),
            tuple(variables for _ in range(len(outcomes) - 1)),
            intercept,
            None if labels is None else tuple(labels),
        )

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    @property
    def shared_covariates(self) -> bool:
        return len(set(self.covariates)) == 1

    @property
    def outcome_labels(self) -> tuple[str, ...]:
        if self.labels is not None:
            return self.labels
        return tuple(_code(o) for o in self.outcomes)

    @property
    def variables(self) -> list[str]:
        """Union of explanatory variables in first-appearance order."""
        return list(dict.fromkeys(v for cov in self.covariates for v in cov))

    def block_names(self, j: int) -> list[str]:
        return ([CONST] if self.intercept else []) + list(self.covariates[j])

    @property
    def param_names(self) -> list[tuple[str, str]]:
        labels = self.outcome_labels
        return [(labels[j], v) for j in range(len(self.covariates)) for v in self.block_names(j)]

    @property
    def n_params(self) -> int:
        return sum(len(self.block_names(j)) for j in range(len(self.covariates)))

    def terms(self) -> list[tuple[int, str]]:
        return [(j, v) for j, cov in enumerate(self.covariates) for v in cov]

    def with_terms(self, terms: Iterable[tuple[int, str]]) -> "ModelSpec":
        """Same outcomes, covariates replaced by ``(outcome index, variable)`` terms."""
        blocks: list[list[str]] = [[] for _ in self.covariates]
        for j, v in terms:
            if v not in blocks[j]:
                blocks[j].append(v)
        return ModelSpec(self.outcome, self.outcomes, tuple(map(tuple, blocks)), self.intercept, self.labels)

    def without_variables(self, names: Iterable[str]) -> "ModelSpec":
        drop = set(names)
        return self.with_terms((j, v) for j, v in self.terms() if v not in drop)

    def intercept_only(self) -> "ModelSpec":
        return self.with_terms(())

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome,
            "outcomes": list(self.outcomes),
            "labels": list(self.outcome_labels),
            "covariates": [list(c) for c in self.covariates],
            "intercept": self.intercept,
        }

    @classmethod
    def from_json(cls, d) -> "ModelSpec":
        return cls(
            d["outcome"],
            tuple(float(o) for o in d["outcomes"]),
            tuple(tuple(c) for c in d["covariates"]),
            d.get("intercept", True),
            tuple(d["labels"]) if d.get("labels") else None,
        )


def _code(o: float) -> str:
    return str(int(o)) if float(o).is_integer() else repr(o)


class Design:
    """Covariate matrix and outcome indices for one (model, sample) pair.

    ``x`` has one column per distinct variable (plus a leading column of
    ones when the model has intercepts); ``blocks[j]`` indexes the columns
    entering outcome ``j``'s linear predictor.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray, blocks: Sequence[np.ndarray], columns: Sequence[str]):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=int)
        self.blocks = [np.asarray(b, dtype=int) for b in blocks]
        self.columns = list(columns)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ValueError("x must be (N, p) with N matching y")
        self.n_outcomes = len(self.blocks) + 1
        if np.any((self.y < 0) | (self.y >= self.n_outcomes)):
            raise ValueError("outcome index out of range")

    @classmethod
    def from_dataset(cls, spec: ModelSpec, ds: Dataset) -> "Design":
        """Build from a complete-case sample (no missing values allowed)."""
        cols = ([CONST] if spec.intercept else []) + spec.variables
        n = len(ds)
        x = np.empty((n, len(cols)))
        for k, name in enumerate(cols):
            x[:, k] = 1.0 if name == CONST else ds[name]
        if np.isnan(x).any():
            raise ValueError("design contains missing values; take complete cases first")
        pos = {c: k for k, c in enumerate(cols)}
        blocks = [np.array([pos[v] for v in spec.block_names(j)], dtype=int) for j in range(len(spec.covariates))]
        y_raw = ds[spec.outcome]
        y = np.full(n, -1, dtype=int)
        for i, o in enumerate(spec.outcomes):
            y[y_raw == o] = i
        if np.any(y < 0):
            bad = sorted(set(y_raw[y < 0].tolist()))
            raise ValueError(f"outcome values not in model outcomes: {bad}")
        return cls(x, y, blocks, cols)

    @property
    def n(self) -> int:
        return len(self.y)

    @cached_property
    def n_params(self) -> int:
        return sum(len(b) for b in self.blocks)

    @cached_property
    def onehot(self) -> np.ndarray:
        d = np.zeros((self.n, self.n_outcomes))
        d[np.arange(self.n), self.y] = 1.0
        return d

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(b) for b in self.blocks])])

    def split(self, beta: np.ndarray) -> list[np.ndarray]:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} coefficients, got shape {beta.shape}")
        o = self.offsets
        return [beta[o[j]:o[j + 1]] for j in range(len(self.blocks))]

    def utilities(self, beta: np.ndarray) -> np.ndarray:
        """(N, I) linear predictors; the base column is zero."""
        v = np.zeros((self.n, self.n_outcomes))
        for j, b in enumerate(self.split(beta)):
            v[:, j] = self.x[:, self.blocks[j]] @ b
        return v


def softmax(v: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    v = np.asarray(v, dtype=float)
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    m = v.max(axis=-1, keepdims=True)
    z = v - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def probabilities(beta: np.ndarray, design: Design) -> np.ndarray:
    """Outcome probabilities, shape (N, I)."""
    return softmax(design.utilities(beta))


def binary_probabilities(eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-outcome closed form: returns (P1, P2) for linear predictor ``eta``."""
    eta = np.asarray(eta, dtype=float)
    # 1 / (1 + exp(-eta)) evaluated without overflow on either side
    e = np.exp(-np.abs(eta))
    p_hi = 1.0 / (1.0 + e)
    p_lo = e / (1.0 + e)
    p1 = np.where(eta >= 0, p_hi, p_lo)
    p2 = np.where(eta >= 0, p_lo, p_hi)
    return p1, p2


def log_likelihood(beta: np.ndarray, design: Design) -> float:
    lp = log_softmax(design.utilities(beta))
    return float(np.sum(lp[np.arange(design.n), design.y]))


def gradient(beta: np.ndarray, design: Design) -> np.ndarray:
    resid = design.onehot - probabilities(beta, design)
    return np.concatenate(
        [design.x[:, blk].T @ resid[:, j] for j, blk in enumerate(design.blocks)]
    )


def hessian(beta: np.ndarray, design: Design) -> np.ndarray:
    p = probabilities(beta, design)
    nb = len(design.blocks)
    o = design.offsets
    h = np.zeros((design.n_params, design.n_params))
    for j in range(nb):
        xj = design.x[:, design.blocks[j]]
        for k in range(j, nb):
            xk = design.x[:, design.blocks[k]]
            w = p[:, j] * ((j == k) - p[:, k])
            blk = -(xj * w[:, None]).T @ xk
            h[o[j]:o[j + 1], o[k]:o[k + 1]] = blk
            if k != j:
                h[o[k]:o[k + 1], o[j]:o[j + 1]] = blk.T
    return 0.5 * (h + h.T)


def loglik_grad_hess(beta: np.ndarray, design: Design) -> tuple[float, np.ndarray, np.ndarray]:
    return log_likelihood(beta, design), gradient(beta, design), hessian(beta, design)

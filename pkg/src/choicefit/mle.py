"""Maximum-likelihood fitting of logit models by Newton-Raphson."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Mapping

import numpy as np
import scipy.linalg

from . import logit
from .dataset import Dataset, complete_cases
from .logit import CONST, Design, ModelSpec

log = logging.getLogger(__name__)


class EstimationError(Exception):
    pass


class UnderdeterminedError(EstimationError):
    pass


class DegenerateOutcomeError(EstimationError):
    pass


class CollinearityError(EstimationError):
    def __init__(self, message: str, columns: list[str]):
        super().__init__(message)
        self.columns = columns


class SeparationError(EstimationError):
    """Coefficients diverged; ``result`` holds the last iterate."""

    def __init__(self, message: str, result: "FitResult"):
        super().__init__(message)
        self.result = result


class ConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    max_halvings: int = 30
    divergence_bound: float = 50.0
    ridge: float = 1e-8
    step_tolerance: float = 1e-8

    def __post_init__(self):
        for name in ("max_iterations", "gradient_tolerance", "max_halvings", "divergence_bound", "ridge",
                     "step_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_json(cls, d: Mapping[str, Any] | None) -> "OptimizerConfig":
        return cls(**(d or {}))


@dataclass(eq=False)
class FitResult:
    spec: ModelSpec
    beta: np.ndarray
    ll: float
    ll_restricted: float
    covariance: np.ndarray
    n_used: int
    converged: bool
    iterations: int
    ll_trace: list[float] = field(default_factory=list)
    gradient_norm: float = 0.0
    separation: bool = False
    sample: Dataset | None = field(default=None, repr=False)

    @property
    def names(self) -> list[tuple[str, str]]:
        return self.spec.param_names

    @property
    def k(self) -> int:
        return len(self.beta)

    @property
    def aic(self) -> float:
        return aic(self.ll, self.k)

    @property
    def rho2(self) -> float:
        return mcfadden_rho2(self.ll, self.ll_restricted)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def t_ratios(self) -> np.ndarray:
        return self.beta / self.std_errors

    def index(self, outcome: int | str, var: str) -> int:
        label = outcome if isinstance(outcome, str) else self.spec.outcome_labels[outcome]
        return self.names.index((label, var))

    def coef(self, outcome: int | str, var: str) -> float:
        return float(self.beta[self.index(outcome, var)])

    def t(self, outcome: int | str, var: str) -> float:
        return float(self.t_ratios[self.index(outcome, var)])

    def fitted_probabilities(self) -> np.ndarray:
        return logit.probabilities(self.beta, Design.from_dataset(self.spec, self.sample))

    def to_json(self) -> dict:
        se = self.std_errors
        t = self.t_ratios
        return {
            "model": self.spec.to_json(),
            "coefficients": [
                {"outcome": o, "variable": v, "estimate": float(b), "std_error": float(s), "t_ratio": float(tt)}
                for (o, v), b, s, tt in zip(self.names, self.beta, se, t)
            ],
            "log_likelihood": self.ll,
            "log_likelihood_restricted": self.ll_restricted,
            "rho2": self.rho2 if self.ll_restricted < 0 else None,
            "aic": self.aic,
            "k": self.k,
            "n_used": self.n_used,
            "converged": self.converged,
            "separation": self.separation,
            "iterations": self.iterations,
        }


def aic(ll: float, k: int) -> float:
    """Akaike information criterion, ``-2 LL + 2 K``."""
    if k < 0:
        raise ValueError("K must be non-negative")
    return -2.0 * ll + 2.0 * k


def mcfadden_rho2(ll: float, ll_restricted: float) -> float:
    """``1 - LL / LL0``; reported as the R^2 column of fit tables."""
    if ll_restricted >= 0:
        raise ConsistencyError("restricted log-likelihood must be negative")
    if ll > 0 or ll < ll_restricted - 1e-9 * abs(ll_restricted):
        raise ConsistencyError(f"LL={ll} inconsistent with LL_restricted={ll_restricted}")
    return 1.0 - ll / ll_restricted


def critical_value(level: float = 0.05) -> float:
    """Two-tailed large-sample critical value (1.959964 at 5%)."""
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    return NormalDist().inv_cdf(1.0 - level / 2.0)


def significance(fit: FitResult, level: float = 0.05) -> dict[tuple[str, str], bool]:
    c = critical_value(level)
    return {name: bool(abs(t) >= c) for name, t in zip(fit.names, fit.t_ratios)}


def restricted_loglik(counts: np.ndarray) -> float:
    """Intercept-only maximum, ``sum n_i ln(n_i / N)``."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    nz = counts[counts > 0]
    return float(np.sum(nz * np.log(nz / n)))


def check_collinearity(design: Design, tol: float = 1e-10) -> None:
    """Raise :class:`CollinearityError` if any outcome block is rank deficient."""
    for j, blk in enumerate(design.blocks):
        if len(blk) == 0:
            continue
        xb = design.x[:, blk]
        scale = np.sqrt((xb ** 2).sum(axis=0))
        scale[scale == 0] = 1.0
        _, r, piv = scipy.linalg.qr(xb / scale, mode="economic", pivoting=True)
        d = np.abs(np.diag(r))
        rank = int(np.sum(d > tol * max(d[0], 1e-300))) if len(d) else 0
        if rank < len(blk):
            bad = [design.columns[blk[p]] for p in piv[rank:]]
            if len(d) < len(blk):
                bad = [design.columns[blk[p]] for p in piv[len(d):]] + bad
            raise CollinearityError(f"collinear columns in outcome block {j}: {bad}", bad)


#: relative size of floating-point noise in a summed log-likelihood
_LL_NOISE = 1e-13


def newton(design: Design, cfg: OptimizerConfig, beta0: np.ndarray | None = None):
    """Maximise the log-likelihood.  Returns (beta, ll, H, converged, iters, trace, gnorm, diverged)."""
    beta = np.zeros(design.n_params) if beta0 is None else np.array(beta0, dtype=float)
    return _ascend(
        lambda b: logit.loglik_grad_hess(b, design), lambda b: logit.log_likelihood(b, design), beta, cfg
    )


def _ascend(evaluate, loglik, beta: np.ndarray, cfg: OptimizerConfig):
    """Damped Newton ascent with step halving.

    Converged means ``max|g| <= gradient_tolerance``, or that the last
    Newton step was below ``step_tolerance * (1 + |beta|)`` in every
    component.  The second test covers covariates on large scales, where
    the gradient cannot be driven to an absolute tolerance in floating
    point; near the optimum the error left after such a step is of the
    order of its square.
    """
    ll, g, h = evaluate(beta)
    trace = [ll]
    converged = diverged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if np.max(np.abs(g), initial=0.0) <= cfg.gradient_tolerance:
            converged, it = True, it - 1
            break
        step = _newton_step(h, g, cfg.ridge)
        small = bool(np.all(np.abs(step) <= cfg.step_tolerance * (1.0 + np.abs(beta))))
        # LL changes below rounding noise of the sum cannot be resolved, so
        # such steps count as ascent; the trace is monotone up to that noise.
        noise = _LL_NOISE * (1.0 + abs(ll))
        t = 1.0
        for _ in range(cfg.max_halvings):
            cand = beta + t * step
            ll_c = loglik(cand)
            if ll_c >= ll - noise:
                break
            t *= 0.5
        else:
            converged = small
            break
        beta = cand
        ll, g, h = evaluate(beta)
        trace.append(ll)
        if np.max(np.abs(beta)) > cfg.divergence_bound:
            diverged = True
            break
        if small:
            converged = True
            break
    else:
        converged = bool(np.max(np.abs(g), initial=0.0) <= cfg.gradient_tolerance)
    gnorm = float(np.max(np.abs(g), initial=0.0))
    return beta, float(ll), h, bool(converged), it, trace, gnorm, bool(diverged)


def _newton_step(h: np.ndarray, g: np.ndarray, ridge: float) -> np.ndarray:
    neg = -h
    eps = ridge
    for _ in range(20):
        try:
            c = scipy.linalg.cho_factor(neg, lower=True, check_finite=False)
            return scipy.linalg.cho_solve(c, g, check_finite=False)
        except np.linalg.LinAlgError:
            neg = -h + eps * np.eye(len(g))
            eps *= 10.0
    return np.linalg.lstsq(-h, g, rcond=None)[0]


def fit(
    spec: ModelSpec,
    ds: Dataset,
    cfg: OptimizerConfig | None = None,
    *,
    method: str = "multinomial",
) -> FitResult:
    """Fit ``spec`` on the complete-case sample of ``ds``.

    ``method="binary"`` uses the two-outcome closed form for the
    probabilities and derivatives; it requires ``I == 2``.
    """
    cfg = cfg or OptimizerConfig()
    sample = complete_cases(ds, [spec.outcome] + spec.variables)
    design = Design.from_dataset(spec, sample)
    k = design.n_params
    if design.n <= k:
        raise UnderdeterminedError(f"n_used={design.n} <= K={k}")
    counts = np.bincount(design.y, minlength=design.n_outcomes)
    if np.any(counts == 0):
        empty = [spec.outcome_labels[i] for i in np.flatnonzero(counts == 0)]
        raise DegenerateOutcomeError(f"no observations of outcome(s) {empty}")
    check_collinearity(design)

    if method == "binary":
        if design.n_outcomes != 2:
            raise ValueError("binary method requires two outcomes")
        beta, ll, h, converged, it, trace, gnorm, diverged = _binary_newton(design, cfg)
    elif method == "multinomial":
        beta, ll, h, converged, it, trace, gnorm, diverged = newton(design, cfg)
    else:
        raise ValueError(f"unknown method {method!r}")

    if spec.intercept:
        ll0 = restricted_loglik(counts)
    else:
        ll0 = design.n * math.log(1.0 / design.n_outcomes)
    try:
        cov = np.linalg.inv(-h)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(-h)
    cov = 0.5 * (cov + cov.T)
    res = FitResult(
        spec=spec,
        beta=beta,
        ll=ll,
        ll_restricted=ll0,
        covariance=cov,
        n_used=design.n,
        converged=converged and not diverged,
        iterations=it,
        ll_trace=trace,
        gradient_norm=gnorm,
        separation=diverged,
        sample=sample,
    )
    if diverged:
        raise SeparationError(
            f"|beta|_inf exceeded {cfg.divergence_bound}; quasi-complete separation suspected", res
        )
    if not res.converged:
        log.warning("fit did not converge: |g|_inf=%.3g after %d iterations", gnorm, it)
    return res


def _binary_newton(design: Design, cfg: OptimizerConfig):
    """Newton iterations on the closed-form binary likelihood."""
    x = design.x[:, design.blocks[0]]
    y1 = (design.y == 0).astype(float)

    def evaluate(b):
        eta = x @ b
        p1, _ = logit.binary_probabilities(eta)
        # log P1 = -log(1+exp(-eta)), log P2 = -log(1+exp(eta))
        ll = float(np.sum(-y1 * np.logaddexp(0.0, -eta) - (1 - y1) * np.logaddexp(0.0, eta)))
        g = x.T @ (y1 - p1)
        h = -(x * (p1 * (1 - p1))[:, None]).T @ x
        return ll, g, 0.5 * (h + h.T)

    return _ascend(evaluate, lambda b: evaluate(b)[0], np.zeros(x.shape[1]), cfg)


def restricted_fit(spec: ModelSpec, ds: Dataset, cfg: OptimizerConfig | None = None) -> FitResult:
    """Intercept-only fit on the same complete-case sample as ``spec``.

    The sample is the one ``spec`` itself would use, so ``ll`` of the result
    is the restricted log-likelihood reported alongside the full fit.
    """
    sample = complete_cases(ds, [spec.outcome] + spec.variables)
    return fit(spec.intercept_only(), sample, cfg)

"""Direct, cross and observation-averaged elasticities of outcome probabilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import logit
from .dataset import Dataset
from .logit import Design
from .mle import FitResult


class PseudoElasticityError(ValueError):
    pass


def direct_elasticity(p_i, beta_ik, x_k):
    """Elasticity of P_i with respect to a variable in outcome i's own utility."""
    return (1.0 - np.asarray(p_i)) * beta_ik * np.asarray(x_k)


def cross_elasticity(p_j, beta_jk, x_k):
    """Elasticity of P_i (i != j) with respect to a variable in outcome j's utility."""
    return -np.asarray(p_j) * beta_jk * np.asarray(x_k)


def classify(e: float) -> str:
    return "inelastic" if abs(e) < 1.0 else "elastic"


@dataclass
class ElasticityReport:
    """Averaged elasticities of one variable.

    ``direct[i]`` is the averaged elasticity of P_i with respect to the
    variable in outcome i's utility.  ``cross[(i, j)]`` is the averaged
    elasticity of P_j with respect to the variable in outcome i's utility;
    it is the same number for every j != i.
    """

    variable: str
    outcomes: tuple[str, ...]
    direct: dict[str, float]
    cross: dict[tuple[str, str], float]
    n_averaged: int
    per_observation: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "variable": self.variable,
            "n_averaged": self.n_averaged,
            "direct": dict(self.direct),
            "cross": [{"source": s, "target": t, "value": v} for (s, t), v in self.cross.items()],
            "classification": {k: classify(v) for k, v in self.direct.items()},
        }


def averaged_elasticities(
    fit: FitResult, var: str, ds: Dataset | None = None, keep_observations: bool = False
) -> ElasticityReport:
    """Average per-observation elasticities over the fit's estimation sample.

    ``ds`` defaults to ``fit.sample``; when given it must be that sample.
    """
    sample = fit.sample if ds is None else ds
    if sample is None:
        raise ValueError("fit carries no estimation sample; pass ds")
    if len(sample) != fit.n_used:
        raise ValueError(f"dataset has {len(sample)} rows, fit used {fit.n_used}")
    kind = sample.spec(var).kind
    if kind != "quantitative":
        raise PseudoElasticityError(
            f"{var!r} is {kind}; discrete variables need pseudo-elasticities, which are not computed"
        )
    spec = fit.spec
    present = [j for j, cov in enumerate(spec.covariates) if var in cov]
    if not present:
        raise ValueError(f"{var!r} is not in the model")
    if not fit.converged:
        raise ValueError("elasticities need a converged fit")

    design = Design.from_dataset(spec, sample)
    p = logit.probabilities(fit.beta, design)
    x = sample[var]
    labels = spec.outcome_labels
    direct: dict[str, float] = {}
    cross: dict[tuple[str, str], float] = {}
    per_obs: dict[str, np.ndarray] = {}
    for j in present:
        b = fit.coef(j, var)
        e_dir = direct_elasticity(p[:, j], b, x)
        e_cross = cross_elasticity(p[:, j], b, x)
        direct[labels[j]] = float(np.mean(e_dir))
        cross_mean = float(np.mean(e_cross))
        for i in range(spec.n_outcomes):
            if i != j:
                cross[(labels[j], labels[i])] = cross_mean
        if keep_observations:
            per_obs[f"direct:{labels[j]}"] = e_dir
            per_obs[f"cross:{labels[j]}"] = e_cross
    return ElasticityReport(var, labels, direct, cross, len(sample), per_obs if keep_observations else None)

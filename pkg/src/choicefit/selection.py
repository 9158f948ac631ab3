"""AIC-guided stepwise variable selection with complete-case sample management.

A *term* is an ``(outcome index, variable)`` pair, so in models with more
than two outcomes a variable may enter some utilities and not others.

Removal (step 1) needs both an AIC decrease on the current, fixed sample and
an insignificant coefficient.  Addition (step 2) needs either an AIC decrease
or a significant coefficient, compared on the complete cases of the enlarged
variable set.  Step 3 drops whatever is still insignificant, one term at a
time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dataset import Dataset, complete_cases
from .logit import ModelSpec
from .mle import (
    CollinearityError,
    EstimationError,
    FitResult,
    OptimizerConfig,
    SeparationError,
    UnderdeterminedError,
    critical_value,
    fit,
)

log = logging.getLogger(__name__)

Term = tuple[int, str]


@dataclass(frozen=True)
class SelectionConfig:
    level: float = 0.05
    refresh_every: int = 4
    max_rounds: int = 50
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass
class Event:
    kind: str  # start, add, remove, refresh, skip, restore, drop, finalize
    term: Term | None = None
    aic_before: float | None = None
    aic_after: float | None = None
    n_before: int | None = None
    n_after: int | None = None
    t_ratio: float | None = None
    reason: str | None = None
    terms: list[Term] | None = None

    def to_json(self) -> dict:
        d = {"event": self.kind}
        if self.term is not None:
            d["outcome"], d["variable"] = self.term
        for name in ("aic_before", "aic_after", "n_before", "n_after", "t_ratio", "reason"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        if self.terms is not None:
            d["terms"] = [list(t) for t in self.terms]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Event":
        term = (d["outcome"], d["variable"]) if "variable" in d else None
        terms = [tuple(t) for t in d["terms"]] if "terms" in d else None
        return cls(
            d["event"], term, d.get("aic_before"), d.get("aic_after"), d.get("n_before"),
            d.get("n_after"), d.get("t_ratio"), d.get("reason"), terms,
        )


@dataclass
class SelectionTrace:
    events: list[Event] = field(default_factory=list)

    def log(self, kind: str, **kw) -> Event:
        ev = Event(kind, **kw)
        self.events.append(ev)
        return ev

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str) -> "SelectionTrace":
        return cls([Event.from_json(json.loads(line)) for line in text.splitlines() if line.strip()])

    def replay(self) -> list[Term]:
        """Final term list implied by the events."""
        terms: list[Term] = []
        for e in self.events:
            if e.kind in ("start", "restore"):
                terms = list(e.terms or [])
            elif e.kind == "add":
                terms.append(e.term)
            elif e.kind in ("remove", "drop"):
                terms.remove(e.term)
        return terms

    def of_kind(self, *kinds: str) -> list[Event]:
        return [e for e in self.events if e.kind in kinds]


@dataclass
class SelectionState:
    base: Dataset
    template: ModelSpec
    included: list[Term]
    pool: list[Term]
    forced: list[Term]
    sample: Dataset
    fit: FitResult
    rank: dict[Term, int]
    cfg: SelectionConfig = field(default_factory=SelectionConfig)
    trace: SelectionTrace = field(default_factory=SelectionTrace)
    removals_since_refresh: int = 0

    def spec_for(self, terms: Iterable[Term]) -> ModelSpec:
        return self.template.with_terms(sorted(terms, key=self.rank.__getitem__))

    def sample_for(self, terms: Iterable[Term]) -> Dataset:
        spec = self.spec_for(list(terms) + self.forced)
        return complete_cases(self.base, [spec.outcome] + spec.variables)

    def fit_terms(self, terms: Iterable[Term], sample: Dataset) -> FitResult:
        return fit(self.spec_for(list(terms) + self.forced), sample, self.cfg.optimizer)

    def t_of(self, result: FitResult, term: Term) -> float:
        return result.t(term[0], term[1])

    @property
    def key(self) -> tuple[frozenset, int]:
        return frozenset(self.included), self.fit.n_used


def _fresh_state(
    base: Dataset,
    template: ModelSpec,
    candidates: Sequence[str],
    included_vars: Sequence[str],
    forced: Sequence[str],
    cfg: SelectionConfig,
) -> SelectionState:
    n_blocks = template.n_outcomes - 1
    rank: dict[Term, int] = {}
    for v in list(candidates) + [f for f in forced if f not in candidates]:
        for j in range(n_blocks):
            rank[(j, v)] = len(rank)
    forced_terms = [(j, v) for v in forced for j in range(n_blocks)]
    all_terms = [t for t in rank if t not in forced_terms]
    inc = set(included_vars)
    included = [t for t in all_terms if t[1] in inc]
    pool = [t for t in all_terms if t[1] not in inc]
    st = SelectionState(base, template, included, pool, forced_terms, None, None, rank, cfg)
    st.sample = st.sample_for(included)
    st.fit = st.fit_terms(included, st.sample)
    st.trace.log("start", terms=list(included), aic_after=st.fit.aic, n_after=st.fit.n_used)
    return st


def _refresh(state: SelectionState) -> None:
    new_sample = state.sample_for(state.included)
    before_aic, before_n = state.fit.aic, state.fit.n_used
    try:
        new_fit = state.fit_terms(state.included, new_sample)
    except EstimationError as exc:
        log.warning("refresh failed, keeping previous sample: %s", exc)
        state.trace.log("skip", reason=f"refresh failed: {exc}")
        state.removals_since_refresh = 0
        return
    state.sample, state.fit = new_sample, new_fit
    state.removals_since_refresh = 0
    state.trace.log("refresh", aic_before=before_aic, aic_after=new_fit.aic, n_before=before_n, n_after=new_fit.n_used)


def _try_remove_one(state: SelectionState) -> bool:
    crit = critical_value(state.cfg.level)
    scored = [(abs(state.t_of(state.fit, t)), -state.rank[t], t) for t in state.included]
    scored.sort()
    for abs_t, _, term in scored:
        if abs_t >= crit:
            break
        rest = [t for t in state.included if t != term]
        try:
            reduced = state.fit_terms(rest, state.sample)
        except EstimationError as exc:
            state.trace.log("skip", term=term, reason=f"removal refit failed: {exc}")
            continue
        if reduced.aic < state.fit.aic:
            state.trace.log(
                "remove", term=term, aic_before=state.fit.aic, aic_after=reduced.aic,
                n_before=state.fit.n_used, n_after=reduced.n_used, t_ratio=state.t_of(state.fit, term),
            )
            state.included = rest
            state.pool.append(term)
            state.pool.sort(key=state.rank.__getitem__)
            state.fit = reduced
            state.removals_since_refresh += 1
            return True
    return False


def step_remove(state: SelectionState) -> bool:
    """Run step 1 to its fixed point.  Mutates ``state``; returns whether anything was removed."""
    changed = False
    while True:
        if _try_remove_one(state):
            changed = True
            if state.removals_since_refresh >= state.cfg.refresh_every:
                _refresh(state)
            continue
        if state.removals_since_refresh > 0:
            _refresh(state)
            continue
        return changed


@dataclass
class _Candidate:
    term: Term
    delta_aic: float
    t: float
    n: int
    sample: Dataset
    fit: FitResult


def _evaluate_additions(state: SelectionState, skipped: set[Term]) -> list[_Candidate]:
    out = []
    for term in state.pool:
        terms = state.included + [term]
        sample = state.sample_for(terms)
        try:
            if len(sample) == len(state.sample):
                without = state.fit
            else:
                without = state.fit_terms(state.included, sample)
            with_ = state.fit_terms(terms, sample)
        except EstimationError as exc:
            if term not in skipped:
                skipped.add(term)
                state.trace.log("skip", term=term, reason=f"addition fit failed: {exc}")
            continue
        out.append(_Candidate(term, with_.aic - without.aic, state.t_of(with_, term), len(sample), sample, with_))
    return out


def step_add(state: SelectionState) -> bool:
    """Run step 2 to its fixed point.  Mutates ``state``; returns whether anything was added."""
    crit = critical_value(state.cfg.level)
    changed = False
    skipped: set[Term] = set()
    while state.pool:
        cands = _evaluate_additions(state, skipped)
        lower = [c for c in cands if c.delta_aic < 0]
        if lower:
            best = min(lower, key=lambda c: (c.delta_aic, -c.n, state.rank[c.term]))
            reason = "aic"
        else:
            sig = [c for c in cands if abs(c.t) >= crit]
            if not sig:
                break
            best = min(sig, key=lambda c: (-abs(c.t), state.rank[c.term]))
            reason = "significant"
        state.trace.log(
            "add", term=best.term, aic_before=best.fit.aic - best.delta_aic, aic_after=best.fit.aic,
            n_before=state.fit.n_used, n_after=best.n, t_ratio=best.t, reason=reason,
        )
        state.included.append(best.term)
        state.pool.remove(best.term)
        state.sample, state.fit = best.sample, best.fit
        state.removals_since_refresh = 0
        changed = True
    return changed


@dataclass
class SelectionResult:
    procedure: str
    aic_optimal: FitResult
    final: FitResult
    trace: SelectionTrace
    aic_optimal_terms: list[Term]
    final_terms: list[Term]
    converged: bool = True

    def to_json(self) -> dict:
        return {
            "procedure": self.procedure,
            "selection_converged": self.converged,
            "aic_optimal": self.aic_optimal.to_json(),
            "final": self.final.to_json(),
        }


def run_procedure(
    kind: str,
    base: Dataset,
    template: ModelSpec,
    candidates: Sequence[str],
    forced: Sequence[str] = (),
    cfg: SelectionConfig | None = None,
) -> SelectionResult:
    """Procedure A (start from every candidate) or B (start from intercepts).

    ``template`` supplies the outcome definition; its covariates are ignored.
    Variables in ``forced`` stay in every outcome's utility throughout.
    """
    cfg = cfg or SelectionConfig()
    if kind not in ("A", "B"):
        raise ValueError(f"unknown procedure {kind!r}")
    start = list(candidates) if kind == "A" else []
    state = _fresh_state(base, template, candidates, start, forced, cfg)
    steps = (step_remove, step_add) if kind == "A" else (step_add, step_remove)

    snapshots: dict[tuple[frozenset, int], tuple] = {}

    def snap():
        return (list(state.included), list(state.pool), state.sample, state.fit)

    snapshots[state.key] = snap()
    converged = True
    for rounds in range(cfg.max_rounds):
        changed = False
        for step in steps:
            changed |= step(state)
        if not changed:
            break
        if state.key in snapshots:
            converged = False
            break
        snapshots[state.key] = snap()
    else:
        converged = False

    if not converged:
        best = min(snapshots.values(), key=lambda s: s[3].aic)
        state.included, state.pool, state.sample, state.fit = list(best[0]), list(best[1]), best[2], best[3]
        state.trace.log("restore", terms=list(state.included), aic_after=state.fit.aic,
                        n_after=state.fit.n_used, reason="cycle or round limit")
        log.warning("stepwise selection did not settle; using best AIC state visited")

    aic_optimal = state.fit
    aic_terms = list(state.included)

    # step 3
    crit = critical_value(cfg.level)
    while True:
        weak = [(abs(state.t_of(state.fit, t)), -state.rank[t], t) for t in state.included]
        weak = [w for w in weak if w[0] < crit]
        if not weak:
            break
        _, _, term = min(weak)
        rest = [t for t in state.included if t != term]
        sample = state.sample_for(rest)
        new_fit = state.fit_terms(rest, sample)
        state.trace.log(
            "drop", term=term, aic_before=state.fit.aic, aic_after=new_fit.aic,
            n_before=state.fit.n_used, n_after=new_fit.n_used, t_ratio=state.t_of(state.fit, term),
        )
        state.included, state.sample, state.fit = rest, sample, new_fit
    state.trace.log("finalize", terms=list(state.included), aic_after=state.fit.aic, n_after=state.fit.n_used)
    return SelectionResult(kind, aic_optimal, state.fit, state.trace, aic_terms, list(state.included), converged)


def select_model(
    base: Dataset,
    template: ModelSpec,
    candidates: Sequence[str],
    procedure: str = "auto",
    forced: Sequence[str] = (),
    cfg: SelectionConfig | None = None,
) -> SelectionResult:
    """``procedure="auto"`` tries A and falls back to B when the full model cannot be estimated."""
    if procedure != "auto":
        return run_procedure(procedure, base, template, candidates, forced, cfg)
    try:
        return run_procedure("A", base, template, candidates, forced, cfg)
    except (UnderdeterminedError, CollinearityError, SeparationError) as exc:
        log.info("procedure A not usable (%s); falling back to B", exc)
        return run_procedure("B", base, template, candidates, forced, cfg)


@dataclass
class Probe:
    variable: str
    coefficients: dict[str, float]
    t_ratios: dict[str, float]
    n_used: int

    def to_json(self) -> dict:
        return {"variable": self.variable, "coefficients": self.coefficients,
                "t_ratios": self.t_ratios, "n_used": self.n_used}


def probe_variable(
    result: SelectionResult | FitResult,
    var: str,
    base: Dataset,
    cfg: OptimizerConfig | None = None,
) -> Probe:
    """Test-add ``var`` to the AIC-optimal model and report its coefficient(s).

    The variable enters every outcome utility that lacks it; the model itself
    is left untouched.
    """
    aic_fit = result.aic_optimal if isinstance(result, SelectionResult) else result
    spec = aic_fit.spec
    missing = [j for j, cov in enumerate(spec.covariates) if var not in cov]
    if not missing:
        raise ValueError(f"{var!r} is already in the AIC-optimal model")
    terms = spec.terms() + [(j, var) for j in missing]
    probe_spec = spec.with_terms(terms)
    probed = fit(probe_spec, base, cfg)
    labels = spec.outcome_labels
    return Probe(
        var,
        {labels[j]: probed.coef(j, var) for j in missing},
        {labels[j]: probed.t(j, var) for j in missing},
        probed.n_used,
    )

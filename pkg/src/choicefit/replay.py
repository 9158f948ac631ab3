"""Replay published likelihood-ratio tables from their log-likelihood columns.

A fixtures document lists, per table, rows of ``(LL pooled, sum LL, M, K)``
exactly as printed, together with the printed df, p-value and conclusion.
Replaying recomputes the statistic, df and p-value and compares them with the
printed ones.  Each row gets one status:

``match``
    printed p within one unit of its last printed digit of the recomputed p,
    printed df and conclusion agree.
``rounding``
    the p-value only matches once the printed log-likelihoods are allowed to
    move by half a unit of their own last digit.
``inconsistent``
    the printed p cannot be obtained from the printed inputs.
``nesting``
    the summed bin log-likelihood is below the pooled one, which a true
    partition cannot produce.
``conclusion``
    the numbers agree but the printed conclusion contradicts ``p < level``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .inference import NestingError, chi_squared_sf, lr_test_from_sum
from .report import fmt_p

STATUSES = ("match", "rounding", "inconsistent", "nesting", "conclusion")


def default_fixtures_path() -> Path:
    return Path(str(resources.files("choicefit") / "data" / "lr_fixtures.json"))


def load_fixtures(path: str | Path | None = None) -> dict:
    with open(path or default_fixtures_path(), encoding="utf-8") as fh:
        return json.load(fh)


def last_digit_unit(text: str) -> float:
    """Value of one unit in the last printed digit: ``"0.30"`` -> 0.01, ``"3.8e-4"`` -> 1e-5."""
    text = text.strip().lstrip("-")
    exp = 0
    if "e" in text.lower():
        text, e = text.lower().split("e")
        exp = int(e)
    decimals = len(text.split(".")[1]) if "." in text else 0
    return 10.0 ** (exp - decimals)


@dataclass
class ReplayRow:
    table: str
    row: str
    model: str
    m: int
    k: int
    ll_pooled: float
    ll_sum: float
    statistic: float
    df: int
    p_value: float
    printed_df: int
    printed_p: str
    printed_conclusion: str
    conclusion: str
    status: str
    notes: list[str] = field(default_factory=list)

    @property
    def exception(self) -> bool:
        return self.status != "match"

    def to_json(self) -> dict:
        return {
            "table": self.table, "row": self.row, "model": self.model, "M": self.m, "K": self.k,
            "ll_pooled": self.ll_pooled, "ll_sum": self.ll_sum, "statistic": self.statistic,
            "df": self.df, "p_value": self.p_value, "printed_df": self.printed_df,
            "printed_p": self.printed_p, "printed_conclusion": self.printed_conclusion,
            "conclusion": self.conclusion, "status": self.status, "notes": list(self.notes),
        }


def _p_interval(ll_pooled: str, ll_sum: str, df: int) -> tuple[float, float]:
    """Range of p over inputs perturbed by half a unit of their last digit."""
    stat = -2.0 * (float(ll_pooled) - float(ll_sum))
    slack = last_digit_unit(ll_pooled) + last_digit_unit(ll_sum)  # = 2 * (half + half)
    lo, hi = max(stat - slack, 0.0), max(stat + slack, 0.0)
    return chi_squared_sf(hi, df), chi_squared_sf(lo, df)


def replay_row(table: Mapping[str, Any], row: Mapping[str, Any], level: float) -> ReplayRow:
    reject_label, accept_label = table["reject_label"], table["accept_label"]
    llp, lls = float(row["ll_pooled"]), float(row["ll_sum"])
    m, k = int(row["M"]), int(row["K"])
    printed_p = str(row["p_value"])
    notes: list[str] = []
    try:
        res = lr_test_from_sum(llp, lls, m, k, level)
        stat, df, p = res.statistic, res.df, res.p_value
        nested = True
    except NestingError:
        stat, df = -2.0 * (llp - lls), (m - 1) * k
        p = float("nan")
        nested = False
        notes.append(f"sum of bin LLs {row['ll_sum']} below pooled {row['ll_pooled']}")

    unit = last_digit_unit(printed_p)
    tol = unit * (1 + 1e-9)
    if not nested:
        status = "nesting"
    elif abs(p - float(printed_p)) <= tol:
        status = "match"
    else:
        lo, hi = _p_interval(row["ll_pooled"], row["ll_sum"], df)
        if lo - tol <= float(printed_p) <= hi + tol:
            status = "rounding"
            notes.append(f"p={fmt_p(p)} vs printed {printed_p}; reachable within input rounding")
        else:
            status = "inconsistent"
            notes.append(f"p={fmt_p(p)} vs printed {printed_p}")

    if df != int(row["df"]):
        notes.append(f"df {df} vs printed {row['df']}")
        if status == "match":
            status = "inconsistent"
    conclusion = (reject_label if p < level else accept_label) if nested else ""
    printed_conclusion = row.get("conclusion", "")
    if nested and conclusion != printed_conclusion:
        notes.append(f"conclusion {conclusion!r} vs printed {printed_conclusion!r}")
        if status == "match":
            status = "conclusion"
    return ReplayRow(
        table["id"], str(row["row"]), row.get("model", ""), m, k, llp, lls, stat, df, p,
        int(row["df"]), printed_p, printed_conclusion, conclusion, status, notes,
    )


@dataclass
class ReplayReport:
    rows: list[ReplayRow]
    level: float

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in STATUSES}
        for r in self.rows:
            out[r.status] += 1
        return out

    @property
    def exceptions(self) -> list[ReplayRow]:
        return [r for r in self.rows if r.exception]

    def table(self, table_id: str) -> list[ReplayRow]:
        return [r for r in self.rows if r.table == table_id]

    def find(self, table_id: str, row: str) -> ReplayRow:
        for r in self.rows:
            if r.table == table_id and r.row == row:
                return r
        raise KeyError((table_id, row))

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "counts": self.counts(),
            "n_rows": len(self.rows),
            "n_exceptions": len(self.exceptions),
            "rows": [r.to_json() for r in self.rows],
        }

    def exceptions_text(self) -> str:
        lines = [f"{len(self.rows)} rows replayed, {len(self.exceptions)} exceptions"]
        for s, n in self.counts().items():
            lines.append(f"  {s:<13}{n}")
        for r in self.exceptions:
            lines.append(f"{r.table} row {r.row}: {r.status}; " + "; ".join(r.notes))
        return "\n".join(lines)


def replay(fixtures: Mapping[str, Any] | str | Path | None = None) -> ReplayReport:
    doc = fixtures if isinstance(fixtures, Mapping) else load_fixtures(fixtures)
    level = float(doc.get("level", 0.05))
    rows = [replay_row(t, r, level) for t in doc["tables"] for r in t["rows"]]
    return ReplayReport(rows, level)


def replay_stat_text(rep: ReplayReport, table_id: str) -> str:
    """Recomputed ``statistic / df / p`` columns of one table."""
    lines = [f"{'row':>4}  {'stat':>8}  {'df':>4}  {'p':>8}  {'printed':>8}  status"]
    for r in rep.table(table_id):
        p = "" if math.isnan(r.p_value) else fmt_p(r.p_value)
        lines.append(f"{r.row:>4}  {r.statistic:8.2f}  {r.df:>4}  {p:>8}  {r.printed_p:>8}  {r.status}")
    return "\n".join(lines)

"""Text and JSON renderings of model, elasticity and LR-test tables.

Every table is first built as a JSON-compatible document; the text form is
rendered from that document only, so the two can never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .inference import LRTestResult


def fmt_num(x: float | None, digits: int = 3) -> str:
    """Up to ``digits`` significant digits, leading zero dropped: ``.00859``, ``-.061``, ``2.83``."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if x == 0:
        return "0"
    s = f"{x:.{digits}g}"
    if "e" in s:
        mant, exp = s.split("e")
        return f"{mant}e{int(exp)}"
    if s.startswith("0."):
        return s[1:]
    if s.startswith("-0."):
        return "-" + s[2:]
    return s


def fmt_p(p: float) -> str:
    """p-values: two significant digits, compact scientific below 0.01 (``3.8e-4``)."""
    if p == 0:
        return "0"
    if p < 0.01:
        mant, exp = f"{p:.1e}".split("e")
        return f"{mant}e{int(exp)}"
    decimals = max(1, 1 - math.floor(math.log10(p)))
    return f"{p:.{decimals}f}"


def fmt_ll(x: float) -> str:
    return f"{x:.5g}" if abs(x) < 1e5 else f"{x:.0f}"


def coefficient_cell(coef: float, t: float, probe: bool = False) -> str:
    s = f"{fmt_num(coef)} ({fmt_num(t)})"
    return f"[{s}]" if probe else s


def _table(header: Sequence[str], rows: Sequence[Sequence[str]], align_left: int = 2) -> str:
    widths = [len(h) for h in header]
    for r in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, r)]
    lines = []
    for r in [header] + list(rows):
        cells = [c.ljust(w) if i < align_left else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Focal-variable tables
# ---------------------------------------------------------------------------


@dataclass
class FocalCell:
    """Focal coefficient for one outcome; ``probe`` marks a test-added value."""

    coef: float
    t: float
    probe: bool = False
    direct: float | None = None
    cross: float | None = None

    def __post_init__(self):
        if self.probe and (self.direct is not None or self.cross is not None):
            raise ValueError("probe (bracketed) cells never carry elasticities")


@dataclass
class ModelTableRow:
    label: str
    cells: Sequence[FocalCell | None]
    ll: float | None = None
    ll_restricted: float | None = None
    rho2: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "ll": self.ll,
            "ll_restricted": self.ll_restricted,
            "rho2": self.rho2,
            "cells": [None if c is None else vars(c).copy() for c in self.cells],
            "flags": list(self.flags),
        }


def causation_table_json(rows: Sequence[ModelTableRow], outcomes: Sequence[str], variable: str = "") -> dict:
    return {"kind": "focal_table", "variable": variable, "outcomes": list(outcomes), "rows": [r.to_json() for r in rows]}


def render_focal_json(doc: Mapping[str, Any]) -> str:
    outcomes = doc["outcomes"]
    header = ["#", "model"] + [f"coef {o} (t)" for o in outcomes]
    for o in outcomes:
        header += [f"E{o} direct", f"E{o} cross"]
    header.append("flags")
    body = []
    for i, r in enumerate(doc["rows"], 1):
        coef_cells, el_cells = [], []
        for c in r["cells"]:
            if c is None:
                coef_cells.append("")
                el_cells += ["", ""]
            else:
                coef_cells.append(coefficient_cell(c["coef"], c["t"], c["probe"]))
                el_cells += [fmt_num(c.get("direct")), fmt_num(c.get("cross"))]
        body.append([str(i), r["label"]] + coef_cells + el_cells + [",".join(r.get("flags", []))])
    return _table(header, body)


def render_causation_table(
    rows: Sequence[ModelTableRow], outcomes: Sequence[str] = ("1",), variable: str = ""
) -> tuple[str, dict]:
    """Focal-variable table: coefficient cells then averaged elasticities per outcome."""
    doc = causation_table_json(rows, outcomes, variable)
    return render_focal_json(doc), doc


def render_fit_row(label: str, ll: float, ll_restricted: float, rho2: float) -> str:
    return f"{label}  {fmt_ll(ll)}  {fmt_ll(ll_restricted)}  {fmt_num(rho2)}"


# ---------------------------------------------------------------------------
# LR tables
# ---------------------------------------------------------------------------


def lr_table_json(
    results: Sequence[tuple[str, LRTestResult]],
    reject_label: str = "SL effect",
    accept_label: str = "",
) -> dict:
    rows = []
    for label, r in results:
        d = r.to_json()
        d["label"] = label
        d["conclusion"] = reject_label if r.reject else accept_label
        rows.append(d)
    return {"kind": "lr_table", "reject_label": reject_label, "accept_label": accept_label, "rows": rows}


def render_lr_json(doc: Mapping[str, Any]) -> str:
    header = ["#", "model", "M", "K", "LL(pooled)", "sum LL(bins)", "stat", "df", "p-value", "conclusion"]
    body = []
    for i, r in enumerate(doc["rows"], 1):
        body.append([
            str(r.get("row", i)), r["label"], str(r["M"]), str(r["K"]), fmt_ll(r["ll_pooled"]),
            fmt_ll(r["ll_sum"]), f"{r['statistic']:.2f}", str(r["df"]), fmt_p(r["p_value"]), r["conclusion"],
        ])
    return _table(header, body)


def render_lr_table(
    results: Sequence[tuple[str, LRTestResult]],
    reject_label: str = "SL effect",
    accept_label: str = "",
) -> tuple[str, dict]:
    doc = lr_table_json(results, reject_label, accept_label)
    return render_lr_json(doc), doc

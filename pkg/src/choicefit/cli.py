"""``choicefit`` command line.

Exit status: 0 on success, 2 for configuration or data validation errors,
3 when a single-model estimation fails.  Grid runs return 0 and flag failed
partitions in their rows.  Set ``CHOICEFIT_LOG`` (DEBUG, INFO, ...) for
progress messages on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .dataset import BinningSpec, DatasetError
from .elasticity import averaged_elasticities, classify
from .inference import NestingError, lr_test, lr_test_from_sum
from .mle import EstimationError, fit
from .pipeline import (
    ConfigError,
    RunConfig,
    check_variables,
    describe_blocks,
    describe_text,
    dump_json,
    load_run_data,
    partition_tests,
    run_grid,
    template_spec,
)
from .replay import replay
from .report import fmt_num, render_lr_table
from .selection import probe_variable, select_model
from .synth import RNG_ALGORITHM, GeneratorSpec, generate

log = logging.getLogger("choicefit")

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION = 0, 2, 3


def _configure_logging() -> None:
    level = os.environ.get("CHOICEFIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _run_config(args: argparse.Namespace, need_data: bool = True) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = cfg.override(
        data=args.data, schema=args.schema, out=args.out, procedure=args.procedure, level=args.level,
        seed=args.seed, jobs=args.jobs, fixtures=args.fixtures, mode=args.mode,
    )
    cfg.validate(need_data=need_data)
    return cfg


def _emit(text: str, doc: dict, out: str | None, name: str) -> None:
    print(text)
    if out:
        dump_json(doc, Path(out) / f"{name}.json")


def _coefficient_text(fit_doc: dict) -> str:
    lines = [f"{'outcome':<14}{'variable':<14}{'estimate':>12}{'t':>9}"]
    for c in fit_doc["coefficients"]:
        lines.append(f"{c['outcome']:<14}{c['variable']:<14}{c['estimate']:>12.5g}{c['t_ratio']:>9.3g}")
    rho2 = fit_doc["rho2"]
    lines.append(
        f"LL={fit_doc['log_likelihood']:.5g}  LL0={fit_doc['log_likelihood_restricted']:.5g}  "
        f"rho2={'' if rho2 is None else fmt_num(rho2)}  AIC={fit_doc['aic']:.5g}  N={fit_doc['n_used']}"
    )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_describe(args) -> int:
    cfg = _run_config(args)
    schema, ds = load_run_data(cfg)
    variables = cfg.describe or [template_spec(schema, cfg.mode).outcome]
    check_variables(cfg, ds)
    for v in variables:
        if v not in ds:
            raise ConfigError(f"unknown variable {v!r}")
    bins = BinningSpec.from_json(cfg.binning or schema.extra["describe_bins"]) if (
        cfg.binning or "describe_bins" in schema.extra) else None
    blocks = describe_blocks(ds, variables, bins)
    _emit(describe_text(blocks), {"blocks": blocks}, args.out, "describe")
    return EXIT_OK


def _single_setup(args):
    cfg = _run_config(args)
    schema, ds = load_run_data(cfg)
    check_variables(cfg, ds)
    return cfg, schema, ds


def cmd_fit(args) -> int:
    cfg, schema, ds = _single_setup(args)
    spec = template_spec(schema, cfg.mode)
    spec = type(spec).shared(spec.outcome, spec.outcomes, list(cfg.forced) + list(cfg.candidates), labels=spec.labels)
    res = fit(spec, ds, cfg.optimizer_config)
    doc = res.to_json()
    _emit(_coefficient_text(doc), doc, args.out, "fit")
    return EXIT_OK


def _select(cfg, schema, ds):
    return select_model(ds, template_spec(schema, cfg.mode), cfg.candidates, cfg.procedure, cfg.forced,
                        cfg.selection_config)


def cmd_select(args) -> int:
    cfg, schema, ds = _single_setup(args)
    result = _select(cfg, schema, ds)
    doc = result.to_json()
    doc["aic_optimal_terms"] = [[j, v] for j, v in result.aic_optimal_terms]
    doc["final_terms"] = [[j, v] for j, v in result.final_terms]
    text = f"procedure {result.procedure}\n" + _coefficient_text(doc["final"])
    _emit(text, doc, args.out, "select")
    if args.out:
        (Path(args.out) / "select.trace.jsonl").write_text(result.trace.to_jsonl(), encoding="utf-8")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg, schema, ds = _single_setup(args)
    result = _select(cfg, schema, ds)
    probes = []
    lines = []
    for var in cfg.focal:
        try:
            p = probe_variable(result, var, ds, cfg.optimizer_config)
        except ValueError as exc:
            lines.append(f"{var}: {exc}")
            continue
        probes.append(p.to_json())
        for lab, c in p.coefficients.items():
            lines.append(f"{var} [{lab}]: [{fmt_num(c)} ({fmt_num(p.t_ratios[lab])})]  n={p.n_used}")
    _emit("\n".join(lines), {"probes": probes}, args.out, "probe")
    return EXIT_OK


def cmd_elasticity(args) -> int:
    cfg, schema, ds = _single_setup(args)
    result = _select(cfg, schema, ds)
    reports = []
    lines = []
    for var in cfg.focal:
        if not any(var in cov for cov in result.final.spec.covariates):
            lines.append(f"{var}: not in the final model")
            continue
        r = averaged_elasticities(result.final, var)
        reports.append(r.to_json())
        for lab, e in r.direct.items():
            lines.append(f"{var} direct [{lab}]: {fmt_num(e)} ({classify(e)})")
        for (s, t), e in r.cross.items():
            lines.append(f"{var} cross [{s} -> {t}]: {fmt_num(e)}")
    _emit("\n".join(lines), {"elasticities": reports}, args.out, "elasticity")
    return EXIT_OK


def cmd_lrtest(args) -> int:
    if args.fixtures:
        rep = replay(args.fixtures)
        _emit(rep.exceptions_text(), rep.to_json(), args.out, "replay")
        return EXIT_OK
    if args.ll_pooled is None or args.k is None:
        raise ConfigError("lrtest needs --fixtures, or --ll-pooled, -k and --ll-bins / --ll-sum with -m")
    level = args.level if args.level is not None else 0.05
    try:
        if args.ll_bins:
            res = lr_test(args.ll_pooled, args.ll_bins, args.k, level)
        elif args.ll_sum is not None and args.m is not None:
            res = lr_test_from_sum(args.ll_pooled, args.ll_sum, args.m, args.k, level)
        else:
            raise ConfigError("give --ll-bins, or --ll-sum with -m")
    except NestingError as exc:
        raise ConfigError(str(exc)) from exc
    label = args.label or ""
    text, doc = render_lr_table([("", res)], reject_label=label or "reject", accept_label="" if label else "no reject")
    _emit(text, doc, args.out, "lrtest")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _run_config(args)
    schema, ds = load_run_data(cfg)
    check_variables(cfg, ds)
    out = args.out or cfg.out
    doc = run_grid(cfg, schema, ds, out)
    print(Path(out, "grid.txt").read_text(encoding="utf-8"))
    flagged = sum(1 for r in doc["rows"] if r.get("flags"))
    print(f"{len(doc['rows'])} partitions, {flagged} flagged; results in {out}")
    return EXIT_OK


def cmd_tests(args) -> int:
    cfg = _run_config(args)
    schema, ds = load_run_data(cfg)
    check_variables(cfg, ds)
    results = partition_tests(cfg, schema, ds)
    texts, docs = [], {}
    kinds = sorted({k for k, *_ in results})
    for kind in kinds:
        ok = [(lab, r) for k, lab, r, _ in results if k == kind and r is not None]
        if ok:
            labels = ok[0][1].labels
            reject, accept = (labels[0], "") if kind == "bins" else labels
            text, doc = render_lr_table([(lab, r.lr) for lab, r in ok], reject, accept)
            doc["removed"] = {lab: r.removed for lab, r in ok}
            texts.append(f"{kind}\n{text}")
            docs[kind] = doc
        failed = [(lab, msg) for k, lab, r, msg in results if k == kind and r is None]
        if failed:
            texts.append("\n".join(f"{kind} {lab}: failed: {msg}" for lab, msg in failed))
            docs.setdefault(kind, {})["failed"] = [{"partition": lab, "error": msg} for lab, msg in failed]
    if cfg.fixtures:
        rep = replay(cfg.fixtures)
        texts.append("fixtures replay\n" + rep.exceptions_text())
        docs["replay"] = rep.to_json()
    _emit("\n\n".join(texts), docs, args.out or cfg.out, "tests")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if not args.config:
        raise ConfigError("simulate needs --config pointing at a generator document")
    try:
        gen = GeneratorSpec.load(args.config)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad generator document: {exc}") from exc
    if args.seed is not None:
        gen.seed = args.seed
    if args.n is not None:
        gen.n = args.n
    ds = generate(gen)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out / "data.csv")
    dump_json(ds.schema_json(), out / "schema.json")
    dump_json({"generator": gen.to_json(), "rng": RNG_ALGORITHM, "provenance": ds.provenance}, out / "generator.json")
    print(f"wrote {len(ds)} rows to {out / 'data.csv'}")
    return EXIT_OK


COMMANDS: dict[str, Callable] = {
    "describe": cmd_describe,
    "fit": cmd_fit,
    "select": cmd_select,
    "probe": cmd_probe,
    "elasticity": cmd_elasticity,
    "lrtest": cmd_lrtest,
    "grid": cmd_grid,
    "tests": cmd_tests,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--data", help="delimited data file")
    common.add_argument("--schema", help="schema document (default: bundled variable list)")
    common.add_argument("--out", help="output directory for JSON results")
    common.add_argument("--mode", choices=("causation", "severity"))
    common.add_argument("--procedure", choices=("A", "B", "auto"))
    common.add_argument("--level", type=float, help="significance level (default 0.05)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    common.add_argument("--fixtures", help="published LL fixtures to replay")

    p = argparse.ArgumentParser(prog="choicefit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().splitlines()[0])
        if name == "lrtest":
            sp.add_argument("--ll-pooled", type=float)
            sp.add_argument("--ll-bins", type=float, nargs="+")
            sp.add_argument("--ll-sum", type=float)
            sp.add_argument("-m", type=int, help="number of bins when only the sum is given")
            sp.add_argument("-k", type=int, help="coefficients per model")
            sp.add_argument("--label", help="conclusion text when the test rejects")
        if name == "simulate":
            sp.add_argument("-n", type=int, help="override the generator's row count")
    return p


cmd_describe.__doc__ = "percentage distributions overall and per speed-limit bin"
cmd_fit.__doc__ = "fit one model with all candidate variables"
cmd_select.__doc__ = "stepwise AIC selection (procedure A, B or auto)"
cmd_probe.__doc__ = "test-add focal variables to the AIC-optimal model"
cmd_elasticity.__doc__ = "averaged elasticities of focal variables in the final model"
cmd_lrtest.__doc__ = "likelihood-ratio test from log-likelihoods, or replay a fixtures file"
cmd_grid.__doc__ = "select, probe and tabulate every partition"
cmd_tests.__doc__ = "pooling and bin-structure tests per partition"
cmd_simulate.__doc__ = "generate synthetic data from a known logit model"


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError) as exc:
        print(f"choicefit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"choicefit: estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

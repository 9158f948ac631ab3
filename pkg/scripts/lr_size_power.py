"""Monte-Carlo size and power of the pooling likelihood-ratio test.

Two subsets share a binary logit except for a coefficient gap on one
covariate.  With gap 0 the rejection frequency estimates the test's size;
with a positive gap it estimates power.

    python scripts/lr_size_power.py --gaps 0 0.1 0.25 0.5 --n 2000 --reps 200
"""

import argparse

import numpy as np

from choicefit.dataset import VariableSpec
from choicefit.inference import pooling_test
from choicefit.synth import GeneratorSpec, generate


def split_sample(seed, gap, n):
    parts = []
    for g, shift in enumerate((0.0, gap)):
        gen = GeneratorSpec(
            beta=[{"const": -0.3, "x1": 0.5 + shift, "x2": -0.4}],
            covariates={"x1": {"dist": "normal"}, "x2": {"dist": "normal"}},
            n=n, seed=2 * seed + g,
        )
        parts.append(generate(gen))
    a, b = parts
    ds = a.__class__(a.schema, {name: np.concatenate([a[name], b[name]]) for name in a.names})
    return ds.with_column(VariableSpec("pair", "indicator"), np.repeat([0.0, 1.0], n)), gen.model_spec()


def rejection_rate(gap, n, reps, level, seed0=0):
    hits = 0
    for s in range(seed0, seed0 + reps):
        ds, spec = split_sample(s, gap, n)
        hits += pooling_test(spec, ds, "pair", level=level).lr.reject
    return hits / reps


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--gaps", type=float, nargs="+", default=[0.0, 0.1, 0.25, 0.5])
    parser.add_argument("--n", type=int, default=2000, help="observations per subset")
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--level", type=float, default=0.05)
    args = parser.parse_args(argv)

    print(f"{'gap':>6}  {'reject':>7}  (N={args.n}/subset, {args.reps} replications, level {args.level})")
    for gap in args.gaps:
        rate = rejection_rate(gap, args.n, args.reps, args.level)
        se = np.sqrt(rate * (1 - rate) / args.reps)
        print(f"{gap:6.2f}  {rate:7.3f}  +- {se:.3f}")


if __name__ == "__main__":
    main()

"""Small constructors shared by the test modules."""

import numpy as np

from choicefit.dataset import Dataset, VariableSpec


def make_dataset(columns, kinds=None):
    return Dataset.from_columns(columns, kinds or {})


def counts_dataset(counts, outcome="y"):
    """Intercept-only data: ``counts[i]`` rows with outcome code ``i + 1``."""
    y = np.concatenate([np.full(c, i + 1.0) for i, c in enumerate(counts)])
    return Dataset((VariableSpec(outcome, "categorical"),), {outcome: y})

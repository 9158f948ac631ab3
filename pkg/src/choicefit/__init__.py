"""Multinomial logit estimation, stepwise AIC selection, elasticities and
likelihood-ratio structure tests for crash causation and severity data."""

__version__ = "0.1.0"

from .dataset import BinningSpec, Dataset, Schema, VariableSpec, load_dataset
from .elasticity import averaged_elasticities, cross_elasticity, direct_elasticity
from .inference import bin_structure_test, chi_squared_sf, lr_test, lr_test_from_sum, pooling_test
from .logit import ModelSpec
from .mle import FitResult, OptimizerConfig, fit, mcfadden_rho2
from .selection import SelectionConfig, probe_variable, run_procedure, select_model

__all__ = [
    "BinningSpec", "Dataset", "FitResult", "ModelSpec", "OptimizerConfig", "Schema", "SelectionConfig",
    "VariableSpec", "averaged_elasticities", "bin_structure_test", "chi_squared_sf", "cross_elasticity",
    "direct_elasticity", "fit", "load_dataset", "lr_test", "lr_test_from_sum", "mcfadden_rho2",
    "pooling_test", "probe_variable", "run_procedure", "select_model",
]

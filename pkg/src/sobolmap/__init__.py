"""Functional metamodels of spatial simulator outputs and per-pixel Sobol' index maps.

Maps are decomposed on a 2-D orthonormal wavelet basis, the leading
coefficients are modeled by Gaussian processes (the rest by linear or
constant models), and the resulting cheap predictor drives Monte Carlo
estimators of first-order and total sensitivity maps.
"""

from __future__ import annotations

from ._backend import BACKEND
from .designs import InputDesign, MarginalDistribution, lhs, maximin_lhs, scale
from .field import FieldEnsemble, GridField, read_ensemble, read_field, write_ensemble, write_field
from .funcmeta import (FunctionalMetamodel, fit_functional_metamodel, kfold_cv, load_bundle, mse, predict_map, q2,
                       save_bundle)
from .gp import GpModel, GpOptions, fit_gp
from .sobol import DoubleLoopBudget, SensitivityMaps, bootstrap_sd, doubleloop_maps, rmae, saltelli_maps
from .wavelet import WaveletSpec, dwt2, idwt2

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DoubleLoopBudget", "FieldEnsemble", "FunctionalMetamodel", "GpModel", "GpOptions", "GridField",
    "InputDesign", "MarginalDistribution", "SensitivityMaps", "WaveletSpec", "bootstrap_sd", "doubleloop_maps",
    "dwt2", "fit_functional_metamodel", "fit_gp", "idwt2", "kfold_cv", "lhs", "load_bundle", "maximin_lhs", "mse",
    "predict_map", "q2", "read_ensemble", "read_field", "rmae", "saltelli_maps", "save_bundle", "scale",
    "write_ensemble", "write_field",
]

"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np

from .data import AuxiliaryMap, TwoPhaseSample, identity_builder
from .exceptions import DataError
from .links import get_g_family
from .weights import Method


def check_sample(sample, need_failures=False):
    if not isinstance(sample, TwoPhaseSample):
        raise TypeError(f"expected a TwoPhaseSample, got {type(sample).__name__}")
    if not sample.selected.any():
        raise DataError("no phase-II records")
    if need_failures and not np.any(sample.selected & (sample.delta == 1)):
        raise DataError("no selected failures")
    return sample


def check_method(method, within):
    method = Method(method)
    if method is Method.PLAIN and within:
        raise ValueError("plain weights have no within-stratum variant")
    return method


def check_g_family(name):
    return get_g_family(name)


def check_aux(sample, aux_columns):
    """Auxiliary map over selected ``u`` columns (all of them by default)."""
    m = sample.u.shape[1]
    cols = list(range(m)) if aux_columns is None else list(aux_columns)
    if any(not (0 <= c < m) for c in cols):
        raise DataError(f"auxiliary columns must lie in 0..{m - 1}")
    return AuxiliaryMap(identity_builder(cols))


def check_covariates(x, p):
    x = np.asarray(x, dtype=float)
    x = x.reshape(-1, p) if x.ndim < 2 else x
    if x.shape[1] != p:
        raise ValueError(f"expected {p} covariate columns, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("covariates must be finite")
    return x

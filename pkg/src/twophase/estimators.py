"""Estimator classes with the scikit-learn parameter conventions.

Each class takes a :class:`~twophase.data.TwoPhaseSample` in ``fit`` in
place of an ``(X, y)`` pair, since the design information (strata,
selection, inclusion probabilities) cannot be carried by a plain array.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation as val
from .cox_interval import M_BOUND, THETA_BOX, fit_cox_interval
from .cox_right import fit_cox_right
from .weights import adjust_weights

__all__ = ["WeightAdjuster", "CoxRightWLE", "CoxIntervalWLE"]


def _weights(est, sample):
    method = val.check_method(est.weights, est.within_stratum)
    aux = None if method.value == "plain" else val.check_aux(sample, est.aux_columns)
    return adjust_weights(sample, method, aux, g=val.check_g_family(est.g_family),
                          within=est.within_stratum)


class WeightAdjuster(TransformerMixin, BaseEstimator):
    """Compute plain, estimated or calibrated phase-II weights.

    Parameters
    ----------
    weights : {"plain", "e", "c", "mc", "cc"}
    within_stratum : bool
        Use the stratum-wise expansion of the auxiliaries.
    g_family : {"trunclinear", "scaledlogit"}
        Calibration link.
    aux_columns : sequence of int, optional
        Columns of ``u`` used as auxiliaries; all by default.
    """

    def __init__(self, weights="plain", within_stratum=False, g_family="trunclinear",
                 aux_columns=None):
        self.weights = weights
        self.within_stratum = within_stratum
        self.g_family = g_family
        self.aux_columns = aux_columns

    def fit(self, sample, y=None):
        val.check_sample(sample)
        self.weight_set_ = _weights(self, sample)
        self.n_records_ = sample.N
        return self

    def transform(self, sample):
        check_is_fitted(self, "weight_set_")
        val.check_sample(sample)
        if sample.N != self.n_records_:
            raise ValueError("weights were fitted on a sample of different size")
        return self.weight_set_.weights.copy()


class CoxRightWLE(BaseEstimator):
    """Weighted Cox regression for right-censored two-phase data.

    After ``fit``: ``coef_``, ``cumulative_hazard_`` (Breslow step
    function), ``covariance_`` (asymptotic variance of
    ``sqrt(N)(theta_hat - theta)``), ``standard_errors_`` and ``result_``.
    """

    def __init__(self, weights="plain", within_stratum=False, g_family="trunclinear",
                 aux_columns=None):
        self.weights = weights
        self.within_stratum = within_stratum
        self.g_family = g_family
        self.aux_columns = aux_columns

    def fit(self, sample, y=None):
        val.check_sample(sample, need_failures=True)
        self.weight_set_ = _weights(self, sample)
        res = fit_cox_right(sample, self.weight_set_)
        self.result_ = res
        self.coef_ = res.theta_hat
        self.cumulative_hazard_ = res.lambda_hat
        self.covariance_ = res.sigma_hat
        self.standard_errors_ = res.standard_errors
        self.n_features_in_ = sample.n_covariates
        return self

    def predict(self, x):
        """Linear predictor ``x' theta_hat``."""
        check_is_fitted(self, "coef_")
        return val.check_covariates(x, self.n_features_in_) @ self.coef_

    def predict_cumulative_hazard(self, x, t):
        """``exp(x' theta_hat) Lambda_hat(t)``; rows of ``x`` by times ``t``."""
        risk = np.exp(self.predict(x))
        return np.outer(risk, np.atleast_1d(self.cumulative_hazard_(t)))


class CoxIntervalWLE(BaseEstimator):
    """Weighted Cox regression for current status two-phase data."""

    def __init__(self, weights="plain", within_stratum=False, g_family="trunclinear",
                 aux_columns=None, box=THETA_BOX, M=M_BOUND):
        self.weights = weights
        self.within_stratum = within_stratum
        self.g_family = g_family
        self.aux_columns = aux_columns
        self.box = box
        self.M = M

    def fit(self, sample, y=None):
        val.check_sample(sample)
        self.weight_set_ = _weights(self, sample)
        res = fit_cox_interval(sample, self.weight_set_, box=self.box, M=self.M)
        self.result_ = res
        self.coef_ = res.theta_hat
        self.cumulative_hazard_ = res.lambda_hat
        self.n_features_in_ = sample.n_covariates
        return self

    def predict(self, x):
        check_is_fitted(self, "coef_")
        return val.check_covariates(x, self.n_features_in_) @ self.coef_

    def predict_failure_probability(self, x, t):
        """``1 - exp(-exp(x' theta_hat) Lambda_hat(t))``."""
        risk = np.exp(self.predict(x))
        return -np.expm1(-np.outer(risk, np.atleast_1d(self.cumulative_hazard_(t))))

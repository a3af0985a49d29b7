import numpy as np
import pytest
from sklearn.base import clone

from conftest import complete_sample, toy_sample
from oracles import interval_instance
from twophase.cox_interval import fit_cox_interval
from twophase.cox_right import fit_cox_right
from twophase.data import AuxiliaryMap, identity_builder
from twophase.estimators import CoxIntervalWLE, CoxRightWLE, WeightAdjuster
from twophase.weights import adjust_weights


def test_params_and_clone():
    est = CoxRightWLE(weights="cc", within_stratum=True)
    assert est.get_params()["weights"] == "cc"
    twin = clone(est).set_params(g_family="scaledlogit")
    assert twin.within_stratum and twin.g_family == "scaledlogit"
    assert CoxIntervalWLE().get_params()["box"] == 5.0


def test_weight_adjuster_matches_function():
    s = toy_sample(2)
    w = WeightAdjuster(weights="mc").fit(s).transform(s)
    ref = adjust_weights(s, "mc", AuxiliaryMap(identity_builder())).weights
    np.testing.assert_array_equal(w, ref)
    with pytest.raises(ValueError):
        WeightAdjuster().fit(s).transform(toy_sample(2, N=300))


def test_cox_right_wrapper():
    s = toy_sample(4)
    est = CoxRightWLE(weights="c").fit(s)
    ref = fit_cox_right(s, adjust_weights(s, "c", AuxiliaryMap(identity_builder())))
    np.testing.assert_array_equal(est.coef_, ref.theta_hat)
    np.testing.assert_allclose(est.standard_errors_, np.sqrt(np.diag(est.covariance_) / s.N))
    h = est.predict_cumulative_hazard([[0.0], [1.0]], [0.5, 1.0])
    assert h.shape == (2, 2) and np.all(h[1] > h[0])


def test_cox_interval_wrapper():
    y, d, x = interval_instance(5, n=100)
    s = complete_sample(y, d, x)
    est = CoxIntervalWLE().fit(s)
    ref = fit_cox_interval(s)
    np.testing.assert_array_equal(est.coef_, ref.theta_hat)
    p = est.predict_failure_probability([[0.0]], [0.3, 1.8])
    assert 0 <= p[0, 0] <= p[0, 1] <= 1


def test_bad_parameters():
    s = toy_sample(1)
    with pytest.raises(ValueError):
        CoxRightWLE(weights="zz").fit(s)
    with pytest.raises(ValueError):
        CoxRightWLE(weights="plain", within_stratum=True).fit(s)
    with pytest.raises(ValueError):
        CoxRightWLE(weights="c", aux_columns=[3]).fit(s)
    with pytest.raises(ValueError):
        CoxRightWLE().fit(s).predict(np.zeros((2, 3)))

"""Weighted Cox regression under right censoring.

The weighted partial likelihood is maximized by Newton's method with
Breslow handling of ties; the cumulative hazard is the weighted Breslow
estimator. Variances combine the inverse efficient information with the
design (phase-II) term, estimated by stratum-restricted IPW moments of the
plug-in efficient influence function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .asymptotics import projection
from .data import Design, StepFunction, TwoPhaseSample
from .exceptions import (ConvergenceError, DataError, MonotoneLikelihoodError,
                         SingularMatrixError)
from .weights import Method, WeightSet, plain_weights

__all__ = [
    "CoxRightFit",
    "fit_cox_right",
    "breslow",
    "efficient_score_right",
    "empirical_moments",
    "variance_right",
    "partial_loglik",
]

TOL = 1e-8
MAX_ITER = 50
_ETA_SPREAD_LIMIT = 300.0
# a Newton step this long at a vanishing gradient means a flat ridge
_RIDGE_STEP = 1e-3


def _revcumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


class _RiskSets:
    """Sorted weighted data with tie-aware risk-set sums."""

    def __init__(self, y, delta, x, w):
        keep = w > 0
        order = np.argsort(y[keep], kind="stable")
        self.y = y[keep][order]
        self.delta = delta[keep][order]
        self.x = x[keep][order]
        self.w = w[keep][order]
        # first position whose time is >= y_i: start of the risk set
        self.start = np.searchsorted(self.y, self.y, side="left")
        self.fail = np.flatnonzero(self.delta == 1)
        if len(self.fail) == 0:
            raise DataError("no weighted failures")
        self.event_times, first = np.unique(self.y[self.fail], return_index=True)

    def sums(self, theta, order=2):
        eta = self.x @ theta
        shift = eta.max()
        r = self.w * np.exp(eta - shift)
        idx = self.start[self.fail]
        s0 = _revcumsum(r)[idx]
        s1 = _revcumsum(r[:, None] * self.x)[idx]
        s2 = None
        if order >= 2:
            outer = self.x[:, :, None] * self.x[:, None, :]
            s2 = _revcumsum(r[:, None, None] * outer)[idx]
        return eta, shift, s0, s1, s2

    def loglik(self, theta):
        eta, shift, s0, _, _ = self.sums(theta, order=0)
        f = self.fail
        return float(np.sum(self.w[f] * (eta[f] - shift - np.log(s0))))

    def derivatives(self, theta):
        eta, shift, s0, s1, s2 = self.sums(theta)
        f = self.fail
        wf = self.w[f]
        ll = float(np.sum(wf * (eta[f] - shift - np.log(s0))))
        mean = s1 / s0[:, None]
        grad = wf @ (self.x[f] - mean)
        cov = s2 / s0[:, None, None] - mean[:, :, None] * mean[:, None, :]
        hess = -np.tensordot(wf, cov, axes=(0, 0))
        return ll, grad, hess


def partial_loglik(theta, y, delta, x, w):
    """Weighted Breslow log partial likelihood."""
    rs = _RiskSets(np.asarray(y, float), np.asarray(delta, int),
                   np.asarray(x, float).reshape(len(y), -1), np.asarray(w, float))
    return rs.loglik(np.atleast_1d(np.asarray(theta, float)))


def breslow(y, delta, x, w, theta):
    """Weighted Breslow cumulative hazard at ``theta``.

    Jumps sit at the distinct weighted failure times with size
    ``sum_{y_i = t} w_i delta_i / sum_k w_k exp(theta'x_k) 1{y_k >= t}``.
    """
    y = np.asarray(y, float)
    rs = _RiskSets(y, np.asarray(delta, int),
                   np.asarray(x, float).reshape(len(y), -1), np.asarray(w, float))
    return _breslow(rs, np.atleast_1d(np.asarray(theta, float)))


def _breslow(rs, theta):
    eta = rs.x @ theta
    shift = eta.max()
    r = rs.w * np.exp(eta - shift)
    s0 = _revcumsum(r)
    t, inv = np.unique(rs.y[rs.fail], return_inverse=True)
    num = np.bincount(inv, weights=rs.w[rs.fail], minlength=len(t))
    den = s0[np.searchsorted(rs.y, t, side="left")] * np.exp(shift)
    return StepFunction.from_increments(t, num / den)


@dataclass(frozen=True, eq=False)
class CoxRightFit:
    theta_hat: np.ndarray
    lambda_hat: StepFunction
    I_hat: np.ndarray
    sigma_hat: np.ndarray
    nu_hat: np.ndarray
    p: np.ndarray
    stratum_terms: tuple
    loglik: float
    iterations: int
    score_residual: float
    operator_residual: float
    N: int
    design: Design = Design.WITHOUT_REPLACEMENT
    method: str = "plain"
    info: dict = field(default_factory=dict)

    @property
    def standard_errors(self):
        return np.sqrt(np.diag(self.sigma_hat) / self.N)

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "sigma_hat": self.sigma_hat.tolist(),
            "I_hat": self.I_hat.tolist(),
            "lambda_hat": self.lambda_hat.to_pairs(),
            "strata": [
                {"stratum": j + 1, "nu_hat": float(self.nu_hat[j]),
                 "p": float(self.p[j]), "variance_term": t.tolist()}
                for j, t in enumerate(self.stratum_terms)],
            "loglik": self.loglik,
            "iterations": self.iterations,
            "score_residual": self.score_residual,
            "operator_residual": self.operator_residual,
            "design": self.design.value,
            "weights": self.method,
        }


def _check_curvature(rs, theta, grad, hess):
    # on a monotone likelihood the gradient and curvature decay together
    try:
        step = np.linalg.solve(-hess, grad)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("singular weighted information") from None
    if np.max(np.abs(step)) > _RIDGE_STEP:
        raise MonotoneLikelihoodError(
            f"partial likelihood appears monotone; theta = {theta}")


def _newton(rs, p, max_iter, tol, N):
    theta = np.zeros(p)
    ll, grad, hess = rs.derivatives(theta)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) / N <= tol:
            _check_curvature(rs, theta, grad, hess)
            return theta, ll, it - 1
        try:
            if np.linalg.cond(hess) > 1e14:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise SingularMatrixError("singular weighted information") from None
        t = 1.0
        for _ in range(40):
            cand = theta + t * step
            ll_c = rs.loglik(cand)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        theta = cand
        ll, grad, hess = rs.derivatives(theta)
        eta = rs.x @ theta
        if np.ptp(eta) > _ETA_SPREAD_LIMIT:
            raise MonotoneLikelihoodError(
                f"partial likelihood appears monotone; theta = {theta}")
    if np.max(np.abs(grad)) / N <= tol:
        _check_curvature(rs, theta, grad, hess)
        return theta, ll, max_iter
    raise ConvergenceError("Cox Newton iteration did not converge", max_iter,
                           float(np.max(np.abs(grad)) / N))


def _residuals(rs, theta, lam, N):
    """Sup-norms of the score and score-operator equations at the fit."""
    eta = rs.x @ theta
    ehaz = np.exp(eta) * lam(rs.y)
    score = (rs.w * (rs.delta - ehaz)) @ rs.x / N
    t = lam.jump_points
    dN = np.bincount(np.searchsorted(t, rs.y[rs.fail]), weights=rs.w[rs.fail],
                     minlength=len(t))
    s0 = _revcumsum(rs.w * np.exp(eta))[np.searchsorted(rs.y, t, side="left")]
    operator = (dN - s0 * lam.increments) / N
    return float(np.max(np.abs(score))), float(np.max(np.abs(operator)))


def empirical_moments(y, x, w, theta):
    """``M_k(s) = (1/N) sum_i w_i x_i^k exp(theta'x_i) 1{y_i >= s}``, k = 0, 1.

    Returns the two moment functions as callables of ``s``. ``N`` is the
    number of weights passed (phase-I size when unselected rows carry 0).
    """
    y = np.asarray(y, float)
    x = np.asarray(x, float).reshape(len(y), -1)
    w = np.asarray(w, float)
    keep = w > 0
    N = len(y)
    order = np.argsort(y[keep], kind="stable")
    ys, xs, ws = y[keep][order], x[keep][order], w[keep][order]
    r = ws * np.exp(xs @ theta)
    c0 = np.append(_revcumsum(r), 0.0) / N
    c1 = np.vstack([_revcumsum(r[:, None] * xs), np.zeros((1, xs.shape[1]))]) / N

    def M0(s):
        return c0[np.searchsorted(ys, np.asarray(s, float), side="left")]

    def M1(s):
        return c1[np.searchsorted(ys, np.asarray(s, float), side="left")]

    return M0, M1


def efficient_score_right(y, delta, x, theta, lam: StepFunction, M0, M1):
    """Complete-data efficient score for ``theta`` at ``(theta, lam)``.

    ``delta (x - E(y)) - exp(theta'x) * int_[0,y] (x - E(t)) dlam(t)`` with
    ``E = M1/M0``; ``lam`` enters only through its jumps, so a continuous
    cumulative hazard should be passed in discretized form.
    """
    y = np.atleast_1d(np.asarray(y, float))
    delta = np.atleast_1d(np.asarray(delta, float))
    x = np.asarray(x, float).reshape(len(y), -1)
    theta = np.atleast_1d(np.asarray(theta, float))
    t = lam.jump_points
    dlam = lam.increments
    reach = t <= y.max() if len(y) else np.zeros(0, bool)
    m0_t = np.asarray(M0(t[reach]), float)
    if np.any(m0_t <= 0):
        raise DataError("M0 vanishes at a jump of the cumulative hazard")
    e_t = np.asarray(M1(t[reach]), float).reshape(-1, x.shape[1]) / m0_t[:, None]
    cum_e = np.vstack([np.zeros((1, x.shape[1])),
                       np.cumsum(e_t * dlam[reach][:, None], axis=0)])
    k = np.searchsorted(t[reach], y, side="right")
    lam_y = lam(y)
    out = -np.exp(x @ theta)[:, None] * (x * lam_y[:, None] - cum_e[k])
    fail = delta == 1
    if fail.any():
        m0_y = np.asarray(M0(y[fail]), float)
        if np.any(m0_y <= 0):
            raise DataError("M0 vanishes at an observed failure time")
        e_y = np.asarray(M1(y[fail]), float).reshape(-1, x.shape[1]) / m0_y[:, None]
        out[fail] += x[fail] - e_y
    return out


def _adjusted_projection(ltilde, ws: WeightSet, sample, sel):
    """Plug-in ``Q_# ltilde`` on the phase-II records (plain IPW measure)."""
    z = ws.design[sel]
    pi = sample.pi0[sel]
    mass = 1.0 / pi
    mass = mass / mass.sum()
    if ws.method is Method.CALIBRATION:
        a = b = c = np.ones(len(pi))
    elif ws.method in (Method.MODIFIED, Method.CENTERED):
        a = b = 1.0 / pi - 1.0
        c = np.ones(len(pi))
    else:
        active = pi < 1
        gd = ws.gdot[sel]
        pp = np.where(active, pi, 0.5)
        a = np.where(active, gd / pp, 0.0)
        b = np.where(active, gd ** 2 / (pp * (1 - pp)), 0.0)
        c = np.where(active, gd / (1 - pp), 0.0)
    live = np.max(np.abs(z), axis=0) > 0
    return projection(ltilde, z[:, live], a, b, c, mass)


def variance_right(theta, lam, sample: TwoPhaseSample, weights: WeightSet,
                   design=None):
    """Plug-in asymptotic variance of ``sqrt(N)(theta_hat - theta_0)``.

    Returns ``(sigma_hat, I_hat, stratum_terms)``. The phase-II term uses
    stratum-conditional IPW moments of ``ltilde = I_hat^{-1} l*`` (or of the
    residual ``ltilde - Q ltilde`` for adjusted weights): a variance without
    replacement, a raw second moment under Bernoulli sampling.
    """
    design = Design(design or sample.design)
    sel = sample.selected & (weights.weights > 0)
    w = weights.weights
    M0, M1 = empirical_moments(sample.y, np.nan_to_num(sample.x),
                               np.where(sel, w, 0.0), theta)
    lstar = efficient_score_right(sample.y[sel], sample.delta[sel], sample.x[sel],
                                  theta, lam, M0, M1)
    ws = w[sel]
    I_hat = (ws[:, None, None] * lstar[:, :, None] * lstar[:, None, :]).sum(0) / sample.N
    try:
        if np.linalg.cond(I_hat) > 1e14:
            raise np.linalg.LinAlgError
        I_inv = np.linalg.inv(I_hat)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("singular estimated information") from None
    ltilde = lstar @ I_inv.T
    if weights.method is not Method.PLAIN:
        ltilde = ltilde - _adjusted_projection(ltilde, weights, sample, sel)
    sigma = I_inv.copy()
    nu = sample.nu_hat
    p = sample.p_j
    strat = sample.stratum[sel]
    terms = []
    for j in range(sample.n_strata):
        rows = strat == j + 1
        v = ltilde[rows]
        if len(v) == 0:
            terms.append(np.zeros_like(sigma))
            continue
        mass = 1.0 / sample.pi0[sel][rows]
        mass = mass / mass.sum()
        mean = mass @ v
        second = (mass[:, None, None] * v[:, :, None] * v[:, None, :]).sum(0)
        term = second if design is Design.BERNOULLI else second - np.outer(mean, mean)
        terms.append(term)
        sigma = sigma + nu[j] * (1 - p[j]) / p[j] * term
    sigma = 0.5 * (sigma + sigma.T)
    return sigma, I_hat, tuple(terms)


def fit_cox_right(sample: TwoPhaseSample, weights: Optional[WeightSet] = None,
                  max_iter=MAX_ITER, tol=TOL, variance=True) -> CoxRightFit:
    """Weighted Cox fit with Breslow cumulative hazard and plug-in variance."""
    weights = weights if weights is not None else plain_weights(sample)
    w = np.asarray(weights.weights, float)
    if w.shape != (sample.N,) or np.any(w < 0):
        raise DataError("weights must be nonnegative, one per record")
    sel = sample.selected & (w > 0)
    x = np.where(sel[:, None], np.nan_to_num(sample.x), 0.0)
    rs = _RiskSets(sample.y, sample.delta, x, np.where(sel, w, 0.0))
    p = sample.n_covariates
    theta, ll, it = _newton(rs, p, max_iter, tol, sample.N)
    lam = _breslow(rs, theta)
    score_res, op_res = _residuals(rs, theta, lam, sample.N)
    if variance:
        sigma, I_hat, terms = variance_right(theta, lam, sample, weights)
    else:
        sigma = I_hat = np.full((p, p), np.nan)
        terms = ()
    return CoxRightFit(theta, lam, I_hat, sigma, sample.nu_hat, sample.p_j,
                       terms, ll, it, score_res, op_res, sample.N, sample.design,
                       weights.method.value)

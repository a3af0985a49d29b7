"""Weighted Cox regression for current status data.

For fixed ``theta`` the cumulative hazard is profiled out by the iterative
convex minorant algorithm: each sweep takes a Fisher-weighted isotonic
regression of the working response ``lambda + g/d``, followed by a
step-halving line search. A final block-wise Newton polish solves the
pooled one-dimensional problems exactly. ``theta`` is then found by a
derivative-free search of the profile objective inside a compact box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import isotonic_regression, minimize_scalar

from .data import StepFunction, TwoPhaseSample
from .exceptions import ConvergenceError, DataError, FeasibilityError, NumericalError
from .weights import WeightSet, plain_weights

__all__ = [
    "CoxIntervalFit",
    "CovariateLaw",
    "loglik_interval",
    "profile_lambda",
    "fit_cox_interval",
    "oracle_efficient_score_interval",
    "l2_distance",
]

M_BOUND = 1e3
ICM_TOL = 1e-10
ICM_MAX_ITER = 2000
ICM_STALL = 20
THETA_BOX = 5.0


def _weights_array(sample, weights):
    if weights is None:
        weights = plain_weights(sample)
    w = weights.weights if isinstance(weights, WeightSet) else weights
    w = np.asarray(w, float)
    if w.shape != (sample.N,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DataError("weights must be finite, nonnegative, one per record")
    return np.where(sample.selected, w, 0.0)


class _CurrentStatus:
    """Selected records sorted by monitoring time, grouped at distinct times."""

    def __init__(self, y, delta, x, w):
        keep = w > 0
        if not keep.any():
            raise DataError("no selected records with positive weight")
        order = np.argsort(y[keep], kind="stable")
        self.y = y[keep][order]
        self.delta = delta[keep][order].astype(float)
        self.x = x[keep][order]
        self.w = w[keep][order]
        self.points, self.k = np.unique(self.y, return_inverse=True)
        self.K = len(self.points)
        # records per point: all failures / all survivors
        n = np.bincount(self.k, minlength=self.K)
        nd = np.bincount(self.k, weights=self.delta, minlength=self.K)
        self.all_fail = nd == n
        self.no_fail = nd == 0

    @classmethod
    def from_sample(cls, sample, weights):
        w = _weights_array(sample, weights)
        return cls(sample.y, sample.delta, np.nan_to_num(sample.x), w)

    def hazard(self, theta):
        return np.exp(self.x @ theta)

    def loglik(self, lam, c):
        L = lam[self.k] * c
        fail = self.delta == 1
        if np.any(fail & (L <= 0)):
            raise FeasibilityError("zero failure probability at a recorded failure")
        with np.errstate(divide="ignore"):
            logF = np.log(-np.expm1(-L[fail]))
        if np.any(~np.isfinite(logF)):
            raise FeasibilityError("log likelihood is -inf")
        return float(self.w[fail] @ logF - self.w[~fail] @ L[~fail])

    def _r(self, L):
        with np.errstate(over="ignore", divide="ignore"):
            return 1.0 / np.expm1(L)

    def grad_fisher(self, lam, c):
        L = lam[self.k] * c
        r = self._r(L)
        g = self.w * c * (self.delta * r - (1 - self.delta))
        d = self.w * c * c * r
        return (np.bincount(self.k, weights=g, minlength=self.K),
                np.bincount(self.k, weights=d, minlength=self.K))

    def theta_score(self, lam, c):
        L = lam[self.k] * c
        q = self.delta * self._r(L) - (1 - self.delta)
        return (self.w * q * L) @ self.x


def _icm(prob, c, lam, free, M, tol, max_iter):
    """ICM sweeps moving only ``lam[free]``; returns (lam, objective, sweeps)."""
    lo, hi = 1.0 / M, M
    obj = prob.loglik(lam, c)
    gain = np.inf
    stalled = 0
    for it in range(1, max_iter + 1):
        g, d = prob.grad_fisher(lam, c)
        g, d = g[free], d[free]
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-300))
        target = isotonic_regression(lam[free] + g / d, weights=d).x
        direction = np.zeros_like(lam)
        direction[free] = np.clip(target, lo, hi) - lam[free]
        t, accepted = 1.0, False
        for _ in range(60):
            cand = lam + t * direction
            try:
                val = prob.loglik(cand, c)
            except FeasibilityError:
                val = -np.inf
            if val >= obj:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return lam, obj, it
        gain = val - obj
        step = t * np.max(np.abs(direction))
        lam, obj = cand, val
        if gain < tol and step < 1e-8 * max(1.0, np.max(lam[free])):
            return lam, obj, it
        # ICM can creep along a ridge that is flat to rounding; the block
        # polish that follows settles the pooled levels exactly
        stalled = stalled + 1 if gain < tol else 0
        if stalled >= ICM_STALL:
            return lam, obj, it
    raise ConvergenceError("ICM did not converge", max_iter, gain)


def _polish(prob, c, lam, M):
    """Exact Newton solve of each pooled block; kept only if it helps."""
    lo, hi = 1.0 / M, M
    free = (lam > lo) & (lam < hi)
    if not free.any():
        return lam
    _, block = np.unique(lam, return_inverse=True)
    nb = block.max() + 1
    level = np.bincount(block, weights=lam, minlength=nb) / np.bincount(block, minlength=nb)
    active = np.bincount(block, weights=free.astype(float), minlength=nb) > 0
    rec_block = block[prob.k]
    for _ in range(50):
        L = level[rec_block] * c
        r = prob._r(L)
        g = prob.w * c * (prob.delta * r - (1 - prob.delta))
        h = prob.w * c * c * prob.delta * r * (1 + r)
        G = np.bincount(rec_block, weights=g, minlength=nb)
        H = np.bincount(rec_block, weights=h, minlength=nb)
        ok = active & (H > 0)
        step = np.where(ok, G / np.where(ok, H, 1.0), 0.0)
        new = np.where(ok, np.clip(level + step, level / 10, None), level)
        done = np.max(np.abs(new - level) / np.maximum(level, 1e-300)) < 1e-14
        level = new
        if done:
            break
    cand = level[block]
    if np.any(np.diff(cand) < 0) or cand.min() < lo or cand.max() > hi:
        return lam
    try:
        if prob.loglik(cand, c) >= prob.loglik(lam, c):
            return cand
    except FeasibilityError:
        pass
    return lam


def _initial(prob, c):
    """Weighted PAVA of delta mapped to the hazard scale."""
    F = isotonic_regression(
        np.bincount(prob.k, weights=prob.w * prob.delta, minlength=prob.K)
        / np.bincount(prob.k, weights=prob.w, minlength=prob.K),
        weights=np.bincount(prob.k, weights=prob.w, minlength=prob.K)).x
    scale = float(np.average(c, weights=prob.w))
    return -np.log1p(-np.clip(F, 1e-6, 1 - 1e-6)) / scale


def _profile(prob, theta, M=M_BOUND, start=None, tol=ICM_TOL, max_iter=ICM_MAX_ITER):
    c = prob.hazard(theta)
    lo, hi = 1.0 / M, M
    # leading points with no failures sit at the floor, trailing points
    # with only failures at the ceiling; both are optimal there
    first = int(np.argmin(prob.no_fail)) if not prob.no_fail.all() else prob.K
    last = prob.K - (int(np.argmin(prob.all_fail[::-1])) if not prob.all_fail.all()
                     else prob.K)
    lam = np.clip(start if start is not None else _initial(prob, c), lo, hi)
    lam = np.maximum.accumulate(lam)
    lam[:first] = lo
    lam[max(last, first):] = hi
    iters = 0
    if first < last:
        free = slice(first, last)
        lam, _, iters = _icm(prob, c, lam, free, M, tol, max_iter)
        lam = _polish(prob, c, lam, M)
    return lam, prob.loglik(lam, c), iters


def loglik_interval(theta, lam, sample: TwoPhaseSample, weights=None):
    """Weighted current-status log likelihood at ``(theta, lam)``.

    ``sum w_i [delta_i log(1 - exp(-lam(y_i) e^{theta'x_i}))
    - (1 - delta_i) e^{theta'x_i} lam(y_i)]``. A zero probability at a
    recorded failure raises :class:`FeasibilityError`.
    """
    prob = _CurrentStatus.from_sample(sample, weights)
    theta = np.atleast_1d(np.asarray(theta, float))
    lam_pts = np.asarray(lam(prob.points), float) if callable(lam) else np.asarray(lam, float)
    return prob.loglik(lam_pts, prob.hazard(theta))


def profile_lambda(theta, sample: TwoPhaseSample, weights=None, M=M_BOUND,
                   tol=ICM_TOL, max_iter=ICM_MAX_ITER) -> StepFunction:
    """Maximize the log likelihood over nondecreasing ``lam`` in ``[1/M, M]``.

    ``lam`` is supported on the distinct selected monitoring times.
    """
    prob = _CurrentStatus.from_sample(sample, weights)
    theta = np.atleast_1d(np.asarray(theta, float))
    lam, _, _ = _profile(prob, theta, M, tol=tol, max_iter=max_iter)
    return StepFunction(prob.points, lam)


@dataclass(frozen=True, eq=False)
class CoxIntervalFit:
    theta_hat: np.ndarray
    lambda_hat: StepFunction
    objective: float
    score_residual: float
    boundary: bool
    identifiable: bool
    evaluations: int
    trace: list = field(default_factory=list)
    method: str = "plain"

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat.tolist(),
            "lambda_hat": self.lambda_hat.to_pairs(),
            "objective": self.objective,
            "score_residual": self.score_residual,
            "boundary": self.boundary,
            "identifiable": self.identifiable,
            "profile_evaluations": self.evaluations,
            "weights": self.method,
        }


def fit_cox_interval(sample: TwoPhaseSample, weights=None, box=THETA_BOX,
                     M=M_BOUND, sweeps=3, grid_points=11, xtol=1e-7) -> CoxIntervalFit:
    """Maximize the profile log likelihood over ``theta`` in ``[-box, box]^p``.

    Each coordinate is bracketed on a coarse grid and refined by a bounded
    golden-section/parabolic search; with more than one covariate the
    coordinates are swept ``sweeps`` times.
    """
    prob = _CurrentStatus.from_sample(sample, weights)
    method = weights.method.value if isinstance(weights, WeightSet) else "plain"
    p = prob.x.shape[1]
    lo_box = np.broadcast_to(-np.abs(np.asarray(box, float)), (p,)).copy()
    hi_box = -lo_box
    trace = []
    cache = {"lam": None}

    def objective(theta):
        lam, val, _ = _profile(prob, theta, M, start=cache["lam"])
        cache["lam"] = lam
        trace.append((theta.tolist(), val))
        return val, lam

    spread = np.ptp(prob.x, axis=0) > 0
    theta = np.zeros(p)
    if not spread.any():
        val, lam = objective(theta)
        return CoxIntervalFit(theta, StepFunction(prob.points, lam), val, 0.0,
                              False, False, len(trace), trace, method)

    for sweep in range(1 if p == 1 else sweeps):
        for j in np.flatnonzero(spread):
            def f(t, j=j):
                th = theta.copy()
                th[j] = t
                return -objective(th)[0]
            if sweep == 0:
                grid = np.linspace(lo_box[j], hi_box[j], grid_points)
            else:
                half = (hi_box[j] - lo_box[j]) / (grid_points - 1)
                grid = np.clip(theta[j] + half * np.linspace(-1, 1, 5),
                               lo_box[j], hi_box[j])
            vals = [f(t) for t in grid]
            i = int(np.argmin(vals))
            a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
            res = minimize_scalar(f, bounds=(a, b), method="bounded",
                                  options={"xatol": xtol, "maxiter": 500})
            theta[j] = res.x if res.fun <= vals[i] else grid[i]
    val, lam = objective(theta)
    c = prob.hazard(theta)
    score = prob.theta_score(lam, c) / sample.N
    edge = 1e-3 * (hi_box - lo_box)
    boundary = bool(np.any((theta <= lo_box + edge) | (theta >= hi_box - edge)))
    return CoxIntervalFit(theta, StepFunction(prob.points, lam), val,
                          float(np.max(np.abs(score))), boundary,
                          bool(spread.all()), len(trace), trace, method)


# oracle quantities ----------------------------------------------------------

@dataclass(frozen=True)
class CovariateLaw:
    """Covariates uniform on a box, monitoring time independent of X.

    ``nodes`` is the number of Gauss-Legendre nodes per coordinate.
    """

    lower: tuple
    upper: tuple
    nodes: int = 24

    def quadrature(self, n=None):
        n = n or self.nodes
        t, wt = leggauss(n)
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        axes = [0.5 * (h - l) * t + 0.5 * (h + l) for l, h in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([g.ravel() for g in grids])
        w = np.ones(1)
        for _ in lo:
            w = np.outer(w, wt / 2).ravel()
        return pts, w


def _conditional_ratio(y, theta0, lam_y, pts, wq):
    c = np.exp(pts @ theta0)
    L = np.outer(lam_y, c)
    with np.errstate(over="ignore", divide="ignore"):
        O = 1.0 / np.expm1(L)
    k = wq * c * c * O
    den = k.sum(axis=1)
    num = k @ pts
    return num / den[:, None]


def oracle_efficient_score_interval(y, delta, x, theta0, lambda0, dgp: CovariateLaw,
                                    rtol=1e-8):
    """Complete-data efficient score for ``theta`` at the truth.

    ``e^{theta0'x} Q Lambda0(y) [x - E(X e^{2 theta0'X} O | y) / E(e^{2 theta0'X} O | y)]``
    with ``Q = delta r - (1 - delta)`` and ``O = r`` at the truth; the
    conditional expectations are Gauss-Legendre sums over the covariate law.
    """
    y = np.atleast_1d(np.asarray(y, float))
    delta = np.atleast_1d(np.asarray(delta, float))
    x = np.asarray(x, float).reshape(len(y), -1)
    theta0 = np.atleast_1d(np.asarray(theta0, float))
    lam_y = np.asarray(lambda0(y), float)
    if np.any(lam_y <= 0):
        raise DataError("Lambda0 must be positive at monitoring times")
    e1 = _conditional_ratio(y, theta0, lam_y, *dgp.quadrature())
    e2 = _conditional_ratio(y, theta0, lam_y, *dgp.quadrature(2 * dgp.nodes))
    err = np.max(np.abs(e1 - e2))
    if not np.isfinite(err) or err > rtol * max(1.0, np.max(np.abs(e2))):
        raise NumericalError(f"quadrature did not converge (change {err:.3g})")
    c = np.exp(x @ theta0)
    L = lam_y * c
    with np.errstate(over="ignore", divide="ignore"):
        r = 1.0 / np.expm1(L)
    q = delta * r - (1 - delta)
    return (c * q * lam_y)[:, None] * (x - e2)


def l2_distance(lam_hat, lam0, grid, weights=None):
    """``(int (lam_hat - lam0)^2 dP)^{1/2}`` with ``P`` given by ``grid`` points.

    ``weights`` defaults to equal mass, so a uniform grid over an interval
    approximates the uniform law there.
    """
    grid = np.asarray(grid, float)
    diff = np.asarray(lam_hat(grid), float) - np.asarray(lam0(grid), float)
    return float(np.sqrt(np.average(diff * diff, weights=weights)))

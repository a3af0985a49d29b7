"""Weight adjustment: plain IPW, estimated weights and three calibrations.

Every routine returns a :class:`WeightSet` whose ``weights`` are zero
exactly for unselected records.
"""

from __future__ import annotations

import dataclasses
import enum
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import AuxiliaryMap, AuxMode, TwoPhaseSample, place_blocks
from .exceptions import (ConvergenceError, DataError, SeparationError,
                         SingularMatrixError)
from .links import GFunction, LogisticLink, TruncatedLinear

__all__ = [
    "Method",
    "WeightSet",
    "plain_weights",
    "fit_estimated_weights",
    "solve_calibration",
    "within_stratum",
    "adjust_weights",
]

TOL = 1e-8
MAX_ITER = 100
_SEPARATION_BOUND = 30.0
_DEGENERATE = 1e-12
# Newton steps taken after the tolerance is met; quadratic convergence makes
# the reported residual far smaller than the stopping rule
_POLISH_STEPS = 2


class Method(str, enum.Enum):
    PLAIN = "plain"
    ESTIMATED = "e"
    CALIBRATION = "c"
    MODIFIED = "mc"
    CENTERED = "cc"


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Adjusted IPW weights and the fit that produced them.

    ``design`` is the matrix entering the link argument (stratum indicators
    included for estimated weights, centred for ``cc``) and ``factor`` the
    per-record multiplier of that argument (``1`` or ``1/pi0 - 1``).
    """

    method: Method
    weights: np.ndarray
    alpha_hat: Optional[np.ndarray] = None
    within: bool = False
    iterations: int = 0
    residual: float = 0.0
    link: Optional[str] = None
    design: Optional[np.ndarray] = None
    factor: Optional[np.ndarray] = None
    gdot: Optional[np.ndarray] = None
    dropped: tuple = ()

    def diagnostics(self):
        return {
            "method": self.method.value,
            "within_stratum": self.within,
            "link": self.link,
            "alpha_hat": None if self.alpha_hat is None else self.alpha_hat.tolist(),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "degenerate_columns": list(self.dropped),
        }


def plain_weights(sample: TwoPhaseSample) -> WeightSet:
    w = np.where(sample.selected, 1.0, 0.0) / sample.pi0
    return WeightSet(Method.PLAIN, w)


# estimated weights ---------------------------------------------------------

def _estimated_design(sample, aux):
    """Binary-regression design over records with ``pi0 < 1``."""
    active = sample.pi0 < 1.0
    base = aux.base_matrix(sample.y, sample.delta, sample.u)
    strata = [j for j in range(sample.n_strata)
              if np.any(active & (sample.stratum == j + 1))]
    if aux.within:
        blocks = np.column_stack([np.ones(sample.N), base])
        z = place_blocks(blocks, sample.stratum, sample.n_strata)
        k = blocks.shape[1]
        keep = np.concatenate([np.arange(j * k, (j + 1) * k) for j in strata])
        z = z[:, keep]
    else:
        ind = np.column_stack([(sample.stratum == j + 1).astype(float)
                               for j in strata])
        z = np.column_stack([ind, base])
    return z, active


def fit_estimated_weights(sample: TwoPhaseSample, aux: AuxiliaryMap,
                          link=None, max_iter=MAX_ITER, tol=TOL) -> WeightSet:
    """Weights ``xi / G_e(Z' alpha_hat)`` from a pseudo-likelihood fit.

    The binary regression of ``xi`` on ``Z`` (stratum indicators plus
    auxiliaries, or one ``(1, Z)`` block per stratum in within-stratum mode)
    is solved by Fisher scoring, which is Newton's method for the logistic
    link. Strata with ``pi0 = 1`` are left out and keep weight 1.
    """
    link = link or LogisticLink()
    if not aux.within and not aux.include_stratum_indicators:
        raise DataError("estimated weights need stratum indicators in Z")
    z_all, active = _estimated_design(sample, aux)
    w = np.where(sample.selected, 1.0, 0.0)
    gdot = np.zeros(sample.N)
    if not active.any():
        return WeightSet(Method.ESTIMATED, w, np.zeros(0), aux.within,
                         link=link.name, design=z_all, gdot=gdot)
    z = z_all[active]
    xi = sample.xi[active].astype(float)
    n = len(xi)

    def loglik(a):
        g = np.clip(link(z @ a), 1e-300, 1 - 1e-16)
        return np.sum(xi * np.log(g) + (1 - xi) * np.log1p(-g))

    def score_info(a):
        eta = z @ a
        g = np.clip(link(eta), 1e-300, 1 - 1e-16)
        d = link.derivative(eta)
        v = g * (1 - g)
        score = z.T @ ((xi - g) * d / v)
        info = (z * (d * d / v)[:, None]).T @ z
        return score, info

    alpha = np.zeros(z.shape[1])
    ll = loglik(alpha)
    for it in range(1, max_iter + 1):
        score, info = score_info(alpha)
        resid = np.max(np.abs(score)) / n
        if resid <= tol:
            break
        step = np.linalg.lstsq(info, score, rcond=1e-13)[0]
        t = 1.0
        for _ in range(50):
            cand = alpha + t * step
            ll_c = loglik(cand)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        alpha, ll = cand, ll_c
        if np.max(np.abs(alpha)) > _SEPARATION_BOUND:
            raise SeparationError(
                "estimated-weights regression diverges (separation); "
                f"|alpha| = {np.max(np.abs(alpha)):.3g}")
    else:
        score, _ = score_info(alpha)
        resid = np.max(np.abs(score)) / n
        if resid > tol:
            raise ConvergenceError("estimated weights did not converge",
                                   max_iter, resid)
    alpha, resid = _polish_root(
        alpha, -score_info(alpha)[0] / n,
        lambda a: -score_info(a)[0] / n,
        lambda a: score_info(a)[1] / n)
    eta = z @ alpha
    w[active] = sample.xi[active] / link(eta)
    gdot[active] = link.derivative(eta)
    return WeightSet(Method.ESTIMATED, w, alpha, aux.within, it, resid,
                     link.name, z_all, None, gdot)


# calibration ----------------------------------------------------------------

def _calibration_system(sample, aux, variant):
    base = aux.base_matrix(sample.y, sample.delta, sample.u)
    if variant is Method.CALIBRATION:
        factor = np.ones(sample.N)
    else:
        factor = 1.0 / sample.pi0 - 1.0
    if variant is Method.CENTERED:
        if aux.within:
            centred = base.copy()
            for j in range(sample.n_strata):
                rows = sample.stratum == j + 1
                centred[rows] -= base[rows].mean(axis=0)
            z = place_blocks(centred, sample.stratum, sample.n_strata)
        else:
            z = base - base.mean(axis=0)
        target = np.zeros(z.shape[1])
    else:
        z = aux.matrix(sample)
        target = z.mean(axis=0)
    return z, factor, target


def _polish_root(alpha, F, residual, jacobian, steps=_POLISH_STEPS):
    """Extra full Newton steps past the tolerance, kept while they help."""
    res = float(np.max(np.abs(F))) if len(F) else 0.0
    for _ in range(steps):
        if res == 0.0:
            break
        try:
            cand = alpha + np.linalg.solve(jacobian(alpha), -F)
        except np.linalg.LinAlgError:
            break
        Fc = residual(cand)
        rc = float(np.max(np.abs(Fc)))
        if not rc < res:
            break
        alpha, F, res = cand, Fc, rc
    return alpha, res


def solve_calibration(sample: TwoPhaseSample, aux: AuxiliaryMap,
                      g: GFunction = None, variant="c",
                      max_iter=MAX_ITER, tol=TOL) -> WeightSet:
    """Solve a calibration equation by damped Newton from ``alpha = 0``.

    ``c`` matches IPW totals of ``Z`` to phase-I totals through
    ``G(Z'a)``; ``mc`` uses ``G((1/pi0 - 1) Z'a)``; ``cc`` calibrates the
    centred ``Z - Zbar`` to zero with the ``mc`` argument. In within-stratum
    mode ``cc`` centres each block at its stratum's phase-I mean.

    Columns that vanish on the phase-II sample and carry a zero target
    cannot move the equation; they are held at ``alpha = 0`` with a
    warning. Tolerance is on the sup-norm of the averaged residual.
    """
    variant = Method(variant)
    if variant not in (Method.CALIBRATION, Method.MODIFIED, Method.CENTERED):
        raise ValueError(f"not a calibration variant: {variant}")
    g = g if g is not None else TruncatedLinear()
    z, factor, target = _calibration_system(sample, aux, variant)
    k = z.shape[1]
    if k == 0:
        raise DataError("calibration needs at least one auxiliary variable")
    sel = sample.selected
    N = sample.N
    zs, fs, ps = z[sel], factor[sel], sample.pi0[sel]

    scale = max(1.0, float(np.max(np.abs(z))))
    dead = (np.max(np.abs(zs), axis=0, initial=0.0) <= _DEGENERATE * scale) & (
        np.abs(target) <= _DEGENERATE * scale)
    live = np.flatnonzero(~dead)
    if dead.any():
        warnings.warn(
            f"degenerate Gram matrix: auxiliary columns {np.flatnonzero(dead).tolist()} "
            "vanish after centring/restriction; their coefficients are fixed at 0",
            RuntimeWarning, stacklevel=2)
    zl, tl = zs[:, live], target[live]

    def residual(a):
        arg = fs * (zl @ a)
        return (g(arg) / ps) @ zl / N - tl

    def jacobian(a):
        arg = fs * (zl @ a)
        return (zl * (g.derivative(arg) * fs / ps)[:, None]).T @ zl / N

    alpha = np.zeros(len(live))
    F = residual(alpha) if len(live) else np.zeros(0)
    res = float(np.max(np.abs(F))) if len(live) else 0.0
    it = 0
    while res > tol:
        it += 1
        if it > max_iter:
            raise ConvergenceError(
                f"calibration ({variant.value}) did not converge; "
                f"residual {res:.3g}", max_iter, res)
        Jm = jacobian(alpha)
        try:
            if np.linalg.cond(Jm) > 1e14:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(Jm, -F)
        except np.linalg.LinAlgError:
            raise SingularMatrixError(
                f"singular calibration Jacobian ({variant.value}); "
                f"residual {res:.3g}") from None
        t, obj = 1.0, F @ F
        for _ in range(40):
            cand = alpha + t * step
            Fc = residual(cand)
            if Fc @ Fc < obj:
                break
            t *= 0.5
        else:
            raise ConvergenceError(
                f"calibration ({variant.value}): no root within the trust "
                f"region; residual {res:.3g}", it, res)
        alpha, F = cand, Fc
        res = float(np.max(np.abs(F)))
    alpha, res = _polish_root(alpha, F, residual, jacobian)

    full = np.zeros(k)
    full[live] = alpha
    w = np.zeros(N)
    w[sel] = g(fs * (zs @ full)) / ps
    return WeightSet(variant, w, full, aux.within, it, res, g.name, z, factor,
                     dropped=tuple(int(c) for c in np.flatnonzero(dead)))


def within_stratum(weights_op, sample, aux, **kwargs) -> WeightSet:
    """Run a weight routine on the within-stratum expansion of ``aux``."""
    aux = dataclasses.replace(aux, mode=AuxMode.WITHIN_STRATUM)
    return weights_op(sample, aux, **kwargs)


def adjust_weights(sample, method="plain", aux=None, g=None, within=False,
                   link=None) -> WeightSet:
    """Dispatch on the method tag (``plain``, ``e``, ``c``, ``mc``, ``cc``)."""
    method = Method(method)
    if method is Method.PLAIN:
        return plain_weights(sample)
    if aux is None:
        raise DataError(f"method {method.value} needs an auxiliary map")
    mode = AuxMode.WITHIN_STRATUM if within else AuxMode.POOLED
    aux = dataclasses.replace(aux, mode=mode)
    if method is Method.ESTIMATED:
        aux = dataclasses.replace(aux, include_stratum_indicators=True)
        return fit_estimated_weights(sample, aux, link)
    return solve_calibration(sample, aux, g, method)

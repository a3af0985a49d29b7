"""Asymptotic variances of weighted likelihood estimators.

Population moments are replaced by moments of a supplied draw set (an
equal- or explicitly-weighted sample standing in for ``P_0``). Because
every quantity is computed from the same empirical measure, the algebraic
relations between the without-replacement and Bernoulli variances, and
between plain and adjusted weights, hold to rounding error.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .exceptions import DataError, EmptyStratumError, SingularMatrixError

__all__ = [
    "DrawSet",
    "VarianceReport",
    "projection",
    "q_project",
    "sigma_totals",
    "corollary_identities",
    "loewner_leq",
]

METHODS = ("e", "c", "mc", "cc")


@dataclass(frozen=True, eq=False)
class DrawSet:
    """Draws of ``(ltilde, Z, stratum, pi0)`` from the population.

    ``gdot`` holds ``G_e'(Z' alpha_0)`` for estimated weights; ``weights``
    turns the draws into a weighted empirical measure (IPW plug-in use).
    """

    ltilde: np.ndarray
    z: np.ndarray
    stratum: np.ndarray
    pi0: np.ndarray
    gdot: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        lt = np.asarray(self.ltilde, float)
        n = lt.shape[0]
        object.__setattr__(self, "ltilde", lt.reshape(n, -1))
        object.__setattr__(self, "z", np.asarray(self.z, float).reshape(n, -1))
        object.__setattr__(self, "stratum", np.asarray(self.stratum, int).ravel())
        object.__setattr__(self, "pi0", np.asarray(self.pi0, float).ravel())
        if self.gdot is not None:
            object.__setattr__(self, "gdot", np.asarray(self.gdot, float).ravel())
        if self.weights is not None:
            object.__setattr__(self, "weights", np.asarray(self.weights, float).ravel())
        for name in ("stratum", "pi0", "gdot", "weights"):
            v = getattr(self, name)
            if v is not None and v.shape != (n,):
                raise DataError(f"{name} has {v.shape[0]} entries, expected {n}")
        if np.any(self.pi0 <= 0) or np.any(self.pi0 > 1):
            raise DataError("pi0 must lie in (0, 1]")

    @property
    def n(self):
        return self.ltilde.shape[0]

    @property
    def n_strata(self):
        return int(self.stratum.max())

    @property
    def w(self):
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights / self.weights.sum()

    def fingerprint(self):
        h = hashlib.sha256()
        for a in (self.ltilde, self.z, self.stratum, self.pi0, self.gdot, self.weights):
            if a is not None:
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def restrict(self, mask):
        sub = lambda a: None if a is None else a[mask]
        return DrawSet(self.ltilde[mask], self.z[mask], self.stratum[mask],
                       self.pi0[mask], sub(self.gdot), sub(self.weights))


def _wmean(w, a):
    return np.tensordot(w, a, axes=(0, 0))


def projection(ltilde, z, a, b, c, w):
    """``P[a l z'] {P[b z z']}^{-1} c z`` under the measure with masses ``w``.

    A factor ``b`` that vanishes everywhere (no subsampled draws) gives a
    zero projection.
    """
    if not np.any(np.asarray(b) * w != 0):
        return np.zeros_like(ltilde)
    A =_wmean(w, (a[:, None] * ltilde)[:, :, None] * z[:, None, :])
    gram = _wmean(w, (b[:, None] * z)[:, :, None] * z[:, None, :])
    if gram.size == 0 or np.linalg.cond(gram) > 1e13:
        raise SingularMatrixError("singular Gram matrix in projection")
    coef = np.linalg.solve(gram, A.T)  # k x p
    return (c[:, None] * z) @ coef


def _weights_for(method, pi0, gdot):
    one = np.ones_like(pi0)
    if method == "c":
        return one, one, one
    if method in ("mc", "cc"):
        f = 1.0 / pi0 - 1.0
        return f, f, one
    if method == "e":
        if gdot is None:
            raise DataError("estimated-weights projection needs gdot")
        active = pi0 < 1.0
        p = np.where(active, pi0, 0.5)
        a = np.where(active, gdot / p, 0.0)
        b = np.where(active, gdot ** 2 / (p * (1 - p)), 0.0)
        c = np.where(active, gdot / (1 - p), 0.0)
        return a, b, c
    raise ValueError(f"unknown method {method!r}")


def _estimated_design(d: DrawSet, within):
    """Binary-regression design for ``e``: stratum indicators (pooled) or an
    intercept (within a stratum) ahead of the auxiliaries."""
    if within:
        return np.column_stack([np.ones(d.n), d.z])
    strata = [j for j in range(1, d.n_strata + 1)
              if np.any((d.stratum == j) & (d.pi0 < 1))]
    ind = [(d.stratum == j).astype(float) for j in strata]
    return np.column_stack(ind + [d.z])


def _project_pooled(method, d: DrawSet, w):
    z = _estimated_design(d, False) if method == "e" else d.z
    if method == "cc":
        z = z - _wmean(w, z)
    a, b, c = _weights_for(method, d.pi0, d.gdot)
    return projection(d.ltilde, z, a, b, c, w)


def q_project(method, draws: DrawSet, within=False):
    """Projected values ``Q_# ltilde`` for every draw.

    Pooled mode uses the across-strata operators. Within-stratum mode uses
    the per-stratum operators ``Q^(j)``: an ``L2(P_{0|j})`` projection onto
    ``Z`` for ``c`` and ``mc`` (the factor ``1/pi0 - 1`` is constant in a
    stratum), onto ``Z - E_j Z`` for ``cc``, and onto ``G_e' (1, Z)`` for
    ``e``.

    For ``e`` the regression design is built as in estimated weights:
    stratum indicators (pooled) or an intercept (within) are prepended to
    ``Z``, so ``draws.z`` should hold the auxiliaries only.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    w = draws.w
    if not within:
        return _project_pooled(method, draws, w)
    out = np.zeros_like(draws.ltilde)
    for j in range(1, draws.n_strata + 1):
        rows = draws.stratum == j
        if not rows.any():
            raise EmptyStratumError(f"stratum {j} has no draws")
        sub = draws.restrict(rows)
        wj = w[rows] / w[rows].sum()
        z = _estimated_design(sub, True) if method == "e" else sub.z
        if method == "cc":
            z = z - _wmean(wj, z)
        if method == "e":
            a, b, c = _weights_for("e", sub.pi0, sub.gdot)
            if not np.any(b > 0):
                continue
        else:
            a = b = c = np.ones(rows.sum())
        out[rows] = projection(sub.ltilde, z, a, b, c, wj)
    return out


@dataclass(frozen=True)
class StratumMoments:
    nu: float
    p: float
    mean: np.ndarray
    second: np.ndarray

    @property
    def var(self):
        return self.second - np.outer(self.mean, self.mean)

    @property
    def factor(self):
        return self.nu * (1.0 - self.p) / self.p


@dataclass(frozen=True, eq=False)
class MethodTerms:
    sigma: np.ndarray
    sigma_bern: np.ndarray
    residual: tuple
    projected: tuple
    bernoulli_gain: np.ndarray


@dataclass(frozen=True, eq=False)
class VarianceReport:
    I0_inv: np.ndarray
    strata: tuple
    sigma: np.ndarray
    sigma_bern: np.ndarray
    methods: Dict[str, MethodTerms] = field(default_factory=dict)
    within: bool = False
    fingerprint: str = ""

    def total(self, method="plain", design="wor"):
        if method == "plain":
            return self.sigma if design == "wor" else self.sigma_bern
        terms = self.methods[method]
        return terms.sigma if design == "wor" else terms.sigma_bern

    def to_dict(self):
        mom = lambda s: {"nu": s.nu, "p": s.p, "mean": s.mean.tolist(),
                         "second_moment": s.second.tolist(),
                         "variance": s.var.tolist()}
        return {
            "within_stratum": self.within,
            "draw_fingerprint": self.fingerprint,
            "I0_inv": self.I0_inv.tolist(),
            "strata": [mom(s) for s in self.strata],
            "Sigma": self.sigma.tolist(),
            "Sigma_Bern": self.sigma_bern.tolist(),
            "gap_wor_vs_bern": (self.sigma_bern - self.sigma).tolist(),
            "methods": {
                m: {"Sigma": t.sigma.tolist(),
                    "Sigma_Bern": t.sigma_bern.tolist(),
                    "gain_over_plain_wor": (self.sigma - t.sigma).tolist(),
                    "gain_over_plain_bern": (self.sigma_bern - t.sigma_bern).tolist(),
                    "residual_strata": [mom(s) for s in t.residual]}
                for m, t in self.methods.items()},
        }


def _stratum_moments(values, draws, w, p):
    out = []
    for j in range(1, len(p) + 1):
        rows = draws.stratum == j
        nu = float(w[rows].sum())
        wj = w[rows] / nu
        v = values[rows]
        out.append(StratumMoments(nu, float(p[j - 1]), _wmean(wj, v),
                                  _wmean(wj, v[:, :, None] * v[:, None, :])))
    return tuple(out)


def _totals(I0_inv, moments):
    wor = I0_inv + sum(s.factor * s.var for s in moments)
    bern = I0_inv + sum(s.factor * s.second for s in moments)
    return wor, bern


def _stratum_p(draws):
    J = draws.n_strata
    p = np.empty(J)
    for j in range(1, J + 1):
        vals = draws.pi0[draws.stratum == j]
        if len(vals) == 0:
            raise EmptyStratumError(f"stratum {j} has no draws")
        if np.ptp(vals) > 0:
            raise DataError(f"pi0 not constant within stratum {j}")
        p[j - 1] = vals[0]
    return p


def sigma_totals(draws: DrawSet, methods=None, within=False) -> VarianceReport:
    """Evaluate the plain and adjusted-weight variance totals on ``draws``.

    ``Sigma = I0^{-1} + sum_j nu_j (1-p_j)/p_j Var_j(ltilde)`` without
    replacement; the Bernoulli total uses the raw second moment instead.
    Adjusted methods replace ``ltilde`` by ``ltilde - Q_# ltilde``.
    ``I0^{-1}`` is taken as the second moment of ``ltilde``.
    """
    if methods is None:
        methods = [m for m in METHODS if m != "e" or draws.gdot is not None]
    w = draws.w
    p = _stratum_p(draws)
    lt = draws.ltilde
    I0_inv = _wmean(w, lt[:, :, None] * lt[:, None, :])
    base = _stratum_moments(lt, draws, w, p)
    sigma, sigma_bern = _totals(I0_inv, base)
    terms = {}
    ratio = (1.0 - draws.pi0) / draws.pi0
    for m in methods:
        q = q_project(m, draws, within)
        resid = _stratum_moments(lt - q, draws, w, p)
        proj = _stratum_moments(q, draws, w, p)
        s, sb = _totals(I0_inv, resid)
        gain = _wmean(w, ratio[:, None, None] * q[:, :, None] * q[:, None, :])
        terms[m] = MethodTerms(s, sb, resid, proj, gain)
    return VarianceReport(I0_inv, base, sigma, sigma_bern, terms, within,
                          draws.fingerprint())


def corollary_identities(report: VarianceReport, other: VarianceReport = None):
    """Residual sup-norms of the design and weight-adjustment identities.

    Keys:

    * ``design_gap/<m>`` -- WOR total equals the Bernoulli total minus
      ``sum_j nu_j (1-p_j)/p_j (E_j r)^2`` (``r`` the relevant residual);
    * ``bernoulli_gain/<m>`` for ``e, mc, cc`` -- Bernoulli adjusted total
      equals the plain one minus ``Var((xi - pi0)/pi0 * Q ltilde)``;
    * ``within_bernoulli_gain/<m>`` and ``within_centered_gain`` for
      within-stratum reports -- the stratum-wise forms of the same gains.

    ``Var((xi - pi0)/pi0 * Q ltilde)`` is evaluated conditionally on ``V``,
    i.e. as ``E[(1 - pi0)/pi0 (Q ltilde)^2]``.
    """
    reports = [report] + ([other] if other is not None else [])
    if len({r.fingerprint for r in reports}) != 1:
        raise DataError("reports were built from different draw sets")
    out = {}
    sup = lambda a: float(np.max(np.abs(a)))
    for r in reports:
        tag = "within_" if r.within else ""
        out[f"{tag}design_gap/plain"] = sup(
            r.sigma - (r.sigma_bern - sum(s.factor * np.outer(s.mean, s.mean)
                                          for s in r.strata)))
        for m, t in r.methods.items():
            out[f"{tag}design_gap/{m}"] = sup(
                t.sigma - (t.sigma_bern - sum(s.factor * np.outer(s.mean, s.mean)
                                              for s in t.residual)))
            if m in ("e", "mc", "cc"):
                out[f"{tag}bernoulli_gain/{m}"] = sup(
                    t.sigma_bern - (r.sigma_bern - t.bernoulli_gain))
            if r.within:
                out[f"within_stratum_gain_bern/{m}"] = sup(
                    t.sigma_bern - (r.sigma_bern - sum(
                        s.factor * s.second for s in t.projected)))
                if m == "cc":
                    out["within_centered_gain"] = sup(
                        t.sigma - (r.sigma - sum(s.factor * s.var
                                                 for s in t.projected)))
    return out


def loewner_leq(a, b, tol=1e-10):
    """``a <= b`` in Loewner order up to ``tol`` on the eigenvalues of ``b - a``."""
    d = np.asarray(b) - np.asarray(a)
    d = 0.5 * (d + d.T)
    return bool(np.min(np.linalg.eigvalsh(np.atleast_2d(d))) >= -tol)

"""Shared data model for two-phase stratified samples.

Phase-I records carry ``(y, delta, u)`` for every unit; the expensive
covariates ``x`` exist only for units drawn at phase II. Samples are stored
column-wise as read-only numpy arrays. Stratum labels are 1-based
(``1..J``) everywhere in the public API.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import DataError, EmptyStratumError

__all__ = [
    "Design",
    "DesignSpec",
    "PhaseOneRecord",
    "TwoPhaseSample",
    "AuxiliaryMap",
    "AuxMode",
    "StepFunction",
    "evaluate_step",
    "build_auxiliary",
    "identity_builder",
]

DEFAULT_AUX_BOUND = 1e6


class Design(str, enum.Enum):
    WITHOUT_REPLACEMENT = "wor"
    BERNOULLI = "bernoulli"


def _readonly(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DesignSpec:
    """Stratification rule, sampling fractions and phase-II design.

    Parameters
    ----------
    n_strata : int
        Number of strata ``J``.
    stratum_rule : callable
        ``rule(y, delta, u) -> labels`` evaluated on whole columns
        (``y`` and ``delta`` of shape ``(N,)``, ``u`` of shape ``(N, m)``);
        must return integer labels in ``1..J``.
    p : sequence of float
        Target sampling fraction per stratum.
    design : Design
    floor : float
        Minimum admissible sampling fraction.
    """

    n_strata: int
    stratum_rule: Callable
    p: tuple
    design: Design = Design.WITHOUT_REPLACEMENT
    floor: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        object.__setattr__(self, "design", Design(self.design))
        if self.n_strata < 1:
            raise DataError("n_strata must be >= 1")
        if len(self.p) != self.n_strata:
            raise DataError(
                f"got {len(self.p)} sampling fractions for {self.n_strata} strata")
        if not 0 < self.floor <= 1:
            raise DataError("floor must lie in (0, 1]")
        for j, pj in enumerate(self.p, start=1):
            if not self.floor <= pj <= 1.0:
                raise DataError(
                    f"sampling fraction p_{j}={pj} outside [{self.floor}, 1]")

    @classmethod
    def cut_on_u(cls, cuts, p, column=0, design=Design.WITHOUT_REPLACEMENT):
        """Strata ``1 + #{c in cuts : u[:, column] > c}``."""
        cuts = np.sort(np.asarray(cuts, dtype=float))

        def rule(y, delta, u):
            return 1 + np.searchsorted(cuts, u[:, column], side="left")

        return cls(len(cuts) + 1, rule, tuple(p), design)

    @classmethod
    def on_delta(cls, p, design=Design.WITHOUT_REPLACEMENT):
        """Two strata: censored (stratum 1) and failures (stratum 2)."""

        def rule(y, delta, u):
            return 1 + np.asarray(delta, dtype=int)

        return cls(2, rule, tuple(p), design)

    def with_design(self, design):
        return DesignSpec(self.n_strata, self.stratum_rule, self.p,
                          Design(design), self.floor)

    def assign(self, y, delta, u):
        """Evaluate the stratum rule and check that it is total."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        u = np.asarray(u, dtype=float).reshape(len(y), -1)
        labels = np.asarray(self.stratum_rule(y, np.asarray(delta), u))
        if labels.shape != y.shape:
            raise DataError("stratum rule returned the wrong shape")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DataError("stratum rule returned non-integer labels")
            labels = labels.astype(int)
        bad = (labels < 1) | (labels > self.n_strata)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(
                f"record {i} mapped to stratum {labels[i]} outside 1..{self.n_strata}")
        return labels.astype(int)


@dataclass(frozen=True)
class PhaseOneRecord:
    y: float
    delta: int
    u: tuple
    stratum: int


@dataclass(frozen=True, eq=False)
class TwoPhaseSample:
    """A phase-I sample with phase-II selection indicators.

    ``x`` has ``NaN`` rows for unselected units. ``x_complete`` holds the
    full covariate matrix and is only present for simulated data; it is what
    makes the complete-data decomposition of the IPW process computable.
    """

    y: np.ndarray
    delta: np.ndarray
    u: np.ndarray
    stratum: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    pi0: np.ndarray
    n_strata: int
    design: Design = Design.WITHOUT_REPLACEMENT
    ids: Optional[np.ndarray] = None
    x_complete: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, y, delta, u, stratum, xi, x, n_strata=None,
                    design=Design.WITHOUT_REPLACEMENT, pi0=None, ids=None,
                    x_complete=None):
        y = np.asarray(y, dtype=float).ravel()
        N = len(y)
        if N == 0:
            raise DataError("empty sample")
        delta = np.asarray(delta).ravel()
        if delta.shape != (N,) or not np.isin(delta, (0, 1)).all():
            raise DataError("delta must be a 0/1 vector matching y")
        if np.any(~np.isfinite(y)) or np.any(y < 0):
            raise DataError("y must be finite and nonnegative")
        u = np.asarray(u, dtype=float)
        u = u.reshape(N, -1) if u.size else np.zeros((N, 0))
        stratum = np.asarray(stratum).ravel().astype(int)
        J = int(n_strata) if n_strata is not None else int(stratum.max())
        if stratum.shape != (N,) or stratum.min() < 1 or stratum.max() > J:
            raise DataError(f"stratum labels must lie in 1..{J}")
        xi = np.asarray(xi).ravel()
        if xi.shape != (N,) or not np.isin(xi, (0, 1)).all():
            raise DataError("xi must be a 0/1 vector matching y")
        xi = xi.astype(int)
        x = np.array(x, dtype=float).reshape(N, -1)
        sel = xi == 1
        missing = sel & ~np.all(np.isfinite(x), axis=1)
        if missing.any():
            i = int(np.flatnonzero(missing)[0])
            raise DataError(f"row {i + 1}: selected record has missing x")
        x[~sel] = np.nan
        Nj = np.bincount(stratum, minlength=J + 1)[1:]
        if np.any(Nj == 0):
            raise EmptyStratumError(
                f"empty strata: {[j + 1 for j in np.flatnonzero(Nj == 0)]}")
        nj = np.bincount(stratum, weights=xi, minlength=J + 1)[1:].astype(int)
        if pi0 is None:
            if np.any(nj == 0):
                raise DataError("a stratum has no phase-II records")
            pi0 = (nj / Nj)[stratum - 1]
        pi0 = np.asarray(pi0, dtype=float).ravel()
        if pi0.shape != (N,) or np.any(~(pi0 > 0)) or np.any(pi0 > 1):
            raise DataError("inclusion probabilities must lie in (0, 1]")
        if ids is None:
            ids = np.arange(1, N + 1)
        if x_complete is not None:
            x_complete = _readonly(np.asarray(x_complete, float).reshape(N, -1))
        return cls(_readonly(y), _readonly(delta.astype(int)), _readonly(u),
                   _readonly(stratum), _readonly(xi), _readonly(x),
                   _readonly(pi0), J, Design(design), _readonly(ids), x_complete)

    # counts ---------------------------------------------------------------
    @property
    def N(self):
        return len(self.y)

    @property
    def N_j(self):
        return np.bincount(self.stratum, minlength=self.n_strata + 1)[1:]

    @property
    def n_j(self):
        return np.bincount(self.stratum, weights=self.xi,
                           minlength=self.n_strata + 1)[1:].astype(int)

    @property
    def nu_hat(self):
        return self.N_j / self.N

    @property
    def p_j(self):
        """Per-stratum inclusion probability (read off ``pi0``)."""
        out = np.empty(self.n_strata)
        for j in range(self.n_strata):
            out[j] = self.pi0[self.stratum == j + 1][0]
        return out

    @property
    def selected(self):
        return self.xi == 1

    @property
    def n_covariates(self):
        return self.x.shape[1]

    def record(self, i):
        return PhaseOneRecord(float(self.y[i]), int(self.delta[i]),
                              tuple(self.u[i]), int(self.stratum[i]))

    @property
    def records(self):
        return [self.record(i) for i in range(self.N)]

    def subset(self, mask):
        """Restrict to the phase-I records in ``mask`` (keeps ``pi0``)."""
        mask = np.asarray(mask, dtype=bool)
        xc = None if self.x_complete is None else self.x_complete[mask]
        labels = self.stratum[mask]
        present = np.unique(labels)
        relabel = np.zeros(self.n_strata + 1, dtype=int)
        relabel[present] = np.arange(1, len(present) + 1)
        return TwoPhaseSample.from_arrays(
            self.y[mask], self.delta[mask], self.u[mask], relabel[labels],
            self.xi[mask], self.x[mask], len(present), self.design,
            self.pi0[mask], self.ids[mask], xc)


class AuxMode(str, enum.Enum):
    POOLED = "pooled"
    WITHIN_STRATUM = "within"


def identity_builder(columns=None, intercept=False):
    """Builder returning selected ``u`` columns, optionally led by a 1."""

    def build(y, delta, u):
        z = u if columns is None else u[:, list(columns)]
        if intercept:
            z = np.column_stack([np.ones(len(y)), z])
        return z

    return build


@dataclass(frozen=True)
class AuxiliaryMap:
    """Map from phase-I observables to the auxiliary vector ``Z``.

    ``builder(y, delta, u)`` receives whole columns and returns an
    ``(N, k)`` array. In within-stratum mode each record's ``Z`` is placed in
    the block belonging to its stratum of a length ``J*k`` vector.
    """

    builder: Callable = field(default_factory=identity_builder)
    mode: AuxMode = AuxMode.POOLED
    include_stratum_indicators: bool = False
    k: Optional[int] = None
    bound: float = DEFAULT_AUX_BOUND

    def __post_init__(self):
        object.__setattr__(self, "mode", AuxMode(self.mode))

    @property
    def within(self):
        return self.mode is AuxMode.WITHIN_STRATUM

    def base_matrix(self, y, delta, u):
        """``Z`` before block placement, clamped to ``[-bound, bound]``."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        u = np.asarray(u, dtype=float).reshape(len(y), -1)
        z = np.asarray(self.builder(y, np.atleast_1d(delta), u), dtype=float)
        z = z.reshape(len(y), -1)
        if self.k is not None and z.shape[1] != self.k:
            raise DataError(
                f"auxiliary builder returned {z.shape[1]} columns, expected {self.k}")
        if not np.all(np.isfinite(z)):
            raise DataError("auxiliary builder returned non-finite values")
        if np.any(np.abs(z) > self.bound):
            warnings.warn(f"auxiliary values clamped to +/-{self.bound:g}",
                          RuntimeWarning, stacklevel=2)
            z = np.clip(z, -self.bound, self.bound)
        return z

    def matrix(self, sample: TwoPhaseSample):
        z = self.base_matrix(sample.y, sample.delta, sample.u)
        if self.within:
            return place_blocks(z, sample.stratum, sample.n_strata)
        return z


def place_blocks(z, stratum, n_strata):
    """Within-stratum expansion ``Z -> (Z 1{j=1}, ..., Z 1{j=J})``."""
    n, k = z.shape
    out = np.zeros((n, n_strata * k))
    for j in range(n_strata):
        rows = stratum == j + 1
        out[rows, j * k:(j + 1) * k] = z[rows]
    return out


def build_auxiliary(aux: AuxiliaryMap, rec: PhaseOneRecord, n_strata=None):
    """Auxiliary vector of one record (``Z`` or its within-stratum ``Z~``)."""
    z = aux.base_matrix([rec.y], [rec.delta], np.asarray(rec.u, float)[None, :])
    if aux.within:
        if n_strata is None:
            raise DataError("n_strata required in within-stratum mode")
        z = place_blocks(z, np.array([rec.stratum]), n_strata)
    return z[0]


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous nondecreasing step function, zero before the first jump."""

    jump_points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.jump_points, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.shape != v.shape:
            raise DataError("jump_points and values differ in length")
        if np.any(np.diff(t) <= 0):
            raise DataError("jump points must be strictly increasing")
        if np.any(np.diff(v) < 0) or np.any(v < 0):
            raise DataError("values must be nonnegative and nondecreasing")
        object.__setattr__(self, "jump_points", _readonly(t))
        object.__setattr__(self, "values", _readonly(v))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_points, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        return out if out.ndim else float(out)

    @property
    def increments(self):
        return np.diff(self.values, prepend=0.0)

    def to_pairs(self):
        return [[float(a), float(b)] for a, b in zip(self.jump_points, self.values)]

    @classmethod
    def from_increments(cls, points, increments):
        return cls(points, np.cumsum(increments))

    @classmethod
    def from_callable(cls, fn, grid):
        """Discretize a continuous nondecreasing function on ``grid``."""
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.maximum.accumulate(np.maximum(fn(grid), 0.0)))


def evaluate_step(f: StepFunction, t):
    if np.any(np.asarray(t) < 0):
        raise DataError("evaluation point must be nonnegative")
    return f(t)

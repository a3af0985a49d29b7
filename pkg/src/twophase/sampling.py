"""Phase-II selection and inverse-probability-weighted empirical means."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Design, DesignSpec, PhaseOneRecord, TwoPhaseSample
from .exceptions import DataError, EmptyStratumError, SamplingFractionError

__all__ = [
    "RngStreams",
    "Strata",
    "Phase2Draw",
    "IPWProcess",
    "stratify",
    "draw_phase2",
    "simulate_sample",
    "ipw_mean",
    "ipw_process",
]

# guards floor(N_j p_j) against products like 100 * 0.29 = 28.999999999999996
_FLOOR_SLACK = 1e-9


class RngStreams:
    """Named, order-independent random streams for one replication.

    ``generator(purpose, index)`` always returns the same stream for the same
    ``(seed, replication, purpose, index)``, whatever else has been drawn.
    """

    def __init__(self, seed, replication=0):
        self.seed = int(seed)
        self.replication = int(replication)

    def generator(self, purpose, index=0):
        key = (self.replication, zlib.crc32(purpose.encode()), int(index))
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def __repr__(self):
        return f"RngStreams(seed={self.seed}, replication={self.replication})"


@dataclass(frozen=True)
class Strata:
    labels: np.ndarray
    counts: np.ndarray

    @property
    def N(self):
        return int(self.counts.sum())


@dataclass(frozen=True)
class Phase2Draw:
    xi: np.ndarray
    n_j: np.ndarray
    pi0: np.ndarray


def stratify(records, spec: DesignSpec) -> Strata:
    """Assign phase-I records to strata and count them.

    ``records`` is either a sequence of :class:`PhaseOneRecord` or a tuple
    of columns ``(y, delta, u)``.
    """
    if isinstance(records, tuple) and len(records) == 3:
        y, delta, u = records
        y = np.atleast_1d(np.asarray(y, float))
    else:
        records = list(records)
        if not records or not isinstance(records[0], PhaseOneRecord):
            raise DataError("stratify needs a nonempty sequence of records")
        y = np.array([r.y for r in records], float)
        delta = np.array([r.delta for r in records], int)
        u = np.array([r.u for r in records], float).reshape(len(records), -1)
    if len(y) == 0:
        raise DataError("no phase-I records")
    labels = spec.assign(y, delta, np.asarray(u, float).reshape(len(y), -1))
    counts = np.bincount(labels, minlength=spec.n_strata + 1)[1:]
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise EmptyStratumError(f"empty strata: {[int(j) + 1 for j in empty]}")
    return Strata(labels, counts)


def _partial_fisher_yates(n_total, n_pick, rng):
    slots = list(range(n_total))
    picks = rng.integers(np.arange(n_pick), n_total).tolist()
    for i, j in enumerate(picks):
        slots[i], slots[j] = slots[j], slots[i]
    return slots[:n_pick]


def _stream(rng, purpose, j):
    if isinstance(rng, RngStreams):
        return rng.generator(purpose, j)
    return rng


def draw_phase2(stratum, spec: DesignSpec, rng, purpose="phase2") -> Phase2Draw:
    """Draw the phase-II selection indicators.

    Without replacement, stratum ``j`` gets exactly ``floor(N_j p_j)``
    selections placed uniformly among its members. Under Bernoulli sampling
    each unit is selected independently with probability ``p_j`` and
    ``pi0`` is ``p_j`` (the design probability, not the realized fraction).

    ``rng`` is an :class:`RngStreams` (one stream per stratum, the
    reproducible choice) or a single ``numpy.random.Generator`` consumed
    stratum by stratum.
    """
    stratum = np.asarray(stratum, dtype=int)
    J = spec.n_strata
    counts = np.bincount(stratum, minlength=J + 1)[1:]
    if np.any(counts == 0):
        raise EmptyStratumError("cannot sample from an empty stratum")
    xi = np.zeros(len(stratum), dtype=int)
    n_j = np.zeros(J, dtype=int)
    pi0 = np.empty(len(stratum))
    for j in range(J):
        members = np.flatnonzero(stratum == j + 1)
        gen = _stream(rng, purpose, j)
        p = spec.p[j]
        if spec.design is Design.WITHOUT_REPLACEMENT:
            n = int(math.floor(counts[j] * p + _FLOOR_SLACK))
            if n == 0:
                raise SamplingFractionError(
                    f"stratum {j + 1}: floor({counts[j]} * {p}) = 0 selections")
            if n == counts[j]:
                xi[members] = 1
            else:
                xi[members[_partial_fisher_yates(counts[j], n, gen)]] = 1
            n_j[j] = n
            pi0[members] = n / counts[j]
        else:
            pick = gen.random(counts[j]) < p
            xi[members[pick]] = 1
            n_j[j] = int(pick.sum())
            pi0[members] = p
    return Phase2Draw(xi, n_j, pi0)


def simulate_sample(y, delta, u, x_complete, spec: DesignSpec, rng,
                    purpose="phase2") -> TwoPhaseSample:
    """Stratify complete simulated data and draw phase II."""
    strata = stratify((y, delta, u), spec)
    draw = draw_phase2(strata.labels, spec, rng, purpose)
    x_complete = np.asarray(x_complete, float).reshape(len(strata.labels), -1)
    return TwoPhaseSample.from_arrays(
        y, delta, u, strata.labels, draw.xi, x_complete, spec.n_strata,
        spec.design, draw.pi0, x_complete=x_complete)


def _eval(sample, f, rows, use_complete=False):
    x = sample.x_complete if use_complete else sample.x
    vals = f(x[rows], sample.y[rows], sample.delta[rows], sample.u[rows])
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 0:
        vals = np.full(int(np.count_nonzero(rows)), float(vals))
    return vals


def _is_wor_exact(sample):
    nj, Nj = sample.n_j, sample.N_j
    if np.any(nj == 0):
        return False
    return bool(np.all(sample.pi0 == (nj / Nj)[sample.stratum - 1]))


def ipw_mean(sample: TwoPhaseSample, f, weights=None):
    """IPW empirical mean ``(1/N) sum_i w_i f(X_i, V_i)``.

    ``f(x, y, delta, u)`` is evaluated on the selected rows only. Without
    ``weights`` the plain weights ``xi / pi0`` are used; when ``pi0`` equals
    ``n_j/N_j`` the sum is formed stratum by stratum as ``N_j`` times the
    phase-II stratum mean, so constants are reproduced exactly.
    """
    sel = sample.selected
    if weights is None and np.any(sample.pi0[sel] <= 0):
        raise DataError("zero inclusion probability among selected records")
    vals = _eval(sample, f, sel)
    if weights is not None:
        w = np.asarray(weights, float)[sel]
        return np.tensordot(w, vals, axes=(0, 0)) / sample.N
    if _is_wor_exact(sample):
        strat = sample.stratum[sel]
        total = 0.0
        for j in range(sample.n_strata):
            block = vals[strat == j + 1]
            total = total + sample.N_j[j] * (_fsum(block) / len(block))
        return total / sample.N
    w = 1.0 / sample.pi0[sel]
    return np.tensordot(w, vals, axes=(0, 0)) / sample.N


def _fsum(block):
    if block.ndim == 1:
        return math.fsum(block)
    return np.array([math.fsum(c) for c in block.reshape(len(block), -1).T]
                    ).reshape(block.shape[1:])


@dataclass(frozen=True)
class IPWProcess:
    """``sqrt(N)(P_N^pi f - P_0 f)`` and, when available, its two-part split."""

    total: float
    phase1: Optional[float] = None
    phase2: Optional[np.ndarray] = None


def ipw_process(sample: TwoPhaseSample, f, p0f, decompose=False):
    """IPW empirical process at ``f`` given the reference value ``P_0 f``.

    With ``decompose=True`` (simulation data only) also returns the phase-I
    term ``sqrt(N)(P_N f - P_0 f)`` and per-stratum phase-II terms
    ``N^{-1/2} sum_{i in j} (xi_i/pi0_i - 1) f_i``; without replacement the
    latter equal ``sqrt(N_j/N) (N_j/n_j) G^xi_{j,N_j} f``.
    """
    rootN = math.sqrt(sample.N)
    total = rootN * (ipw_mean(sample, f) - p0f)
    if not decompose:
        return IPWProcess(total)
    if sample.x_complete is None:
        raise DataError("decomposition needs complete-data covariates")
    everyone = np.ones(sample.N, dtype=bool)
    vals = _eval(sample, f, everyone, use_complete=True)
    phase1 = rootN * (np.mean(vals, axis=0) - p0f)
    ratio = sample.xi / sample.pi0 - 1.0
    phase2 = np.array([
        np.tensordot(ratio[sample.stratum == j + 1],
                     vals[sample.stratum == j + 1], axes=(0, 0)) / rootN
        for j in range(sample.n_strata)])
    return IPWProcess(total, phase1, phase2)

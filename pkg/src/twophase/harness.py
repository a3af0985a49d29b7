"""Monte Carlo experiments for two-phase weighted likelihood estimators.

A configuration fixes the data-generating process, the stratified design,
the weighting methods and the grid of phase-I sizes. Each replication draws
one phase-I population per ``N``, shares it across designs and methods
(common random numbers) and records the fits. Replications use pre-split
random streams, so results do not depend on the parallel schedule.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import stats

from .asymptotics import DrawSet, sigma_totals
from .cox_interval import CovariateLaw, fit_cox_interval, l2_distance, \
    oracle_efficient_score_interval
from .cox_right import efficient_score_right, fit_cox_right
from .data import AuxiliaryMap, AuxMode, Design, DesignSpec, StepFunction, TwoPhaseSample
from .exceptions import DataError, TwoPhaseError
from .links import get_g_family
from .sampling import RngStreams, simulate_sample
from .weights import Method, adjust_weights

__all__ = [
    "SCHEMA_VERSION",
    "McConfig",
    "default_config",
    "MethodSpec",
    "Population",
    "McReport",
    "generate_population",
    "oracle_draws",
    "oracle_sigma",
    "run_experiment",
    "check_rates",
    "check_report",
    "ipw_cdf_discrepancy",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODELS = ("cox_right", "cox_interval", "mean_toy")
AUX_COLUMNS = ("u", "delta", "y", "logy")


# configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    """One weighting method: ``name[/within][@g_family]``."""

    name: str
    within: bool = False
    g_family: Optional[str] = None

    @classmethod
    def parse(cls, text):
        text = str(text)
        g = None
        if "@" in text:
            text, g = text.split("@", 1)
        parts = text.split("/")
        name = Method(parts[0]).value
        within = False
        for flag in parts[1:]:
            if flag != "within":
                raise DataError(f"unknown method modifier {flag!r}")
            within = True
        if name == "plain" and within:
            raise DataError("plain weights have no within-stratum variant")
        return cls(name, within, g)

    @property
    def label(self):
        out = self.name + ("/within" if self.within else "")
        return out + (f"@{self.g_family}" if self.g_family else "")


_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "model": "cox_right",
    "theta0": [1.0],
    "baseline": {"family": "weibull", "scale": 1.0, "shape": 1.0},
    "covariates": {"lower": [0.0], "upper": [1.0]},
    "aux_noise": 0.3,
    "auxiliary": ["u", "y"],
    "censoring": {"tau": 3.0, "atom": 0.3},
    "monitoring": {"lower": 0.2, "upper": 2.0},
    "strata": {"on": "delta", "cuts": [], "p": [0.8, 0.25]},
    "designs": ["wor", "bernoulli"],
    "methods": ["plain"],
    "g_family": "trunclinear",
    "n_grid": [500, 2000, 4000],
    "replications": 1000,
    "seed": 1,
    "theta_box": 5.0,
    "oracle_draws": 200000,
    "metric_trim": 0.1,
    "failure_budget": 0.02,
}


@dataclass(frozen=True)
class McConfig:
    """Validated experiment configuration (see :data:`_DEFAULTS` for keys)."""

    schema_version: int
    model: str
    theta0: tuple
    baseline: dict
    covariates: dict
    aux_noise: float
    auxiliary: tuple
    censoring: dict
    monitoring: dict
    strata: dict
    designs: tuple
    methods: tuple
    g_family: str
    n_grid: tuple
    replications: int
    seed: int
    theta_box: float
    oracle_draws: int
    metric_trim: float
    failure_budget: float

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise DataError("configuration must be a JSON object")
        unknown = sorted(set(raw) - set(_DEFAULTS))
        if unknown:
            raise DataError(f"unknown configuration fields: {unknown}")
        if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise DataError(f"unsupported schema_version {raw['schema_version']!r}; "
                            f"expected {SCHEMA_VERSION}")
        merged = {}
        for key, default in _DEFAULTS.items():
            value = raw.get(key, default)
            if isinstance(default, dict):
                if not isinstance(value, dict):
                    raise DataError(f"{key} must be an object")
                extra = sorted(set(value) - set(default))
                if extra:
                    raise DataError(f"unknown fields in {key}: {extra}")
                value = {**default, **value}
            merged[key] = value
        try:
            cfg = cls(
                schema_version=int(merged["schema_version"]),
                model=str(merged["model"]),
                theta0=tuple(float(t) for t in merged["theta0"]),
                baseline=dict(merged["baseline"]),
                covariates={k: [float(v) for v in merged["covariates"][k]]
                            for k in ("lower", "upper")},
                aux_noise=float(merged["aux_noise"]),
                auxiliary=tuple(str(a) for a in merged["auxiliary"]),
                censoring={k: float(v) for k, v in merged["censoring"].items()},
                monitoring={k: float(v) for k, v in merged["monitoring"].items()},
                strata={"on": str(merged["strata"]["on"]),
                        "cuts": [float(c) for c in merged["strata"]["cuts"]],
                        "p": [float(p) for p in merged["strata"]["p"]]},
                designs=tuple(Design(d).value for d in merged["designs"]),
                methods=tuple(MethodSpec.parse(m).label for m in merged["methods"]),
                g_family=str(merged["g_family"]),
                n_grid=tuple(int(n) for n in merged["n_grid"]),
                replications=int(merged["replications"]),
                seed=int(merged["seed"]),
                theta_box=float(merged["theta_box"]),
                oracle_draws=int(merged["oracle_draws"]),
                metric_trim=float(merged["metric_trim"]),
                failure_budget=float(merged["failure_budget"]),
            )
        except (TypeError, ValueError, KeyError) as exc:
            raise DataError(f"invalid configuration: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"configuration is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self):
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def replace(self, **changes):
        return McConfig.from_dict({**self.to_dict(), **changes})

    @property
    def p(self):
        return len(self.theta0)

    def validate(self):
        if self.model not in MODELS:
            raise DataError(f"model must be one of {MODELS}")
        if self.replications < 1:
            raise DataError("replications must be at least 1")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise DataError("n_grid must be nonempty and strictly increasing")
        lo = np.asarray(self.covariates["lower"])
        hi = np.asarray(self.covariates["upper"])
        if lo.shape != (self.p,) or hi.shape != (self.p,) or np.any(hi <= lo):
            raise DataError("covariate box must match theta0 and have upper > lower")
        if np.any(np.abs(self.theta0) >= self.theta_box):
            raise DataError("theta0 must be interior to the theta box")
        if self.baseline.get("family") != "weibull":
            raise DataError("baseline family must be 'weibull'")
        if self.baseline["scale"] <= 0 or self.baseline["shape"] <= 0:
            raise DataError("Weibull scale and shape must be positive")
        if self.model == "cox_right":
            tau, atom = self.censoring["tau"], self.censoring["atom"]
            if tau <= 0 or not (0 < atom <= 1):
                raise DataError("censoring needs tau > 0 and an atom at tau "
                                "with mass in (0, 1]")
        if self.model == "cox_interval":
            if not (0 < self.monitoring["lower"] < self.monitoring["upper"]):
                raise DataError("monitoring support must be [l, u] with 0 < l < u")
        if not (0 <= self.metric_trim < 0.5):
            raise DataError("metric_trim must lie in [0, 0.5)")
        for a in self.auxiliary:
            if a not in AUX_COLUMNS:
                raise DataError(f"unknown auxiliary {a!r}; choose from {AUX_COLUMNS}")
        if self.strata["on"] not in ("u", "delta_u", "delta"):
            raise DataError("strata.on must be 'u', 'delta' or 'delta_u'")
        self.design_spec()
        get_g_family(self.g_family)
        for m in self.methods:
            spec = MethodSpec.parse(m)
            if spec.g_family:
                get_g_family(spec.g_family)

    # derived objects

    def design_spec(self, design="wor"):
        s = self.strata
        cuts = np.asarray(s["cuts"], float)
        if np.any(np.diff(cuts) <= 0):
            raise DataError("strata cuts must be increasing")
        design = Design(design)
        if s["on"] == "u":
            return DesignSpec.cut_on_u(cuts, s["p"], design=design)
        if s["on"] == "delta":
            return DesignSpec.on_delta(s["p"], design=design)
        # delta x u cells: 1..(len(cuts)+1) for delta = 0, then delta = 1
        m = len(cuts) + 1

        def rule(y, delta, u):
            return 1 + np.searchsorted(cuts, u[:, 0], side="right") + m * np.asarray(delta)

        return DesignSpec(2 * m, rule, tuple(s["p"]), design)

    def aux_map(self):
        names = self.auxiliary

        def build(y, delta, u):
            cols = {"u": lambda: u, "delta": lambda: np.asarray(delta, float)[:, None],
                    "y": lambda: np.asarray(y, float)[:, None],
                    "logy": lambda: np.log(np.asarray(y, float))[:, None]}
            return np.column_stack([cols[n]() for n in names])

        return AuxiliaryMap(build)

    def covariate_law(self, nodes=24):
        return CovariateLaw(tuple(self.covariates["lower"]),
                            tuple(self.covariates["upper"]), nodes)


def default_config(**changes) -> McConfig:
    return McConfig.from_dict({**_DEFAULTS, **changes})


# population ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Population:
    y: np.ndarray
    delta: np.ndarray
    u: np.ndarray
    x: np.ndarray
    t: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None


def baseline_hazard(cfg: McConfig):
    scale, shape = cfg.baseline["scale"], cfg.baseline["shape"]
    return lambda t: (np.asarray(t, float) / scale) ** shape


def generate_population(cfg: McConfig, N, rng) -> Population:
    """Complete data for ``N`` phase-I subjects.

    ``rng`` is a ``numpy.random.Generator``. Covariates are uniform on the
    configured box and ``U = X + noise``. Under ``cox_right`` the event time
    has cumulative hazard ``e^{theta0'x} Lambda0(t)`` and censoring is
    uniform on ``(0, tau)`` with an atom at ``tau``; under ``cox_interval``
    the monitoring time is uniform on ``[l, u]`` independent of ``X``.
    """
    p = cfg.p
    lo = np.asarray(cfg.covariates["lower"])
    hi = np.asarray(cfg.covariates["upper"])
    x = lo + (hi - lo) * rng.random((N, p))
    u = x + cfg.aux_noise * rng.standard_normal((N, p))
    if cfg.model == "mean_toy":
        return Population(u[:, 0].copy(), np.ones(N, int), u, x)
    scale, shape = cfg.baseline["scale"], cfg.baseline["shape"]
    e = rng.exponential(size=N)
    t = scale * (e * np.exp(-(x @ np.asarray(cfg.theta0)))) ** (1.0 / shape)
    if cfg.model == "cox_right":
        tau, atom = cfg.censoring["tau"], cfg.censoring["atom"]
        at_tau = rng.random(N) < atom
        c = np.where(at_tau, tau, tau * rng.random(N))
        y = np.minimum(t, c)
        delta = (t <= c).astype(int)
        return Population(y, delta, u, x, t, c)
    lo_y, hi_y = cfg.monitoring["lower"], cfg.monitoring["upper"]
    c = lo_y + (hi_y - lo_y) * rng.random(N)
    delta = (t <= c).astype(int)
    return Population(c, delta, u, x, t, c)


# oracle quantities -----------------------------------------------------------

class RightOracle:
    """True ``M_0, M_1`` and the discretized ``Lambda_0`` for right censoring."""

    def __init__(self, cfg: McConfig, grid_size=4000, nodes=24):
        self.cfg = cfg
        self.theta0 = np.asarray(cfg.theta0)
        self.lam0 = baseline_hazard(cfg)
        tau = cfg.censoring["tau"]
        self.tau = tau
        self.pts, self.wq = cfg.covariate_law(nodes).quadrature()
        grid = np.linspace(0, tau, grid_size + 1)[1:]
        # jumps at grid midpoints approximate integrals against dLambda0
        mids = grid - 0.5 * tau / grid_size
        self.step = StepFunction(mids, self.lam0(grid))

    def _censor_survival(self, s):
        s = np.asarray(s, float)
        tau, atom = self.tau, self.cfg.censoring["atom"]
        return np.where(s <= tau, atom + (1 - atom) * np.clip(1 - s / tau, 0, 1), 0.0)

    def M0(self, s):
        s = np.atleast_1d(np.asarray(s, float))
        c = np.exp(self.pts @ self.theta0)
        surv = np.exp(-np.outer(self.lam0(s), c))
        return (surv * (self.wq * c)).sum(1) * self._censor_survival(s)

    def M1(self, s):
        s = np.atleast_1d(np.asarray(s, float))
        c = np.exp(self.pts @ self.theta0)
        surv = np.exp(-np.outer(self.lam0(s), c))
        return (surv * (self.wq * c)) @ self.pts * self._censor_survival(s)[:, None]

    def score(self, y, delta, x):
        return efficient_score_right(y, delta, x, self.theta0, self.step, self.M0, self.M1)


def _oracle_score(cfg, pop, oracle=None):
    if cfg.model == "cox_right":
        oracle = oracle or RightOracle(cfg)
        return oracle.score(pop.y, pop.delta, pop.x)
    if cfg.model == "cox_interval":
        return oracle_efficient_score_interval(pop.y, pop.delta, pop.x, cfg.theta0,
                                               baseline_hazard(cfg), cfg.covariate_law())
    lo = np.asarray(cfg.covariates["lower"])
    hi = np.asarray(cfg.covariates["upper"])
    # mean model: ltilde = x - E X, written as a score with information 1/Var X
    return (pop.x - 0.5 * (lo + hi)) / ((hi - lo) ** 2 / 12)


def oracle_draws(cfg: McConfig, n=None, seed=None, method_gdot=True):
    """Large complete-data draw set of the efficient influence function.

    Returns ``(DrawSet, I0)`` where ``I0`` is the efficient information.
    """
    n = n or cfg.oracle_draws
    rng = RngStreams(cfg.seed if seed is None else seed, 0).generator("oracle")
    pop = generate_population(cfg, n, rng)
    lstar = _oracle_score(cfg, pop)
    I0 = lstar.T @ lstar / n
    ltilde = np.linalg.solve(I0, lstar.T).T
    spec = cfg.design_spec()
    stratum = spec.assign(pop.y, pop.delta, pop.u)
    p = np.asarray(spec.p)[stratum - 1]
    z = cfg.aux_map().base_matrix(pop.y, pop.delta, pop.u)
    # the logistic fit on stratum indicators and Z converges to pi0 itself
    gdot = p * (1 - p) if method_gdot else None
    return DrawSet(ltilde, z, stratum, p, gdot), I0


def oracle_sigma(cfg: McConfig, n=None, seed=None):
    """Asymptotic variances per method label and design from oracle draws."""
    draws, _ = oracle_draws(cfg, n, seed)
    pooled = sigma_totals(draws, within=False)
    within = sigma_totals(draws, within=True)
    out = {}
    for label in ("plain",) + tuple(MethodSpec.parse(m).label for m in cfg.methods):
        spec = MethodSpec.parse(label)
        for design in ("wor", "bernoulli"):
            rep = within if spec.within else pooled
            out[(spec.label, design)] = rep.total(spec.name, design).tolist()
    return out


# replications ----------------------------------------------------------------

def _fit(cfg, sample, spec: MethodSpec, aux):
    g = get_g_family(spec.g_family or cfg.g_family)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        weights = adjust_weights(sample, spec.name, aux, g=g, within=spec.within)
    if cfg.model == "cox_right":
        fit = fit_cox_right(sample, weights)
        return fit.theta_hat, np.diag(fit.sigma_hat), fit.lambda_hat
    if cfg.model == "cox_interval":
        fit = fit_cox_interval(sample, weights, box=cfg.theta_box)
        if fit.boundary:
            raise _Boundary("profile optimum on the theta box boundary")
        return fit.theta_hat, None, fit.lambda_hat
    w = weights.weights
    sel = sample.selected
    xs = sample.x[sel]
    theta = (w[sel] @ xs) / w[sel].sum()
    resid = xs - theta
    sig = (w[sel] @ resid ** 2) / sample.N
    for j in range(sample.n_strata):
        rows = sample.stratum[sel] == j + 1
        v = resid[rows]
        pj = sample.p_j[j]
        sig = sig + sample.nu_hat[j] * (1 - pj) / pj * v.var(axis=0)
    return theta, sig, None


class _Boundary(TwoPhaseError):
    pass


def _metric_grid(cfg):
    lo, hi = cfg.monitoring["lower"], cfg.monitoring["upper"]
    trim = cfg.metric_trim * (hi - lo)
    return np.linspace(lo + trim, hi - trim, 400)


def _replicate(args):
    cfg, N, rep = args
    streams = RngStreams(cfg.seed, rep)
    pop = generate_population(cfg, N, streams.generator(f"population/{N}"))
    aux = cfg.aux_map()
    theta0 = np.asarray(cfg.theta0)
    lam0 = baseline_hazard(cfg)
    grid = _metric_grid(cfg) if cfg.model == "cox_interval" else None
    lin = None
    if cfg.model != "cox_interval":
        lin = _linear_terms(cfg, pop)
    rows = []
    for design in cfg.designs:
        spec = cfg.design_spec(design)
        try:
            sample = simulate_sample(pop.y, pop.delta, pop.u, pop.x, spec, streams,
                                     purpose=f"phase2/{N}/{design}")
        except TwoPhaseError as exc:
            for m in cfg.methods:
                rows.append(_failure(N, rep, design, m, exc))
            continue
        for label in cfg.methods:
            mspec = MethodSpec.parse(label)
            try:
                theta, var, lam = _fit(cfg, sample, mspec, aux)
            except TwoPhaseError as exc:
                rows.append(_failure(N, rep, design, label, exc))
                continue
            z = math.sqrt(N) * (theta - theta0)
            row = {"N": N, "rep": rep, "design": design, "method": label,
                   "status": "ok", "message": "",
                   "theta_hat": theta.tolist(), "z": z.tolist(),
                   "sigma_hat": None if var is None else np.asarray(var).tolist(),
                   "covered": None, "metric": None, "linear": None}
            if var is not None:
                half = stats.norm.ppf(0.975) * np.sqrt(np.asarray(var) / N)
                row["covered"] = (np.abs(theta - theta0) <= half).tolist()
            if cfg.model == "cox_interval":
                row["metric"] = l2_distance(lam, lam0, grid)
            if lin is not None and mspec.name == "plain":
                w = np.where(sample.selected, 1.0 / sample.pi0, 0.0)
                row["linear"] = (math.sqrt(N) * (w @ lin) / N).tolist()
            rows.append(row)
    return rows


_ORACLE_CACHE = {}


def _linear_terms(cfg, pop):
    """Oracle efficient influence function ``ltilde_0`` at each record."""
    key = json.dumps(cfg.to_dict(), sort_keys=True)
    if key not in _ORACLE_CACHE:
        _, I0 = oracle_draws(cfg, n=min(cfg.oracle_draws, 50000))
        oracle = RightOracle(cfg) if cfg.model == "cox_right" else None
        _ORACLE_CACHE[key] = (I0, oracle)
    I0, oracle = _ORACLE_CACHE[key]
    lstar = _oracle_score(cfg, pop, oracle)
    return np.linalg.solve(I0, lstar.T).T


def _failure(N, rep, design, method, exc):
    log.info("replication %d (N=%d, %s, %s) failed: %s", rep, N, design, method, exc)
    return {"N": N, "rep": rep, "design": design, "method": method,
            "status": "failed", "message": f"{type(exc).__name__}: {exc}",
            "theta_hat": None, "z": None, "sigma_hat": None, "covered": None,
            "metric": None, "linear": None}


# reports -----------------------------------------------------------------

def _summarize(rows, cfg, budget):
    ok = [r for r in rows if r["status"] == "ok"]
    failed = len(rows) - len(ok)
    out = {"replications": len(rows), "successes": len(ok), "failures": failed,
           "failure_rate": failed / len(rows) if rows else 0.0,
           "within_budget": failed <= budget * len(rows)}
    if not ok:
        return out
    z = np.array([r["z"] for r in ok])
    R = len(z)
    m = z.mean(0)
    var = z.var(0, ddof=1) if R > 1 else np.zeros(z.shape[1])
    m4 = ((z - m) ** 4).mean(0)
    out.update({
        "mean_z": m.tolist(),
        "var_z": var.tolist(),
        "var_z_se": np.sqrt(np.maximum(m4 - var ** 2, 0) / R).tolist(),
        "sd_theta": (np.sqrt(var) / math.sqrt(ok[0]["N"])).tolist(),
    })
    if ok[0]["sigma_hat"] is not None:
        out["mean_sigma_hat"] = np.mean([r["sigma_hat"] for r in ok], 0).tolist()
        out["coverage"] = np.mean([r["covered"] for r in ok], 0).tolist()
    if ok[0]["metric"] is not None:
        out["median_metric"] = float(np.median([r["metric"] for r in ok]))
    lin = [(r["z"], r["linear"]) for r in ok if r["linear"] is not None]
    if len(lin) > 2:
        a = np.array([l[0] for l in lin])
        b = np.array([l[1] for l in lin])
        out["linear_corr"] = [float(np.corrcoef(a[:, k], b[:, k])[0, 1])
                              for k in range(a.shape[1])]
    return out


@dataclass(frozen=True, eq=False)
class McReport:
    config: dict
    rows: list
    summary: list
    paired: list
    oracle: dict = field(default_factory=dict)

    def cell(self, method, design, N):
        for s in self.summary:
            if s["method"] == method and s["design"] == design and s["N"] == N:
                return s
        raise KeyError((method, design, N))

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "config": self.config,
                "summary": self.summary, "paired": self.paired,
                "oracle": self.oracle, "rows": self.rows}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError("report schema_version mismatch")
        try:
            return cls(d["config"], d["rows"], d["summary"], d["paired"], d.get("oracle", {}))
        except KeyError as exc:
            raise DataError(f"report lacks field {exc}") from None

    def to_csv(self):
        """Long format: one line per replication, method, design and coordinate."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["N", "rep", "design", "method", "status", "coord", "theta_hat",
                     "z", "sigma_hat", "covered", "metric", "linear", "message"])
        for r in self.rows:
            p = len(r["theta_hat"]) if r["theta_hat"] else 1
            for k in range(p):
                get = lambda key: "" if r[key] is None else repr(r[key][k])
                wr.writerow([r["N"], r["rep"], r["design"], r["method"], r["status"], k,
                             get("theta_hat"), get("z"), get("sigma_hat"),
                             "" if r["covered"] is None else int(r["covered"][k]),
                             "" if r["metric"] is None else repr(r["metric"]),
                             get("linear"), r["message"]])
        return buf.getvalue()


def _paired(rows, cfg):
    """Paired variance comparisons sharing phase-I populations."""
    out = []
    by = {}
    for r in rows:
        if r["status"] == "ok":
            by[(r["N"], r["design"], r["method"], r["rep"])] = np.asarray(r["z"])

    def compare(N, a, b, kind):
        reps = sorted({k[3] for k in by if k[:3] == (N,) + a}
                      & {k[3] for k in by if k[:3] == (N,) + b})
        if len(reps) < 3:
            return
        za = np.array([by[(N,) + a + (i,)] for i in reps])
        zb = np.array([by[(N,) + b + (i,)] for i in reps])
        da = (za - za.mean(0)) ** 2
        db = (zb - zb.mean(0)) ** 2
        diff = da - db
        out.append({"N": N, "kind": kind, "a": list(a), "b": list(b), "pairs": len(reps),
                    "var_a": za.var(0, ddof=1).tolist(), "var_b": zb.var(0, ddof=1).tolist(),
                    "se_diff": (diff.std(0, ddof=1) / math.sqrt(len(reps))).tolist()})

    for N in cfg.n_grid:
        if "wor" in cfg.designs and "bernoulli" in cfg.designs:
            for m in cfg.methods:
                compare(N, ("wor", m), ("bernoulli", m), "design")
        for m in cfg.methods:
            if m != "plain" and "plain" in cfg.methods:
                for d in cfg.designs:
                    compare(N, (d, m), (d, "plain"), "method")
    return out


def _threads(threads):
    if threads is None:
        return 1
    return max(1, int(threads))


def run_experiment(cfg: McConfig, threads=None, with_oracle=True) -> McReport:
    """Run all replications and aggregate; deterministic given the seed."""
    tasks = [(cfg, N, rep) for N in cfg.n_grid for rep in range(cfg.replications)]
    threads = _threads(threads)
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            chunks = list(pool.map(_replicate, tasks, chunksize=8))
    else:
        chunks = [_replicate(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r["N"], r["rep"], r["design"], r["method"]))
    summary = []
    for N in cfg.n_grid:
        for design in cfg.designs:
            for m in cfg.methods:
                cell = [r for r in rows if r["N"] == N and r["design"] == design
                        and r["method"] == m]
                s = {"N": N, "design": design, "method": m}
                s.update(_summarize(cell, cfg, cfg.failure_budget))
                summary.append(s)
    oracle = {}
    if with_oracle and cfg.model in ("cox_right", "mean_toy"):
        sig = oracle_sigma(cfg)
        oracle = {f"{m}|{d}": v for (m, d), v in sorted(sig.items())}
    return McReport(cfg.to_dict(), rows, summary, _paired(rows, cfg), oracle)


# checks --------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def check_rates(report: McReport, method="plain", design="wor"):
    """Scaling of ``sd(theta_hat)`` and of the median hazard metric across N.

    Compares the smallest and the largest ``N`` of the grid; returns the
    ratios ``small/large`` together with their targets.
    """
    grid = sorted({s["N"] for s in report.summary
                   if s["method"] == method and s["design"] == design})
    if len(grid) < 2 or grid[-1] < 4 * grid[0]:
        raise DataError("insufficient N grid: need two sizes with ratio >= 4")
    a = report.cell(method, design, grid[0])
    b = report.cell(method, design, grid[-1])
    ratio = grid[-1] / grid[0]
    out = {"N_small": grid[0], "N_large": grid[-1],
           "sd_ratio": (np.asarray(a["sd_theta"]) / np.asarray(b["sd_theta"])).tolist(),
           "sd_target": math.sqrt(ratio)}
    if "median_metric" in a and "median_metric" in b:
        out["metric_ratio"] = a["median_metric"] / b["median_metric"]
        out["metric_target"] = ratio ** (1 / 3)
    return out


def _rel(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.abs(np.asarray(b))))


def check_report(report: McReport, tol=0.15, coverage=(0.93, 0.97),
                 linear_min=0.95, sd_band=(2.1, 3.6), metric_band=(1.5, 2.7)):
    """Evaluate the applicable acceptance checks; returns ``CheckResult`` list."""
    cfg = report.config
    results = []
    Nmax = max(cfg["n_grid"])
    for s in report.summary:
        if s["N"] != Nmax:
            continue
        tag = f"{s['method']}|{s['design']}|N={s['N']}"
        results.append(CheckResult(
            f"failure_budget[{tag}]", bool(s["within_budget"]),
            f"{s['failures']}/{s['replications']} failed"))
        if not s.get("successes"):
            continue
        key = f"{s['method']}|{s['design']}"
        if key in report.oracle:
            sig = np.diag(np.atleast_2d(report.oracle[key]))
            r = _rel(s["var_z"], sig)
            results.append(CheckResult(f"oracle_variance[{tag}]", r <= tol,
                                       f"relative error {r:.3f} (tol {tol})"))
        if "mean_sigma_hat" in s:
            r = _rel(s["mean_sigma_hat"], s["var_z"])
            results.append(CheckResult(f"plugin_variance[{tag}]", r <= tol,
                                       f"relative error {r:.3f} (tol {tol})"))
            cov = np.asarray(s["coverage"])
            results.append(CheckResult(
                f"coverage[{tag}]",
                bool(np.all((cov >= coverage[0]) & (cov <= coverage[1]))),
                f"coverage {cov.round(4).tolist()} in {list(coverage)}"))
        if "linear_corr" in s:
            c = min(s["linear_corr"])
            results.append(CheckResult(f"linearity[{tag}]", c > linear_min,
                                       f"correlation {c:.4f} > {linear_min}"))
    for pr in report.paired:
        if pr["N"] != Nmax:
            continue
        a, b = np.asarray(pr["var_a"]), np.asarray(pr["var_b"])
        se = np.asarray(pr["se_diff"])
        ok = bool(np.all(a <= b + 2 * se))
        results.append(CheckResult(
            f"ordering[{pr['kind']}:{'|'.join(pr['a'])} <= {'|'.join(pr['b'])}|N={Nmax}]",
            ok, f"{a.round(4).tolist()} <= {b.round(4).tolist()} + 2*{se.round(4).tolist()}"))
    try:
        rates = check_rates(report)
    except (DataError, KeyError):
        rates = None
    if rates is not None and cfg["n_grid"][-1] >= 4 * cfg["n_grid"][0]:
        sd = np.asarray(rates["sd_ratio"])
        results.append(CheckResult(
            "sd_ratio", bool(np.all((sd >= sd_band[0]) & (sd <= sd_band[1]))),
            f"{sd.round(3).tolist()} in {list(sd_band)} (target {rates['sd_target']:.3f})"))
        if "metric_ratio" in rates:
            mr = rates["metric_ratio"]
            results.append(CheckResult(
                "metric_ratio", metric_band[0] <= mr <= metric_band[1],
                f"{mr:.3f} in {list(metric_band)} (target {rates['metric_target']:.3f})"))
    return results


def ipw_cdf_discrepancy(sample: TwoPhaseSample, cdf, column=0):
    """``sup_t |F^pi_N(t) - F(t)|`` for the IPW empirical CDF of one covariate."""
    sel = sample.selected
    v = sample.x[sel, column]
    w = 1.0 / sample.pi0[sel]
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    pts, idx = np.unique(v, return_index=True)
    cum = np.cumsum(w) / sample.N
    right = cum[np.append(idx[1:], len(v)) - 1]
    left = np.concatenate([[0.0], right[:-1]])
    F = cdf(pts)
    return float(max(np.max(np.abs(right - F)), np.max(np.abs(left - F))))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twophase.asymptotics import (DrawSet, corollary_identities, loewner_leq, projection,
                                  q_project, sigma_totals)
from twophase.data import DesignSpec
from twophase.exceptions import DataError, EmptyStratumError
from twophase.sampling import RngStreams, draw_phase2


def synthetic_draws(n=20000, seed=0, p=(0.8, 0.25), k=2):
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    z = np.column_stack([x + 0.3 * rng.standard_normal(n), rng.standard_normal((n, k - 1))])
    lt = np.column_stack([x - 0.5 + 0.2 * rng.standard_normal(n), z[:, 1] * x])
    stratum = np.where(z[:, 0] > 0.5, 2, 1)
    pi0 = np.asarray(p)[stratum - 1]
    return DrawSet(lt, z, stratum, pi0, pi0 * (1 - pi0))


def test_projection_of_orthogonal_score_vanishes():
    d = synthetic_draws(5000)
    z = d.z - d.z.mean(0)
    # orthogonalize ltilde against z exactly under the empirical measure
    coef = np.linalg.lstsq(z, d.ltilde, rcond=None)[0]
    lt = d.ltilde - z @ coef
    q = q_project("c", DrawSet(lt, z, d.stratum, d.pi0))
    assert np.max(np.abs(q)) <= 1e-8


def test_projection_reproduces_linear_functions():
    d = synthetic_draws(5000)
    mu = d.z.mean(0)
    lt = (d.z - mu) @ np.array([[1.0], [-2.0]]) + 3.0
    one = np.ones(d.n)
    # cc with constant factors: Q ltilde equals ltilde minus its mean
    q = projection(lt, d.z - mu, one, one, one, d.w)
    np.testing.assert_allclose(q, lt - lt.mean(0), atol=1e-10)


def test_mc_and_cc_agree_on_centred_auxiliaries():
    d = synthetic_draws(8000)
    z = d.z - d.z.mean(0)
    dz = DrawSet(d.ltilde, z, d.stratum, d.pi0)
    np.testing.assert_allclose(q_project("mc", dz), q_project("cc", dz), atol=1e-8)


def test_full_sampling_totals_equal_inverse_information():
    d = synthetic_draws(3000)
    full = DrawSet(d.ltilde, d.z, d.stratum, np.ones(d.n), np.zeros(d.n))
    rep = sigma_totals(full, methods=["c", "mc", "cc"])
    lt = d.ltilde
    I_inv = lt.T @ lt / d.n
    np.testing.assert_allclose(rep.sigma, I_inv, rtol=1e-13)
    np.testing.assert_allclose(rep.sigma_bern, I_inv, rtol=1e-13)


@pytest.mark.parametrize("within", [False, True])
def test_identities_and_orderings(within):
    d = synthetic_draws(20000, seed=3)
    rep = sigma_totals(d, within=within)
    res = corollary_identities(rep)
    assert res and max(res.values()) <= 1e-8
    assert loewner_leq(rep.sigma, rep.sigma_bern)
    for m in ("e", "mc", "cc"):
        assert loewner_leq(rep.total(m, "bernoulli"), rep.sigma_bern, tol=1e-10)
    if within:
        assert loewner_leq(rep.total("cc", "wor"), rep.sigma, tol=1e-10)


def test_identity_zero_projection_case():
    d = synthetic_draws(5000)
    lt = d.ltilde.copy()
    for j in (1, 2):
        rows = d.stratum == j
        zc = d.z[rows] - d.z[rows].mean(0)
        lt[rows] -= zc @ np.linalg.lstsq(zc, lt[rows], rcond=None)[0]
    rep = sigma_totals(DrawSet(lt, d.z, d.stratum, d.pi0), methods=["cc"], within=True)
    np.testing.assert_allclose(rep.total("cc"), rep.sigma, atol=1e-12)


def test_relabelling_strata_leaves_totals_unchanged():
    d = synthetic_draws(6000)
    swapped = DrawSet(d.ltilde, d.z, 3 - d.stratum, d.pi0, d.gdot)
    a = sigma_totals(d, within=True)
    b = sigma_totals(swapped, within=True)
    for m in ("plain", "c", "mc", "cc", "e"):
        np.testing.assert_allclose(a.total(m), b.total(m), rtol=1e-12)


def test_mismatched_draw_sets_rejected():
    a = sigma_totals(synthetic_draws(2000, seed=1), within=False)
    b = sigma_totals(synthetic_draws(2000, seed=2), within=True)
    with pytest.raises(DataError):
        corollary_identities(a, b)


def test_empty_stratum_rejected():
    d = synthetic_draws(2000)
    bad = DrawSet(d.ltilde, d.z, np.where(d.stratum == 1, 1, 3), d.pi0)
    with pytest.raises(EmptyStratumError):
        sigma_totals(bad, methods=[])


def test_pi0_must_be_constant_within_strata():
    d = synthetic_draws(2000)
    pi0 = d.pi0.copy()
    pi0[0] = 0.5
    with pytest.raises(DataError):
        sigma_totals(DrawSet(d.ltilde, d.z, d.stratum, pi0), methods=[])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 0.95), st.floats(0.1, 0.95))
def test_wor_never_exceeds_bernoulli(seed, p1, p2):
    d = synthetic_draws(3000, seed=seed, p=(p1, p2))
    rep = sigma_totals(d, within=bool(seed % 2))
    assert loewner_leq(rep.sigma, rep.sigma_bern)
    for m in rep.methods:
        assert loewner_leq(rep.total(m, "wor"), rep.total(m, "bernoulli"))
    assert max(corollary_identities(rep).values()) <= 1e-8


def test_mean_model_variance_matches_direct_simulation():
    # ltilde = X - mu: IPW mean of X under a WOR design stratified on U = X + noise
    N, reps = 4000, 10_000
    spec = DesignSpec.cut_on_u([0.5], [0.8, 0.25])
    big = np.random.default_rng(99)
    xb = big.random(1_000_000)
    ub = xb + 0.3 * big.standard_normal(len(xb))
    sb = np.where(ub > 0.5, 2, 1)
    rep = sigma_totals(DrawSet(xb - 0.5, ub, sb, np.array([0.8, 0.25])[sb - 1]), methods=[])
    est = np.empty(reps)
    for r in range(reps):
        streams = RngStreams(2024, r)
        g = streams.generator("population")
        x = g.random(N)
        u = x + 0.3 * g.standard_normal(N)
        strata = spec.assign(np.ones(N), np.zeros(N), u[:, None])
        draw = draw_phase2(strata, spec, streams)
        est[r] = np.sum(draw.xi * x / draw.pi0) / N
    mc_var = N * est.var(ddof=1)
    assert mc_var == pytest.approx(rep.sigma[0, 0], rel=0.05)

import itertools
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import TOY_DESIGN, align, brute_force, random_model, random_sequence, random_spd
from pacecurve.errors import DegenerateState, FitFailed, SingularMStepWarning, UnknownCovariateLevel
from pacecurve.hmm import (
    DESIGN_500,
    DESIGN_1000,
    CovariateDesign,
    EmConfig,
    HmmModel,
    ScoreSequence,
    aic,
    choose_state_count,
    decode,
    em_fit,
    emission_mean,
    forward_backward,
    forward_log_likelihood,
    log_emission_density,
    mixture_mean,
    n_free_parameters,
    permute_states,
    select_states,
    sort_states,
    split_state,
    stationary_distribution,
    total_log_likelihood,
    viterbi,
)
from pacecurve.ingest import AgeGroup, EventType
from pacecurve.reference_fits import K1_500_INTERCEPTS, reference_model
from pacecurve.synth import sample_state_path

# -- covariates and emissions ------------------------------------------------------------

def test_design_encoding():
    assert list(DESIGN_500.encode(AgeGroup.OPEN, EventType.DOMESTIC)) == [0, 0, 0, 0]
    assert list(DESIGN_500.encode(AgeGroup.U23, EventType.WORLD_CHAMPS_OLYMPICS)) == [0, 1, 0, 1]
    assert list(DESIGN_1000.encode(AgeGroup.U18, EventType.WORLD_CUP_JUNIORS)) == [0, 0, 1, 0, 1]
    with pytest.raises(UnknownCovariateLevel) as ei:
        DESIGN_500.encode(AgeGroup.U18, EventType.DOMESTIC)
    assert ei.value.level == "U18"


def test_reference_baseline_means():
    m = reference_model(500)
    x0 = np.zeros(4)
    np.testing.assert_array_equal(emission_mean(m, 0, x0), [0.173, 0.230, -0.003, -0.028])
    wco = DESIGN_500.encode(AgeGroup.OPEN, EventType.WORLD_CHAMPS_OLYMPICS)
    assert abs(emission_mean(m, 2, wco)[0] - 0.245) < 1e-12
    zero = HmmModel(m.initial, m.transition, np.zeros_like(m.coefs), m.covs, DESIGN_500)
    np.testing.assert_array_equal(emission_mean(zero, 1, [1, 0, 0, 1]), 0.0)


def test_mixture_mean():
    m = reference_model(500)
    for j in range(4):
        for x in itertools.product([0, 1], repeat=4):
            onehot = np.eye(4)[j]
            assert np.array_equal(mixture_mean(m, onehot, x), emission_mean(m, j, x))
    u = mixture_mean(m, np.full(4, 0.25), np.zeros(4))
    assert abs(u[0] - (-0.13875)) < 1e-12


def test_worked_example_both_sign_readings():
    """U23 at a World Championships, 500 m, PC1 for states 1 and 4."""
    m = reference_model(500)
    x = DESIGN_500.encode(AgeGroup.U23, EventType.WORLD_CHAMPS_OLYMPICS)
    # coefficients as tabled: U23 effect is negative for both states
    assert emission_mean(m, 0, x)[0] == pytest.approx(0.173 - 0.024 + 0.045, abs=1e-12)
    assert emission_mean(m, 3, x)[0] == pytest.approx(0.063 - 0.136 + 0.060, abs=1e-12)
    # the printed example adds the magnitudes of the age effects
    flipped = m.coefs.copy()
    u23 = 1 + DESIGN_500.columns.index("U23")
    flipped[:, 0, u23] = np.abs(flipped[:, 0, u23])
    m2 = HmmModel(m.initial, m.transition, flipped, m.covs, DESIGN_500)
    assert emission_mean(m2, 0, x)[0] == pytest.approx(0.173 + 0.024 + 0.045, abs=1e-12)
    assert emission_mean(m2, 3, x)[0] == pytest.approx(0.063 + 0.136 + 0.06, abs=1e-12)


def test_log_density_closed_form_and_translation():
    m = reference_model(500)
    mu = emission_mean(m, 1, np.zeros(4))
    assert log_emission_density(m, 1, np.zeros(4), mu) == pytest.approx(-2 * math.log(2 * math.pi), abs=1e-14)
    rng = np.random.default_rng(0)
    model = random_model(2, 3, rng)
    y = rng.normal(size=3)
    shift = rng.normal(size=3)
    moved = model.coefs.copy()
    moved[:, :, 0] += shift
    m2 = HmmModel(model.initial, model.transition, moved, model.covs, TOY_DESIGN)
    a = log_emission_density(model, 0, [1, 0], y)
    b = log_emission_density(m2, 0, [1, 0], y + shift)
    assert a == pytest.approx(b, abs=1e-12)


def test_density_integrates_to_one_monte_carlo():
    """Importance sampling from N(mu, 2.25 S): the weights are bounded, so the
    estimate of the integral has small variance."""
    from scipy.stats import multivariate_normal

    rng = np.random.default_rng(1)
    p = 4
    S = random_spd(p, rng, 0.05)
    mu = rng.normal(size=p)
    coefs = np.zeros((1, p, 2))
    coefs[0, :, 0] = mu
    model = HmmModel([1.0], [[1.0]], coefs, S[None], CovariateDesign("one", ("z",)))
    q = multivariate_normal(mu, 2.25 * S)
    draws = q.rvs(size=100_000, random_state=rng)
    logf = np.array([log_emission_density(model, 0, [0.0], y) for y in draws[:2000]])
    from pacecurve.hmm import _log_gaussian

    logf_all = _log_gaussian(draws, mu, model._chol[0])
    np.testing.assert_allclose(logf_all[:2000], logf, atol=1e-12)
    est = np.mean(np.exp(logf_all - q.logpdf(draws)))
    assert abs(est - 1) < 0.02


# -- inference versus enumeration ----------------------------------------------------------

instances = st.tuples(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]), st.integers(2, 6), st.integers(1, 3))


@settings(max_examples=40, deadline=None)
@given(instances)
def test_inference_matches_enumeration(inst):
    seed, n, T, p = inst
    if n**T > 1000:
        T = 6 if n == 2 else 5
    rng = np.random.default_rng(seed)
    model = random_model(n, p, rng)
    seq = random_sequence(T, p, rng)
    ll, gamma, xi, path, top = brute_force(model, seq)
    assert forward_log_likelihood(model, seq) == pytest.approx(ll, rel=1e-10)
    post = forward_backward(model, seq)
    np.testing.assert_allclose(post.gamma, gamma, atol=1e-10)
    np.testing.assert_allclose(post.xi, xi, atol=1e-10)
    np.testing.assert_allclose(post.gamma.sum(1), 1.0, atol=1e-10)
    np.testing.assert_allclose(post.xi.sum(axis=2), post.gamma[:-1], atol=1e-10)
    vpath, vlogp = viterbi(model, seq)
    assert np.array_equal(vpath, path)
    assert vlogp == pytest.approx(top, rel=1e-10)


def test_viterbi_tie_break_goes_low():
    rng = np.random.default_rng(2)
    S = random_spd(2, rng)
    coefs = np.zeros((3, 2, 3))
    model = HmmModel(np.full(3, 1 / 3), np.full((3, 3), 1 / 3), coefs, np.stack([S] * 3), TOY_DESIGN)
    seq = random_sequence(5, 2, rng)
    path, _ = viterbi(model, seq)
    assert list(path) == [0] * 5
    assert list(brute_force(model, seq)[3]) == [0] * 5
    # two identical leading states, a third that is never better
    coefs[2, :, 0] = 50.0
    model = HmmModel(np.full(3, 1 / 3), np.full((3, 3), 1 / 3), coefs, np.stack([S] * 3), TOY_DESIGN)
    assert list(viterbi(model, seq)[0]) == [0] * 5


def test_single_state_and_single_step():
    rng = np.random.default_rng(3)
    one = random_model(1, 2, rng)
    seq = random_sequence(6, 2, rng)
    dens = sum(log_emission_density(one, 0, x, y) for x, y in zip(seq.covariates, seq.scores))
    assert forward_log_likelihood(one, seq) == pytest.approx(dens, rel=1e-12)
    np.testing.assert_allclose(forward_backward(one, seq).gamma, 1.0, atol=1e-12)
    assert list(decode(one, seq).viterbi_path) == [1] * 6

    model = random_model(3, 2, rng)
    s1 = random_sequence(1, 2, rng)
    logs = np.log(model.initial) + np.array(
        [log_emission_density(model, j, s1.covariates[0], s1.scores[0]) for j in range(3)])
    assert forward_log_likelihood(model, s1) == pytest.approx(np.logaddexp.reduce(logs), rel=1e-12)
    np.testing.assert_allclose(decode(model, s1).posteriors[0], np.exp(logs - np.logaddexp.reduce(logs)), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_permutation_invariance(seed, n):
    rng = np.random.default_rng(seed)
    model = random_model(n, 3, rng)
    seq = random_sequence(8, 3, rng)
    perm = rng.permutation(n)
    pm = permute_states(model, perm)
    assert forward_log_likelihood(pm, seq) == pytest.approx(forward_log_likelihood(model, seq), rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(forward_backward(pm, seq).gamma, forward_backward(model, seq).gamma[:, perm], atol=1e-12)
    # emission means permute along with the states
    x = seq.covariates[0]
    for i, j in enumerate(perm):
        np.testing.assert_array_equal(emission_mean(pm, i, x), emission_mean(model, j, x))
    dominant = [int(np.argmax(np.abs(emission_mean(model, j, x)))) for j in range(n)]
    assert [int(np.argmax(np.abs(emission_mean(pm, i, x)))) for i in range(n)] == [dominant[j] for j in perm]


def test_long_sequences_stay_finite():
    rng = np.random.default_rng(4)
    model = random_model(3, 4, rng, spread=5.0)
    seq = random_sequence(2000, 4, rng)
    ll = forward_log_likelihood(model, seq)
    assert math.isfinite(ll)
    np.testing.assert_allclose(forward_backward(model, seq).gamma.sum(1), 1.0, atol=1e-10)


def test_far_separated_states_decode_exactly():
    rng = np.random.default_rng(5)
    n, p = 3, 2
    coefs = np.zeros((n, p, 3))
    coefs[:, :, 0] = [[0, 0], [10, 0], [0, 10]]
    A = np.full((n, n), 0.1) + 0.7 * np.eye(n)
    model = HmmModel(np.full(n, 1 / 3), A, coefs, np.stack([0.1 * np.eye(p)] * n), TOY_DESIGN)
    path = sample_state_path(model, 200, rng)
    Y = coefs[path, :, 0] + np.sqrt(0.1) * rng.standard_normal((200, p))
    seq = ScoreSequence(Y, np.zeros((200, 2)))
    assert np.array_equal(viterbi(model, seq)[0], path)


# -- EM ---------------------------------------------------------------------------------------

def sample_sequences(model, n_seq, T, rng, covariate_rate=0.0):
    seqs, paths = [], []
    chol = np.linalg.cholesky(model.covs)
    for _ in range(n_seq):
        path = sample_state_path(model, T, rng)
        X = (rng.random((T, model.design.m)) < covariate_rate).astype(float)
        X1 = np.concatenate([np.ones((T, 1)), X], 1)
        mu = np.einsum("tpk,tk->tp", model.coefs[path], X1)
        Y = mu + np.einsum("tpq,tq->tp", chol[path], rng.standard_normal((T, model.n_pc)))
        seqs.append(ScoreSequence(Y, X))
        paths.append(path)
    return seqs, paths


def two_state_truth():
    coefs = np.zeros((2, 2, 3))
    coefs[:, :, 0] = [[1.0, 0.0], [-1.0, 0.5]]
    coefs[0, :, 1] = [0.3, -0.2]
    A = np.array([[0.9, 0.1], [0.1, 0.9]])
    return HmmModel([0.6, 0.4], A, coefs, np.stack([0.1 * np.eye(2), 0.15 * np.eye(2)]), TOY_DESIGN)


@pytest.mark.parametrize("seed", range(5))
def test_em_monotone(seed):
    rng = np.random.default_rng(seed)
    truth = random_model(3, 2, rng, spread=1.5)
    seqs, _ = sample_sequences(truth, 15, 12, rng, 0.3)
    _, report = em_fit(seqs, 3, TOY_DESIGN, EmConfig(restarts=1, tol=0.0, max_iter=60), seed=seed)
    assert np.all(np.diff(report.history) >= -1e-8)


def test_two_state_recovery():
    # each row is visited ~500 times, so a transition estimate has sd ~0.013
    rng = np.random.default_rng(10)
    truth = two_state_truth()
    seqs, paths = sample_sequences(truth, 50, 20, rng, 0.3)
    fit, report = em_fit(seqs, 2, TOY_DESIGN, EmConfig(restarts=3), seed=1)
    perm = align(truth.intercepts, fit.intercepts)
    aligned = permute_states(fit, perm)
    assert np.max(np.abs(aligned.transition - truth.transition)) < 0.05
    assert np.max(np.abs(aligned.coefs - truth.coefs)) < 0.1
    # the states are ~6 sd apart, so EM should reproduce the complete-data counts
    counts = np.zeros((2, 2))
    for path in paths:
        np.add.at(counts, (path[:-1], path[1:]), 1)
    np.testing.assert_allclose(aligned.transition, counts / counts.sum(1, keepdims=True), atol=0.01)
    assert report.converged and report.n_obs == 1000
    # canonical labelling: descending PC1 intercept
    assert np.all(np.diff(fit.intercepts[:, 0]) <= 0)
    np.testing.assert_allclose(fit.transition.sum(1), 1.0, atol=1e-12)
    assert fit.initial.sum() == pytest.approx(1.0, abs=1e-12)


def test_em_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(11)
    seqs, _ = sample_sequences(two_state_truth(), 20, 10, rng, 0.3)
    cfg = EmConfig(restarts=2)
    a, ra = em_fit(seqs, 3, TOY_DESIGN, cfg, seed=7)
    b, rb = em_fit(seqs, 3, TOY_DESIGN, cfg, seed=7)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert ra.history == rb.history


def test_absent_covariate_dropped_with_warning():
    rng = np.random.default_rng(12)
    seqs, _ = sample_sequences(two_state_truth(), 10, 10, rng, 0.0)
    with pytest.warns(SingularMStepWarning):
        fit, report = em_fit(seqs, 2, TOY_DESIGN, EmConfig(restarts=1), seed=0)
    assert report.dropped_columns == ["a", "b"]
    assert fit.active == (False, False)
    np.testing.assert_array_equal(fit.coefs[:, :, 1:], 0.0)
    assert fit.n_params == n_free_parameters(2, 2, 0)


def test_degenerate_state_restarts_then_fails():
    from pacecurve.hmm import _Batch, _m_step

    rng = np.random.default_rng(13)
    seqs, _ = sample_sequences(two_state_truth(), 3, 5, rng, 0.5)
    model = two_state_truth()
    batch = _Batch.pack(seqs)
    gamma = np.zeros(batch.Y.shape[:2] + (2,))
    gamma[..., 0] = batch.mask
    with pytest.raises(DegenerateState):
        _m_step(model, batch, gamma, np.eye(2), EmConfig())
    # a start with a state far from every observation loses all responsibility
    bad = model.coefs.copy()
    bad[1, :, 0] = 1e6
    far = HmmModel(model.initial, model.transition, bad, model.covs, TOY_DESIGN)
    with pytest.raises(FitFailed):
        em_fit(seqs, 2, TOY_DESIGN, EmConfig(restarts=0), seed=0, init_models=[far])
    fit, report = em_fit(seqs, 2, TOY_DESIGN, EmConfig(restarts=1), seed=0, init_models=[far])
    assert any("DegenerateState" in f for f in report.failures)
    assert len(report.restart_log_likelihoods) == 1


def test_stationary_initial_option():
    rng = np.random.default_rng(14)
    seqs, _ = sample_sequences(two_state_truth(), 20, 10, rng, 0.3)
    fit, _ = em_fit(seqs, 2, TOY_DESIGN, EmConfig(restarts=1, initial="stationary"), seed=0)
    np.testing.assert_allclose(fit.initial, stationary_distribution(fit.transition), atol=1e-12)


def test_diag_covariance_mode():
    rng = np.random.default_rng(15)
    seqs, _ = sample_sequences(two_state_truth(), 20, 10, rng, 0.3)
    fit, rep = em_fit(seqs, 2, TOY_DESIGN, EmConfig(restarts=1, covariance_type="diag"), seed=0)
    for S in fit.covs:
        assert np.count_nonzero(S - np.diag(np.diag(S))) == 0
    assert rep.n_params == n_free_parameters(2, 2, 2, "diag")


# -- AIC and state selection ------------------------------------------------------------------

def test_parameter_count():
    assert n_free_parameters(4, 4, 4) == 3 + 12 + 80 + 40 == 135
    assert reference_model(500).n_params == 135
    assert reference_model(1000).n_params == 3 + 12 + 96 + 40


def test_aic_single_state_closed_form():
    """One state: AIC from the direct Gaussian regression likelihood."""
    from scipy.stats import multivariate_normal

    rng = np.random.default_rng(16)
    seqs, _ = sample_sequences(two_state_truth(), 15, 8, rng, 0.4)
    fit, rep = em_fit(seqs, 1, TOY_DESIGN, EmConfig(restarts=1), seed=0)
    Y = np.concatenate([s.scores for s in seqs])
    X = np.concatenate([np.concatenate([np.ones((len(s), 1)), s.covariates], 1) for s in seqs])
    beta = np.linalg.lstsq(X, Y, rcond=None)[0]
    R = Y - X @ beta
    S = R.T @ R / len(Y) + 1e-8 * np.eye(2)
    ll = multivariate_normal(np.zeros(2), S).logpdf(R).sum()
    k = 0 + 0 + 1 * 2 * 3 + 3
    assert rep.aic == pytest.approx(2 * k - 2 * ll, rel=1e-8)
    assert aic(fit, seqs) == pytest.approx(rep.aic, rel=1e-10)


def test_split_state_preserves_likelihood():
    rng = np.random.default_rng(17)
    model = random_model(3, 2, rng)
    seqs = [random_sequence(7, 2, rng) for _ in range(4)]
    for j in range(3):
        split = split_state(model, j)
        assert split.n_states == 4
        assert total_log_likelihood(split, seqs) == pytest.approx(total_log_likelihood(model, seqs), rel=1e-12)


def test_choose_state_count():
    # the reported sweep: big gains up to 4, then a small one
    from pacecurve.reference_fits import AIC_BY_STATES

    assert choose_state_count(dict(list(AIC_BY_STATES.items())[:4])) == 4
    assert choose_state_count({2: 10.0, 3: 5.0, 4: 4.9}) == 3
    assert choose_state_count({3: 1.0}) == 3
    assert choose_state_count({2: 10.0, 3: 12.0}) == 2
    assert choose_state_count({2: 10.0, 3: None, 4: 1.0}) == 4


def test_select_states_nested_monotone():
    rng = np.random.default_rng(18)
    seqs, _ = sample_sequences(two_state_truth(), 25, 10, rng, 0.3)
    sweep = select_states(seqs, 2, 4, TOY_DESIGN, restarts=2, seed=3)
    lls = [r.log_likelihood for r in sweep.rows]
    assert all(b >= a - 1e-6 for a, b in zip(lls, lls[1:]))
    assert [r.n_states for r in sweep.rows] == [2, 3, 4]
    single = select_states(seqs, 3, 3, TOY_DESIGN, restarts=1, seed=3)
    assert single.chosen == 3
    with pytest.raises(ValueError):
        select_states(seqs, 1, 3, TOY_DESIGN)


# -- persistence -------------------------------------------------------------------------------

def test_model_json_round_trip():
    rng = np.random.default_rng(19)
    model = random_model(3, 4, rng)
    d = json.loads(json.dumps(model.to_dict()))
    assert len(d["states"][0]["covariance_lower"]) == 10
    m2 = HmmModel.from_dict(d)
    np.testing.assert_array_equal(m2.covs, model.covs)
    np.testing.assert_array_equal(m2.coefs, model.coefs)
    np.testing.assert_array_equal(m2.transition, model.transition)
    assert m2.design == model.design


def test_model_validation():
    rng = np.random.default_rng(20)
    m = random_model(2, 2, rng)
    with pytest.raises(ValueError):
        HmmModel([0.5, 0.6], m.transition, m.coefs, m.covs, TOY_DESIGN)
    with pytest.raises(ValueError):
        HmmModel(m.initial, [[0.5, 0.5], [0.2, 0.7]], m.coefs, m.covs, TOY_DESIGN)
    with pytest.raises(ValueError):
        HmmModel(m.initial, m.transition, m.coefs, -m.covs, TOY_DESIGN)
    assert list(sort_states(m).intercepts[:, 0]) == sorted(m.intercepts[:, 0], reverse=True)

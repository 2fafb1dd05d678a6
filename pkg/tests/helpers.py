"""Shared builders for HMM tests: random models, sequences and brute-force oracles."""

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import multivariate_normal

from pacecurve.hmm import CovariateDesign, HmmModel, ScoreSequence

TOY_DESIGN = CovariateDesign("toy", ("a", "b"))


def random_spd(p, rng, scale=1.0):
    A = rng.normal(size=(p, p))
    return scale * (A @ A.T / p + 0.3 * np.eye(p))


def random_model(n, p, rng, design=TOY_DESIGN, spread=1.0):
    pi = rng.dirichlet(np.ones(n))
    A = rng.dirichlet(np.ones(n), size=n)
    coefs = rng.normal(scale=spread, size=(n, p, design.m + 1))
    covs = np.stack([random_spd(p, rng) for _ in range(n)])
    return HmmModel(pi, A, coefs, covs, design)


def random_sequence(T, p, rng, design=TOY_DESIGN):
    X = (rng.random((T, design.m)) < 0.4).astype(float)
    return ScoreSequence(rng.normal(size=(T, p)), X)


def log_density_table(model, seq):
    """``(T, n)`` log densities via scipy, independent of the package code."""
    T = len(seq)
    out = np.empty((T, model.n_states))
    for t in range(T):
        x1 = np.concatenate([[1.0], seq.covariates[t]])
        for j in range(model.n_states):
            out[t, j] = multivariate_normal(model.coefs[j] @ x1, model.covs[j]).logpdf(seq.scores[t])
    return out


def enumerate_paths(model, seq):
    """Every state path with its joint log-probability."""
    logb = log_density_table(model, seq)
    lp, lA = np.log(model.initial), np.log(model.transition)
    for path in itertools.product(range(model.n_states), repeat=len(seq)):
        v = lp[path[0]] + logb[0, path[0]]
        for t in range(1, len(path)):
            v += lA[path[t - 1], path[t]] + logb[t, path[t]]
        yield path, v


def brute_force(model, seq):
    """(log-likelihood, gamma, xi, best path) by exhaustive enumeration.

    Ties between optimal paths go to the lowest final state, then the lowest
    state at each earlier step.
    """
    paths, values = zip(*enumerate_paths(model, seq))
    values = np.array(values)
    ll = np.logaddexp.reduce(values)
    w = np.exp(values - ll)
    T, n = len(seq), model.n_states
    gamma = np.zeros((T, n))
    xi = np.zeros((max(T - 1, 0), n, n))
    for path, wi in zip(paths, w):
        for t, s in enumerate(path):
            gamma[t, s] += wi
        for t in range(T - 1):
            xi[t, path[t], path[t + 1]] += wi
    top = values.max()
    ties = [p for p, v in zip(paths, values) if v >= top - 1e-12 * abs(top)]
    best = min(ties, key=lambda p: p[::-1])
    return ll, gamma, xi, np.array(best), top


def align(true_means, est_means):
    """Permutation ``perm`` with est state ``perm[j]`` matched to true state ``j``."""
    cost = ((true_means[:, None, :] - est_means[None, :, :]) ** 2).sum(-1)
    rows, cols = linear_sum_assignment(cost)
    return cols[np.argsort(rows)]

"""Gaussian hidden Markov model with covariate-dependent emission means.

Every athlete's career is an independent sequence of PC-score vectors.  A
single initial distribution and a constant transition matrix are shared by
all athletes.  In state ``j`` the scores are multivariate normal with mean

    mu_j(x) = beta_j0 + sum_k beta_jk x_k

where ``x`` holds 0/1 indicators for age group and event type (Open age and
domestic events are the all-zero baseline), and a full (or diagonal)
per-state covariance.

State indices are 0-based throughout this module.  :class:`DecodedCareer`
reports the Viterbi path with 1-based state labels.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import solve_triangular

from .errors import DegenerateState, FitFailed, HmmError, SingularMStepWarning, UnknownCovariateLevel
from .ingest import AgeGroup, EventType, RaceRecord

log = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)


# -- covariate designs -----------------------------------------------------------

@dataclass(frozen=True)
class CovariateDesign:
    """Indicator columns for age group and event type.

    Levels not listed (Open, Domestic) are the baseline and encode as zeros.
    """

    name: str
    columns: tuple[str, ...]

    @property
    def m(self) -> int:
        return len(self.columns)

    def encode(self, age_group: AgeGroup, event_type: EventType) -> np.ndarray:
        x = np.zeros(self.m)
        for level, baseline in ((AgeGroup(age_group).value, AgeGroup.OPEN.value),
                                (EventType(event_type).value, EventType.DOMESTIC.value)):
            if level == baseline:
                continue
            try:
                x[self.columns.index(level)] = 1.0
            except ValueError:
                raise UnknownCovariateLevel(level, self.name) from None
        return x

    def encode_record(self, rec: RaceRecord) -> np.ndarray:
        return self.encode(rec.age_group, rec.event_type)

    def to_dict(self) -> dict:
        return {"name": self.name, "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateDesign":
        return cls(d["name"], tuple(d["columns"]))


DESIGN_500 = CovariateDesign("k1-500m", ("U21", "U23", "WCJ", "WCO"))
DESIGN_1000 = CovariateDesign("k1-1000m", ("U21", "U23", "WCJ", "WCO", "U18"))


def design_for_distance(distance_m: int) -> CovariateDesign:
    try:
        return {500: DESIGN_500, 1000: DESIGN_1000}[int(distance_m)]
    except KeyError:
        raise ValueError(f"no covariate design for {distance_m} m") from None


# -- data ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScoreSequence:
    """One athlete's PC scores (T x n_pc) with covariates (T x m), in race order."""

    scores: np.ndarray
    covariates: np.ndarray
    athlete_id: str = ""
    race_dates: tuple = ()

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.scores, dtype=float))
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(y), -1)
        if len(y) == 0:
            raise ValueError("a score sequence needs at least one observation")
        if len(x) != len(y):
            raise ValueError(f"{len(y)} score rows but {len(x)} covariate rows")
        object.__setattr__(self, "scores", y)
        object.__setattr__(self, "covariates", x)

    def __len__(self):
        return len(self.scores)

    @property
    def n_pc(self) -> int:
        return self.scores.shape[1]


# -- model ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HmmModel:
    """Fitted (or hand-specified) HMM parameters.

    ``coefs[j]`` is the ``n_pc x (1 + m)`` regression matrix of state ``j``;
    column 0 holds the intercepts.  ``active`` marks the covariate columns that
    were estimated; inactive columns are held at zero and are not counted as
    free parameters.
    """

    initial: np.ndarray
    transition: np.ndarray
    coefs: np.ndarray
    covs: np.ndarray
    design: CovariateDesign
    covariance_type: str = "full"
    active: Optional[tuple[bool, ...]] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pi = np.asarray(self.initial, dtype=float)
        A = np.atleast_2d(np.asarray(self.transition, dtype=float))
        coefs = np.asarray(self.coefs, dtype=float)
        covs = np.asarray(self.covs, dtype=float)
        n = len(pi)
        if A.shape != (n, n):
            raise ValueError(f"transition must be {n}x{n}, got {A.shape}")
        if coefs.ndim != 3 or coefs.shape[0] != n or coefs.shape[2] != self.design.m + 1:
            raise ValueError(f"coefs must have shape ({n}, n_pc, {self.design.m + 1}), got {coefs.shape}")
        p = coefs.shape[1]
        if covs.shape != (n, p, p):
            raise ValueError(f"covs must have shape ({n}, {p}, {p}), got {covs.shape}")
        if np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
            raise ValueError("initial must be a probability vector")
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1) > 1e-9):
            raise ValueError("transition rows must be probability vectors")
        if self.covariance_type not in ("full", "diag"):
            raise ValueError("covariance_type must be 'full' or 'diag'")
        active = tuple(bool(a) for a in self.active) if self.active is not None else (True,) * self.design.m
        if len(active) != self.design.m:
            raise ValueError("active mask must have one entry per covariate column")
        chol = []
        for j, S in enumerate(covs):
            try:
                chol.append(np.linalg.cholesky((S + S.T) / 2))
            except np.linalg.LinAlgError:
                raise ValueError(f"covariance of state {j} is not positive definite") from None
        for name, a in (("initial", pi), ("transition", A), ("coefs", coefs), ("covs", covs)):
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "_chol", np.stack(chol))

    @property
    def n_states(self) -> int:
        return len(self.initial)

    @property
    def n_pc(self) -> int:
        return self.coefs.shape[1]

    @property
    def intercepts(self) -> np.ndarray:
        """Baseline state means, shape ``(n_states, n_pc)``."""
        return self.coefs[:, :, 0]

    @property
    def n_params(self) -> int:
        return n_free_parameters(self.n_states, self.n_pc, sum(self.active), self.covariance_type)

    def to_dict(self) -> dict:
        tril = np.tril_indices(self.n_pc)
        return {
            "n_states": self.n_states,
            "n_pc": self.n_pc,
            "design": self.design.to_dict(),
            "active_columns": [c for c, a in zip(self.design.columns, self.active) if a],
            "covariance_type": self.covariance_type,
            "label_order": "descending PC1 intercept",
            "initial": self.initial.tolist(),
            "transition": self.transition.ravel().tolist(),
            "states": [
                {
                    "coefficients": self.coefs[j].tolist(),
                    "covariance_lower": self.covs[j][tril].tolist(),
                }
                for j in range(self.n_states)
            ],
            "fit": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        n, p = int(d["n_states"]), int(d["n_pc"])
        design = CovariateDesign.from_dict(d["design"])
        active_cols = d.get("active_columns", list(design.columns))
        tril = np.tril_indices(p)
        coefs, covs = [], []
        for st in d["states"]:
            coefs.append(np.asarray(st["coefficients"], dtype=float))
            S = np.zeros((p, p))
            S[tril] = st["covariance_lower"]
            covs.append(S + np.tril(S, -1).T)
        return cls(
            np.asarray(d["initial"], dtype=float),
            np.asarray(d["transition"], dtype=float).reshape(n, n),
            np.stack(coefs),
            np.stack(covs),
            design,
            d.get("covariance_type", "full"),
            tuple(c in active_cols for c in design.columns),
            dict(d.get("fit", {})),
        )


def n_free_parameters(n_states: int, n_pc: int, m: int, covariance_type: str = "full") -> int:
    """Initial + transition + regression + covariance parameter count."""
    n = n_states
    cov = n_pc * (n_pc + 1) // 2 if covariance_type == "full" else n_pc
    return (n - 1) + n * (n - 1) + n * n_pc * (1 + m) + n * cov


def permute_states(model: HmmModel, order: Sequence[int]) -> HmmModel:
    """Relabel states so that new state ``i`` is old state ``order[i]``."""
    order = np.asarray(order)
    return replace(
        model,
        initial=model.initial[order],
        transition=model.transition[np.ix_(order, order)],
        coefs=model.coefs[order],
        covs=model.covs[order],
    )


def sort_states(model: HmmModel) -> HmmModel:
    """Canonical labelling: descending PC1 intercept."""
    return permute_states(model, np.argsort(-model.coefs[:, 0, 0], kind="stable"))


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Left eigenvector of the transition matrix for eigenvalue 1."""
    A = np.asarray(transition, dtype=float)
    w, V = np.linalg.eig(A.T)
    v = np.real(V[:, np.argmin(np.abs(w - 1))])
    v = np.abs(v)
    return v / v.sum()


# -- emissions -------------------------------------------------------------------------

def _with_intercept(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.concatenate([np.ones(x.shape[:-1] + (1,)), x], axis=-1)


def emission_mean(model: HmmModel, state: int, covariates) -> np.ndarray:
    """``beta_j0 + sum_k beta_jk x_k`` for each principal component."""
    return model.coefs[state] @ _with_intercept(covariates)


def mixture_mean(model: HmmModel, state_probs, covariates) -> np.ndarray:
    """Probability-weighted average of the per-state emission means."""
    probs = np.asarray(state_probs, dtype=float)
    if probs.shape != (model.n_states,):
        raise ValueError(f"need {model.n_states} state probabilities")
    if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
        raise ValueError("state_probs must be a probability vector")
    means = np.stack([emission_mean(model, j, covariates) for j in range(model.n_states)])
    return probs @ means


def log_emission_density(model: HmmModel, state: int, covariates, scores) -> float:
    y = np.asarray(scores, dtype=float)
    return float(_log_gaussian(y[None, :], emission_mean(model, state, covariates)[None, :], model._chol[state])[0])


def _log_gaussian(y: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Row-wise multivariate normal log-density given a Cholesky factor."""
    p = y.shape[-1]
    z = solve_triangular(chol, (y - mean).T, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (p * LOG_2PI + logdet + np.sum(z * z, axis=0))


def _log_emissions(model: HmmModel, Y: np.ndarray, X1: np.ndarray) -> np.ndarray:
    """``(N, n_states)`` log densities for stacked observations.

    ``X1`` already carries the intercept column.
    """
    out = np.empty((len(Y), model.n_states))
    for j in range(model.n_states):
        out[:, j] = _log_gaussian(Y, X1 @ model.coefs[j].T, model._chol[j])
    return out


# -- batched inference ---------------------------------------------------------------

def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def _safe_log(a: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(a)


@dataclass
class _Batch:
    """Sequences packed into padded ``(B, T, ...)`` arrays."""

    Y: np.ndarray
    X1: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    @classmethod
    def pack(cls, sequences: Sequence[ScoreSequence]) -> "_Batch":
        if not sequences:
            raise ValueError("need at least one sequence")
        lengths = np.array([len(s) for s in sequences])
        B, T = len(sequences), int(lengths.max())
        p, m = sequences[0].n_pc, sequences[0].covariates.shape[1]
        Y = np.zeros((B, T, p))
        X1 = np.zeros((B, T, m + 1))
        X1[:, :, 0] = 1.0
        for b, s in enumerate(sequences):
            if s.n_pc != p or s.covariates.shape[1] != m:
                raise ValueError("all sequences must share score and covariate dimensions")
            Y[b, : len(s)] = s.scores
            X1[b, : len(s), 1:] = s.covariates
        mask = np.arange(T)[None, :] < lengths[:, None]
        return cls(Y, X1, mask, lengths)

    @property
    def n_obs(self) -> int:
        return int(self.lengths.sum())

    def log_emissions(self, model: HmmModel) -> np.ndarray:
        B, T, p = self.Y.shape
        if p != model.n_pc or self.X1.shape[2] != model.design.m + 1:
            raise HmmError(
                f"sequences have {p} scores / {self.X1.shape[2] - 1} covariates; "
                f"model expects {model.n_pc} / {model.design.m}"
            )
        out = _log_emissions(model, self.Y.reshape(B * T, p), self.X1.reshape(B * T, -1))
        return out.reshape(B, T, model.n_states)


def _forward(log_pi, log_A, logB, mask):
    B, T, n = logB.shape
    la = np.empty((B, T, n))
    la[:, 0] = log_pi + logB[:, 0]
    for t in range(1, T):
        step = _logsumexp(la[:, t - 1, :, None] + log_A[None], axis=1) + logB[:, t]
        la[:, t] = np.where(mask[:, t, None], step, la[:, t - 1])
    return la, _logsumexp(la[:, -1], axis=1)


def _backward(log_A, logB, mask):
    B, T, n = logB.shape
    lb = np.zeros((B, T, n))
    for t in range(T - 2, -1, -1):
        step = _logsumexp(log_A[None] + (logB[:, t + 1] + lb[:, t + 1])[:, None, :], axis=2)
        lb[:, t] = np.where(mask[:, t + 1, None], step, 0.0)
    return lb


def _e_step(model: HmmModel, batch: _Batch, logB: Optional[np.ndarray] = None):
    """Posteriors for a packed batch.

    Returns ``(gamma (B,T,n), xi_sum (n,n), loglik per sequence (B,), xi (B,T-1,n,n))``.
    """
    if logB is None:
        logB = batch.log_emissions(model)
    log_pi, log_A = _safe_log(model.initial), _safe_log(model.transition)
    la, ll = _forward(log_pi, log_A, logB, batch.mask)
    lb = _backward(log_A, logB, batch.mask)
    gamma = np.exp(la + lb - ll[:, None, None]) * batch.mask[:, :, None]
    if logB.shape[1] > 1:
        lx = (
            la[:, :-1, :, None]
            + log_A[None, None]
            + (logB[:, 1:] + lb[:, 1:])[:, :, None, :]
            - ll[:, None, None, None]
        )
        xi = np.exp(lx) * batch.mask[:, 1:, None, None]
    else:
        xi = np.zeros((logB.shape[0], 0, model.n_states, model.n_states))
    return gamma, xi.sum(axis=(0, 1)), ll, xi


def forward_log_likelihood(model: HmmModel, seq: ScoreSequence) -> float:
    """``log p(scores | covariates, model)`` by the log-space forward recursion."""
    batch = _Batch.pack([seq])
    _, ll = _forward(_safe_log(model.initial), _safe_log(model.transition), batch.log_emissions(model), batch.mask)
    value = float(ll[0])
    if not math.isfinite(value):
        raise HmmError("log-likelihood is not finite")
    return value


def total_log_likelihood(model: HmmModel, sequences: Sequence[ScoreSequence]) -> float:
    batch = _Batch.pack(sequences)
    _, ll = _forward(_safe_log(model.initial), _safe_log(model.transition), batch.log_emissions(model), batch.mask)
    return float(ll.sum())


@dataclass(frozen=True, eq=False)
class Posterior:
    gamma: np.ndarray  # (T, n)
    xi: np.ndarray  # (T-1, n, n)
    log_likelihood: float


def forward_backward(model: HmmModel, seq: ScoreSequence) -> Posterior:
    """Smoothed state marginals ``gamma`` and pairwise marginals ``xi``."""
    gamma, _, ll, xi = _e_step(model, _Batch.pack([seq]))
    return Posterior(gamma[0], xi[0], float(ll[0]))


def viterbi(model: HmmModel, seq: ScoreSequence) -> tuple[np.ndarray, float]:
    """Most probable state path (0-based) and its joint log-probability.

    Ties go to the lower state index, both for the final state and for every
    back-pointer.
    """
    logB = _Batch.pack([seq]).log_emissions(model)[0]
    log_A = _safe_log(model.transition)
    T, n = logB.shape
    delta = _safe_log(model.initial) + logB[0]
    back = np.zeros((T, n), dtype=int)
    for t in range(1, T):
        cand = delta[:, None] + log_A
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(n)] + logB[t]
    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta[path[-1]])


@dataclass(frozen=True, eq=False)
class DecodedCareer:
    athlete_id: str
    posteriors: np.ndarray  # (T, n_states)
    viterbi_path: np.ndarray  # 1-based state labels
    log_likelihood: float
    race_dates: tuple = ()


def decode(model: HmmModel, seq: ScoreSequence) -> DecodedCareer:
    post = forward_backward(model, seq)
    path, _ = viterbi(model, seq)
    return DecodedCareer(seq.athlete_id, post.gamma, path + 1, post.log_likelihood, seq.race_dates)


viterbi_decode = decode


# -- EM ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class EmConfig:
    """Knobs for :func:`em_fit`.

    ``initial='stationary'`` replaces the estimated initial distribution with
    the stationary distribution of the current transition matrix after every
    M-step; that is no longer an exact EM step, so the likelihood is not
    guaranteed to increase.
    """

    max_iter: int = 500
    tol: float = 1e-6
    restarts: int = 5
    covariance_type: str = "full"
    reg_covar: float = 1e-8
    self_transition: float = 0.7
    min_state_mass: float = 1e-6
    max_retries: int = 3
    initial: str = "shared"


@dataclass
class FitReport:
    log_likelihood: float
    aic: float
    n_params: int
    n_obs: int
    iterations: int
    converged: bool
    history: list[float]
    seed: Optional[int]
    restart_log_likelihoods: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    dropped_columns: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "log_likelihood": self.log_likelihood,
            "aic": self.aic,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "iterations": self.iterations,
            "converged": self.converged,
            "seed": self.seed,
            "restart_log_likelihoods": self.restart_log_likelihoods,
            "failures": self.failures,
            "dropped_columns": self.dropped_columns,
            "history": self.history,
        }


def _initial_transition(n: int, self_p: float) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    A = np.full((n, n), (1 - self_p) / (n - 1))
    np.fill_diagonal(A, self_p)
    return A


def _kmeans_init(Y: np.ndarray, n: int, design: CovariateDesign, active, config: EmConfig,
                 rng: np.random.Generator) -> HmmModel:
    p = Y.shape[1]
    centers, labels = kmeans2(Y, n, minit="++", seed=rng)
    overall = np.atleast_2d(np.cov(Y.T)) if len(Y) > 1 else np.eye(p)
    overall = overall + config.reg_covar * np.eye(p) + 1e-6 * np.trace(overall) / p * np.eye(p)
    covs = []
    for j in range(n):
        pts = Y[labels == j]
        if len(pts) > p + 1:
            S = np.atleast_2d(np.cov(pts.T)) + config.reg_covar * np.eye(p)
            if np.linalg.eigvalsh(S)[0] <= 1e-10:
                S = overall
        else:
            S = overall
        if config.covariance_type == "diag":
            S = np.diag(np.diag(S))
        covs.append(S)
    coefs = np.zeros((n, p, design.m + 1))
    coefs[:, :, 0] = centers
    return HmmModel(np.full(n, 1.0 / n), _initial_transition(n, config.self_transition), coefs,
                    np.stack(covs), design, config.covariance_type, active)


def _m_step(model: HmmModel, batch: _Batch, gamma: np.ndarray, xi_sum: np.ndarray, config: EmConfig) -> HmmModel:
    n, p = model.n_states, model.n_pc
    cols = np.concatenate([[True], model.active])
    valid = batch.mask.ravel()
    Y = batch.Y.reshape(-1, p)[valid]
    X = batch.X1.reshape(-1, batch.X1.shape[2])[valid][:, cols]
    G = gamma.reshape(-1, n)[valid]

    coefs = np.zeros_like(model.coefs)
    covs = np.empty_like(model.covs)
    for j in range(n):
        w = G[:, j]
        mass = w.sum()
        if mass < config.min_state_mass:
            raise DegenerateState(f"state {j} has responsibility mass {mass:.2e}")
        sw = np.sqrt(w)[:, None]
        beta, *_ = np.linalg.lstsq(sw * X, sw * Y, rcond=None)
        coefs[j][:, cols] = beta.T
        R = Y - X @ beta
        S = (w[:, None] * R).T @ R / mass
        if config.covariance_type == "diag":
            S = np.diag(np.diag(S))
        covs[j] = (S + S.T) / 2 + config.reg_covar * np.eye(p)

    A = model.transition.copy()
    rows = xi_sum.sum(axis=1)
    ok = rows > 0
    A[ok] = xi_sum[ok] / rows[ok, None]
    A /= A.sum(axis=1, keepdims=True)

    if config.initial == "stationary":
        pi = stationary_distribution(A)
    else:
        first = gamma[:, 0].sum(axis=0)
        pi = first / first.sum()
    return replace(model, initial=pi, transition=A, coefs=coefs, covs=covs)


def _run_em(init: HmmModel, batch: _Batch, config: EmConfig) -> tuple[HmmModel, list[float], bool]:
    model = init
    history: list[float] = []
    converged = False
    for it in range(config.max_iter + 1):
        gamma, xi_sum, ll, _ = _e_step(model, batch)
        total = float(ll.sum())
        if not math.isfinite(total):
            raise HmmError("log-likelihood became non-finite")
        if history and total - history[-1] < config.tol * abs(history[-1]):
            history.append(total)
            converged = True
            if total < history[-2]:
                # keep the better of the last two parameter sets
                model, total = prev_model, history[-2]
                history.pop()
            break
        history.append(total)
        if it == config.max_iter:
            break
        prev_model = model
        model = _m_step(model, batch, gamma, xi_sum, config)
    return model, history, converged


def _active_columns(batch: _Batch, design: CovariateDesign) -> tuple[bool, ...]:
    X = batch.X1[batch.mask][:, 1:]
    return tuple(bool(np.any(X[:, k] != 0)) for k in range(design.m))


def em_fit(
    sequences: Sequence[ScoreSequence],
    n_states: int,
    design: CovariateDesign,
    config: EmConfig = EmConfig(),
    seed: Optional[int] = 0,
    init_models: Iterable[HmmModel] = (),
) -> tuple[HmmModel, FitReport]:
    """Multi-sequence Baum-Welch with weighted least-squares emission updates.

    ``config.restarts`` k-means++ initialisations are run (plus any models in
    ``init_models``); the run with the highest final log-likelihood wins, ties
    going to the earlier run.  A run whose state loses all responsibility is
    retried from a fresh seed up to ``config.max_retries`` times.

    Covariate columns that are zero throughout the data cannot be estimated;
    they are dropped for this fit with a :class:`SingularMStepWarning`.
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    batch = _Batch.pack(sequences)
    if batch.X1.shape[2] - 1 != design.m:
        raise HmmError(f"sequences carry {batch.X1.shape[2] - 1} covariates, design {design.name!r} has {design.m}")
    p = batch.Y.shape[2]
    active = _active_columns(batch, design)
    dropped = [c for c, a in zip(design.columns, active) if not a]
    if dropped:
        warnings.warn(f"covariate columns absent from data, dropped: {', '.join(dropped)}",
                      SingularMStepWarning, stacklevel=2)
    k = n_free_parameters(n_states, p, sum(active), config.covariance_type)
    if batch.n_obs < k:
        log.warning("%d observations for %d free parameters", batch.n_obs, k)

    Y = batch.Y[batch.mask]
    starts: list = [("kmeans", ss) for ss in np.random.SeedSequence(seed).spawn(config.restarts)]
    starts += [("given", replace(m, active=active)) for m in init_models]

    best = None
    restart_lls, failures = [], []
    for r, (kind, payload) in enumerate(starts):
        attempts = [payload] if kind == "given" else [payload] + payload.spawn(config.max_retries)
        for attempt in attempts:
            try:
                init = attempt if kind == "given" else _kmeans_init(
                    Y, n_states, design, active, config, np.random.default_rng(attempt))
                model, history, converged = _run_em(init, batch, config)
            except (DegenerateState, HmmError, np.linalg.LinAlgError, ValueError) as exc:
                failures.append(f"start {r}: {type(exc).__name__}: {exc}")
                log.debug("EM start %d failed: %s", r, exc)
                continue
            restart_lls.append(history[-1])
            if best is None or history[-1] > best[1][-1]:
                best = (model, history, converged)
            break
    if best is None:
        raise FitFailed(f"all {len(starts)} EM starts failed for {n_states} states: " + "; ".join(failures[-3:]))

    model, history, converged = best
    model = sort_states(model)
    ll = history[-1]
    report = FitReport(
        log_likelihood=ll,
        aic=2 * k - 2 * ll,
        n_params=k,
        n_obs=batch.n_obs,
        iterations=len(history) - 1,
        converged=converged,
        history=history,
        seed=seed,
        restart_log_likelihoods=restart_lls,
        failures=failures,
        dropped_columns=dropped,
    )
    model = replace(model, metadata={
        "log_likelihood": ll, "aic": report.aic, "n_params": k, "seed": seed,
        "iterations": report.iterations, "converged": converged,
    })
    return model, report


def aic(model: HmmModel, sequences: Sequence[ScoreSequence]) -> float:
    """``2k - 2 log L`` with k counting initial, transition, regression and
    covariance parameters."""
    return 2 * model.n_params - 2 * total_log_likelihood(model, sequences)


# -- state-count selection -------------------------------------------------------------

def split_state(model: HmmModel, state: int, shift: float = 0.0) -> HmmModel:
    """Duplicate ``state`` into a new last state.

    Incoming transition mass and initial mass are shared equally between the
    two copies, so with ``shift=0`` the likelihood is exactly unchanged.  A
    non-zero ``shift`` moves the two copies' intercepts apart by ``+-shift``
    standard deviations along the state's leading covariance axis.
    """
    n = model.n_states
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = model.transition
    A[n] = A[state]
    A[:, n] = A[:, state] / 2
    A[:, state] = A[:, state] / 2
    pi = np.append(model.initial, model.initial[state] / 2)
    pi[state] /= 2
    coefs = np.concatenate([model.coefs, model.coefs[state][None]])
    covs = np.concatenate([model.covs, model.covs[state][None]])
    if shift:
        w, V = np.linalg.eigh(model.covs[state])
        d = shift * np.sqrt(w[-1]) * V[:, -1]
        coefs[state, :, 0] -= d
        coefs[n, :, 0] += d
    return replace(model, initial=pi, transition=A, coefs=coefs, covs=covs)


@dataclass
class SweepRow:
    n_states: int
    log_likelihood: Optional[float]
    aic: Optional[float]
    n_params: int
    error: Optional[str] = None


@dataclass
class StateSweep:
    rows: list[SweepRow]
    chosen: int
    models: dict[int, HmmModel] = field(default_factory=dict)
    reports: dict[int, FitReport] = field(default_factory=dict)

    def improvements(self) -> dict[int, float]:
        """AIC decrease from ``n - 1`` to ``n`` states."""
        by_n = {r.n_states: r.aic for r in self.rows}
        return {
            n: by_n[n - 1] - by_n[n]
            for n in sorted(by_n)
            if n - 1 in by_n and by_n[n] is not None and by_n[n - 1] is not None
        }


ELBOW_FRACTION = 0.05


def choose_state_count(aics: dict[int, Optional[float]], fraction: float = ELBOW_FRACTION) -> int:
    """Elbow rule on an AIC sweep.

    The reference gain is the AIC improvement from the smallest state count
    to the next.  Scanning upwards, the first count ``n`` whose improvement
    over ``n - 1`` is below ``fraction`` of that reference stops the scan and
    ``n - 1`` is returned: adding the n-th state no longer pays.  If every
    step pays, the largest count is returned.
    """
    ns = sorted(n for n, a in aics.items() if a is not None)
    if not ns:
        raise FitFailed("no state count could be fitted")
    if len(ns) == 1:
        return ns[0]
    ref = aics[ns[0]] - aics[ns[1]]
    if ref <= 0:
        return ns[0]
    for prev, n in zip(ns[1:], ns[2:]):
        if aics[prev] - aics[n] < fraction * ref:
            return prev
    return ns[-1]


def select_states(
    sequences: Sequence[ScoreSequence],
    n_min: int,
    n_max: int,
    design: CovariateDesign,
    restarts: int = 5,
    seed: Optional[int] = 0,
    config: EmConfig = EmConfig(),
    nested: bool = True,
) -> StateSweep:
    """Fit every state count in ``[n_min, n_max]`` and pick one by the elbow rule.

    With ``nested=True`` each count also starts from the best fit with one
    state fewer, split in two (once exactly and once with the copies pushed
    apart).  The exact split keeps the previous likelihood, so the sweep's
    log-likelihood is non-decreasing in the number of states.
    """
    if n_min < 2:
        raise ValueError("n_min must be >= 2")
    if n_max < n_min:
        raise ValueError("n_max must be >= n_min")
    config = replace(config, restarts=restarts)
    rows, models, reports = [], {}, {}
    prev = None
    p = sequences[0].n_pc
    for n in range(n_min, n_max + 1):
        starts = []
        if nested and prev is not None:
            widest = int(np.argmax([np.linalg.slogdet(S)[1] for S in prev.covs]))
            starts = [split_state(prev, widest), split_state(prev, widest, shift=1.0)]
        cell_seed = None if seed is None else int(np.random.SeedSequence([seed, n]).generate_state(1)[0])
        try:
            model, report = em_fit(sequences, n, design, config, seed=cell_seed, init_models=starts)
        except (FitFailed, HmmError) as exc:
            rows.append(SweepRow(n, None, None, n_free_parameters(n, p, design.m, config.covariance_type),
                                 f"{type(exc).__name__}: {exc}"))
            prev = None
            continue
        rows.append(SweepRow(n, report.log_likelihood, report.aic, report.n_params))
        models[n], reports[n] = model, report
        prev = model
    chosen = choose_state_count({r.n_states: r.aic for r in rows})
    return StateSweep(rows, chosen, models, reports)

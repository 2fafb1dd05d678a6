"""Synthetic race corpora with known functional and HMM structure.

A generator spec fixes a mean curve and a set of eigenfunctions (both given
as piecewise-linear control points and projected onto a B-spline basis), an
HMM over PC scores, and a schedule for how athletes move through age groups
and event types.  Sampling runs the model forwards: state path, scores,
curve on the 50 m grid, split times.

Split times can only carry a profile up to a constant factor, so ingest sees
the curve divided by its harmonic mean on the grid.  The truth file therefore
records both the planted scores and the scores of the curve ingest will
actually reconstruct (``scores``); without observation noise the latter are
recovered exactly by smoothing and projection.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import SpecError
from .fbasis import (
    FunctionalBasis,
    evaluate_basis,
    gram_matrix,
    make_basis,
    make_quadrature,
)
from .fpca import FpcaModel
from .hmm import CovariateDesign, HmmModel, design_for_distance
from .ingest import (
    AgeGroup,
    CareerRace,
    CareerSequence,
    EventType,
    RacePhase,
    RaceRecord,
    SEGMENT_M,
    normalize_profile,
    segment_grid,
    serialize_race_csv,
)

AGE_PROGRESSION = ("U18", "U21", "U23", "OPEN")
GS_TOL = 1e-10
TIME_DECIMALS = 9
MIN_VELOCITY = 0.05

DEFAULT_MEAN_POINTS = {
    500: [(0, 0.90), (30, 1.02), (80, 1.08), (125, 1.065), (200, 1.02), (300, 0.985), (400, 0.96), (500, 0.945)],
    1000: [(0, 0.90), (50, 1.03), (100, 1.06), (250, 1.02), (500, 0.975), (650, 0.97),
           (750, 0.975), (875, 0.995), (950, 1.0), (1000, 0.985)],
}
DEFAULT_EIGEN_POINTS = {
    500: [
        [(0, 0.2), (125, 1.0), (300, -0.3), (500, -1.0)],
        [(0, 0.3), (175, -0.8), (300, 0.0), (500, 1.0)],
        [(0, 0.0), (80, 1.0), (130, -1.0), (250, 0.4), (375, -0.3), (500, 0.2)],
        [(0, 0.0), (150, 0.2), (250, -1.0), (350, 0.0), (500, 0.8)],
    ],
    1000: [
        [(0, 0.2), (200, 1.0), (600, -0.3), (1000, -1.0)],
        [(0, 0.3), (300, -0.2), (600, -0.8), (800, 0.0), (1000, 1.0)],
        [(0, 0.0), (250, -0.8), (750, 0.8), (1000, -0.6)],
        [(0, 0.0), (250, 0.3), (500, -1.0), (750, 0.0), (1000, 0.8)],
    ],
}
DEFAULT_SCORE_VARIANCES = (0.04, 0.02, 0.01, 0.005)
# most races are domestic regattas and most careers are spent in the Open group
DEFAULT_EVENT_WEIGHTS = {"DOM": 0.75, "WCJ": 0.15, "WCO": 0.10}
DEFAULT_START_AGES = {
    500: {"U21": 0.2, "U23": 0.2, "OPEN": 0.6},
    1000: {"U18": 0.1, "U21": 0.15, "U23": 0.15, "OPEN": 0.6},
}
DEFAULT_SELF_TRANSITION = 0.95


@dataclass(frozen=True)
class CovariateSchedule:
    """How an athlete moves through age groups and which events they race.

    An athlete starts in an age group drawn from ``start_age_weights`` and
    stays there for a number of races drawn uniformly from
    ``races_per_age_group`` before moving up (U18 -> U21 -> U23 -> Open).
    Each race's event type is drawn from ``event_weights``.
    """

    start_age_weights: dict
    races_per_age_group: tuple[int, int] = (4, 10)
    event_weights: dict = field(default_factory=lambda: dict(DEFAULT_EVENT_WEIGHTS))

    def to_dict(self) -> dict:
        return {
            "start_age_weights": dict(self.start_age_weights),
            "races_per_age_group": list(self.races_per_age_group),
            "event_weights": dict(self.event_weights),
        }


def default_schedule(distance_m: int) -> CovariateSchedule:
    return CovariateSchedule(dict(DEFAULT_START_AGES[distance_m]))


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """Everything needed to sample a corpus.

    With ``hmm=None`` scores are independent ``N(0, diag(score_variances))``
    draws and every race is labelled state 1.
    """

    distance_m: int
    basis: FunctionalBasis
    mean_points: tuple
    eigen_points: tuple
    score_variances: tuple
    hmm: Optional[HmmModel]
    schedule: CovariateSchedule
    noise_sd: float = 0.0
    seed: int = 0
    speed_range: tuple[float, float] = (4.2, 4.9)
    start_date: dt.date = dt.date(2010, 1, 1)

    @property
    def design(self) -> CovariateDesign:
        return self.hmm.design if self.hmm is not None else design_for_distance(self.distance_m)

    @property
    def n_pc(self) -> int:
        return len(self.eigen_points)

    def generating_model(self) -> FpcaModel:
        """The mean and orthonormal eigenfunctions as an :class:`FpcaModel`."""
        cached = self.__dict__.get("_model")
        if cached is None:
            cached = _build_generating_model(self)
            object.__setattr__(self, "_model", cached)
        return cached

    def to_dict(self) -> dict:
        d = {
            "distance_m": self.distance_m,
            "basis": self.basis.to_dict(),
            "mean_points": [list(p) for p in self.mean_points],
            "eigenfunction_points": [[list(p) for p in pts] for pts in self.eigen_points],
            "score_variances": list(self.score_variances),
            "schedule": self.schedule.to_dict(),
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "speed_range": list(self.speed_range),
            "start_date": self.start_date.isoformat(),
            "hmm": None,
        }
        if self.hmm is not None:
            d["hmm"] = {
                "initial": self.hmm.initial.tolist(),
                "transition": self.hmm.transition.tolist(),
                "coefficients": self.hmm.coefs.tolist(),
                "covariances": self.hmm.covs.tolist(),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return _spec_from_dict(d)


def _piecewise(points, path: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        arr = np.asarray(points, dtype=float)
    except (TypeError, ValueError):
        raise SpecError(path, "must be a list of [distance, value] pairs") from None
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise SpecError(path, "must be a list of at least two [distance, value] pairs")
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise SpecError(path, "distances must be strictly increasing")
    return arr[:, 0], arr[:, 1]


def _project_curve(basis: FunctionalBasis, points, path: str) -> np.ndarray:
    """L2 projection of a piecewise-linear curve onto the basis."""
    xs, ys = _piecewise(points, path)
    if xs[0] > 0 or xs[-1] < basis.domain_m:
        raise SpecError(path, f"control points must cover [0, {basis.domain_m}]")
    bp = np.union1d(basis.breakpoints, xs[(xs > 0) & (xs < basis.domain_m)])
    rule = make_quadrature(bp, max(5, basis.order))
    B = evaluate_basis(basis, rule.nodes)
    rhs = B.T @ (rule.weights * np.interp(rule.nodes, xs, ys))
    return np.linalg.solve(gram_matrix(basis), rhs)


def _gram_schmidt(vectors: Sequence[np.ndarray], G: np.ndarray, against: Sequence[np.ndarray], path: str) -> np.ndarray:
    basis_vecs = [v / np.sqrt(v @ G @ v) for v in against]
    out = []
    for k, v in enumerate(vectors):
        w = v.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for u in basis_vecs + out:
                w = w - (u @ G @ w) * u
        norm = np.sqrt(max(w @ G @ w, 0.0))
        if norm < GS_TOL:
            raise SpecError(f"{path}[{k}]", "eigenfunction is linearly dependent on the previous ones")
        out.append(w / norm)
    return np.stack(out) if out else np.zeros((0, len(G)))


def _build_generating_model(spec: GeneratorSpec) -> FpcaModel:
    basis = spec.basis
    G = gram_matrix(basis)
    mean = _project_curve(basis, spec.mean_points, "mean_points")
    raw = [_project_curve(basis, pts, f"eigenfunction_points[{k}]") for k, pts in enumerate(spec.eigen_points)]
    # orthogonal to the mean curve, so rescaling a profile does not leak into its scores
    E = _gram_schmidt(raw, G, [mean], "eigenfunction_points")
    lam = np.asarray(spec.score_variances, dtype=float)
    total = float(lam.sum())
    model = FpcaModel(basis, mean, E, lam, lam / total if total > 0 else lam, total, 0)
    object.__setattr__(model, "_gram", G)
    return model


def default_spec(distance_m: int = 500, seed: int = 0, noise_sd: float = 0.002,
                 hmm: Union[HmmModel, None, str] = "reference") -> GeneratorSpec:
    """Default generator for 500 m or 1000 m.

    The default HMM uses the reported baseline state means as intercepts, no
    covariate effects, covariance ``0.05 I`` and a sticky transition matrix
    (self-transition 0.95).
    """
    from .reference_fits import K1_500_INTERCEPTS, K1_1000_INTERCEPTS

    if distance_m not in DEFAULT_MEAN_POINTS:
        raise ValueError(f"no default spec for {distance_m} m")
    if hmm == "reference":
        icpt = np.asarray(K1_500_INTERCEPTS if distance_m == 500 else K1_1000_INTERCEPTS)
        hmm = intercept_hmm(icpt, design_for_distance(distance_m))
    return GeneratorSpec(
        distance_m=distance_m,
        basis=make_basis(distance_m),
        mean_points=tuple(tuple(p) for p in DEFAULT_MEAN_POINTS[distance_m]),
        eigen_points=tuple(tuple(tuple(p) for p in pts) for pts in DEFAULT_EIGEN_POINTS[distance_m]),
        score_variances=DEFAULT_SCORE_VARIANCES,
        hmm=hmm,
        schedule=default_schedule(distance_m),
        noise_sd=noise_sd,
        seed=seed,
    )


def intercept_hmm(intercepts, design: CovariateDesign, cov_scale: float = 0.05,
                  self_transition: float = DEFAULT_SELF_TRANSITION, initial=None) -> HmmModel:
    """HMM whose state means are ``intercepts`` regardless of covariates."""
    icpt = np.asarray(intercepts, dtype=float)
    n, p = icpt.shape
    coefs = np.zeros((n, p, design.m + 1))
    coefs[:, :, 0] = icpt
    if n == 1:
        A = np.ones((1, 1))
    else:
        A = np.full((n, n), (1 - self_transition) / (n - 1))
        np.fill_diagonal(A, self_transition)
    pi = np.full(n, 1 / n) if initial is None else np.asarray(initial, dtype=float)
    return HmmModel(pi, A, coefs, np.stack([cov_scale * np.eye(p)] * n), design)


# -- spec parsing ------------------------------------------------------------------

def _get(d: dict, key: str, path: str, default=...):
    if key in d:
        return d[key]
    if default is ...:
        raise SpecError(f"{path}{key}", "missing required field")
    return default


def _spec_from_dict(d: dict) -> GeneratorSpec:
    if not isinstance(d, dict):
        raise SpecError("$", "spec must be a JSON object")
    distance = _get(d, "distance_m", "")
    if distance not in (500, 1000):
        raise SpecError("distance_m", "must be 500 or 1000")
    try:
        basis = FunctionalBasis.from_dict(d["basis"]) if "basis" in d else make_basis(distance)
    except (KeyError, ValueError, TypeError) as exc:
        raise SpecError("basis", str(exc)) from None
    if basis.domain_m != distance:
        raise SpecError("basis.domain_m", "must equal distance_m")
    mean_points = _get(d, "mean_points", "", DEFAULT_MEAN_POINTS[distance])
    _piecewise(mean_points, "mean_points")
    eigen_points = _get(d, "eigenfunction_points", "", DEFAULT_EIGEN_POINTS[distance])
    if not isinstance(eigen_points, list) or not eigen_points:
        raise SpecError("eigenfunction_points", "must be a non-empty list of curves")
    for k, pts in enumerate(eigen_points):
        _piecewise(pts, f"eigenfunction_points[{k}]")
    n_pc = len(eigen_points)

    lam = _get(d, "score_variances", "", list(DEFAULT_SCORE_VARIANCES[:n_pc]))
    if len(lam) != n_pc or any((not isinstance(v, (int, float))) or v < 0 for v in lam):
        raise SpecError("score_variances", f"must be {n_pc} non-negative numbers")

    design = design_for_distance(distance)
    hmm = _hmm_from_dict(d.get("hmm"), design, n_pc)

    sched_d = _get(d, "schedule", "", None)
    if sched_d is None:
        schedule = default_schedule(distance)
    else:
        schedule = _schedule_from_dict(sched_d, distance)

    noise = _get(d, "noise_sd", "", 0.0)
    if not isinstance(noise, (int, float)) or noise < 0:
        raise SpecError("noise_sd", "must be a non-negative number")
    seed = _get(d, "seed", "", 0)
    if not isinstance(seed, int) or seed < 0:
        raise SpecError("seed", "must be a non-negative integer")
    speed = _get(d, "speed_range", "", [4.2, 4.9])
    if len(speed) != 2 or not 0 < speed[0] <= speed[1]:
        raise SpecError("speed_range", "must be [low, high] with 0 < low <= high")
    try:
        start = dt.date.fromisoformat(_get(d, "start_date", "", "2010-01-01"))
    except (TypeError, ValueError):
        raise SpecError("start_date", "must be YYYY-MM-DD") from None

    spec = GeneratorSpec(
        distance_m=distance,
        basis=basis,
        mean_points=tuple(tuple(p) for p in mean_points),
        eigen_points=tuple(tuple(tuple(p) for p in pts) for pts in eigen_points),
        score_variances=tuple(float(v) for v in lam),
        hmm=hmm,
        schedule=schedule,
        noise_sd=float(noise),
        seed=seed,
        speed_range=(float(speed[0]), float(speed[1])),
        start_date=start,
    )
    spec.generating_model()  # surfaces Gram-Schmidt failures now
    return spec


def _prob_vector(v, path: str, n: Optional[int] = None) -> np.ndarray:
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise SpecError(path, "must be a list of numbers") from None
    if a.ndim != 1 or (n is not None and len(a) != n):
        raise SpecError(path, f"must have {n} entries")
    if np.any(a < 0) or abs(a.sum() - 1) > 1e-9:
        raise SpecError(path, "must be non-negative and sum to 1")
    return a


def _hmm_from_dict(h, design: CovariateDesign, n_pc: int) -> Optional[HmmModel]:
    if h is None:
        return None
    if not isinstance(h, dict):
        raise SpecError("hmm", "must be an object or null")
    pi = _prob_vector(_get(h, "initial", "hmm."), "hmm.initial")
    n = len(pi)
    A = _get(h, "transition", "hmm.")
    if len(A) != n:
        raise SpecError("hmm.transition", f"must have {n} rows")
    A = np.stack([_prob_vector(row, f"hmm.transition[{i}]", n) for i, row in enumerate(A)])
    if "coefficients" in h:
        coefs = np.asarray(h["coefficients"], dtype=float)
        if coefs.shape != (n, n_pc, design.m + 1):
            raise SpecError("hmm.coefficients", f"must have shape ({n}, {n_pc}, {design.m + 1})")
    else:
        icpt = np.asarray(_get(h, "intercepts", "hmm."), dtype=float)
        if icpt.shape != (n, n_pc):
            raise SpecError("hmm.intercepts", f"must have shape ({n}, {n_pc})")
        coefs = np.zeros((n, n_pc, design.m + 1))
        coefs[:, :, 0] = icpt
    if "covariances" in h:
        covs = np.asarray(h["covariances"], dtype=float)
        if covs.shape != (n, n_pc, n_pc):
            raise SpecError("hmm.covariances", f"must have shape ({n}, {n_pc}, {n_pc})")
    else:
        scale = _get(h, "covariance_scale", "hmm.", 0.05)
        covs = np.stack([float(scale) * np.eye(n_pc)] * n)
    for j, S in enumerate(covs):
        if not np.allclose(S, S.T) or np.linalg.eigvalsh(S)[0] <= 0:
            raise SpecError(f"hmm.covariances[{j}]", "must be symmetric positive definite")
    return HmmModel(pi, A, coefs, covs, design)


def _schedule_from_dict(s, distance: int) -> CovariateSchedule:
    if not isinstance(s, dict):
        raise SpecError("schedule", "must be an object")
    ages = _get(s, "start_age_weights", "schedule.")
    for k in ages:
        if k not in AGE_PROGRESSION:
            raise SpecError(f"schedule.start_age_weights.{k}", "unknown age group")
        if k == "U18" and distance == 500:
            raise SpecError("schedule.start_age_weights.U18", "500 m design has no U18 level")
    _prob_vector(list(ages.values()), "schedule.start_age_weights")
    rpa = _get(s, "races_per_age_group", "schedule.", [4, 10])
    if len(rpa) != 2 or not 1 <= rpa[0] <= rpa[1]:
        raise SpecError("schedule.races_per_age_group", "must be [min, max] with 1 <= min <= max")
    events = _get(s, "event_weights", "schedule.", DEFAULT_EVENT_WEIGHTS)
    for k in events:
        if k not in {e.value for e in EventType}:
            raise SpecError(f"schedule.event_weights.{k}", "unknown event type")
    _prob_vector(list(events.values()), "schedule.event_weights")
    return CovariateSchedule(dict(ages), (int(rpa[0]), int(rpa[1])), dict(events))


# -- sampling -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CareerTruth:
    athlete_id: str
    state_path: np.ndarray  # 1-based labels of the generating HMM
    planted_scores: np.ndarray
    scores: np.ndarray  # scores of the curve ingest reconstructs (noise-free)
    covariates: np.ndarray

    def to_dict(self) -> dict:
        return {
            "athlete_id": self.athlete_id,
            "state_path": self.state_path.tolist(),
            "planted_scores": self.planted_scores.tolist(),
            "scores": self.scores.tolist(),
        }


def sample_state_path(hmm: HmmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """0-based state path of length ``n`` from the Markov chain."""
    path = np.empty(n, dtype=int)
    if n == 0:
        return path
    cum_A = np.cumsum(hmm.transition, axis=1)
    path[0] = min(int(np.searchsorted(np.cumsum(hmm.initial), rng.random(), side="right")), hmm.n_states - 1)
    u = rng.random(n)
    for t in range(1, n):
        path[t] = min(int(np.searchsorted(cum_A[path[t - 1]], u[t], side="right")), hmm.n_states - 1)
    return path


def _covariate_path(schedule: CovariateSchedule, n: int, rng: np.random.Generator):
    ages_w = schedule.start_age_weights
    names = list(ages_w)
    start = names[rng.choice(len(names), p=np.asarray(list(ages_w.values()), dtype=float))]
    level = AGE_PROGRESSION.index(start)
    lo, hi = schedule.races_per_age_group
    left = int(rng.integers(lo, hi + 1))
    ev_names = list(schedule.event_weights)
    ev_p = np.asarray(list(schedule.event_weights.values()), dtype=float)
    ages, events = [], []
    for _ in range(n):
        if left == 0 and level < len(AGE_PROGRESSION) - 1:
            level += 1
            left = int(rng.integers(lo, hi + 1))
        ages.append(AgeGroup(AGE_PROGRESSION[level]))
        events.append(EventType(ev_names[rng.choice(len(ev_names), p=ev_p)]))
        left = max(left - 1, 0)
    return ages, events


def sample_career(spec: GeneratorSpec, athlete_id: str, n_races: int,
                  rng: Union[np.random.Generator, int, None] = None) -> tuple[CareerSequence, CareerTruth]:
    """Sample one athlete's career and the hidden truth behind it."""
    rng = np.random.default_rng(rng)
    model = spec.generating_model()
    design = spec.design
    grid = segment_grid(spec.distance_m)
    Bg = evaluate_basis(spec.basis, grid)
    G = model.gram

    ages, events = _covariate_path(spec.schedule, n_races, rng)
    X = np.stack([design.encode(a, e) for a, e in zip(ages, events)]) if n_races else np.zeros((0, design.m))

    if spec.hmm is not None:
        states = sample_state_path(spec.hmm, n_races, rng)
        X1 = np.concatenate([np.ones((n_races, 1)), X], axis=1)
        means = np.einsum("tpk,tk->tp", spec.hmm.coefs[states], X1)
        chol = np.linalg.cholesky(spec.hmm.covs)
        planted = means + np.einsum("tpq,tq->tp", chol[states], rng.standard_normal((n_races, spec.n_pc)))
    else:
        states = np.zeros(n_races, dtype=int)
        planted = rng.standard_normal((n_races, spec.n_pc)) * np.sqrt(np.asarray(spec.score_variances))

    coeffs = model.mean_coeffs + planted @ model.eigenfunction_coeffs
    clean = coeffs @ Bg.T
    noisy = clean + spec.noise_sd * rng.standard_normal(clean.shape)
    noisy = np.maximum(noisy, MIN_VELOCITY)

    harm = len(grid) / np.sum(1.0 / clean, axis=1)
    realized = (coeffs / harm[:, None] - model.mean_coeffs) @ G @ model.eigenfunction_coeffs.T

    speeds = rng.uniform(*spec.speed_range, size=n_races)
    gaps = rng.integers(7, 60, size=n_races)
    date = spec.start_date + dt.timedelta(days=int(rng.integers(0, 5 * 365)))
    phases = [None, RacePhase.HEAT, RacePhase.SEMI, RacePhase.FINAL]
    races = []
    for t in range(n_races):
        v_abs = noisy[t] / (len(grid) / np.sum(1.0 / noisy[t])) * speeds[t]
        times = tuple(round(float(x), TIME_DECIMALS) for x in SEGMENT_M / v_abs)
        if t:
            date = date + dt.timedelta(days=int(gaps[t]))
        rec = RaceRecord(athlete_id, date, spec.distance_m, times, ages[t], events[t],
                         phases[int(rng.integers(0, len(phases)))])
        races.append(CareerRace(rec, normalize_profile(rec)))

    truth = CareerTruth(athlete_id, states + 1, planted, realized, X)
    return CareerSequence(athlete_id, spec.distance_m, tuple(races)), truth


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    spec: GeneratorSpec
    careers: tuple[CareerSequence, ...]
    truths: tuple[CareerTruth, ...]

    @property
    def records(self) -> list[RaceRecord]:
        return [r for c in self.careers for r in c.records]

    def csv_text(self) -> str:
        return serialize_race_csv(self.records)

    def truth_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n_athletes": len(self.careers),
            "athletes": [t.to_dict() for t in self.truths],
        }

    def truth_text(self) -> str:
        return json.dumps(self.truth_dict(), indent=1, sort_keys=True) + "\n"

    def write(self, csv_path: Union[str, Path], truth_path: Union[str, Path]) -> None:
        atomic_write(csv_path, self.csv_text())
        atomic_write(truth_path, self.truth_text())


def generate_dataset(spec: GeneratorSpec, n_athletes: int,
                     races_per_athlete: Union[int, tuple[int, int]] = 10) -> SyntheticDataset:
    """Sample ``n_athletes`` careers; deterministic given ``spec.seed``.

    ``races_per_athlete`` is a fixed count or an inclusive ``(min, max)``
    range drawn per athlete.
    """
    if n_athletes < 0:
        raise ValueError("n_athletes must be non-negative")
    root = np.random.SeedSequence(spec.seed)
    careers, truths = [], []
    width = max(3, len(str(n_athletes)))
    for k, child in enumerate(root.spawn(n_athletes)):
        rng = np.random.default_rng(child)
        if isinstance(races_per_athlete, int):
            n = races_per_athlete
        else:
            lo, hi = races_per_athlete
            n = int(rng.integers(lo, hi + 1))
        career, truth = sample_career(spec, f"A{k + 1:0{width}d}", n, rng)
        careers.append(career)
        truths.append(truth)
    return SyntheticDataset(spec, tuple(careers), tuple(truths))


def atomic_write(path: Union[str, Path], text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

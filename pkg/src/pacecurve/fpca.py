"""Functional principal components of smoothed pacing profiles.

The covariance operator of spline-expanded curves reduces to a matrix problem
in coefficient space.  With coefficient covariance ``S`` and Gram matrix
``G`` the eigenfunctions ``phi = B(x) @ e`` solve ``S G e = lam e``; we solve
the symmetric form ``G^1/2 S G^1/2 u = lam u`` and map back with
``e = G^-1/2 u``, which makes the eigenfunctions orthonormal in L2.

Scores are inner products of an eigenfunction with the mean-centred profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np

from .errors import BasisMismatch, InsufficientData, NonPsdCovariance, ScoreMismatch
from .fbasis import (
    FunctionalBasis,
    SmoothedProfile,
    basis_quadrature,
    evaluate_basis,
    gram_matrix,
)

DEFAULT_N_PC = 4
NEG_EIG_TOL = 1e-10
MIN_TOTAL_VARIANCE = 1e-14
SIGN_TIE_TOL = 1e-12
SCORE_AGREEMENT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FpcaModel:
    basis: FunctionalBasis
    mean_coeffs: np.ndarray
    eigenfunction_coeffs: np.ndarray  # (n_pc, n_basis), one eigenfunction per row
    eigenvalues: np.ndarray
    variance_explained: np.ndarray
    total_variance: float
    n_train: int = 0

    def __post_init__(self):
        for name in ("mean_coeffs", "eigenfunction_coeffs", "eigenvalues", "variance_explained"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.eigenfunction_coeffs.ndim != 2:
            object.__setattr__(
                self, "eigenfunction_coeffs", self.eigenfunction_coeffs.reshape(-1, self.basis.n_basis)
            )

    @property
    def n_pc(self) -> int:
        return self.eigenfunction_coeffs.shape[0]

    @property
    def gram(self) -> np.ndarray:
        g = self.__dict__.get("_gram")
        if g is None:
            g = gram_matrix(self.basis)
            object.__setattr__(self, "_gram", g)
        return g

    @property
    def mean_function(self) -> SmoothedProfile:
        return SmoothedProfile(self.basis, self.mean_coeffs)

    def eigenfunction(self, j: int) -> SmoothedProfile:
        """The j-th eigenfunction (1-based) as a spline."""
        _check_pc_index(self, j)
        return SmoothedProfile(self.basis, self.eigenfunction_coeffs[j - 1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "basis": self.basis.to_dict(),
            "n_pc": self.n_pc,
            "mean_coeffs": self.mean_coeffs.tolist(),
            "eigenfunction_coeffs": self.eigenfunction_coeffs.ravel().tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "variance_explained": self.variance_explained.tolist(),
            "total_variance": float(self.total_variance),
            "n_train": int(self.n_train),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FpcaModel":
        basis = FunctionalBasis.from_dict(d["basis"])
        n_pc = int(d["n_pc"])
        phi = np.asarray(d["eigenfunction_coeffs"], dtype=float).reshape(n_pc, basis.n_basis)
        return cls(
            basis,
            np.asarray(d["mean_coeffs"], dtype=float),
            phi,
            np.asarray(d["eigenvalues"], dtype=float),
            np.asarray(d["variance_explained"], dtype=float),
            float(d["total_variance"]),
            int(d.get("n_train", 0)),
        )


@dataclass(frozen=True, eq=False)
class PcScores:
    scores: np.ndarray
    race: Any = field(default=None)

    def __post_init__(self):
        s = np.array(self.scores, dtype=float)
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.scores)


def _coefficient_matrix(profiles: Sequence[SmoothedProfile], basis: Optional[FunctionalBasis] = None) -> np.ndarray:
    basis = basis or profiles[0].basis
    for p in profiles:
        if p.basis != basis:
            raise BasisMismatch("all profiles must share one basis")
    return np.stack([p.coeffs for p in profiles])


def _sqrt_and_inv_sqrt(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, Q = np.linalg.eigh(G)
    return (Q * np.sqrt(w)) @ Q.T, (Q / np.sqrt(w)) @ Q.T


def _orient(basis: FunctionalBasis, E: np.ndarray) -> np.ndarray:
    """Flip each eigenfunction so its integral over the first half is >= 0.

    Near-zero integrals fall back to the sign of the value at a quarter of the
    domain.
    """
    half = basis_quadrature(basis, upper=basis.domain_m / 2)
    half_integrals = half.weights @ evaluate_basis(basis, half.nodes) @ E.T
    quarter = evaluate_basis(basis, [basis.domain_m / 4])[0] @ E.T
    signs = np.where(
        np.abs(half_integrals) > SIGN_TIE_TOL, np.sign(half_integrals), np.where(quarter < 0, -1.0, 1.0)
    )
    return E * signs[:, None]


def fit_fpca(profiles: Sequence[SmoothedProfile], n_pc: int = DEFAULT_N_PC) -> FpcaModel:
    """Fit ``n_pc`` functional principal components.

    Parameters
    ----------
    profiles : sequence of SmoothedProfile
        Smoothed profiles on a shared basis; at least ``n_pc + 1`` of them.
    n_pc : int
        Number of components to retain.

    Returns
    -------
    FpcaModel
        Eigenvalues are sample variances (denominator ``N - 1``) of the
        scores, sorted descending.
    """
    if n_pc < 0:
        raise ValueError("n_pc must be non-negative")
    if len(profiles) < n_pc + 1 or len(profiles) < 2:
        raise InsufficientData(f"need at least {max(n_pc + 1, 2)} profiles, got {len(profiles)}")
    basis = profiles[0].basis
    if n_pc > basis.n_basis:
        raise InsufficientData(f"cannot extract {n_pc} components from a {basis.n_basis}-function basis")

    C = _coefficient_matrix(profiles, basis)
    mean = C.mean(axis=0)
    D = C - mean
    S = D.T @ D / (len(C) - 1)

    G = gram_matrix(basis)
    G_half, G_inv_half = _sqrt_and_inv_sqrt(G)
    M = G_half @ S @ G_half
    lam, U = np.linalg.eigh((M + M.T) / 2)
    lam, U = lam[::-1], U[:, ::-1]

    if lam[-1] < -NEG_EIG_TOL:
        raise NonPsdCovariance(f"covariance has eigenvalue {lam[-1]:.3e}")
    lam = np.clip(lam, 0.0, None)
    total = float(lam.sum())
    if n_pc > 0 and total < MIN_TOTAL_VARIANCE:
        raise InsufficientData(f"profiles carry no variance (total {total:.3e})")

    E = _orient(basis, (G_inv_half @ U[:, :n_pc]).T)
    frac = lam[:n_pc] / total if total > 0 else np.zeros(n_pc)
    model = FpcaModel(basis, mean, E, lam[:n_pc], frac, total, len(C))
    object.__setattr__(model, "_gram", G)
    return model


def _check_same_basis(model: FpcaModel, profile: SmoothedProfile):
    if profile.basis != model.basis:
        raise BasisMismatch("profile and model use different bases")


def project_scores(model: FpcaModel, profile: SmoothedProfile, verify: bool = False, race=None) -> PcScores:
    """Scores of one profile: ``(c - c_mean)^T G e_j`` for each component.

    With ``verify=True`` the scores are also computed by quadrature of
    ``phi_j * (f - mean)`` and a :class:`ScoreMismatch` is raised if the two
    routes disagree by more than 1e-8.
    """
    _check_same_basis(model, profile)
    scores = (profile.coeffs - model.mean_coeffs) @ model.gram @ model.eigenfunction_coeffs.T
    if verify:
        quad = project_scores_quadrature(model, profile).scores
        err = np.max(np.abs(quad - scores), initial=0.0)
        if err > SCORE_AGREEMENT_TOL:
            raise ScoreMismatch(f"quadrature and coefficient scores differ by {err:.3e}")
    return PcScores(scores, race)


def project_scores_quadrature(model: FpcaModel, profile: SmoothedProfile, race=None) -> PcScores:
    """Scores by direct numerical integration of ``phi_j(x) (f(x) - mean(x))``."""
    _check_same_basis(model, profile)
    rule = basis_quadrature(model.basis)
    B = evaluate_basis(model.basis, rule.nodes)
    centred = B @ (profile.coeffs - model.mean_coeffs)
    phis = B @ model.eigenfunction_coeffs.T
    return PcScores((rule.weights * centred) @ phis, race)


def project_many(model: FpcaModel, profiles: Sequence[SmoothedProfile]) -> np.ndarray:
    """Score matrix of shape ``(len(profiles), n_pc)``."""
    if not profiles:
        return np.zeros((0, model.n_pc))
    C = _coefficient_matrix(profiles, model.basis)
    return (C - model.mean_coeffs) @ model.gram @ model.eigenfunction_coeffs.T


def reconstruct_profile(model: FpcaModel, scores: Union[PcScores, Sequence[float]], k: Optional[int] = None) -> SmoothedProfile:
    """Mean plus the first ``k`` score-weighted eigenfunctions."""
    s = scores.scores if isinstance(scores, PcScores) else np.asarray(scores, dtype=float)
    if k is None:
        k = model.n_pc
    if not 0 <= k <= model.n_pc:
        raise ValueError(f"k must lie in [0, {model.n_pc}], got {k}")
    if len(s) < k:
        raise ValueError(f"need at least {k} scores, got {len(s)}")
    coeffs = model.mean_coeffs + s[:k] @ model.eigenfunction_coeffs[:k]
    return SmoothedProfile(model.basis, coeffs)


def variance_report(model: FpcaModel) -> list[tuple[int, float, float]]:
    """Rows of ``(component, fraction of variance, cumulative fraction)``."""
    frac = model.variance_explained
    cum = np.cumsum(frac)
    return [(j + 1, float(f), float(c)) for j, (f, c) in enumerate(zip(frac, cum))]


def _check_pc_index(model: FpcaModel, j: int):
    if not 1 <= j <= model.n_pc:
        raise IndexError(f"component index must be in [1, {model.n_pc}], got {j}")


def eigenfunction_curve(model: FpcaModel, j: int, xs) -> np.ndarray:
    """Values of the j-th eigenfunction (1-based) at ``xs``."""
    _check_pc_index(model, j)
    return evaluate_basis(model.basis, xs) @ model.eigenfunction_coeffs[j - 1]


def l2_distance(a: SmoothedProfile, b: SmoothedProfile, gram: Optional[np.ndarray] = None) -> float:
    """L2 norm of ``a - b`` over the domain."""
    if a.basis != b.basis:
        raise BasisMismatch("profiles use different bases")
    G = gram if gram is not None else gram_matrix(a.basis)
    d = a.coeffs - b.coeffs
    return float(np.sqrt(max(d @ G @ d, 0.0)))


__all__ = [
    "FpcaModel",
    "PcScores",
    "fit_fpca",
    "project_scores",
    "project_scores_quadrature",
    "project_many",
    "reconstruct_profile",
    "variance_report",
    "eigenfunction_curve",
    "l2_distance",
]

"""Clamped B-spline bases on a race-distance domain.

Profiles are smoothed by ordinary (optionally penalized) least squares onto
an equally-knotted clamped B-spline basis.  Integrals over the domain use a
composite Gauss-Legendre rule with nodes placed between consecutive knots,
so inner products of spline functions are exact up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BasisMismatch, OutOfDomain, SingularDesign, TooManyBasisFunctions
from .ingest import SEGMENT_M, VelocityProfile

DEFAULT_ORDER = 4
DEFAULT_N_BASIS = {500: 8, 1000: 12}
GAUSS_NODES_PER_INTERVAL = 5
_DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class FunctionalBasis:
    """Clamped B-spline basis of a given order on ``[0, domain_m]``.

    ``order`` is degree + 1, so cubic splines have order 4.
    """

    order: int
    interior_knots: tuple[float, ...]
    domain_m: float

    def __post_init__(self):
        object.__setattr__(self, "interior_knots", tuple(float(k) for k in self.interior_knots))
        if self.order < 1:
            raise ValueError("order must be >= 1")
        k = np.asarray(self.interior_knots)
        if k.size and (np.any(np.diff(k) <= 0) or k[0] <= 0 or k[-1] >= self.domain_m):
            raise ValueError("interior knots must be strictly increasing inside (0, domain)")

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + self.order

    @property
    def domain(self) -> tuple[float, float]:
        return (0.0, float(self.domain_m))

    @cached_property
    def knots(self) -> np.ndarray:
        """Full knot vector with end knots repeated ``order`` times."""
        return np.concatenate(
            [np.zeros(self.order), self.interior_knots, np.full(self.order, float(self.domain_m))]
        )

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], self.interior_knots, [float(self.domain_m)]])

    def __call__(self, xs) -> np.ndarray:
        return evaluate_basis(self, xs)

    def to_dict(self) -> dict:
        n_int = len(self.interior_knots)
        equal = np.allclose(self.interior_knots, _equal_knots(self.domain_m, n_int))
        d = {"order": self.order, "n_basis": self.n_basis, "domain_m": _num(self.domain_m)}
        if not equal:
            d["interior_knots"] = list(self.interior_knots)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionalBasis":
        order = int(d["order"])
        domain = d["domain_m"]
        if "interior_knots" in d:
            return cls(order, tuple(d["interior_knots"]), domain)
        n_int = int(d["n_basis"]) - order
        return cls(order, tuple(_equal_knots(domain, n_int)), domain)


def _num(x):
    return int(x) if float(x).is_integer() else float(x)


def _equal_knots(domain_m: float, n_interior: int) -> np.ndarray:
    return domain_m * np.arange(1, n_interior + 1) / (n_interior + 1)


def make_basis(
    distance_m: int,
    n_basis: Optional[int] = None,
    order: int = DEFAULT_ORDER,
    n_points: Optional[int] = None,
) -> FunctionalBasis:
    """Equally-knotted clamped basis for a race distance.

    ``n_points`` is the number of observations each profile will have; it
    defaults to one per 50 m segment.  Asking for more basis functions than
    points would leave the least-squares fit underdetermined.
    """
    if n_basis is None:
        n_basis = DEFAULT_N_BASIS.get(int(distance_m), DEFAULT_ORDER + 4)
    if n_points is None:
        n_points = int(distance_m) // SEGMENT_M
    if order < 2:
        raise ValueError(f"order must be at least 2, got {order}")
    if n_basis < order:
        raise ValueError(f"n_basis ({n_basis}) must be at least the order ({order})")
    if n_basis > n_points:
        raise TooManyBasisFunctions(
            f"{n_basis} basis functions for {n_points} points per profile"
        )
    return FunctionalBasis(order, tuple(_equal_knots(distance_m, n_basis - order)), distance_m)


def _check_domain(basis: FunctionalBasis, xs: np.ndarray) -> np.ndarray:
    lo, hi = basis.domain
    tol = _DOMAIN_TOL * max(1.0, hi)
    if np.any(xs < lo - tol) or np.any(xs > hi + tol) or np.any(~np.isfinite(xs)):
        raise OutOfDomain(f"evaluation points must lie in [{lo}, {hi}]")
    return np.clip(xs, lo, hi)


def evaluate_basis(basis: FunctionalBasis, xs) -> np.ndarray:
    """Matrix ``B[i, k] = B_k(xs[i])`` by the Cox-de Boor recursion."""
    xs = _check_domain(basis, np.atleast_1d(np.asarray(xs, dtype=float)))
    t = basis.knots
    n_int = len(t) - 1

    # order-1 (piecewise constant) functions on half-open spans [t_i, t_{i+1})
    B = ((xs[:, None] >= t[None, :-1]) & (xs[:, None] < t[None, 1:])).astype(float)
    # right endpoint belongs to the last non-empty span
    last = np.flatnonzero(t[1:] > t[:-1])[-1]
    B[xs >= t[-1], :] = 0.0
    B[xs >= t[-1], last] = 1.0

    for k in range(2, basis.order + 1):
        m = n_int - k + 1
        left_den = t[k - 1 : k - 1 + m] - t[:m]
        right_den = t[k : k + m] - t[1 : 1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (xs[:, None] - t[None, :m]) / left_den, 0.0)
            right = np.where(right_den > 0, (t[None, k : k + m] - xs[:, None]) / right_den, 0.0)
        B = left * B[:, :m] + right * B[:, 1 : m + 1]
    return B


# -- quadrature ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def length(self) -> float:
        return float(np.sum(self.weights))


def make_quadrature(breakpoints: Sequence[float], n_per_interval: int = GAUSS_NODES_PER_INTERVAL) -> QuadratureRule:
    """Composite Gauss-Legendre rule; exact for polynomials of degree
    ``2 * n_per_interval - 1`` on each sub-interval."""
    bp = np.asarray(breakpoints, dtype=float)
    if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
        raise ValueError("breakpoints must be strictly increasing with at least two entries")
    x, w = np.polynomial.legendre.leggauss(n_per_interval)
    a, b = bp[:-1, None], bp[1:, None]
    half = (b - a) / 2
    nodes = (a + b) / 2 + half * x[None, :]
    weights = half * w[None, :]
    return QuadratureRule(nodes.ravel(), weights.ravel(), 2 * n_per_interval - 1)


def basis_quadrature(basis: FunctionalBasis, upper: Optional[float] = None) -> QuadratureRule:
    """Rule over ``[0, upper]`` (default: the whole domain) that is exact for
    products of two splines of this basis."""
    bp = basis.breakpoints
    if upper is not None:
        bp = np.concatenate([bp[bp < upper], [upper]])
    n = max(GAUSS_NODES_PER_INTERVAL, basis.order)
    return make_quadrature(bp, n)


def inner_product(f: Callable, g: Callable, rule: QuadratureRule) -> float:
    """``sum_q w_q f(x_q) g(x_q)`` for vectorized callables ``f`` and ``g``."""
    # f * g first so that swapping the arguments gives a bit-identical result
    fg = np.asarray(f(rule.nodes)) * np.asarray(g(rule.nodes))
    return float(np.sum(rule.weights * fg))


def gram_matrix(basis: FunctionalBasis, rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """``G[j, k] = <B_j, B_k>`` over the domain."""
    rule = rule or basis_quadrature(basis)
    B = evaluate_basis(basis, rule.nodes)
    G = (B * rule.weights[:, None]).T @ B
    return (G + G.T) / 2


# -- smoothing -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SmoothedProfile:
    basis: FunctionalBasis
    coeffs: np.ndarray
    rss: float = float("nan")

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.basis.n_basis,):
            raise ValueError(f"expected {self.basis.n_basis} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, xs) -> np.ndarray:
        return eval_smoothed(self, xs)


def _difference_penalty(n: int, order: int = 2) -> np.ndarray:
    D = np.diff(np.eye(n), n=order, axis=0)
    return D.T @ D


def _smoothing_operator(basis: FunctionalBasis, grid: np.ndarray, penalty: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (design matrix, hat-to-coefficient map) for grid values."""
    X = evaluate_basis(basis, grid)
    if penalty == 0.0:
        if np.linalg.matrix_rank(X) < basis.n_basis:
            raise SingularDesign("basis evaluations at the profile grid are collinear")
        return X, np.linalg.pinv(X)
    A = X.T @ X + penalty * _difference_penalty(basis.n_basis)
    try:
        return X, np.linalg.solve(A, X.T)
    except np.linalg.LinAlgError:
        raise SingularDesign("penalized normal equations are singular") from None


def smooth_profile(p: VelocityProfile, basis: FunctionalBasis, penalty: float = 0.0) -> SmoothedProfile:
    """Least-squares fit of the basis to one normalized profile.

    ``penalty`` adds a second-order difference penalty on the coefficients;
    the default of zero is plain least squares.  The returned profile carries
    the residual sum of squares on the grid.
    """
    return smooth_profiles([p], basis, penalty)[0]


def smooth_profiles(
    profiles: Sequence[VelocityProfile], basis: FunctionalBasis, penalty: float = 0.0
) -> list[SmoothedProfile]:
    """Vectorized :func:`smooth_profile` for profiles sharing one grid."""
    if not profiles:
        return []
    grid = profiles[0].grid_m
    for p in profiles:
        if p.distance_m != basis.domain_m:
            raise BasisMismatch(f"profile distance {p.distance_m} m vs basis domain {basis.domain_m} m")
        if not np.array_equal(p.grid_m, grid):
            raise BasisMismatch("profiles must share one grid to be smoothed together")
    X, op = _smoothing_operator(basis, grid, penalty)
    V = np.stack([p.v_norm for p in profiles])
    C = V @ op.T
    rss = np.sum((V - C @ X.T) ** 2, axis=1)
    return [SmoothedProfile(basis, c, float(r)) for c, r in zip(C, rss)]


def eval_smoothed(s: SmoothedProfile, xs) -> np.ndarray:
    return evaluate_basis(s.basis, xs) @ s.coeffs

"""Problem containers, dense factorization contracts, and accuracy metrics.

Everything here is uncompressed-side machinery: the least-squares instance
itself, full solves used as references, singular-value data of (sketched)
matrices, and the metrics every solver is judged by.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import (
    DegenerateInstanceError,
    DimensionError,
    RankDeficientError,
)

# Relative singular-value cutoff below which a matrix counts as rank deficient.
RANK_REL_TOL = 1e-12


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got ndim={A.ndim}")
    return A


def _as_vector(v, length=None, name="vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got ndim={v.ndim}")
    if length is not None and v.shape[0] != length:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {length}")
    return v


@dataclass(eq=False)
class LSProblem:
    """A dense overdetermined least-squares instance ``min ||Ax - b||``.

    ``A`` is M x N with M >= N >= 1 and full column rank; construction
    rejects matrices whose smallest singular value falls below
    ``RANK_REL_TOL`` times the largest.
    """

    A: np.ndarray
    b: np.ndarray
    _svals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.A = _as_matrix(self.A)
        M, N = self.A.shape
        if not (M >= N >= 1):
            raise DimensionError(f"need M >= N >= 1, got shape {self.A.shape}")
        self.b = _as_vector(self.b, length=M, name="b")
        if not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.b)):
            raise ValueError("problem data must be finite")
        svals = np.linalg.svd(self.A, compute_uv=False)
        if svals[-1] <= RANK_REL_TOL * svals[0]:
            raise RankDeficientError(
                f"A is numerically rank deficient "
                f"(sigma_min/sigma_max = {svals[-1] / svals[0]:.3e})"
            )
        self._svals = svals

    @property
    def shape(self):
        return self.A.shape

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    def condition_number(self) -> float:
        return float(self._svals[0] / self._svals[-1])


@dataclass(eq=False)
class SpectralData:
    """Thin SVD of an m x N matrix (m >= N): ``P = U diag(sigma) V^T``.

    ``sigma`` is descending and may contain zeros; ``V`` is square N x N.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = _as_matrix(self.U)
        self.V = _as_matrix(self.V)
        self.sigma = _as_vector(self.sigma, name="sigma")
        m, N = self.U.shape
        if self.V.shape != (N, N) or self.sigma.shape != (N,):
            raise DimensionError("inconsistent SVD factor shapes")
        if np.any(np.diff(self.sigma) > 0) or np.any(self.sigma < 0):
            raise ValueError("singular values must be nonnegative and descending")

    @classmethod
    def from_matrix(cls, P) -> "SpectralData":
        P = _as_matrix(P)
        m, N = P.shape
        if m < N:
            raise DimensionError(
                f"spectral data needs at least as many rows as columns, got {P.shape}"
            )
        U, sigma, Vt = np.linalg.svd(P, full_matrices=False)
        return cls(U=U, sigma=sigma, V=Vt.T)

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T


@dataclass
class SolverReport:
    """Accuracy and timing summary for one solver run on one instance."""

    method: str
    residual_norm: float
    relative_accuracy: float
    eps_optimality: float
    timings: dict

    def total_time(self) -> float:
        return float(sum(self.timings.values()))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "residual_norm": self.residual_norm,
            "relative_accuracy": self.relative_accuracy,
            "eps_optimality": self.eps_optimality,
            "timings": dict(self.timings),
            "total_time": self.total_time(),
        }


def solve_ols(problem: LSProblem, method: str = "factorized") -> np.ndarray:
    """Solve the uncompressed problem ``min 0.5 ||Ax - b||^2``.

    ``method="factorized"`` uses an orthogonal (SVD-based) factorization;
    ``method="normal-equations"`` forms ``A^T A`` and solves the SPD system,
    which is faster but condition-sensitive.
    """
    A, b = problem.A, problem.b
    if method == "factorized":
        x, _, rank, _ = np.linalg.lstsq(A, b, rcond=RANK_REL_TOL)
        if rank < problem.N:
            raise RankDeficientError(f"factorization detected rank {rank} < {problem.N}")
        return x
    if method == "normal-equations":
        gram = A.T @ A
        try:
            factor = cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise RankDeficientError(f"normal equations are singular: {exc}") from exc
        return cho_solve(factor, A.T @ b)
    raise ValueError(f"unknown OLS method {method!r}")


def eps_optimality(xhat, problem: LSProblem, x_ls) -> float:
    """Prediction-error ratio ``||A (xhat - x_ls)|| / ||A x_ls||``."""
    xhat = _as_vector(xhat, length=problem.N, name="xhat")
    x_ls = _as_vector(x_ls, length=problem.N, name="x_ls")
    denom = float(np.linalg.norm(problem.A @ x_ls))
    if denom == 0.0:
        raise DegenerateInstanceError("||A x_ls|| is zero; ratio undefined")
    return float(np.linalg.norm(problem.A @ (xhat - x_ls))) / denom


def relative_residual_profile(residuals):
    """Empirical CDF of relative-residual factors.

    Returns ``[(k/n, v_k)]`` with values sorted ascending; the step at
    fraction 0.5 is the (lower, for even n) median.
    """
    values = [float(v) for v in residuals]
    if not values:
        raise ValueError("residual list is empty")
    if any(v < 0 for v in values):
        raise ValueError("residual factors must be nonnegative")
    values.sort()
    n = len(values)
    return [((k + 1) / n, v) for k, v in enumerate(values)]


def profile_quantile(profile, fraction: float) -> float:
    """Value of the profile step function at ``fraction`` in (0, 1]."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    for frac, value in profile:
        if frac >= fraction - 1e-12:
            return value
    return profile[-1][1]


def make_report(problem: LSProblem, x_ls, xhat, method: str, timings=None) -> SolverReport:
    """Score ``xhat`` against the reference solution ``x_ls``."""
    residual = float(np.linalg.norm(problem.A @ np.asarray(xhat, dtype=float) - problem.b))
    residual_ls = float(np.linalg.norm(problem.A @ np.asarray(x_ls, dtype=float) - problem.b))
    if residual_ls > 0:
        rel_acc = residual / residual_ls - 1.0
    else:
        # consistent system: any nonzero residual is infinitely worse
        rel_acc = 0.0 if residual <= 1e-12 * float(np.linalg.norm(problem.b)) else float("inf")
    return SolverReport(
        method=method,
        residual_norm=residual,
        relative_accuracy=rel_acc,
        eps_optimality=eps_optimality(xhat, problem, x_ls),
        timings=dict(timings or {}),
    )

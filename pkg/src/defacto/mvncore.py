"""Multivariate-normal building blocks: factorization, partitioned regression
and conditional distributions.

Everything here works on small dense matrices (one row/column per visit).
Solves go through the Cholesky factor; no explicit inverses are formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NotPositiveDefinite, ShapeMismatch

SYMMETRY_RTOL = 1e-12
PIVOT_RTOL = 1e-10


def _check_symmetric(cov):
    scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
    if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * scale:
        raise NotPositiveDefinite("covariance matrix is not symmetric")


def cholesky(cov, check_symmetry=True):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If the matrix is asymmetric, or any squared pivot is at or below
        ``1e-10 * max(diag(cov))``.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {cov.shape}")
    if check_symmetry:
        _check_symmetric(cov)
    if cov.shape[0] == 0:
        return np.zeros((0, 0))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    tol = PIVOT_RTOL * np.max(np.diag(cov))
    if tol <= 0 or np.min(np.diag(L)) ** 2 <= tol:
        raise NotPositiveDefinite("pivot below tolerance; covariance is numerically singular")
    return L


@dataclass(frozen=True)
class MvnParams:
    """Mean vector and covariance matrix of a multivariate normal.

    The Cholesky factor is computed once at construction, which also
    validates positive definiteness.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ShapeMismatch(f"mean has length {mean.size} but cov has shape {cov.shape}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        L = cholesky(cov)
        L.setflags(write=False)
        object.__setattr__(self, "chol", L)

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class ConditionalRegression:
    """Regression of visits ``t+1..T`` on visits ``0..t``.

    ``beta`` has shape ``(T-t, t+1)``; ``residual_cov`` is the covariance of
    the post-split block given the pre-split block.
    """

    split_index: int
    beta: np.ndarray
    residual_cov: np.ndarray


def _partitioned(cov, obs, mis):
    """Regression coefficients and residual covariance of ``mis`` on ``obs``."""
    S_oo = cov[np.ix_(obs, obs)]
    S_om = cov[np.ix_(obs, mis)]
    L = cholesky(S_oo, check_symmetry=False)
    beta = cho_solve((L, True), S_om).T
    resid = cov[np.ix_(mis, mis)] - beta @ S_om
    # symmetrize away rounding so downstream checks see an exactly symmetric matrix
    resid = 0.5 * (resid + resid.T)
    return beta, resid


def conditional_regression(params: MvnParams, t: int) -> ConditionalRegression:
    """Split the visits after index ``t`` and regress them on the rest."""
    T = params.dim - 1
    if not 0 <= t < T:
        raise ValueError(f"split index must satisfy 0 <= t < {T}, got {t}")
    pre = np.arange(t + 1)
    post = np.arange(t + 1, T + 1)
    beta, resid = _partitioned(params.cov, pre, post)
    return ConditionalRegression(t, beta, resid)


def conditional_mvn(params: MvnParams, observed) -> MvnParams:
    """Distribution of the unobserved coordinates given observed values.

    Parameters
    ----------
    params : MvnParams
    observed : mapping of index -> value, or iterable of (index, value) pairs

    Returns
    -------
    MvnParams
        Over the unobserved coordinates, in ascending index order.
    """
    pairs = dict(observed.items() if hasattr(observed, "items") else observed)
    obs = np.array(sorted(pairs), dtype=int)
    if obs.size and (obs.min() < 0 or obs.max() >= params.dim):
        raise ValueError("observed index out of range")
    mis = np.setdiff1d(np.arange(params.dim), obs)
    if mis.size == 0:
        raise ValueError("nothing left to condition: every coordinate is observed")
    if obs.size == 0:
        return params
    y_obs = np.array([pairs[i] for i in obs], dtype=float)
    beta, resid = _partitioned(params.cov, obs, mis)
    mean = params.mean[mis] + beta @ (y_obs - params.mean[obs])
    return MvnParams(mean, resid)


def mvn_sample(params: MvnParams, rng: np.random.Generator, size=None):
    """Draw ``mean + L z`` with ``z`` standard normal."""
    if size is None:
        z = rng.standard_normal(params.dim)
        return params.mean + params.chol @ z
    z = rng.standard_normal((size, params.dim))
    return params.mean + z @ params.chol.T


def ar1_cov(dim, sd, rho):
    """AR(1) covariance with constant standard deviation."""
    idx = np.arange(dim)
    return sd**2 * rho ** np.abs(idx[:, None] - idx[None, :])


def nearest_pd(cov, floor=1e-6):
    """Project a symmetric matrix onto the PD cone by flooring eigenvalues
    at ``floor * max eigenvalue``."""
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    top = max(w.max(), np.finfo(float).tiny)
    w = np.maximum(w, floor * top)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def whiten_solve(L, x):
    """Solve ``L y = x`` for lower-triangular ``L`` (columns of ``x``)."""
    return solve_triangular(L, x, lower=True)

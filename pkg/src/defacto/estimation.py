"""Maximum-likelihood fitting under MAR and the complete-data analysis models.

The workhorse is an ECM algorithm for a multivariate normal regression with
group-specific means, optional baseline covariates whose coefficients are
shared across groups, and group-specific (or pooled) unstructured
covariance. Per-arm imputation models and the MMRM are both instances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import cho_solve

from .data import TrialDataset
from .errors import NotConverged, NotPositiveDefinite, RankDeficient, SingularFit, ValidationError
from .mvncore import MvnParams, cholesky, nearest_pd

log = logging.getLogger(__name__)

LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    tol: float = 1e-8
    covariate_by_visit: bool = True
    pooled_cov: bool = False


@dataclass(frozen=True)
class FittedArmModel:
    """ML fit for one arm.

    ``params.mean`` is the visit mean at the covariate centre
    ``covariate_center``; a subject with covariates ``x`` has mean
    ``params.mean + coef @ (x - covariate_center)``.
    """

    arm: str
    params: MvnParams
    coef: np.ndarray
    covariate_center: np.ndarray
    n: int
    loglik: float
    converged: bool
    iterations: int
    trace: tuple = ()

    def subject_means(self, X):
        X = np.asarray(X, dtype=float)
        if self.coef.shape[1] == 0:
            return np.broadcast_to(self.params.mean, (X.shape[0], self.params.dim))
        return self.params.mean + (X - self.covariate_center) @ self.coef.T


@dataclass(frozen=True)
class DeJureEstimates:
    """Visit-specific treatment effects ``delta_1..delta_T`` (``delta_0 = 0`` implied)."""

    delta: np.ndarray
    ses: np.ndarray
    vcov: np.ndarray
    loglik: float = np.nan
    converged: bool = True

    @property
    def T(self):
        return self.delta.size


@dataclass(frozen=True)
class AncovaResult:
    estimate: float
    se: float
    df: float

    @property
    def p_value(self):
        return float(2 * stats.t.sf(abs(self.estimate / self.se), self.df))


# ---------------------------------------------------------------------------
# ECM engine


class _Blocks:
    """Subjects grouped by (group, observed pattern)."""

    def __init__(self, Y, groups, n_groups):
        self.items = []
        obs_mask = ~np.isnan(Y)
        for g in range(n_groups):
            ig = np.flatnonzero(groups == g)
            if ig.size == 0:
                continue
            pats, inv = np.unique(obs_mask[ig], axis=0, return_inverse=True)
            inv = np.asarray(inv).reshape(-1)
            for u, pat in enumerate(pats):
                idx = ig[inv == u]
                self.items.append((g, idx, np.flatnonzero(pat), np.flatnonzero(~pat)))


def _design(groups, n_groups, p, Xc, by_visit):
    """Explicit per-subject design ``Z_i`` of shape (n, p, r)."""
    n, q = Xc.shape
    r_mu = n_groups * p
    r_b = p * q if by_visit else q
    Z = np.zeros((n, p, r_mu + r_b))
    eye = np.eye(p)
    for g in range(n_groups):
        Z[groups == g, :, g * p:(g + 1) * p] = eye
    if q:
        if by_visit:
            # vec(B) column-major: B x = (x' kron I_p) vec(B)
            for j in range(q):
                Z[:, :, r_mu + j * p:r_mu + (j + 1) * p] = Xc[:, j, None, None] * eye
        else:
            Z[:, :, r_mu:] = Xc[:, None, :]
    return Z


def _gls_means(Yhat, groups, n_groups, Xc, prec, by_visit):
    """Closed-form CM-step for group means and shared coefficients."""
    n, p = Yhat.shape
    q = Xc.shape[1]
    ybar = np.array([Yhat[groups == g].mean(axis=0) for g in range(n_groups)])
    if q == 0:
        return ybar, np.zeros((p, 0))
    xbar = np.array([Xc[groups == g].mean(axis=0) for g in range(n_groups)])
    if by_visit:
        lhs = np.zeros((p * q, p * q))
        rhs = np.zeros((p, q))
        for g in range(n_groups):
            m = groups == g
            dx = Xc[m] - xbar[g]
            dy = Yhat[m] - ybar[g]
            Sxx = dx.T @ dx
            lhs += np.kron(Sxx, prec[g])
            rhs += prec[g] @ (dy.T @ dx)
        try:
            vecB = np.linalg.solve(lhs, rhs.reshape(-1, order="F"))
        except np.linalg.LinAlgError:
            raise RankDeficient("covariate design is singular") from None
        B = vecB.reshape(p, q, order="F")
    else:
        lhs = np.zeros((q, q))
        rhs = np.zeros(q)
        one = np.ones(p)
        for g in range(n_groups):
            m = groups == g
            dx = Xc[m] - xbar[g]
            dy = Yhat[m] - ybar[g]
            lhs += (one @ prec[g] @ one) * (dx.T @ dx)
            rhs += dx.T @ (dy @ prec[g] @ one)
        try:
            b = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            raise RankDeficient("covariate design is singular") from None
        B = np.tile(b, (p, 1))
    mu = ybar - xbar @ B.T
    return mu, B


def _initial(Y, groups, n_groups):
    p = Y.shape[1]
    mu = np.zeros((n_groups, p))
    sigma = np.zeros((n_groups, p, p))
    for g in range(n_groups):
        Yg = Y[groups == g]
        mu[g] = np.nanmean(Yg, axis=0)
        S = np.eye(p)
        for a in range(p):
            for b in range(a, p):
                both = ~np.isnan(Yg[:, a]) & ~np.isnan(Yg[:, b])
                if both.sum() >= 2:
                    ya, yb = Yg[both, a], Yg[both, b]
                    S[a, b] = S[b, a] = np.mean((ya - ya.mean()) * (yb - yb.mean()))
        sigma[g] = nearest_pd(S)
    return mu, sigma


@dataclass
class _EcmResult:
    mu: np.ndarray
    B: np.ndarray
    sigma: np.ndarray
    loglik: float
    trace: list
    converged: bool
    iterations: int
    info: np.ndarray = None


def _estep(Y, M, sigma, blocks, n_groups):
    """Expected complete data, conditional-covariance sums and observed loglik."""
    Yhat = Y.copy()
    p = Y.shape[1]
    extra = np.zeros((n_groups, p, p))
    ll = 0.0
    for g, idx, obs, mis in blocks.items:
        S = sigma[g]
        try:
            L = cholesky(S[np.ix_(obs, obs)])
        except NotPositiveDefinite as exc:
            raise SingularFit(f"covariance lost positive definiteness: {exc}") from None
        r = Y[np.ix_(idx, obs)] - M[np.ix_(idx, obs)]
        w = np.linalg.solve(L, r.T)
        ll -= 0.5 * (idx.size * (obs.size * LOG2PI + 2 * np.log(np.diag(L)).sum()) + np.sum(w * w))
        if mis.size:
            beta = cho_solve((L, True), S[np.ix_(obs, mis)]).T
            Yhat[np.ix_(idx, mis)] = M[np.ix_(idx, mis)] + r @ beta.T
            C = S[np.ix_(mis, mis)] - beta @ S[np.ix_(obs, mis)]
            extra[g][np.ix_(mis, mis)] += idx.size * C
    return Yhat, extra, ll


def _ecm(Y, groups, n_groups, Xc, opts: FitOptions):
    n, p = Y.shape
    q = Xc.shape[1]
    keep = ~np.all(np.isnan(Y), axis=1)
    if not keep.all():
        Y, groups, Xc = Y[keep], groups[keep], Xc[keep]
    counts = np.bincount(groups, minlength=n_groups)
    if np.any(counts == 0):
        raise ValidationError("a group has no subjects with observed outcomes")
    if np.any(np.all(np.isnan(Y), axis=0)):
        raise ValidationError("a visit has no observed outcomes")
    blocks = _Blocks(Y, groups, n_groups)
    mu, sigma = _initial(Y, groups, n_groups)
    B = np.zeros((p, q))
    if opts.pooled_cov:
        pooled = np.einsum("g,gij->ij", counts, sigma) / counts.sum()
        sigma[:] = pooled

    trace = []
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        M = mu[groups] + Xc @ B.T
        Yhat, extra, ll = _estep(Y, M, sigma, blocks, n_groups)
        if trace and abs(ll - trace[-1]) < opts.tol * abs(trace[-1]):
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        prec = np.array([np.linalg.inv(s) for s in sigma]) if q else None
        mu, B = _gls_means(Yhat, groups, n_groups, Xc, prec, opts.covariate_by_visit)
        R = Yhat - mu[groups] - Xc @ B.T
        new = np.zeros_like(sigma)
        for g in range(n_groups):
            Rg = R[groups == g]
            new[g] = (Rg.T @ Rg + extra[g]) / counts[g]
        if opts.pooled_cov:
            new[:] = np.einsum("g,gij->ij", counts, new) / counts.sum()
        sigma = 0.5 * (new + np.transpose(new, (0, 2, 1)))

    if not converged:
        raise NotConverged(f"EM did not converge in {opts.max_iter} iterations", trace)
    return _EcmResult(mu, B, sigma, trace[-1], trace, converged, it)


def _information(Y, groups, n_groups, Xc, sigma, by_visit):
    """Observed-data information for the mean parameters."""
    p = Y.shape[1]
    keep = ~np.all(np.isnan(Y), axis=1)
    Y, groups, Xc = Y[keep], groups[keep], Xc[keep]
    Z = _design(groups, n_groups, p, Xc, by_visit)
    r = Z.shape[2]
    info = np.zeros((r, r))
    for g, idx, obs, mis in _Blocks(Y, groups, n_groups).items:
        W = np.linalg.inv(sigma[g][np.ix_(obs, obs)])
        Zo = Z[np.ix_(idx, obs)]
        info += np.einsum("kor,os,ksc->rc", Zo, W, Zo)
    return info


# ---------------------------------------------------------------------------
# Public fitting API


def _center(data: TrialDataset):
    X = data.covariates
    center = data.covariate_means()
    return X - center, center


def fit_arms(data: TrialDataset, options: FitOptions = FitOptions()):
    """Joint MAR fit of both arms with shared covariate coefficients.

    Returns a dict mapping arm label to :class:`FittedArmModel`. The
    log-likelihood stored on each model is that of the joint fit.
    """
    labels = [data.control, data.active]
    groups = np.where(data.is_active, 1, 0)
    for g, lab in enumerate(labels):
        m = groups == g
        if m.sum() < data.T + 2:
            raise ValidationError(f"arm {lab!r} needs at least {data.T + 2} subjects, has {m.sum()}")
    Xc, center = _center(data)
    res = _ecm(data.y, groups, 2, Xc, options)
    out = {}
    for g, lab in enumerate(labels):
        out[lab] = FittedArmModel(
            arm=lab, params=MvnParams(res.mu[g], res.sigma[g]), coef=res.B, covariate_center=center,
            n=int((groups == g).sum()), loglik=res.loglik, converged=res.converged,
            iterations=res.iterations, trace=tuple(res.trace))
    return out


def fit_mar_mvn(data: TrialDataset, arm: str, options: FitOptions = FitOptions()) -> FittedArmModel:
    """EM maximum-likelihood fit of one arm's visit means and covariance.

    Uses every observed entry of the arm (MAR). Covariates, if present,
    get arm-specific coefficients here; use :func:`fit_arms` to share them.
    """
    m = data.arm_mask(arm)
    if m.sum() < data.T + 2:
        raise ValidationError(f"arm {arm!r} needs at least {data.T + 2} subjects, has {m.sum()}")
    Xc, center = _center(data)
    Y = data.y[m]
    res = _ecm(Y, np.zeros(Y.shape[0], dtype=int), 1, Xc[m], options)
    return FittedArmModel(arm=arm, params=MvnParams(res.mu[0], res.sigma[0]), coef=res.B,
                          covariate_center=center, n=int(m.sum()), loglik=res.loglik,
                          converged=res.converged, iterations=res.iterations, trace=tuple(res.trace))


def fit_mmrm(data: TrialDataset, adjust_baseline: bool = True, options: FitOptions = FitOptions()) -> DeJureEstimates:
    """Mixed model for repeated measures with arm-by-visit means.

    With ``adjust_baseline`` the baseline outcome enters as a covariate
    (coefficient per visit, shared across arms) and the response is visits
    ``1..T``; otherwise the baseline is modelled jointly as visit 0.
    Standard errors are model-based from the observed information of the
    mean parameters at the ML estimate.
    """
    groups = np.where(data.is_active, 1, 0)
    if len(np.unique(groups)) < 2:
        raise ValidationError("both arms are required")
    Xc, _ = _center(data)
    if adjust_baseline:
        Y = data.y[:, 1:]
        y0 = data.y[:, 0]
        Xc = np.column_stack([y0 - y0.mean(), Xc])
        cols = np.arange(data.T)
    else:
        Y = data.y
        cols = np.arange(1, data.T + 1)
    res = _ecm(Y, groups, 2, Xc, options)
    info = _information(Y, groups, 2, Xc, res.sigma, options.covariate_by_visit)
    try:
        V = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularFit("information matrix is singular") from None
    p = Y.shape[1]
    C = np.zeros((cols.size, V.shape[0]))
    for i, c in enumerate(cols):
        C[i, p + c] = 1.0
        C[i, c] = -1.0
    delta = res.mu[1, cols] - res.mu[0, cols]
    vcov = C @ V @ C.T
    return DeJureEstimates(delta, np.sqrt(np.diag(vcov)), vcov, res.loglik, res.converged)


# ---------------------------------------------------------------------------
# Complete-data analysis


def ancova_design(data: TrialDataset, covariates: bool = True):
    """Design matrix ``[1, active, Y0, covariates...]``."""
    cols = [np.ones(data.n), data.is_active.astype(float), data.y[:, 0]]
    if covariates and data.covariates.shape[1]:
        cols.append(data.covariates)
    return np.column_stack(cols)


def ancova_batch(X, Ys):
    """OLS of each column of ``Ys`` on ``X``; returns coefficient on column 1.

    Returns
    -------
    estimates, variances : arrays of shape (m,)
    df : int
    """
    X = np.asarray(X, dtype=float)
    Ys = np.asarray(Ys, dtype=float)
    if Ys.ndim == 1:
        Ys = Ys[:, None]
    n, k = X.shape
    if np.isnan(Ys).any():
        raise ValidationError("analysis outcome has missing values")
    if np.linalg.matrix_rank(X) < k or n <= k:
        raise RankDeficient("ANCOVA design matrix is rank deficient")
    XtX_inv = np.linalg.inv(X.T @ X)
    coef = XtX_inv @ (X.T @ Ys)
    resid = Ys - X @ coef
    df = n - k
    s2 = np.sum(resid * resid, axis=0) / df
    return coef[1], s2 * XtX_inv[1, 1], df


def ancova(data: TrialDataset, visit: int = None, covariates: bool = True) -> AncovaResult:
    """Regression of the outcome at ``visit`` (default final) on arm, baseline
    outcome and baseline covariates; returns the arm coefficient."""
    visit = data.T if visit is None else visit
    est, var, df = ancova_batch(ancova_design(data, covariates), data.y[:, visit])
    return AncovaResult(float(est[0]), float(np.sqrt(var[0])), float(df))

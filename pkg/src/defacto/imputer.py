"""Reference-based and causal-model multiple imputation.

Post-discontinuation outcomes in the active arm are drawn from a normal
distribution whose mean follows one of the reference-based constructions
(LMCF, J2R, CIR, CR) or the causal model with a user-chosen
maintained-effect matrix ``K_t``; its covariance is the residual
covariance of the chosen arm. All other missing values (control arm, and
intermittent gaps before discontinuation in the active arm) are drawn
under MAR from the subject's own arm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from .data import TrialDataset
from .errors import DrawFailed, ShapeMismatch, ValidationError
from .estimation import FitOptions, FittedArmModel, _Blocks, _design, _gls_means, _information, fit_arms
from .mvncore import MvnParams, _partitioned, cholesky, conditional_regression

METHODS = ("MAR", "LMCF", "J2R", "CIR", "CR", "Causal")
K_VARIANTS = ("constant_k0", "exponential_k1", "combined", "full_matrix", "per_subject")
SOURCES = ("reference", "active")


@dataclass(frozen=True)
class KSpec:
    """Parameterization of the maintained-effect matrices ``K_t``.

    ``constant_k0``: ``k0 * C_t``; ``exponential_k1``: final column
    ``k1 ** (v_s - v_t)``; ``combined``: ``k0 * k1 ** (v_s - v_t)``;
    ``full_matrix``: ``matrices[t]`` as given; ``per_subject``: ``k * C_t``
    with ``k`` read from the dataset's ``subject_k``.
    """

    variant: str = "constant_k0"
    k0: float = 1.0
    k1: float = 1.0
    matrices: Mapping[int, np.ndarray] = None

    def __post_init__(self):
        if self.variant not in K_VARIANTS:
            raise ValueError(f"unknown K variant {self.variant!r}")
        if self.variant in ("exponential_k1", "combined") and not 0 <= self.k1 <= 1:
            raise ValueError("k1 must lie in [0, 1]")
        if self.variant == "full_matrix" and self.matrices is None:
            raise ValueError("full_matrix variant needs matrices")


def carry_forward(T, t):
    """``(T-t) x (t+1)`` matrix of zeros with a final column of ones."""
    C = np.zeros((T - t, t + 1))
    C[:, -1] = 1.0
    return C


def build_K(kspec: KSpec, t: int, visit_times, k=None):
    """Maintained-effect matrix for discontinuation at visit index ``t``."""
    vt = np.asarray(visit_times, dtype=float)
    T = vt.size - 1
    if not 0 <= t < T:
        raise ValueError(f"need 0 <= t < {T}, got {t}")
    C = carry_forward(T, t)
    v = kspec.variant
    if v == "constant_k0":
        return kspec.k0 * C
    if v == "per_subject":
        if k is None:
            raise ValueError("per_subject K needs a subject-level k")
        return k * C
    if v in ("exponential_k1", "combined"):
        # np.power(0., 0.) is 1, but exponents here are strictly positive
        decay = np.power(kspec.k1, vt[t + 1:] - vt[t])
        scale = kspec.k0 if v == "combined" else 1.0
        return scale * decay[:, None] * C
    K = np.asarray(kspec.matrices[t], dtype=float)
    if K.shape != (T - t, t + 1):
        raise ShapeMismatch(f"K_{t} must have shape {(T - t, t + 1)}, got {K.shape}")
    return K


def exponential_subject_k(data: TrialDataset, k1: float):
    """Per-subject ``k = k1 ** (v_T - v_D)``: the exponential model's
    final-visit fraction, usable as ``subject_k`` with the ``per_subject``
    variant."""
    if not 0 <= k1 <= 1:
        raise ValueError("k1 must lie in [0, 1]")
    vt = data.visit_times
    return np.power(float(k1), vt[-1] - vt[data.discontinuation])


@dataclass(frozen=True)
class MethodSpec:
    """Imputation method selector.

    ``cov_source`` picks the arm whose covariance supplies the residual
    covariance (and, unless ``beta_source`` overrides it, the regression on
    the pre-discontinuation history). Defaults: reference arm for the
    reference-based and causal methods, active arm for MAR and LMCF.
    """

    method: str = "J2R"
    kspec: KSpec = None
    cov_source: str = None
    beta_source: str = None
    reference: str = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        cov = self.cov_source or ("active" if self.method in ("MAR", "LMCF") else "reference")
        if cov not in SOURCES:
            raise ValueError(f"cov_source must be one of {SOURCES}")
        if self.method == "MAR" and cov != "active":
            raise ValueError("MAR imputation uses the active arm's own covariance")
        beta = self.beta_source or cov
        if beta not in SOURCES:
            raise ValueError(f"beta_source must be one of {SOURCES}")
        object.__setattr__(self, "cov_source", cov)
        object.__setattr__(self, "beta_source", beta)
        if self.method == "Causal" and self.kspec is None:
            object.__setattr__(self, "kspec", KSpec("constant_k0", k0=1.0))

    def resolve_reference(self, data: TrialDataset):
        ref = self.reference or data.control
        if ref not in (data.active, data.control):
            raise ValidationError(f"reference arm {ref!r} not present in dataset")
        return ref


# ---------------------------------------------------------------------------
# Imputation distribution


def _method_mean(method, mu_ref, mu_act, beta, y_pre, t, K=None, k=None):
    """Vectorized imputation mean.

    ``mu_ref``/``mu_act`` are (p,) or (n, p) means; ``y_pre`` is (t+1,) or
    (n, t+1). ``K`` is a fixed matrix, or ``k`` a per-row multiplier of
    ``C_t``. The three-term sums are written identically across methods so
    that equivalent choices give bit-identical results.
    """
    sel = (y_pre - mu_act[..., :t + 1]) @ beta.T
    if method == "MAR":
        return sel + mu_act[..., t + 1:]
    if method == "LMCF":
        return sel + mu_act[..., t:t + 1]
    diff = mu_act[..., :t + 1] - mu_ref[..., :t + 1]
    post_ref = mu_ref[..., t + 1:]
    if method == "J2R":
        return sel + post_ref
    if method == "CIR":
        return sel + diff[..., t:t + 1] + post_ref
    if method == "CR":
        return sel + diff @ beta.T + post_ref
    if k is not None:
        k = np.asarray(k, dtype=float)
        return sel + k[..., None] * diff[..., t:t + 1] + post_ref
    return sel + diff @ K.T + post_ref


def _source(method: MethodSpec, which, ref_params, act_params):
    return ref_params if getattr(method, which) == "reference" else act_params


def imputation_mean(method: MethodSpec, ref_params: MvnParams, act_params: MvnParams, y_pre, t: int,
                    visit_times=None, k=None):
    """Mean of the post-discontinuation imputation distribution.

    Parameters
    ----------
    method : MethodSpec
    ref_params, act_params : MvnParams
        Reference- and active-arm parameters (at the subject's covariates).
    y_pre : array (t+1,) or (n, t+1)
        Complete history through visit ``t``.
    t : int
        Discontinuation index, ``t < T``.
    visit_times : array, optional
        Needed by the exponential and combined ``K`` families.
    k : float or array, optional
        Subject-level ``k`` for the ``per_subject`` family.

    Returns
    -------
    array (T-t,) or (n, T-t)
    """
    T = ref_params.dim - 1
    if not 0 <= t < T:
        raise ValueError(f"need 0 <= t < {T}, got {t}")
    y_pre = np.asarray(y_pre, dtype=float)
    if y_pre.shape[-1] != t + 1:
        raise ShapeMismatch(f"history must have length {t + 1}")
    beta = conditional_regression(_source(method, "beta_source", ref_params, act_params), t).beta
    K = None
    if method.method == "Causal":
        if method.kspec.variant == "per_subject":
            if k is None:
                raise ValueError("per_subject K needs k")
        else:
            vt = np.arange(T + 1.0) if visit_times is None else visit_times
            K = build_K(method.kspec, t, vt)
            k = None
    else:
        k = None
    return _method_mean(method.method, ref_params.mean, act_params.mean, beta, y_pre, t, K=K, k=k)


def imputation_cov(method: MethodSpec, ref_params: MvnParams, act_params: MvnParams, t: int):
    """Residual covariance of visits after ``t`` given the history, from the
    ``cov_source`` arm."""
    return conditional_regression(_source(method, "cov_source", ref_params, act_params), t).residual_cov


# ---------------------------------------------------------------------------
# Parameter draws


@dataclass(frozen=True)
class ArmDraw:
    """One parameter draw for one arm."""

    params: MvnParams
    coef: np.ndarray
    covariate_center: np.ndarray

    def subject_means(self, X):
        if self.coef.shape[1] == 0:
            return np.broadcast_to(self.params.mean, (X.shape[0], self.params.dim))
        return self.params.mean + (X - self.covariate_center) @ self.coef.T

    @classmethod
    def from_model(cls, model: FittedArmModel):
        return cls(model.params, model.coef, model.covariate_center)


@lru_cache(maxsize=None)
def _lower(p):
    return np.tril_indices(p, -1)


@lru_cache(maxsize=None)
def _diag(p):
    return np.diag_indices(p)


def _invwishart(df, scale, rng):
    """Inverse-Wishart draw via the Bartlett decomposition.

    With ``scale = C C'`` and ``A`` the Bartlett factor of a standard
    Wishart, ``C A^{-T} A^{-1} C'`` is ``IW(df, scale)``. Much cheaper than
    ``scipy.stats.invwishart`` for the tiny matrices used here.
    """
    p = scale.shape[0]
    if df < p:
        raise DrawFailed(f"inverse-Wishart needs df >= dim, got df={df}, dim={p}")
    try:
        C = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise DrawFailed("inverse-Wishart scale matrix is not positive definite") from None
    A = np.zeros((p, p))
    A[_diag(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    A[_lower(p)] = rng.standard_normal(p * (p - 1) // 2)
    G = np.linalg.solve(A, C.T).T
    S = G @ G.T
    return 0.5 * (S + S.T)


def posterior_draw(model: FittedArmModel, rng: np.random.Generator) -> MvnParams:
    """Normal--inverse-Wishart draw around an ML fit.

    ``Sigma* ~ IW(n - 1, n * Sigma_hat)`` then ``mu* ~ N(mu_hat, Sigma* / n)``.
    """
    n, p = model.n, model.params.dim
    if n - 1 < p:
        raise DrawFailed(f"need n - 1 >= {p}, got n = {n}")
    sigma = _invwishart(n - 1, n * model.params.cov, rng)
    L = cholesky(sigma / n)
    mu = model.params.mean + L @ rng.standard_normal(p)
    return MvnParams(mu, sigma)


def _child(seed_seq: np.random.SeedSequence, *key):
    return np.random.SeedSequence(entropy=seed_seq.entropy, spawn_key=tuple(seed_seq.spawn_key) + key)


def as_seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    return np.random.SeedSequence(seed)


class _Chain:
    """Data-augmentation sampler for the joint MAR model of both arms.

    I-step: draw missing values from their conditional normal given the
    observed ones. P-step: normal--inverse-Wishart draw given the completed
    data (covariate coefficients drawn jointly with the means from their
    GLS sampling distribution).
    """

    def __init__(self, data: TrialDataset, models, options: FitOptions):
        self.labels = [data.control, data.active]
        self.groups = np.where(data.is_active, 1, 0)
        self.Y = data.y
        self.center = models[data.control].covariate_center
        self.Xc = data.covariates - self.center
        self.q = self.Xc.shape[1]
        self.opts = options
        self.blocks = [b for b in _Blocks(self.Y, self.groups, 2).items if b[3].size]
        self.counts = np.bincount(self.groups, minlength=2)
        self.mu0 = np.array([models[lab].params.mean for lab in self.labels])
        self.sigma0 = np.array([models[lab].params.cov for lab in self.labels])
        self.B0 = models[data.control].coef
        self.Z = _design(self.groups, 2, self.Y.shape[1], self.Xc, options.covariate_by_visit) if self.q else None
        # blocks re-indexed to rows within each group
        local = np.empty(self.groups.size, dtype=int)
        for g in range(2):
            local[self.groups == g] = np.arange(self.counts[g])
        self.group_blocks = [[(local[idx], obs, mis, np.ix_(local[idx], obs), np.ix_(local[idx], mis),
                               np.ix_(obs, obs), np.ix_(obs, mis), np.ix_(mis, mis))
                              for gg, idx, obs, mis in self.blocks if gg == g]
                             for g in range(2)]

    def _istep(self, mu, B, sigma, rng):
        Yc = self.Y.copy()
        M = mu[self.groups] + (self.Xc @ B.T if self.q else 0.0)
        for g, idx, obs, mis in self.blocks:
            beta, resid = _partitioned(sigma[g], obs, mis)
            L = cholesky(resid)
            r = Yc[np.ix_(idx, obs)] - M[np.ix_(idx, obs)]
            z = rng.standard_normal((idx.size, mis.size))
            Yc[np.ix_(idx, mis)] = M[np.ix_(idx, mis)] + r @ beta.T + z @ L.T
        return Yc

    def _pstep(self, Yc, sigma_prev, rng):
        p = Yc.shape[1]
        g_idx = [self.groups == g for g in range(2)]
        if self.q == 0:
            ybar = np.array([Yc[m].mean(axis=0) for m in g_idx])
            R = Yc - ybar[self.groups]
            sigma = self._draw_sigma(R, rng)
            mu = np.array([ybar[g] + cholesky(sigma[g] / self.counts[g]) @ rng.standard_normal(p)
                           for g in range(2)])
            return mu, np.zeros((p, 0)), sigma
        prec = np.array([np.linalg.inv(s) for s in sigma_prev])
        mu_hat, B_hat = _gls_means(Yc, self.groups, 2, self.Xc, prec, self.opts.covariate_by_visit)
        R = Yc - mu_hat[self.groups] - self.Xc @ B_hat.T
        sigma = self._draw_sigma(R, rng)
        prec = np.array([np.linalg.inv(s) for s in sigma])
        mu_c, B_c = _gls_means(Yc, self.groups, 2, self.Xc, prec, self.opts.covariate_by_visit)
        theta = np.concatenate([mu_c.reshape(-1), B_c.T.reshape(-1) if self.opts.covariate_by_visit else B_c[0]])
        W = prec[self.groups]
        info = np.einsum("npr,npq,nqs->rs", self.Z, W, self.Z)
        L = cholesky(np.linalg.inv(info))
        theta = theta + L @ rng.standard_normal(theta.size)
        mu = theta[:2 * p].reshape(2, p)
        rest = theta[2 * p:]
        B = rest.reshape(self.q, p).T if self.opts.covariate_by_visit else np.tile(rest, (p, 1))
        return mu, B, sigma

    def _draw_sigma(self, R, rng):
        p = R.shape[1]
        out = np.empty((2, p, p))
        if self.opts.pooled_cov:
            S = R.T @ R
            draw = _invwishart(self.counts.sum() - 2, S, rng)
            out[:] = draw
            return out
        for g in range(2):
            Rg = R[self.groups == g]
            out[g] = _invwishart(self.counts[g] - 1, Rg.T @ Rg, rng)
        return out

    def _run_group(self, g, steps, rng):
        # without covariates or pooling the arms share no parameters, so each
        # arm gets its own chain; a complete arm needs a single P-step
        rows = self.groups == g
        Y = self.Y[rows]
        blocks = self.group_blocks[g]
        n, p = Y.shape
        mu, sigma = self.mu0[g], self.sigma0[g]
        for _ in range(steps if blocks else 1):
            Yc = Y
            if blocks:
                Yc = Y.copy()
                for idx, obs, mis, io, im, oo, om, mm in blocks:
                    S_om = sigma[om]
                    beta = np.linalg.solve(sigma[oo], S_om).T
                    L = np.linalg.cholesky(sigma[mm] - beta @ S_om)
                    z = rng.standard_normal((idx.size, mis.size))
                    Yc[im] = mu[mis] + (Y[io] - mu[obs]) @ beta.T + z @ L.T
            ybar = Yc.mean(axis=0)
            R = Yc - ybar
            sigma = _invwishart(n - 1, R.T @ R, rng)
            mu = ybar + np.linalg.cholesky(sigma / n) @ rng.standard_normal(p)
        return mu, sigma

    def run(self, steps, rng):
        if self.q == 0 and not self.opts.pooled_cov:
            out = {}
            for g, lab in enumerate(self.labels):
                mu, sigma = self._run_group(g, steps, rng)
                out[lab] = ArmDraw(MvnParams(mu, sigma), self.B0, self.center)
            return out
        mu, B, sigma = self.mu0, self.B0, self.sigma0
        if not self.blocks:
            steps = 1
        for _ in range(steps):
            Yc = self._istep(mu, B, sigma, rng) if self.blocks else self.Y
            mu, B, sigma = self._pstep(Yc, sigma, rng)
        return {lab: ArmDraw(MvnParams(mu[g], sigma[g]), B, self.center) for g, lab in enumerate(self.labels)}


def _niw_draw(data, models, info_cov, rng):
    out = {}
    coef = models[data.control].coef
    if info_cov is not None:
        L = cholesky(info_cov)
        vec = coef.T.reshape(-1) + L @ rng.standard_normal(info_cov.shape[0])
        coef = vec.reshape(coef.shape[1], coef.shape[0]).T
    for lab in (data.control, data.active):
        out[lab] = ArmDraw(posterior_draw(models[lab], rng), coef, models[lab].covariate_center)
    return out


def draw_parameters(data: TrialDataset, m: int, seed=0, uncertainty: str = "da", burn_in: int = 20,
                    models=None, options: FitOptions = FitOptions()):
    """Draw ``m`` parameter sets (one :class:`ArmDraw` per arm each).

    ``uncertainty``: ``"da"`` (data augmentation started at the ML fit,
    ``burn_in`` steps per draw), ``"niw"`` (conjugate draw around the ML
    fit) or ``"none"`` (the ML fit itself). Draw ``j`` depends only on
    ``(seed, j)``.
    """
    if uncertainty not in ("da", "niw", "none"):
        raise ValueError(f"unknown uncertainty scheme {uncertainty!r}")
    models = fit_arms(data, options) if models is None else models
    root = as_seed_sequence(seed)
    if uncertainty == "none":
        fixed = {lab: ArmDraw.from_model(mod) for lab, mod in models.items()}
        return [fixed] * m
    draws = []
    if uncertainty == "niw":
        info_cov = None
        q = data.covariates.shape[1]
        if q:
            if not options.covariate_by_visit:
                raise ValueError("niw draws support per-visit covariate coefficients only")
            groups = np.where(data.is_active, 1, 0)
            sig = np.array([models[data.control].params.cov, models[data.active].params.cov])
            V = np.linalg.inv(_information(data.y, groups, 2, data.covariates - data.covariate_means(),
                                           sig, True))
            info_cov = V[2 * data.y.shape[1]:, 2 * data.y.shape[1]:]
        for j in range(m):
            rng = np.random.Generator(np.random.PCG64(_child(root, 0, j)))
            draws.append(_niw_draw(data, models, info_cov, rng))
        return draws
    chain = _Chain(data, models, options)
    for j in range(m):
        rng = np.random.Generator(np.random.PCG64(_child(root, 0, j)))
        draws.append(chain.run(burn_in, rng))
    return draws


# ---------------------------------------------------------------------------
# Completing datasets


@dataclass(frozen=True)
class ImputationSet:
    """``m`` completed copies of a dataset and the draws that produced them."""

    data: TrialDataset
    method: MethodSpec
    completed: np.ndarray
    draws: tuple
    seed_entropy: object = None
    seed_key: tuple = ()

    @property
    def m(self):
        return self.completed.shape[0]

    @property
    def datasets(self):
        return [self.data.with_outcomes(y) for y in self.completed]


class _Plan:
    """Which subjects need what, computed once per dataset."""

    def __init__(self, data: TrialDataset):
        self.mar = []
        self.post = []
        mis = data.missing
        D = data.discontinuation
        p = data.y.shape[1]
        act = data.is_active
        # control arm: every missing value under own-arm MAR
        for is_act, label in ((False, data.control), (True, data.active)):
            rows = np.flatnonzero(act == is_act)
            if is_act:
                # only gaps on or before D; later values are handled below
                gap = mis[rows] & (np.arange(p)[None, :] <= D[rows, None])
                key = np.column_stack([D[rows], gap])
            else:
                gap = mis[rows]
                key = gap
            todo = gap.any(axis=1)
            rows, gap, key = rows[todo], gap[todo], key[todo]
            if rows.size == 0:
                continue
            uk, inv = np.unique(key, axis=0, return_inverse=True)
            inv = np.asarray(inv).reshape(-1)
            for u in range(len(uk)):
                idx = rows[inv == u]
                g = gap[inv == u][0]
                limit = D[idx[0]] if is_act else p - 1
                obs = np.flatnonzero(~g[:limit + 1])
                self.mar.append((label, idx, obs, np.flatnonzero(g)))
        T = p - 1
        for t in range(T):
            idx = np.flatnonzero(act & (D == t))
            if idx.size:
                self.post.append((t, idx))

    @staticmethod
    def ranks(data):
        order = np.argsort(data.subject_ids, kind="stable")
        rank = np.empty(data.n, dtype=int)
        rank[order] = np.arange(data.n)
        return rank


def _complete(data, plan, draw, method, ref_label, z):
    Y = data.y.copy()
    X = data.covariates
    means = {lab: d.subject_means(X) for lab, d in draw.items()}
    for label, idx, obs, mis in plan.mar:
        P = draw[label].params
        M = means[label]
        beta, resid = _partitioned(P.cov, obs, mis)
        L = cholesky(resid)
        r = Y[np.ix_(idx, obs)] - M[np.ix_(idx, obs)]
        Y[np.ix_(idx, mis)] = M[np.ix_(idx, mis)] + r @ beta.T + z[np.ix_(idx, mis)] @ L.T
    if not plan.post:
        return Y
    act_label = data.active
    ref, act = draw[ref_label].params, draw[act_label].params
    beta_src = ref if method.beta_source == "reference" else act
    cov_src = ref if method.cov_source == "reference" else act
    for t, idx in plan.post:
        beta = conditional_regression(beta_src, t).beta
        resid = conditional_regression(cov_src, t).residual_cov
        K = k = None
        if method.method == "Causal":
            if method.kspec.variant == "per_subject":
                if data.subject_k is None:
                    raise ValidationError("per_subject K requires per-subject k values in the dataset")
                k = data.subject_k[idx]
            else:
                K = build_K(method.kspec, t, data.visit_times)
        mean = _method_mean(method.method, means[ref_label][idx], means[act_label][idx], beta,
                            Y[idx, :t + 1], t, K=K, k=k)
        L = cholesky(resid)
        Y[idx, t + 1:] = mean + z[idx, t + 1:] @ L.T
    return Y


def innovations(data: TrialDataset, m: int, seed=0):
    """Standard-normal innovations shared by every method: block ``j`` is
    ``(n, T+1)``, keyed by ``(seed, j)``, rows in subject-id order."""
    root = as_seed_sequence(seed)
    n, p = data.y.shape
    order = _Plan.ranks(data)
    out = np.empty((m, n, p))
    for j in range(m):
        rng = np.random.Generator(np.random.PCG64(_child(root, 1, j)))
        out[j] = rng.standard_normal((n, p))[order]
    out.setflags(write=False)
    return out


def impute_dataset(data: TrialDataset, method: MethodSpec, m: int, seed=0, uncertainty: str = "da",
                   burn_in: int = 20, draws=None, options: FitOptions = FitOptions(),
                   z=None) -> ImputationSet:
    """Create ``m`` completed datasets.

    Parameter draws are shared by every method for a given seed, as are the
    standard-normal innovations (see :func:`innovations`). Changing only the
    method therefore changes the imputations through their means and
    covariances alone. ``draws`` and ``z`` may be passed in to skip
    recomputing them across many methods.
    """
    ref_label = method.resolve_reference(data)
    root = as_seed_sequence(seed)
    if draws is None:
        draws = draw_parameters(data, m, root, uncertainty, burn_in, options=options)
    elif len(draws) != m:
        raise ValueError(f"got {len(draws)} draws for m={m}")
    if z is None:
        z = innovations(data, m, root)
    elif z.shape != (m,) + data.y.shape:
        raise ShapeMismatch(f"innovations must have shape {(m,) + data.y.shape}")
    plan = _Plan(data)
    out = np.empty((m,) + data.y.shape)
    for j in range(m):
        out[j] = _complete(data, plan, draws[j], method, ref_label, z[j])
    out.setflags(write=False)
    return ImputationSet(data, method, out, tuple(draws), root.entropy, tuple(root.spawn_key))

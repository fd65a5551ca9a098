"""Pooling, closed-form de facto estimates and tipping-point sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import TrialDataset
from .errors import ShapeMismatch, ValidationError
from .estimation import DeJureEstimates, FitOptions, ancova_batch, ancova_design, fit_arms
from .imputer import ImputationSet, KSpec, MethodSpec, build_K, draw_parameters, impute_dataset, innovations

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MIResult:
    """Per-imputation point estimates and their squared standard errors."""

    estimates: np.ndarray
    variances: np.ndarray
    complete_df: float = math.inf

    def __post_init__(self):
        est = np.asarray(self.estimates, dtype=float).reshape(-1)
        var = np.asarray(self.variances, dtype=float).reshape(-1)
        if est.size < 2 or est.shape != var.shape:
            raise ValidationError("need at least two imputations with one variance each")
        if np.any(var <= 0):
            raise ValidationError("within-imputation variances must be positive")
        object.__setattr__(self, "estimates", est)
        object.__setattr__(self, "variances", var)

    @property
    def m(self):
        return self.estimates.size


@dataclass(frozen=True)
class PooledResult:
    estimate: float
    within: float
    between: float
    total_var: float
    df: float
    ci_low: float
    ci_high: float
    p_value: float
    m: int
    degenerate: bool = False

    @property
    def se(self):
        return math.sqrt(self.total_var)


def barnard_rubin_df(m, within, between, complete_df):
    """Small-sample degrees of freedom for a pooled scalar."""
    total = within + (1 + 1 / m) * between
    lam = (1 + 1 / m) * between / total
    # lam**2 can underflow for tiny but nonzero B
    nu_old = math.inf if lam * lam == 0 else (m - 1) / lam**2
    if math.isinf(complete_df):
        return nu_old
    nu_obs = (complete_df + 1) / (complete_df + 3) * complete_df * (1 - lam)
    if math.isinf(nu_old):
        return nu_obs
    return nu_old * nu_obs / (nu_old + nu_obs)


def rubin_pool(r: MIResult, level: float = 0.95) -> PooledResult:
    """Combine ``m`` analyses with Rubin's rules.

    Total variance is ``W + (1 + 1/m) B``; the reference distribution is a
    t with Barnard--Rubin degrees of freedom. When every estimate is
    identical the between variance is zero and the result is flagged
    ``degenerate`` rather than rejected.
    """
    m = r.m
    est = float(r.estimates.mean())
    W = float(r.variances.mean())
    B = float(r.estimates.var(ddof=1))
    total = W + (1 + 1 / m) * B
    df = barnard_rubin_df(m, W, B, r.complete_df)
    se = math.sqrt(total)
    q = stats.norm.ppf(0.5 + level / 2) if math.isinf(df) else stats.t.ppf(0.5 + level / 2, df)
    tstat = est / se
    p = 2 * (stats.norm.sf(abs(tstat)) if math.isinf(df) else stats.t.sf(abs(tstat), df))
    return PooledResult(est, W, B, total, df, est - q * se, est + q * se, float(p), m, degenerate=B == 0)


def analyze_imputations(iset: ImputationSet, visit: int = None, covariates: bool = True):
    """ANCOVA on each completed dataset, pooled by Rubin's rules.

    Returns ``(MIResult, PooledResult)``.
    """
    data = iset.data
    visit = data.T if visit is None else visit
    X = ancova_design(data, covariates)
    est, var, df = ancova_batch(X, iset.completed[:, :, visit].T)
    mi = MIResult(est, var, df)
    pooled = rubin_pool(mi)
    if pooled.total_var != pooled.within + (1 + 1 / pooled.m) * pooled.between:
        raise AssertionError("Rubin total-variance identity violated")
    return mi, pooled


@dataclass(frozen=True)
class DiscontinuationDistribution:
    """Probabilities ``alpha_0..alpha_T`` of discontinuing at each visit."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).reshape(-1)
        if np.any(a < 0) or abs(a.sum() - 1) > 1e-12:
            raise ValidationError("alpha must be non-negative and sum to one")
        object.__setattr__(self, "alpha", a)


def estimate_alpha(data: TrialDataset) -> DiscontinuationDistribution:
    """Empirical distribution of the discontinuation index in the active arm."""
    D = data.discontinuation[data.is_active]
    if D.size == 0:
        raise ValidationError("active arm is empty")
    counts = np.bincount(D, minlength=data.T + 1)
    return DiscontinuationDistribution(counts / counts.sum())


@dataclass(frozen=True)
class DefactoEstimate:
    estimate: float
    se: float

    @property
    def p_value(self):
        return float(2 * stats.norm.sf(abs(self.estimate / self.se)))


def _maintained_weights(alpha, kspec, visit_times):
    """Coefficients ``c`` with ``sum_{t<T} alpha_t e_t' K_t delta_t = c . delta_{1..T}``."""
    a = alpha.alpha
    T = a.size - 1
    vt = np.arange(T + 1.0) if visit_times is None else np.asarray(visit_times, dtype=float)
    if vt.size != T + 1:
        raise ShapeMismatch(f"visit_times needs {T + 1} entries")
    if kspec.variant == "per_subject":
        raise ValueError("closed-form estimates need a population-level K")
    c = np.zeros(T + 1)
    for t in range(T):
        if a[t] == 0:
            continue
        c[:t + 1] += a[t] * build_K(kspec, t, vt)[-1]
    return c[1:]


def defacto_closed_form(dejure: DeJureEstimates, alpha: DiscontinuationDistribution, kspec: KSpec,
                        visit_times=None) -> DefactoEstimate:
    """De facto effect at the final visit as a linear combination of de jure effects.

    ``alpha_T delta_T + sum_{t<T} alpha_t e_t' K_t delta_t``, valid when the
    selection regression is the same in the discontinuers and the fully
    treated. The standard error treats ``alpha`` as known.
    """
    T = dejure.T
    if alpha.alpha.size != T + 1:
        raise ShapeMismatch(f"alpha has {alpha.alpha.size} entries, expected {T + 1}")
    c = _maintained_weights(alpha, kspec, visit_times)
    c[-1] += alpha.alpha[T]
    est = float(c @ dejure.delta)
    se = float(np.sqrt(c @ dejure.vcov @ c))
    return DefactoEstimate(est, se)


def defacto_from_j2r(j2r_pooled: PooledResult, dejure: DeJureEstimates, alpha: DiscontinuationDistribution,
                     kspec: KSpec, visit_times=None) -> DefactoEstimate:
    """Shift a pooled J2R estimate by the maintained-effect correction.

    The standard error is the J2R Rubin's-rules SE, unchanged.
    """
    if alpha.alpha.size != dejure.T + 1:
        raise ShapeMismatch(f"alpha has {alpha.alpha.size} entries, expected {dejure.T + 1}")
    c = _maintained_weights(alpha, kspec, visit_times)
    return DefactoEstimate(j2r_pooled.estimate + float(c @ dejure.delta), j2r_pooled.se)


# ---------------------------------------------------------------------------
# Tipping point


@dataclass(frozen=True)
class TippingRow:
    k: float
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float


@dataclass(frozen=True)
class TippingResult:
    family: str
    rows: tuple
    crossings: tuple
    alpha_level: float

    @property
    def crossing(self):
        """First k at which significance flips, or None."""
        return self.crossings[0] if self.crossings else None

    @property
    def no_crossing(self):
        return not self.crossings


def _kspec_for(family, k):
    if family == "constant_k0":
        return KSpec("constant_k0", k0=k)
    if family == "exponential_k1":
        return KSpec("exponential_k1", k1=k)
    raise ValueError(f"unknown tipping-point family {family!r}")


def tipping_point(data: TrialDataset, family: str = "constant_k0", k_range=(-0.5, 2.5), m: int = 50,
                  alpha_level: float = 0.05, seed=0, cov_source: str = "reference", n_grid: int = 13,
                  bisect_steps: int = 20, uncertainty: str = "da", burn_in: int = 20,
                  options: FitOptions = FitOptions()) -> TippingResult:
    """Sweep the causal-model sensitivity parameter and locate where the
    pooled p-value crosses ``alpha_level``.

    The same parameter draws and normal innovations are reused at every k,
    so the sweep is smooth in k. Each bracketing grid cell is refined by
    bisection.
    """
    lo, hi = map(float, k_range)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise ValueError("k_range must be a finite increasing pair")
    if family == "exponential_k1" and (lo < 0 or hi > 1):
        raise ValueError("k1 range must lie within [0, 1]")
    draws = draw_parameters(data, m, seed, uncertainty, burn_in, models=fit_arms(data, options), options=options)
    z = innovations(data, m, seed)

    def evaluate(k):
        method = MethodSpec("Causal", _kspec_for(family, k), cov_source=cov_source)
        iset = impute_dataset(data, method, m, seed=seed, draws=draws, z=z)
        _, pooled = analyze_imputations(iset)
        return TippingRow(k, pooled.estimate, pooled.se, pooled.ci_low, pooled.ci_high, pooled.p_value)

    grid = [evaluate(k) for k in np.linspace(lo, hi, n_grid)]
    crossings = []
    for a, b in zip(grid[:-1], grid[1:]):
        sa, sb = a.p_value > alpha_level, b.p_value > alpha_level
        if sa == sb:
            continue
        left, right = a.k, b.k
        for _ in range(bisect_steps):
            mid = 0.5 * (left + right)
            if (evaluate(mid).p_value > alpha_level) == sa:
                left = mid
            else:
                right = mid
        crossings.append(0.5 * (left + right))
    if not crossings:
        log.info("no tipping point in [%g, %g]", lo, hi)
    return TippingResult(family, tuple(grid), tuple(crossings), alpha_level)

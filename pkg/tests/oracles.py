"""Reference computations written independently of the package code."""

from fractions import Fraction
from itertools import product

import numpy as np
from scipy.special import expit


def partitioned_inverse_regression(cov, t):
    """Regression of visits ``t+1..`` on ``0..t`` read off the precision matrix.

    With ``P = inv(cov)`` split as pre (p) / post (q):
    ``beta = -inv(P_qq) P_qp`` and the residual covariance is ``inv(P_qq)``.
    """
    P = np.linalg.inv(cov)
    pre = slice(0, t + 1)
    post = slice(t + 1, cov.shape[0])
    Pqq_inv = np.linalg.inv(P[post, post])
    return -Pqq_inv @ P[post, pre], Pqq_inv


def condition_on_first_exact(mean, cov, y0):
    """Conditional mean/cov of coordinates 1..2 given coordinate 0, in exact
    rational arithmetic."""
    m = [Fraction(x) for x in mean]
    S = [[Fraction(x) for x in row] for row in cov]
    y = Fraction(y0)
    cm = [m[i] + S[i][0] / S[0][0] * (y - m[0]) for i in (1, 2)]
    cc = [[S[i][j] - S[i][0] * S[0][j] / S[0][0] for j in (1, 2)] for i in (1, 2)]
    return np.array([float(v) for v in cm]), np.array([[float(v) for v in r] for r in cc])


def heterogeneity_cov(sd=3.0, rho=0.5, h=2.5):
    """Covariance of (Y0, Y1, Y2) under full treatment when a common effect
    ``u1 ~ N(0, h^2)`` is added to both follow-up visits."""
    idx = np.arange(3)
    base = sd**2 * rho ** np.abs(idx[:, None] - idx[None, :])
    bump = np.array([[0, 0, 0], [0, 1, 1], [0, 1, 1]], dtype=float) * h**2
    return base + bump


def bivariate_monotone_mle(y):
    """ML estimates for bivariate normal data where column 1 may be missing
    (monotone pattern), via the factored likelihood.

    Marginal of column 0 from all rows; regression of column 1 on column 0
    from complete rows.
    """
    y = np.asarray(y, dtype=float)
    cc = ~np.isnan(y[:, 1])
    mu1 = y[:, 0].mean()
    s11 = np.mean((y[:, 0] - mu1) ** 2)
    xc, yc = y[cc, 0], y[cc, 1]
    sxx = np.mean((xc - xc.mean()) ** 2)
    sxy = np.mean((xc - xc.mean()) * (yc - yc.mean()))
    b = sxy / sxx
    a = yc.mean() - b * xc.mean()
    resid = np.mean((yc - a - b * xc) ** 2)
    mu2 = a + b * mu1
    s22 = resid + b * b * s11
    s12 = b * s11
    return np.array([mu1, mu2]), np.array([[s11, s12], [s12, s22]])


def rubin_by_hand(est, var):
    m = len(est)
    qbar = sum(est) / m
    W = sum(var) / m
    B = sum((e - qbar) ** 2 for e in est) / (m - 1)
    T = W + (1 + 1 / m) * B
    return qbar, W, B, T


def gauss_hermite_population(mu_T, cov_T, mu_0, cov_0, nodes=3):
    """Discrete population on a product Gauss--Hermite grid.

    Returns weights (N,), fully-treated outcomes Y(T) (N, p) and untreated
    outcomes Y(0) (N, p). Both are affine in the same standard-normal
    vector, so the grid reproduces each set of means and covariances
    exactly.
    """
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    p = len(mu_T)
    pts = np.array(list(product(x, repeat=p)))
    wts = np.prod(np.array(list(product(w, repeat=p))), axis=1)
    YT = np.asarray(mu_T) + pts @ np.linalg.cholesky(cov_T).T
    Y0 = np.asarray(mu_0) + pts @ np.linalg.cholesky(cov_0).T
    return wts, YT, Y0


def defacto_by_enumeration(wts, YT, Y0, mu_T, mu_0, K_rows, a, b):
    """De facto effect at the final visit by exhaustive expectation.

    Discontinuation after visit ``t < T`` has hazard ``expit(a_t + b_t Y_t)``
    computed on the on-treatment outcome. The partly-treated outcome keeps
    the fully-treated deviation from its mean and shifts the untreated mean
    by ``K_rows[t] @ (mu_T[:t+1] - mu_0[:t+1])``.

    Returns (effect, alpha).
    """
    N, p = YT.shape
    T = p - 1
    surv = np.ones(N)
    probs = []
    for t in range(T):
        h = expit(a[t] + b[t] * YT[:, t])
        probs.append(surv * h)
        surv = surv * (1 - h)
    probs.append(surv)
    probs = np.array(probs)
    alpha = probs @ wts
    mu_T = np.asarray(mu_T, dtype=float)
    mu_0 = np.asarray(mu_0, dtype=float)
    total = 0.0
    for t in range(T + 1):
        if t == T:
            yt = YT[:, T]
        else:
            shift = K_rows[t] @ (mu_T[:t + 1] - mu_0[:t + 1])
            yt = mu_0[T] + shift + (YT[:, T] - mu_T[T])
        total += np.sum(wts * probs[t] * yt)
    return total - np.sum(wts * Y0[:, T]), alpha

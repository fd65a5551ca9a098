"""Monte Carlo study of imputation-based de facto estimates in a three-visit trial.

Each replicate draws untreated potential outcomes for both arms, builds
fully-treated outcomes for the active arm with optional effect
heterogeneity, and applies outcome-dependent discontinuation after the
first post-baseline visit. The replicate is then analysed three ways:
complete data under several assumptions about the partly-treated outcome,
causal-model imputation over a grid of assumed ``k``, and the
reference-based methods.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.special import expit

from .data import TrialDataset
from .errors import DefactoError, NoRoot, StudyFailed, ValidationError
from .estimands import analyze_imputations
from .estimation import FitOptions, ancova_batch, ancova_design, fit_arms
from .imputer import KSpec, MethodSpec, draw_parameters, impute_dataset, innovations
from .mvncore import ar1_cov

log = logging.getLogger(__name__)

GH_NODES = 32
VARIANTS = ("a", "b")
SETTING_A = {"a": "beta1(1)=beta1(0)", "b": "beta1(1)=beta1(2)"}
SETTING_B = {"reference": "assumed beta1(1)=beta1(0)", "active": "assumed beta1(1)=beta1(2)"}
SETTING_C = {"reference": "cov from control arm", "active": "cov from active arm"}
RBI_METHODS = ("J2R", "CR", "CIR")


@dataclass(frozen=True)
class SimConfig:
    """One data-generating mechanism plus the analysis settings.

    ``k_values`` and ``u_corrs`` list the partly-treated outcome models used
    for the complete-data variants; ``k_assumed`` is the grid of ``k`` used
    for causal-model imputation.
    """

    n_per_arm: int = 250
    reps: int = 1000
    mu0: tuple = (10.0, 12.0, 14.0)
    sd: float = 3.0
    rho: float = 0.5
    delta: tuple = (1.0, 2.0)
    heterogeneity_sd: float = 0.0
    tau1: float = 0.0
    target_dropout: float = 0.5
    k_values: tuple = (0.0, 0.5, 0.74, 1.0)
    u_corrs: tuple = (0.5, 1.0)
    k_assumed: tuple = (0.0, 0.5, 0.74, 1.0)
    m: int = 25
    burn_in: int = 20
    uncertainty: str = "da"
    seed: int = 20240601
    name: str = "scenario"

    def __post_init__(self):
        if self.heterogeneity_sd < 0:
            raise ValidationError("heterogeneity_sd must be non-negative")
        if any(not -1 <= r <= 1 for r in self.u_corrs):
            raise ValidationError("u_corr must lie in [-1, 1]")
        if len(self.u_corrs) != len(VARIANTS):
            raise ValidationError("need one u_corr per complete-data variant")
        if not 0 < self.target_dropout < 1:
            raise ValidationError("target_dropout must lie in (0, 1)")
        if len(self.mu0) != 3 or len(self.delta) != 2:
            raise ValidationError("the design has one baseline and two follow-up visits")
        if self.n_per_arm < 5 or self.reps < 1 or self.m < 2:
            raise ValidationError("need n_per_arm >= 5, reps >= 1 and m >= 2")
        for name in ("mu0", "delta", "k_values", "u_corrs", "k_assumed"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def control_cov(self):
        return ar1_cov(3, self.sd, self.rho)

    @property
    def y1_active_moments(self):
        """Mean and variance of the first follow-up outcome under treatment."""
        return self.mu0[1] + self.delta[0], self.sd**2 + self.heterogeneity_sd**2

    @property
    def tau0(self):
        m, v = self.y1_active_moments
        return solve_tau0(self.tau1, m, v, self.target_dropout)


def standard_scenarios(**overrides):
    """The four mechanisms: MCAR/MAR crossed with homogeneous/heterogeneous effects."""
    out = []
    for mech, tau1 in (("MCAR", 0.0), ("MAR", 1.0)):
        for het, h in (("homogeneous", 0.0), ("heterogeneous", 2.5)):
            out.append(SimConfig(tau1=tau1, heterogeneity_sd=h, name=f"{mech}_{het}", **overrides))
    return out


def solve_tau0(tau1, y1_mean, y1_var, target):
    """Intercept giving ``E[expit(tau0 + tau1 Y)] = target`` for normal ``Y``.

    The expectation uses Gauss--Hermite quadrature; the root is bracketed by
    doubling and then located by Brent's method.
    """
    if not 0 < target < 1:
        raise NoRoot(f"target must lie strictly between 0 and 1, got {target}")
    if y1_var <= 0:
        raise ValueError("y1_var must be positive")
    x, w = np.polynomial.hermite_e.hermegauss(GH_NODES)
    w = w / w.sum()
    y = y1_mean + math.sqrt(y1_var) * x

    def excess(t0):
        return float(w @ expit(t0 + tau1 * y)) - target

    # the root sits near logit(target) - tau1 * mean
    centre = math.log(target / (1 - target)) - tau1 * y1_mean
    width = 1.0
    while excess(centre - width) > 0 or excess(centre + width) < 0:
        width *= 2
        if width > 1e6:
            raise NoRoot("could not bracket tau0")
    return optimize.brentq(excess, centre - width, centre + width, xtol=1e-14, rtol=4 * np.finfo(float).eps)


@dataclass(frozen=True)
class SimTrial:
    """Observed trial plus final-visit outcomes under each complete-data variant.

    ``complete[(k, v)]`` is the ``(n,)`` vector of final-visit outcomes when
    partly-treated outcomes follow ``k`` and variant ``v`` ("a" or "b");
    all other visits equal the observed data (control arm and completers) or
    the fully-treated potential outcomes.
    """

    observed: TrialDataset
    complete: dict
    y_full: np.ndarray = field(repr=False)

    def complete_dataset(self, key):
        y = self.y_full.copy()
        y[:, -1] = self.complete[key]
        return self.observed.with_outcomes(y)


def generate_trial(cfg: SimConfig, rng: np.random.Generator, tau0=None) -> SimTrial:
    """Draw one replicate of the design."""
    n = cfg.n_per_arm
    tau0 = cfg.tau0 if tau0 is None else tau0
    mu0 = np.asarray(cfg.mu0)
    L = np.linalg.cholesky(cfg.control_cov)
    y0 = mu0 + rng.standard_normal((2 * n, 3)) @ L.T
    h = cfg.heterogeneity_sd
    u1 = h * rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    act = slice(n, 2 * n)
    d1, d2 = cfg.delta
    treated = y0[act].copy()
    treated[:, 1] += d1 + u1
    treated[:, 2] += d2 + u1
    p_drop = expit(tau0 + cfg.tau1 * treated[:, 1])
    D = np.where(rng.random(n) < p_drop, 1, 2)

    y_full = np.vstack([y0[:n], treated])
    y_obs = y_full.copy()
    y_obs[n:][D == 1, 2] = np.nan
    arm = np.array(["control"] * n + ["active"] * n)
    disc = np.concatenate([np.full(n, 2), D])
    width = len(str(2 * n))
    ids = [f"s{i:0{width}d}" for i in range(2 * n)]
    observed = TrialDataset([0.0, 1.0, 2.0], ids, arm, y_obs, disc)

    complete = {}
    for v, r in zip(VARIANTS, cfg.u_corrs):
        u2 = r * u1 + math.sqrt(max(1 - r * r, 0.0)) * h * z2
        for k in cfg.k_values:
            final = y_full[:, 2].copy()
            partly = y0[act, 2] + k * d1 + u2
            final[n:] = np.where(D == 1, partly, treated[:, 2])
            complete[(k, v)] = final
    return SimTrial(observed, complete, y_full)


# ---------------------------------------------------------------------------
# Study runner


def cell_keys(cfg: SimConfig):
    """Ordered (panel, setting, row) labels of every reported cell."""
    keys = []
    for v in VARIANTS:
        keys += [("A", SETTING_A[v], f"k={k:.2f}") for k in cfg.k_values]
    for src in ("reference", "active"):
        keys += [("B", SETTING_B[src], f"k={k:.2f}") for k in cfg.k_assumed]
    for src in ("reference", "active"):
        keys += [("C", SETTING_C[src], meth) for meth in RBI_METHODS]
    return keys


def analysis_methods(cfg: SimConfig):
    """Imputation methods in the order of the panel B and C cells."""
    out = []
    for src in ("reference", "active"):
        out += [MethodSpec("Causal", KSpec("constant_k0", k0=k), cov_source=src) for k in cfg.k_assumed]
    for src in ("reference", "active"):
        out += [MethodSpec(meth, cov_source=src) for meth in RBI_METHODS]
    return out


def rep_seed(cfg: SimConfig, scenario_index: int, rep: int):
    return np.random.SeedSequence(cfg.seed, spawn_key=(scenario_index, rep))


def run_replicate(cfg: SimConfig, scenario_index: int, rep: int, tau0=None):
    """Analyse one replicate; returns ``(estimates, ses)`` aligned with :func:`cell_keys`."""
    ss = rep_seed(cfg, scenario_index, rep)
    gen_ss, imp_ss = ss.spawn(2)
    trial = generate_trial(cfg, np.random.Generator(np.random.PCG64(gen_ss)), tau0)
    data = trial.observed
    est, se = [], []

    X = ancova_design(data)
    Ys = np.column_stack([trial.complete[(k, v)] for v in VARIANTS for k in cfg.k_values])
    e, var, _ = ancova_batch(X, Ys)
    est += list(e)
    se += list(np.sqrt(var))

    opts = FitOptions()
    draws = draw_parameters(data, cfg.m, imp_ss, cfg.uncertainty, cfg.burn_in,
                            models=fit_arms(data, opts), options=opts)
    z = innovations(data, cfg.m, imp_ss)
    for method in analysis_methods(cfg):
        iset = impute_dataset(data, method, cfg.m, seed=imp_ss, draws=draws, z=z)
        _, pooled = analyze_imputations(iset)
        est.append(pooled.estimate)
        se.append(pooled.se)
    return np.array(est), np.array(se)


def _worker(args):
    cfg, s_idx, rep, tau0 = args
    try:
        return s_idx, rep, run_replicate(cfg, s_idx, rep, tau0), None
    except (DefactoError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return s_idx, rep, None, f"{type(exc).__name__}: {exc}"


@dataclass
class ScenarioResult:
    config: SimConfig
    keys: list
    estimates: np.ndarray
    ses: np.ndarray
    failures: list

    @property
    def n_ok(self):
        return self.estimates.shape[0]

    def summary(self):
        """One dict per cell with mean, empirical and average SE and their MC SEs."""
        R = self.n_ok
        rows = []
        for j, (panel, setting, row) in enumerate(self.keys):
            e, s = self.estimates[:, j], self.ses[:, j]
            emp = float(e.std(ddof=1)) if R > 1 else float("nan")
            rows.append(dict(
                scenario=self.config.name, panel=panel, setting=setting, row=row,
                mean=float(e.mean()), emp_se=emp, avg_se=float(s.mean()),
                mc_se_mean=emp / math.sqrt(R),
                mc_se_emp=emp / math.sqrt(2 * (R - 1)) if R > 1 else float("nan"),
                mc_se_avg=float(s.std(ddof=1)) / math.sqrt(R) if R > 1 else float("nan"),
                reps=R))
        return rows

    def cell(self, panel, setting, row):
        j = self.keys.index((panel, setting, row))
        return self.summary()[j]


@dataclass
class SimResult:
    scenarios: list
    elapsed: float = 0.0

    def summary(self):
        return [row for sc in self.scenarios for row in sc.summary()]

    def __getitem__(self, name):
        for sc in self.scenarios:
            if sc.config.name == name:
                return sc
        raise KeyError(name)

    def write_csv(self, outdir):
        """Write ``means.csv``, ``standard_errors.csv`` and ``cells.csv``
        (everything) plus ``failures.csv``."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        rows = self.summary()
        base = ["scenario", "panel", "setting", "row"]
        layouts = {
            "cells.csv": base + ["mean", "emp_se", "avg_se", "mc_se_mean", "mc_se_emp", "mc_se_avg", "reps"],
            "means.csv": base + ["mean", "mc_se_mean", "reps"],
            "standard_errors.csv": base + ["avg_se", "emp_se", "mc_se_avg", "mc_se_emp", "reps"],
        }
        for fname, cols in layouts.items():
            with open(outdir / fname, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
                w.writeheader()
                for r in rows:
                    w.writerow({c: (f"{r[c]:.6f}" if isinstance(r[c], float) else r[c]) for c in cols})
        with open(outdir / "failures.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "rep", "seed", "spawn_key", "error"])
            for sc in self.scenarios:
                for rep, msg in sc.failures:
                    w.writerow([sc.config.name, rep, sc.config.seed, f"{self.scenarios.index(sc)}:{rep}", msg])
        return [outdir / f for f in (*layouts, "failures.csv")]


def run_study(configs, workers: int = 1, max_failure_rate: float = 0.01, progress=None) -> SimResult:
    """Run every replicate of every scenario.

    Replicate ``r`` of scenario ``i`` is seeded from ``(cfg.seed, i, r)``
    alone, so results do not depend on ``workers``. Replicates that raise
    a numerical error are logged and excluded; more than
    ``max_failure_rate`` of them in any scenario raises :class:`StudyFailed`.
    """
    configs = list(configs)
    t_start = time.perf_counter()
    tau0s = [cfg.tau0 for cfg in configs]
    jobs = [(cfg, i, r, tau0s[i]) for i, cfg in enumerate(configs) for r in range(cfg.reps)]
    results = {i: {} for i in range(len(configs))}
    failures = {i: [] for i in range(len(configs))}

    def collect(out):
        i, rep, res, err = out
        if err is None:
            results[i][rep] = res
        else:
            log.warning("scenario %s rep %d failed (seed %d, key (%d, %d)): %s",
                        configs[i].name, rep, configs[i].seed, i, rep, err)
            failures[i].append((rep, err))
        if progress is not None:
            progress(i, rep)

    if workers <= 1:
        for job in jobs:
            collect(_worker(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for out in pool.map(_worker, jobs, chunksize=max(1, len(jobs) // (8 * workers))):
                collect(out)

    scenarios = []
    for i, cfg in enumerate(configs):
        n_fail = len(failures[i])
        if n_fail > max_failure_rate * cfg.reps:
            raise StudyFailed(f"scenario {cfg.name}: {n_fail} of {cfg.reps} replicates failed")
        reps = sorted(results[i])
        est = np.array([results[i][r][0] for r in reps])
        se = np.array([results[i][r][1] for r in reps])
        scenarios.append(ScenarioResult(cfg, cell_keys(cfg), est, se, sorted(failures[i])))
    return SimResult(scenarios, time.perf_counter() - t_start)


def config_dict(cfg: SimConfig):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}

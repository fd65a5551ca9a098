"""Command-line interface.

Every command reads a YAML (or JSON) config; command-line flags override
config values. Each run writes ``manifest.json`` into its output directory,
and a manifest can be passed back as ``--config`` to repeat the run exactly.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import (DefactoError, DrawFailed, NotConverged, NotPositiveDefinite, SingularFit,
                     StudyFailed, ValidationError)
from .estimands import (analyze_imputations, defacto_closed_form, defacto_from_j2r, estimate_alpha,
                        tipping_point)
from .estimation import FitOptions, fit_arms, fit_mmrm
from .imputer import KSpec, MethodSpec, draw_parameters, impute_dataset, innovations
from .ingest import ColumnMap, ingest
from .simulate import config_dict, run_study, standard_scenarios
from .svg import tipping_svg

log = logging.getLogger("defacto")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "input": None,
    "columns": {},
    "arms": {"active": "active", "control": "control"},
    "reference": None,
    "method": {"name": "J2R", "cov_source": None, "beta_source": None,
               "k_variant": "constant_k0", "k0": 1.0, "k1": 1.0},
    "m": 50,
    "seed": 0,
    "uncertainty": "da",
    "burn_in": 20,
    "visit": None,
    "analysis_covariates": True,
    "closed_form": False,
    "alpha_level": 0.05,
    "output": "defacto-out",
    "fit": {"max_iter": 500, "tol": 1e-8, "covariate_by_visit": True, "pooled_cov": False},
    "tipping": {"family": "constant_k0", "range": [-0.5, 2.5], "n_grid": 13, "bisect_steps": 20},
    "simulate": {"reps": 1000, "n_per_arm": 250, "m": 25, "burn_in": 20, "uncertainty": "da",
                 "seed": 20240601, "workers": 1, "scenarios": None},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _set_path(cfg, dotted, value):
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValidationError(f"cannot set {dotted}: {p} is not a section")
    node[parts[-1]] = value


def load_config(path):
    """Read a config file; a manifest's embedded config is unwrapped."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = (json.load(fh) if str(path).endswith(".json") else yaml.safe_load(fh)) or {}
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("config must be a mapping")
    if "config" in doc and "config_hash" in doc:
        doc = doc["config"]
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return doc


def resolve_config(args):
    cfg = _merge(DEFAULTS, load_config(args.config) if args.config else {})
    flat = {
        "input": args.input, "output": args.output, "seed": args.seed, "m": args.m,
        "reference": args.reference, "uncertainty": args.uncertainty,
        "method.name": args.method, "method.cov_source": args.cov_source,
        "method.k_variant": args.k_variant, "method.k0": args.k0, "method.k1": args.k1,
        "alpha_level": args.alpha_level,
    }
    for key in ("family", "range"):
        if getattr(args, key, None) is not None:
            flat[f"tipping.{key}"] = getattr(args, key)
    for key in ("reps", "workers"):
        if getattr(args, key, None) is not None:
            flat[f"simulate.{key}"] = getattr(args, key)
    for dotted, val in flat.items():
        if val is not None:
            _set_path(cfg, dotted, val)
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(cfg, key.strip(), yaml.safe_load(raw))
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(outdir, command, cfg, outputs):
    man = {
        "tool": "defacto",
        "version": __version__,
        "command": command,
        "seed": cfg.get("seed"),
        "config": cfg,
        "config_hash": config_hash(cfg),
        "outputs": {Path(p).name: _sha(p) for p in outputs},
    }
    return _write_json(Path(outdir) / "manifest.json", man)


# ---------------------------------------------------------------------------
# building blocks


def _fit_options(cfg):
    f = cfg["fit"]
    unknown = set(f) - set(DEFAULTS["fit"])
    if unknown:
        raise ValidationError(f"unknown fit options: {sorted(unknown)}")
    return FitOptions(max_iter=int(f["max_iter"]), tol=float(f["tol"]),
                      covariate_by_visit=bool(f["covariate_by_visit"]), pooled_cov=bool(f["pooled_cov"]))


def _load_data(cfg):
    if not cfg.get("input"):
        raise ValidationError("no input file given (config 'input' or --input)")
    cols = ColumnMap.from_dict(cfg["columns"])
    data, report = ingest(cfg["input"], cols, active=cfg["arms"]["active"], control=cfg["arms"]["control"])
    if report.n_excluded:
        log.info("excluded %d subject(s) without post-baseline data", report.n_excluded)
    return data, report


def _method(cfg):
    mc = cfg["method"]
    kspec = None
    if mc["name"] == "Causal":
        mats = mc.get("matrices")
        if mats is not None:
            # JSON manifests turn the integer keys into strings
            mats = {int(t): np.asarray(K, dtype=float) for t, K in mats.items()}
        kspec = KSpec(mc.get("k_variant", "constant_k0"), k0=float(mc.get("k0", 1.0)),
                      k1=float(mc.get("k1", 1.0)), matrices=mats)
    return MethodSpec(mc["name"], kspec, cov_source=mc.get("cov_source"),
                      beta_source=mc.get("beta_source"), reference=cfg.get("reference"))


def _draw_rows(data, draws):
    labels = [data.control, data.active]
    rows = []
    for lab in labels:
        means = np.array([d[lab].params.mean for d in draws])
        sds = np.sqrt(np.array([np.diag(d[lab].params.cov) for d in draws]))
        for j, t in enumerate(data.visit_times):
            rows.append([lab, "mean", t, means[:, j].mean(), means[:, j].std(ddof=1)])
            rows.append([lab, "sd", t, sds[:, j].mean(), sds[:, j].std(ddof=1)])
    return rows


def _outdir(cfg):
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg):
    data, report = _load_data(cfg)
    opts = _fit_options(cfg)
    models = fit_arms(data, opts)
    dejure = fit_mmrm(data, adjust_baseline=True, options=opts)
    alpha = estimate_alpha(data)
    out = _outdir(cfg)
    doc = {
        "subjects": data.n, "excluded": report.excluded, "visit_times": data.visit_times,
        "covariates": list(data.covariate_names),
        "arms": {lab: {"n": mod.n, "mean": mod.params.mean, "cov": mod.params.cov, "coef": mod.coef,
                       "covariate_center": mod.covariate_center}
                 for lab, mod in models.items()},
        "loglik": models[data.control].loglik, "converged": models[data.control].converged,
        "iterations": models[data.control].iterations,
        "mmrm": {"delta": dejure.delta, "se": dejure.ses, "vcov": dejure.vcov},
        "alpha": alpha.alpha,
    }
    files = [_write_json(out / "fit.json", doc)]
    write_manifest(out, "fit", cfg, files)
    print(f"fit: {data.n} subjects, final-visit MMRM effect {dejure.delta[-1]:.4f} (SE {dejure.ses[-1]:.4f})")
    return EXIT_OK


def _impute(cfg, data):
    opts = _fit_options(cfg)
    method = _method(cfg)
    m, seed = int(cfg["m"]), cfg["seed"]
    draws = draw_parameters(data, m, seed, cfg["uncertainty"], int(cfg["burn_in"]),
                            models=fit_arms(data, opts), options=opts)
    return impute_dataset(data, method, m, seed=seed, draws=draws, z=innovations(data, m, seed))


def cmd_impute(cfg):
    data, _ = _load_data(cfg)
    iset = _impute(cfg, data)
    out = _outdir(cfg)
    miss = data.missing
    rows = []
    for j, y in enumerate(iset.completed):
        for i, sid in enumerate(data.subject_ids):
            for v, t in enumerate(data.visit_times):
                rows.append([j + 1, sid, data.arm[i], t, y[i, v], int(miss[i, v])])
    files = [
        _write_csv(out / "imputations.csv", ["imputation", "subject", "arm", "visit", "value", "imputed"], rows),
        _write_csv(out / "draws_summary.csv", ["arm", "quantity", "visit", "mean", "sd"], _draw_rows(data, iset.draws)),
    ]
    write_manifest(out, "impute", cfg, files)
    print(f"impute: wrote {iset.m} completed datasets to {out}")
    return EXIT_OK


def cmd_analyze(cfg):
    data, _ = _load_data(cfg)
    iset = _impute(cfg, data)
    visit = cfg.get("visit")
    mi, pooled = analyze_imputations(iset, visit=visit, covariates=bool(cfg["analysis_covariates"]))
    out = _outdir(cfg)
    files = [
        _write_csv(out / "per_imputation.csv", ["imputation", "estimate", "se"],
                   [[j + 1, e, np.sqrt(v)] for j, (e, v) in enumerate(zip(mi.estimates, mi.variances))]),
        _write_csv(out / "pooled.csv",
                   ["estimate", "se", "within", "between", "total_var", "df", "ci_low", "ci_high", "p_value",
                    "m", "degenerate"],
                   [[pooled.estimate, pooled.se, pooled.within, pooled.between, pooled.total_var, pooled.df,
                     pooled.ci_low, pooled.ci_high, pooled.p_value, pooled.m, pooled.degenerate]]),
        _write_csv(out / "draws_summary.csv", ["arm", "quantity", "visit", "mean", "sd"],
                   _draw_rows(data, iset.draws)),
    ]
    method = iset.method
    if cfg.get("closed_form") and method.method == "Causal" and method.kspec.variant != "per_subject":
        opts = _fit_options(cfg)
        dejure = fit_mmrm(data, True, opts)
        alpha = estimate_alpha(data)
        closed = defacto_closed_form(dejure, alpha, method.kspec, data.visit_times)
        j2r_cfg = _merge(cfg, {"method": {"name": "J2R"}})
        _, j2r = analyze_imputations(_impute(j2r_cfg, data), visit=visit,
                                     covariates=bool(cfg["analysis_covariates"]))
        shifted = defacto_from_j2r(j2r, dejure, alpha, method.kspec, data.visit_times)
        files.append(_write_csv(out / "closed_form.csv", ["approach", "estimate", "se"],
                                [["linear_combination", closed.estimate, closed.se],
                                 ["j2r_plus_correction", shifted.estimate, shifted.se],
                                 ["multiple_imputation", pooled.estimate, pooled.se]]))
    write_manifest(out, "analyze", cfg, files)
    flag = " (between-imputation variance is zero)" if pooled.degenerate else ""
    print(f"analyze: estimate {pooled.estimate:.4f}  SE {pooled.se:.4f}  "
          f"95% CI ({pooled.ci_low:.4f}, {pooled.ci_high:.4f})  p {pooled.p_value:.4g}{flag}")
    return EXIT_OK


def cmd_tipping(cfg):
    data, _ = _load_data(cfg)
    tc = cfg["tipping"]
    lo, hi = tc["range"]
    res = tipping_point(data, tc["family"], (lo, hi), int(cfg["m"]), float(cfg["alpha_level"]), cfg["seed"],
                        cov_source=cfg["method"].get("cov_source") or "reference", n_grid=int(tc["n_grid"]),
                        bisect_steps=int(tc["bisect_steps"]), uncertainty=cfg["uncertainty"],
                        burn_in=int(cfg["burn_in"]), options=_fit_options(cfg))
    out = _outdir(cfg)
    rows = [[r.k, r.estimate, r.se, r.ci_low, r.ci_high, r.p_value] for r in res.rows]
    files = [_write_csv(out / "tipping.csv", ["k", "estimate", "se", "ci_low", "ci_high", "p"], rows)]
    svg = tipping_svg([r.k for r in res.rows], [r.estimate for r in res.rows], [r.ci_low for r in res.rows],
                      [r.ci_high for r in res.rows], res.crossing,
                      xlabel="k0" if tc["family"] == "constant_k0" else "k1")
    (out / "tipping.svg").write_text(svg, encoding="utf-8")
    files.append(out / "tipping.svg")
    files.append(_write_csv(out / "crossing.csv", ["crossing"], [[c] for c in res.crossings]))
    write_manifest(out, "tipping-point", cfg, files)
    if res.no_crossing:
        print(f"tipping-point: no crossing of p = {res.alpha_level} in [{lo}, {hi}]")
    else:
        print("tipping-point: crossing at k = " + ", ".join(f"{c:.4f}" for c in res.crossings))
    return EXIT_OK


def cmd_simulate(cfg):
    sc = cfg["simulate"]
    wanted = sc.get("scenarios")
    overrides = dict(reps=int(sc["reps"]), n_per_arm=int(sc["n_per_arm"]), m=int(sc["m"]),
                     burn_in=int(sc["burn_in"]), uncertainty=sc["uncertainty"], seed=int(sc["seed"]))
    configs = standard_scenarios(**overrides)
    if wanted:
        names = [c.name for c in configs]
        bad = set(wanted) - set(names)
        if bad:
            raise ValidationError(f"unknown scenarios {sorted(bad)}; choose from {names}")
        configs = [c for c in configs if c.name in wanted]
    res = run_study(configs, workers=int(sc["workers"]))
    out = _outdir(cfg)
    files = res.write_csv(out)
    files.append(_write_json(out / "scenarios.json", [config_dict(c) for c in configs]))
    write_manifest(out, "simulate", cfg, files)
    print(f"simulate: {sum(c.reps for c in configs)} replicates in {res.elapsed:.1f} s; tables in {out}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "impute": cmd_impute, "analyze": cmd_analyze,
            "tipping-point": cmd_tipping, "simulate": cmd_simulate}


def build_parser():
    p = argparse.ArgumentParser(prog="defacto", description="De facto treatment effects via reference-based "
                                "and causal-model multiple imputation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c", help="YAML/JSON config or a previous run's manifest.json")
        s.add_argument("--input", "-i")
        s.add_argument("--output", "-o")
        s.add_argument("--seed", type=int)
        s.add_argument("--m", type=int, help="number of imputations")
        s.add_argument("--method", choices=["MAR", "LMCF", "J2R", "CIR", "CR", "Causal"])
        s.add_argument("--cov-source", choices=["reference", "active"])
        s.add_argument("--k-variant", choices=["constant_k0", "exponential_k1", "combined", "full_matrix",
                                               "per_subject"])
        s.add_argument("--k0", type=float)
        s.add_argument("--k1", type=float)
        s.add_argument("--reference")
        s.add_argument("--uncertainty", choices=["da", "niw", "none"])
        s.add_argument("--alpha-level", type=float)
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config entry, e.g. --set fit.tol=1e-10")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "tipping-point":
            s.add_argument("--family", choices=["constant_k0", "exponential_k1"])
            s.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
        if name == "simulate":
            s.add_argument("--reps", type=int)
            s.add_argument("--workers", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (NotConverged, SingularFit, NotPositiveDefinite, DrawFailed, StudyFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError, KeyError, TypeError, DefactoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

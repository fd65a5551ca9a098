"""Read trial data from delimited text.

Long format has one row per subject-visit; wide format has one row per
subject and one outcome column per visit. Wide format is assumed when the
column mapping lists ``outcomes`` (several columns) rather than a single
``outcome`` column.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import TrialDataset
from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)


@dataclass
class ColumnMap:
    """Which input columns hold what.

    Attributes
    ----------
    subject, arm : str
    visit, outcome : str
        Long format only.
    outcomes : list of str
        Wide format only, one column per visit in time order.
    visit_times : dict or list, optional
        Numeric time for each visit label (long) or each outcome column
        (wide). Long-format visit labels that parse as numbers are used
        directly when this is omitted.
    baseline : str, optional
        Column holding the baseline outcome when it is not stored as its own
        visit; it is placed at ``baseline_time``.
    covariates : list of str
    categorical : list of str
        Subset of ``covariates`` to expand into indicator columns (first
        level in sorted order is dropped).
    k : str, optional
        Per-subject maintained-effect fraction.
    missing : str
        Token treated as missing in addition to the empty cell.
    """

    subject: str = "subject"
    arm: str = "arm"
    visit: str = "visit"
    outcome: str = "outcome"
    outcomes: list = None
    visit_times: object = None
    baseline: str = None
    baseline_time: float = 0.0
    covariates: list = field(default_factory=list)
    categorical: list = field(default_factory=list)
    k: str = None
    missing: str = ""

    @property
    def wide(self):
        return bool(self.outcomes)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown column mapping keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class IngestReport:
    rows: int
    subjects: int
    excluded: list

    @property
    def n_excluded(self):
        return len(self.excluded)


def _number(text, missing, row, col):
    t = text.strip()
    if t == "" or t == missing:
        return np.nan
    try:
        v = float(t)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r}", row, col) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", row, col)
    return v


def _read(path, delimiter=None):
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise ParseError("file is empty", 1)
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t").delimiter
        except csv.Error:
            delimiter = ","
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    rows = []
    for i, r in enumerate(reader, start=2):
        if not any(c.strip() for c in r):
            continue
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(r)}", i)
        rows.append((i, r))
    return header, rows


def _col(header, name):
    try:
        return header.index(name)
    except ValueError:
        raise ValidationError(f"column {name!r} not found; available: {header}") from None


def _subject_constant(store, sid, key, value, row, col):
    prev = store.setdefault(sid, {}).setdefault(key, value)
    same = prev == value or (isinstance(prev, float) and np.isnan(prev) and np.isnan(value))
    if not same:
        raise ParseError(f"{key} changes within subject {sid}", row, col)


def _visit_time(label, mapping, row, col):
    vt = mapping.visit_times
    if vt is not None:
        if not isinstance(vt, dict):
            raise ValidationError("long format needs visit_times as a label -> time mapping")
        if label not in vt:
            raise ParseError(f"visit label {label!r} has no time in visit_times", row, col)
        return float(vt[label])
    try:
        return float(label)
    except ValueError:
        raise ParseError(f"visit label {label!r} is not numeric; supply visit_times", row, col) from None


def ingest(path, mapping: ColumnMap, active="active", control="control", delimiter=None):
    """Read a file into a validated :class:`TrialDataset`.

    Subjects with nothing observed after baseline are dropped and counted.
    The discontinuation index of each subject is its last observed visit.

    Returns
    -------
    (TrialDataset, IngestReport)
    """
    if not isinstance(mapping, ColumnMap):
        mapping = ColumnMap.from_dict(mapping)
    header, rows = _read(path, delimiter)
    ci = {name: _col(header, name) for name in (mapping.subject, mapping.arm)}
    for name in mapping.covariates:
        ci[name] = _col(header, name)
    if mapping.k:
        ci[mapping.k] = _col(header, mapping.k)
    if mapping.baseline:
        ci[mapping.baseline] = _col(header, mapping.baseline)
    bad_cat = set(mapping.categorical) - set(mapping.covariates)
    if bad_cat:
        raise ValidationError(f"categorical columns must also be covariates: {sorted(bad_cat)}")

    order, per = [], {}
    outcomes = {}
    if mapping.wide:
        cols = [_col(header, c) for c in mapping.outcomes]
        vt = mapping.visit_times
        times = list(range(len(cols))) if vt is None else [float(v) for v in (vt.values() if isinstance(vt, dict) else vt)]
        if len(times) != len(cols):
            raise ValidationError("visit_times must give one time per outcome column")
    else:
        ci[mapping.visit] = _col(header, mapping.visit)
        ci[mapping.outcome] = _col(header, mapping.outcome)

    for line, r in rows:
        sid = r[ci[mapping.subject]].strip()
        if not sid:
            raise ParseError("empty subject id", line, mapping.subject)
        if sid not in per:
            order.append(sid)
        _subject_constant(per, sid, "arm", r[ci[mapping.arm]].strip(), line, mapping.arm)
        for name in mapping.covariates:
            raw = r[ci[name]].strip()
            val = raw if name in mapping.categorical else _number(raw, mapping.missing, line, name)
            _subject_constant(per, sid, ("cov", name), val, line, name)
        if mapping.k:
            _subject_constant(per, sid, "k", _number(r[ci[mapping.k]], mapping.missing, line, mapping.k),
                              line, mapping.k)
        if mapping.baseline:
            _subject_constant(per, sid, "base", _number(r[ci[mapping.baseline]], mapping.missing, line,
                                                        mapping.baseline), line, mapping.baseline)
        obs = outcomes.setdefault(sid, {})
        if mapping.wide:
            if len(obs):
                raise ParseError(f"subject {sid} appears on more than one row of a wide file", line,
                                 mapping.subject)
            for c, t, name in zip(cols, times, mapping.outcomes):
                obs[t] = _number(r[c], mapping.missing, line, name)
        else:
            t = _visit_time(r[ci[mapping.visit]].strip(), mapping, line, mapping.visit)
            if t in obs:
                raise ParseError(f"subject {sid} has two rows for visit time {t:g}", line, mapping.visit)
            obs[t] = _number(r[ci[mapping.outcome]], mapping.missing, line, mapping.outcome)

    if mapping.baseline:
        for sid in order:
            if mapping.baseline_time in outcomes[sid]:
                raise ValidationError(f"subject {sid} has both a baseline column and a visit at the baseline time")
            outcomes[sid][mapping.baseline_time] = per[sid]["base"]
    grid = sorted({t for obs in outcomes.values() for t in obs})
    if len(grid) < 2:
        raise ValidationError("need a baseline and at least one follow-up visit")
    y = np.full((len(order), len(grid)), np.nan)
    pos = {t: j for j, t in enumerate(grid)}
    for i, sid in enumerate(order):
        for t, v in outcomes[sid].items():
            y[i, pos[t]] = v

    keep = ~np.all(np.isnan(y[:, 1:]), axis=1)
    excluded = [sid for sid, k in zip(order, keep) if not k]
    if excluded:
        log.info("excluded %d subject(s) with no post-baseline observation", len(excluded))
    ids = [sid for sid, k in zip(order, keep) if k]
    y = y[keep]
    arms = np.array([per[sid]["arm"] for sid in ids])

    X, names = [], []
    for name in mapping.covariates:
        vals = [per[sid][("cov", name)] for sid in ids]
        if name in mapping.categorical:
            levels = sorted(set(vals))
            for lev in levels[1:]:
                X.append([float(v == lev) for v in vals])
                names.append(f"{name}[{lev}]")
        else:
            X.append(vals)
            names.append(name)
    covs = np.array(X, dtype=float).T if X else None
    if covs is not None and np.isnan(covs).any():
        i, j = np.argwhere(np.isnan(covs))[0]
        raise ValidationError(f"covariate {names[j]!r} missing for subject {ids[i]}")
    k = np.array([per[sid]["k"] for sid in ids]) if mapping.k else None
    if k is not None and np.isnan(k).any():
        raise ValidationError("per-subject k missing for some subjects")

    data = TrialDataset.from_arrays(y, arms, visit_times=grid, subject_ids=ids, active=active,
                                    control=control, covariates=covs, covariate_names=tuple(names),
                                    subject_k=k)
    return data, IngestReport(len(rows), len(ids), excluded)

"""Trial dataset container."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError


def last_observed_index(y):
    """Index of the last non-missing entry in each row of ``y``."""
    obs = ~np.isnan(y)
    idx = np.arange(y.shape[1])
    return np.max(np.where(obs, idx, -1), axis=1)


@dataclass(frozen=True)
class TrialDataset:
    """Longitudinal two-arm trial in wide form.

    Attributes
    ----------
    visit_times : (T+1,) array
        Numeric visit times; index 0 is baseline. Strictly increasing.
    subject_ids : (n,) array of str
    arm : (n,) array of str
        Arm label per subject; must be one of ``active``/``control``.
    y : (n, T+1) array
        Outcomes, NaN where missing.
    discontinuation : (n,) int array
        Last on-treatment visit index ``D``; nothing is observed after it.
    covariates : (n, q) array
        Baseline covariate design (categoricals already expanded).
    covariate_names : tuple of str
    active, control : str
        Arm labels.
    subject_k : (n,) array or None
        Optional per-subject maintained-effect fraction.
    """

    visit_times: np.ndarray
    subject_ids: np.ndarray
    arm: np.ndarray
    y: np.ndarray
    discontinuation: np.ndarray
    active: str = "active"
    control: str = "control"
    covariates: np.ndarray = None
    covariate_names: tuple = ()
    subject_k: np.ndarray = None
    _validated: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        n, p = y.shape
        vt = np.asarray(self.visit_times, dtype=float).reshape(-1)
        if vt.size != p:
            raise ValidationError(f"{vt.size} visit times for {p} outcome columns")
        if p < 2 or np.any(np.diff(vt) <= 0):
            raise ValidationError("visit times must be strictly increasing with at least one post-baseline visit")
        ids = np.asarray(self.subject_ids).astype(str)
        arm = np.asarray(self.arm).astype(str)
        D = np.asarray(self.discontinuation, dtype=int).reshape(-1)
        if ids.shape != (n,) or arm.shape != (n,) or D.shape != (n,):
            raise ValidationError("subject_ids, arm and discontinuation must have one entry per subject")
        cov = np.zeros((n, 0)) if self.covariates is None else np.array(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.shape[0] != n:
            raise ValidationError("covariate rows do not match subjects")
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise ValidationError("covariate_names length does not match covariate columns")
        k = None if self.subject_k is None else np.asarray(self.subject_k, dtype=float).reshape(-1)
        for name, value in (("visit_times", vt), ("subject_ids", ids), ("arm", arm), ("y", y),
                            ("discontinuation", D), ("covariates", cov)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "covariate_names", names)
        if k is not None:
            k.setflags(write=False)
            object.__setattr__(self, "subject_k", k)
        if self._validated:
            self.validate()

    def validate(self):
        n, p = self.y.shape
        if self.active == self.control:
            raise ValidationError("active and control arm labels must differ")
        bad = ~np.isin(self.arm, [self.active, self.control])
        if bad.any():
            raise ValidationError(f"unknown arm label {str(self.arm[bad][0])!r}")
        if len(np.unique(self.subject_ids)) != n:
            raise ValidationError("duplicate subject ids")
        if np.isnan(self.y[:, 0]).any():
            sid = self.subject_ids[np.isnan(self.y[:, 0])][0]
            raise ValidationError(f"baseline outcome missing for subject {sid}")
        if np.any((self.discontinuation < 0) | (self.discontinuation > p - 1)):
            raise ValidationError("discontinuation index out of range")
        after = np.arange(p)[None, :] > self.discontinuation[:, None]
        viol = after & ~np.isnan(self.y)
        if viol.any():
            i, j = np.argwhere(viol)[0]
            raise ValidationError(
                f"subject {self.subject_ids[i]} has an observed value at visit index {j} "
                f"after discontinuation at {self.discontinuation[i]}")
        if not np.all(np.isfinite(self.y[~np.isnan(self.y)])):
            raise ValidationError("outcomes must be finite")
        if not np.all(np.isfinite(self.covariates)):
            raise ValidationError("covariates must be finite and complete")
        if self.subject_k is not None and self.subject_k.shape != (n,):
            raise ValidationError("subject_k must have one entry per subject")

    @classmethod
    def from_arrays(cls, y, arm, visit_times=None, discontinuation=None, subject_ids=None,
                    active="active", control="control", **kw):
        """Build from an outcome matrix, inferring ``D`` from the last observed visit."""
        y = np.asarray(y, dtype=float)
        n, p = y.shape
        if visit_times is None:
            visit_times = np.arange(p, dtype=float)
        if discontinuation is None:
            discontinuation = last_observed_index(y)
        if subject_ids is None:
            width = len(str(n))
            subject_ids = [f"s{i:0{width}d}" for i in range(n)]
        return cls(visit_times, subject_ids, arm, y, discontinuation, active=active,
                   control=control, **kw)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def T(self):
        """Index of the final visit."""
        return self.y.shape[1] - 1

    @property
    def is_active(self):
        return self.arm == self.active

    @property
    def missing(self):
        return np.isnan(self.y)

    def arm_mask(self, label):
        return self.arm == label

    def with_outcomes(self, y):
        """Copy with a replaced outcome matrix (used for completed datasets)."""
        return replace(self, y=y, _validated=False)

    def covariate_means(self):
        if self.covariates.shape[1] == 0:
            return np.zeros(0)
        return self.covariates.mean(axis=0)

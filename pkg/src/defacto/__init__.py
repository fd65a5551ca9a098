"""De facto treatment effects in longitudinal trials with treatment
discontinuation: reference-based and causal-model multiple imputation,
pooling, closed-form estimates, tipping-point sweeps and a simulation
harness."""

__version__ = "0.1.0"

from .data import TrialDataset
from .errors import (DefactoError, DrawFailed, NoRoot, NotConverged, NotPositiveDefinite, ParseError,
                     RankDeficient, ShapeMismatch, SingularFit, StudyFailed, ValidationError)
from .estimands import (DefactoEstimate, DiscontinuationDistribution, MIResult, PooledResult,
                        analyze_imputations, defacto_closed_form, defacto_from_j2r, estimate_alpha,
                        rubin_pool, tipping_point)
from .estimation import (DeJureEstimates, FitOptions, FittedArmModel, ancova, fit_arms, fit_mar_mvn,
                         fit_mmrm)
from .imputer import (ImputationSet, KSpec, MethodSpec, build_K, draw_parameters, impute_dataset,
                      imputation_cov, imputation_mean, innovations, posterior_draw)
from .ingest import ColumnMap, ingest
from .mvncore import (ConditionalRegression, MvnParams, ar1_cov, cholesky, conditional_mvn,
                      conditional_regression, mvn_sample)

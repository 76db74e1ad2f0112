"""Simulation toolkit for auditing post-selection and cross-validation protocols."""

from postselect_lab.data import (
    Dataset,
    FoldPlan,
    LabeledSample,
    NestedFoldPlan,
    SplitPlan,
    generate_synthetic,
    make_folds,
    make_nested_folds,
    make_split,
)
from postselect_lab.learners import (
    Learner,
    LearnerFamily,
    ResourceLedger,
    TrainedModel,
    evaluate_error,
    fit_honest,
    fit_nnwt,
    fit_pgnn,
    predict,
)
from postselect_lab.protocols import (
    ErrorSample,
    EstimateReport,
    PostSelectionOutcome,
    estimate_report,
    lost_luck_experiment,
    min_mse_estimate,
    post_select,
    report_all_networks,
)
from postselect_lab.crossval import (
    CvResult,
    cross_validate,
    cv_misconduct_audit,
    nested_cross_validate,
)
from postselect_lab.superlearner import (
    SuperLearnerResult,
    adversarial_injection,
    super_learn,
)

__version__ = "0.1.0"

"""ITE-based label-bias repair for classifiers trained on audit-study hiring data."""

from .causal import ITEScores, TreatmentFrame, TwinModel, estimate_ite, fit_twin_model
from .data import (AgeGroup, ApplicantRecord, Dataset, FeatureMatrix, FoldAssignment, SynthConfig,
                   encode_features, generate_synthetic, kfold_split, load_csv, table2_replica, write_csv)
from .errors import AuditRepairError, ConfigError, DataError, InfeasibleError
from .forest import ForestModel, ForestParams, fit_forest
from .harness import (ExperimentConfig, Model, RunResult, Setting, emit_reports, run_rq3, run_rq4,
                      run_setting)
from .metrics import (ConfusionByGroup, EvalReport, LabelSource, compute_auc, compute_confusion,
                      compute_fprd, evaluate, threshold_by_budget)
from .neural import MlpModel, MlpParams, fit_mlp, gradient_check, mlp_predict_proba
from .repair import (BiasTarget, RepairLog, double_discrimination, equalize_base_rate,
                     inject_selection_bias, repair_labels_ite)

__version__ = "0.1.0"

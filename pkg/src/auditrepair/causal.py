"""Virtual-twins estimates of the individual effect of being young on callback."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import AGE_COLUMN, Dataset, FeatureMatrix, encode_features
from .errors import EmptyTrainingSet, LengthMismatch, ShapeMismatch, SingleArm
from .forest import ForestModel, ForestParams, fit_forest


@dataclass(frozen=True)
class TreatmentFrame:
    """Covariates without the age column, treatment (1 = young) and observed callback."""

    X: FeatureMatrix
    A: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        if AGE_COLUMN in self.X.columns:
            raise ShapeMismatch(f"covariates must not contain {AGE_COLUMN!r}")
        if not (len(self.X.values) == len(self.A) == len(self.Y)):
            raise LengthMismatch("X, A and Y must have the same number of rows")

    @classmethod
    def from_dataset(cls, data: Dataset, X: FeatureMatrix | None = None) -> "TreatmentFrame":
        if X is None:
            X = encode_features(data)
        return cls(X, data.treatment.astype(np.int8), data.callback.astype(np.int8))

    def __len__(self) -> int:
        return len(self.A)


@dataclass(frozen=True)
class TwinModel:
    forest: ForestModel
    columns: tuple[str, ...]

    @property
    def n_covariates(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class ITEScores:
    tau_hat: np.ndarray
    base_model: TwinModel
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.tau_hat)

    def write_csv(self, path, treatment=None, outcome=None) -> None:
        """One row per record: index, tau_hat, A, Y (blank when not given)."""
        n = len(self.tau_hat)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record_index", "tau_hat", "A", "Y"])
            for i in range(n):
                a = "" if treatment is None else int(treatment[i])
                y = "" if outcome is None else int(outcome[i])
                w.writerow([i, repr(float(self.tau_hat[i])), a, y])


def _with_treatment(values: np.ndarray, a) -> np.ndarray:
    col = np.broadcast_to(np.asarray(a, dtype=values.dtype), (len(values),))
    return np.column_stack([values, col])


def fit_twin_model(train: TreatmentFrame, params: ForestParams | None = None) -> TwinModel:
    """Forest on covariates plus the treatment as the last input column."""
    if len(train) == 0:
        raise EmptyTrainingSet("twin model needs at least one record")
    arms = np.unique(train.A)
    if len(arms) < 2:
        raise SingleArm(f"all {len(train)} records have treatment {int(arms[0])}")
    forest = fit_forest(_with_treatment(train.X.values, train.A), train.Y, params)
    return TwinModel(forest, tuple(train.X.columns))


def estimate_ite(model: TwinModel, X: FeatureMatrix | np.ndarray, provenance: str = "") -> ITEScores:
    """tau_hat = P(callback | x, young) - P(callback | x, older), row by row."""
    values = np.asarray(getattr(X, "values", X), dtype=float)
    if values.ndim != 2 or values.shape[1] != model.n_covariates:
        raise ShapeMismatch(
            f"twin model expects {model.n_covariates} covariates, got shape {values.shape}")
    if isinstance(X, FeatureMatrix) and tuple(X.columns) != model.columns:
        raise ShapeMismatch("covariate columns differ from those the twin model was fitted on")
    n = len(values)
    # both counterfactual copies in one pass over the forest
    both = np.vstack([_with_treatment(values, 1), _with_treatment(values, 0)])
    p = model.forest.predict_proba(both)
    return ITEScores(p[:n] - p[n:], model, provenance)

"""Budgeted thresholding, per-group false positive rates, FPRD and AUC.

Group membership is passed as a per-record indicator where 1 (or
``AgeGroup.YOUNG``) marks a young applicant and 0 marks an older one.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .data import young_indicator
from .errors import EmptyScores, LengthMismatch, SingleClass, UndefinedFPR


class LabelSource(str, enum.Enum):
    OBSERVED = "observed"
    REPAIRED = "repaired"
    LATENT = "latent"


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def actual_negatives(self) -> int:
        return self.fp + self.tn

    @property
    def size(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def fpr(self) -> float:
        if self.actual_negatives == 0:
            raise UndefinedFPR("group has no actual negatives")
        return self.fp / self.actual_negatives


@dataclass(frozen=True)
class ConfusionByGroup:
    young: Confusion
    older: Confusion

    def swapped(self) -> "ConfusionByGroup":
        return ConfusionByGroup(young=self.older, older=self.young)


@dataclass(frozen=True)
class EvalReport:
    auc: float
    fpr_young: float
    fpr_old: float
    fprd: float
    confusion: ConfusionByGroup
    budget_rate: float
    label_source: LabelSource
    n_records: int
    n_predicted_positive: int

    def to_dict(self) -> dict:
        """Flat JSON-ready mapping; confusion cells become ``young_tp`` etc."""
        out = {
            "auc": self.auc,
            "fpr_young": self.fpr_young,
            "fpr_old": self.fpr_old,
            "fprd": self.fprd,
            "budget_rate": self.budget_rate,
            "label_source": self.label_source.value,
            "n_records": self.n_records,
            "n_predicted_positive": self.n_predicted_positive,
        }
        for group in ("young", "older"):
            for cell, value in asdict(getattr(self.confusion, group)).items():
                out[f"{group}_{cell}"] = value
        return out


def budget_count(budget_rate: float, n: int) -> int:
    """round(budget_rate * n), half away from zero, computed without float error."""
    exact = Decimal(repr(float(budget_rate))) * n
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def threshold_by_budget(scores, budget_rate: float) -> np.ndarray:
    """Label the top ``round(budget_rate * n)`` scores positive.

    Equal scores are ranked by ascending record index, so the result is
    fully determined by the inputs.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise EmptyScores("no scores to threshold")
    if not 0.0 < budget_rate < 1.0:
        raise ValueError(f"budget_rate must lie in (0, 1), got {budget_rate}")
    n = scores.size
    order = np.lexsort((np.arange(n), -scores))
    pred = np.zeros(n, dtype=np.int8)
    pred[order[: budget_count(budget_rate, n)]] = 1
    return pred


def _counts(pred, labels):
    return Confusion(
        tp=int(np.sum((pred == 1) & (labels == 1))),
        fp=int(np.sum((pred == 1) & (labels == 0))),
        tn=int(np.sum((pred == 0) & (labels == 0))),
        fn=int(np.sum((pred == 0) & (labels == 1))),
    )


def compute_confusion(pred, labels, groups) -> ConfusionByGroup:
    pred = np.asarray(pred).astype(np.int8)
    labels = np.asarray(labels).astype(np.int8)
    young = young_indicator(groups)
    if not (len(pred) == len(labels) == len(young)):
        raise LengthMismatch(
            f"pred/labels/groups lengths differ: {len(pred)}, {len(labels)}, {len(young)}"
        )
    return ConfusionByGroup(
        young=_counts(pred[young], labels[young]),
        older=_counts(pred[~young], labels[~young]),
    )


def compute_fprd(confusion: ConfusionByGroup) -> float:
    """FPR_young - FPR_old; positive means older applicants are disfavoured.

    Evaluated as one rational number and rounded once, so the worked
    example (30/100 - 20/100) yields exactly 0.1.
    """
    y, o = confusion.young, confusion.older
    if y.actual_negatives == 0 or o.actual_negatives == 0:
        raise UndefinedFPR("FPRD needs at least one actual negative in each group")
    return float(Fraction(y.fp, y.actual_negatives) - Fraction(o.fp, o.actual_negatives))


def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.shape} scores vs {labels.shape} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs at least one positive and one negative label")
    # twice the midranks are integers, which keeps the statistic exact
    twice_ranks = (2 * rankdata(scores, method="average")).astype(np.int64)
    twice_u = int(twice_ranks[labels].sum()) - n_pos * (n_pos + 1)
    return twice_u / (2 * n_pos * n_neg)


def evaluate(scores, labels, groups, budget_rate: float = 0.16,
             label_source: LabelSource = LabelSource.OBSERVED) -> EvalReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if not (len(scores) == len(labels) == len(groups)):
        raise LengthMismatch("scores, labels and groups must be aligned")
    pred = threshold_by_budget(scores, budget_rate)
    confusion = compute_confusion(pred, labels, groups)
    return EvalReport(
        auc=compute_auc(scores, labels),
        fpr_young=confusion.young.fpr,
        fpr_old=confusion.older.fpr,
        fprd=compute_fprd(confusion),
        confusion=confusion,
        budget_rate=budget_rate,
        label_source=LabelSource(label_source),
        n_records=int(len(scores)),
        n_predicted_positive=int(pred.sum()),
    )

"""Label and sampling interventions on audit datasets.

Every function here is pure: the input dataset is never modified and the
returned dataset carries a new entry in its provenance trail.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .data import Dataset
from .errors import ConfigError, ExhaustedCandidates, InfeasibleTarget, LengthMismatch
from .rng import stream


class FlipDirection(str, enum.Enum):
    POS_TO_NEG_YOUNG = "PosToNeg_Young"
    NEG_TO_POS_OLDER = "NegToPos_Older"
    # mirrored repair, used only when the older group is favored
    POS_TO_NEG_OLDER = "PosToNeg_Older"
    NEG_TO_POS_YOUNG = "NegToPos_Young"


@dataclass(frozen=True)
class Flip:
    index: int
    direction: FlipDirection
    tau_hat: float


@dataclass
class RepairLog:
    flips: list[Flip] = field(default_factory=list)
    iterations: int = 0
    initial_gap: float = 0.0
    final_gap: float = 0.0
    tolerance: float = 0.0

    @property
    def flipped_indices(self) -> np.ndarray:
        return np.array([f.index for f in self.flips], dtype=np.int64)

    def write_csv(self, path, record_id=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            self._write(fh, record_id)

    def _write(self, fh, record_id=None):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "record_index", "record_id", "direction", "tau_hat"])
        for k, f in enumerate(self.flips):
            rid = f.index if record_id is None else int(record_id[f.index])
            w.writerow([k // 2, f.index, rid, f.direction.value, repr(f.tau_hat)])


def repair_tolerance(n_young: int, n_older: int) -> float:
    """Largest change in the rate gap one paired flip can make."""
    return 1.0 / n_young + 1.0 / n_older


def _ranked(pool: np.ndarray, tau: np.ndarray, descending: bool) -> np.ndarray:
    key = -tau[pool] if descending else tau[pool]
    return pool[np.lexsort((pool, key))]


def repair_labels_ite(data: Dataset, scores) -> tuple[Dataset, RepairLog]:
    """Flip the labels most attributable to age until group callback rates match.

    Each iteration demotes the young callback with the largest tau_hat and
    promotes the older no-callback with the smallest tau_hat.  Iteration
    stops once the young rate exceeds the older rate by no more than
    ``1/n_young + 1/n_older``.  Ties break on the lowest row index and no
    record is flipped twice.  When the older group is favored the repair
    runs mirrored: older callbacks with the smallest tau_hat are demoted
    and young no-callbacks with the largest tau_hat are promoted.
    """
    tau = np.asarray(getattr(scores, "tau_hat", scores), dtype=float)
    if len(tau) != len(data):
        raise LengthMismatch(f"{len(tau)} scores for {len(data)} records")
    y = data.callback.astype(np.int8)
    young = data.young
    n_young, n_older = int(young.sum()), int((~young).sum())
    if n_young == 0 or n_older == 0:
        raise ExhaustedCandidates("repair needs both age groups", 0.0)
    gap = float(y[young].mean() - y[~young].mean())
    eps = repair_tolerance(n_young, n_older)
    log = RepairLog(initial_gap=gap, final_gap=gap, tolerance=eps)
    if abs(gap) <= eps:
        return data, log

    if gap > 0:
        down = _ranked(np.flatnonzero(young & (y == 1)), tau, descending=True)
        up = _ranked(np.flatnonzero(~young & (y == 0)), tau, descending=False)
        dirs = (FlipDirection.POS_TO_NEG_YOUNG, FlipDirection.NEG_TO_POS_OLDER)
    else:
        down = _ranked(np.flatnonzero(~young & (y == 1)), tau, descending=False)
        up = _ranked(np.flatnonzero(young & (y == 0)), tau, descending=True)
        dirs = (FlipDirection.POS_TO_NEG_OLDER, FlipDirection.NEG_TO_POS_YOUNG)

    # each pair moves the gap toward zero by exactly eps; count pairs exactly
    pos_y, pos_o = int(y[young].sum()), int(y[~young].sum())
    num = abs(Fraction(pos_y, n_young) - Fraction(pos_o, n_older))
    step = Fraction(1, n_young) + Fraction(1, n_older)
    needed = max(0, math.ceil(num / step - 1))
    available = min(len(down), len(up))
    k = min(needed, available)

    out = y.copy()
    out[down[:k]] = 0
    out[up[:k]] = 1
    for i in range(k):
        log.flips.append(Flip(int(down[i]), dirs[0], float(tau[down[i]])))
        log.flips.append(Flip(int(up[i]), dirs[1], float(tau[up[i]])))
    log.iterations = k
    log.final_gap = float(out[young].mean() - out[~young].mean())
    if k < needed:
        raise ExhaustedCandidates(f"ran out of flip candidates after {k} iterations", log.final_gap)

    op = {"operation": "repair_labels_ite", "iterations": k,
          "records_affected": 2 * k, "initial_gap": gap, "final_gap": log.final_gap}
    return data.with_callback(out, op), log


class NoOpWarning(UserWarning):
    """An intervention found nothing to do, or could not do it, and returned its input."""


def equalize_base_rate(data: Dataset, seed: int) -> Dataset:
    """Drop random older no-callback records until the older rate reaches the young rate."""
    y, young = data.callback, data.young
    n_young, pos_young = int(young.sum()), int(y[young].sum())
    n_older, pos_older = int((~young).sum()), int(y[~young].sum())
    if n_young == 0 or n_older == 0:
        warnings.warn("equalize_base_rate: an age group is empty; nothing removed", NoOpWarning, stacklevel=2)
        return data
    young_rate = Fraction(pos_young, n_young)
    if Fraction(pos_older, n_older) >= young_rate:
        if Fraction(pos_older, n_older) > young_rate:
            warnings.warn("equalize_base_rate: older rate already exceeds young rate; nothing removed",
                          NoOpWarning, stacklevel=2)
        return data
    pool = np.flatnonzero(~young & (y == 0))
    # smallest m with pos_older / (n_older - m) >= young_rate
    m = n_older - math.floor(Fraction(pos_older) / young_rate) if pos_older else n_older
    if m > len(pool) or n_older - m <= 0:
        warnings.warn("equalize_base_rate: not enough older no-callback records to equalize; "
                      "nothing removed", NoOpWarning, stacklevel=2)
        return data
    drop = np.sort(stream(seed, "ebr").choice(pool, size=m, replace=False))
    keep = np.setdiff1d(np.arange(len(data)), drop, assume_unique=True)
    op = {"operation": "equalize_base_rate", "seed": int(seed), "records_affected": int(m)}
    return data.subset(keep, op)


def double_discrimination(data: Dataset, target_gap: float, seed: int) -> Dataset:
    """Drop random older callback records until the rate gap first reaches ``target_gap``."""
    y, young = data.callback, data.young
    n_young, pos_young = int(young.sum()), int(y[young].sum())
    n_older, pos_older = int((~young).sum()), int(y[~young].sum())
    if n_young == 0 or n_older == 0:
        raise InfeasibleTarget("both age groups are needed")
    target = Fraction(target_gap)
    young_rate = Fraction(pos_young, n_young)
    current = young_rate - Fraction(pos_older, n_older)
    slack = Fraction(1, 10**9)  # a target read back from a float rate gap is not exact
    if target < current - slack:
        raise InfeasibleTarget(f"target gap {target_gap} is below the current gap {float(current):.6f}; "
                               "removing older callbacks can only widen it")
    if target <= current + slack:
        return data
    c = young_rate - target  # required older rate ceiling
    if c < 0:
        raise InfeasibleTarget(f"target gap {target_gap} exceeds the young callback rate {float(young_rate):.6f}")
    # smallest m with (pos_older - m) / (n_older - m) <= c
    m = max(0, math.ceil((pos_older - c * n_older) / (1 - c)))
    if m > pos_older:
        raise InfeasibleTarget(f"target gap {target_gap} needs {m} removals but only {pos_older} "
                               "older callbacks exist")
    pool = np.flatnonzero(~young & (y == 1))
    drop = np.sort(stream(seed, "double_discrimination").choice(pool, size=m, replace=False))
    keep = np.setdiff1d(np.arange(len(data)), drop, assume_unique=True)
    op = {"operation": "double_discrimination", "seed": int(seed), "target_gap": float(target_gap),
          "records_affected": int(m)}
    return data.subset(keep, op)


@dataclass(frozen=True)
class BiasTarget:
    p_spanish_young: float
    p_spanish_old: float
    preserve_spanish_callback_rate: bool = True

    def __post_init__(self):
        for p in (self.p_spanish_young, self.p_spanish_old):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"Spanish proportions must lie in [0, 1], got {p}")
        if not self.preserve_spanish_callback_rate:
            raise ConfigError("selection-bias injection always preserves Spanish callback rates")

    @classmethod
    def from_disparity(cls, x: float) -> "BiasTarget":
        """P(Spanish | young) = (1 + x) / 2 and P(Spanish | older) = (1 - x) / 2."""
        if not 0.0 <= x <= 1.0:
            raise ConfigError(f"disparity must lie in [0, 1], got {x}")
        return cls(0.5 + x / 2, 0.5 - x / 2)


RATE_TOLERANCE = 0.01


def _keep_counts(n_spanish: int, n_other: int, p: float) -> tuple[int, int]:
    """Largest (spanish, other) sub-counts whose Spanish share rounds to ``p``."""
    if p >= 1.0:
        return n_spanish, 0
    if p <= 0.0:
        return 0, n_other
    if n_spanish * (1 - p) > p * n_other:
        return min(n_spanish, int(round(p / (1 - p) * n_other))), n_other
    return n_spanish, min(n_other, int(round((1 - p) / p * n_spanish)))


def _spread(amount: int, slack: np.ndarray) -> np.ndarray:
    """Split ``amount`` across cells in proportion to ``slack`` (largest remainder).

    Asking for more than the total slack fills every cell.
    """
    total = int(slack.sum())
    amount = min(amount, total)
    if amount == 0:
        return np.zeros_like(slack)
    exact = slack * amount / total
    out = np.floor(exact).astype(np.int64)
    rest = amount - int(out.sum())
    order = np.lexsort((np.arange(len(slack)), -(exact - out)))
    out[order[:rest]] += 1
    return np.minimum(out, slack)


def inject_selection_bias(data: Dataset, target: BiasTarget, seed: int) -> Dataset:
    """Delete records so Spanish fluency correlates with age as ``target`` asks.

    Within each age group only the over-represented Spanish status loses
    records.  Deletions inside each (age, Spanish) cell are split between
    callbacks and no-callbacks so that, per Spanish status, the pooled
    callback rate stays at its original value to the nearest record when
    the kept cells allow it, and within ``RATE_TOLERANCE`` otherwise.
    """
    y, young = data.callback.astype(np.int64), data.young
    spanish = data["spanish"].astype(bool)
    cells = {}
    for a in (True, False):
        for s in (True, False):
            for c in (1, 0):
                cells[a, s, c] = np.flatnonzero((young == a) & (spanish == s) & (y == c))

    keep_total = {}
    for a, p in ((True, target.p_spanish_young), (False, target.p_spanish_old)):
        n_s = len(cells[a, True, 1]) + len(cells[a, True, 0])
        n_o = len(cells[a, False, 1]) + len(cells[a, False, 0])
        if n_s + n_o == 0:
            raise InfeasibleTarget("an age group is empty")
        k_s, k_o = _keep_counts(n_s, n_o, p)
        if k_s + k_o == 0:
            raise InfeasibleTarget("target leaves an age group empty")
        share = k_s / (k_s + k_o)
        if abs(share - p) > 0.01:
            raise InfeasibleTarget(f"Spanish share {p} unreachable by deletion (best {share:.4f})")
        keep_total[a, True], keep_total[a, False] = k_s, k_o

    keep_pos = {}
    for s in (True, False):
        ages = (True, False)
        n_pos = np.array([len(cells[a, s, 1]) for a in ages])
        n_neg = np.array([len(cells[a, s, 0]) for a in ages])
        k = np.array([keep_total[a, s] for a in ages])
        n_all = n_pos + n_neg
        if k.sum() == 0:
            for a in ages:
                keep_pos[a, s] = 0
            continue
        # start from each cell's own callback rate, then correct the pooled rate
        base = np.where(n_all > 0, np.round(k * n_pos / np.maximum(n_all, 1)), 0).astype(np.int64)
        lo = np.maximum(0, k - n_neg)
        hi = np.minimum(n_pos, k)
        base = np.clip(base, lo, hi)
        want = int(round(n_pos.sum() / n_all.sum() * k.sum()))
        diff = want - int(base.sum())
        if diff > 0:
            base += _spread(diff, hi - base)
        elif diff < 0:
            base -= _spread(-diff, base - lo)
        drift = abs(int(base.sum()) / int(k.sum()) - n_pos.sum() / n_all.sum())
        if drift > RATE_TOLERANCE:
            raise InfeasibleTarget(f"Spanish={s} callback rate would drift by {drift:.4f}")
        for a, v in zip(ages, base):
            keep_pos[a, s] = int(v)

    drop = []
    for idx, ((a, s, c), members) in enumerate(sorted(cells.items(), key=lambda kv: kv[0], reverse=True)):
        n_keep = keep_pos[a, s] if c == 1 else keep_total[a, s] - keep_pos[a, s]
        n_drop = len(members) - n_keep
        if n_drop:
            drop.append(stream(seed, "selection_bias", idx).choice(members, size=n_drop, replace=False))
    drop = np.sort(np.concatenate(drop)) if drop else np.zeros(0, dtype=np.int64)
    keep = np.setdiff1d(np.arange(len(data)), drop, assume_unique=True)
    op = {"operation": "inject_selection_bias", "seed": int(seed),
          "p_spanish_young": float(target.p_spanish_young), "p_spanish_old": float(target.p_spanish_old),
          "records_affected": int(len(drop))}
    return data.subset(keep, op)

"""Cross-validated experiments over the four training/evaluation settings.

A run covers every (sweep point, seed, fold) triple.  Inside one fold the
settings share work: the model trained on raw labels serves BR, the model
trained on the EBR-resampled fold serves both EBR settings, and one twin
model fitted on the training fold repairs both train and test labels.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import os
import time
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .causal import TreatmentFrame, estimate_ite, fit_twin_model
from .data import (AGE_COLUMN, SCHEMA_VERSION, Dataset, SynthConfig, encode_features,
                   generate_synthetic, kfold_split, load_csv, table2_replica)
from .errors import ConfigError, InfeasibleError
from .forest import ForestParams, fit_forest
from .metrics import EvalReport, LabelSource, evaluate
from .neural import MlpParams, fit_mlp
from .repair import (BiasTarget, double_discrimination, equalize_base_rate, inject_selection_bias,
                     repair_labels_ite)
from .rng import child_seed, stream

REPORT_SCHEMA_VERSION = "auditrepair-report-v1"
REPORT_FILES = ("config.json", "folds.csv", "aggregate.json", "plot_data.csv")


class Setting(str, enum.Enum):
    BR = "BR"
    EBR = "EBR"
    ITE_TRAIN_AND_TEST = "ITE_TrainAndTest"
    EBR_TRAIN_ITE_TEST = "EBR_Train_ITE_Test"


class Model(str, enum.Enum):
    FOREST = "Forest"
    MLP = "Mlp"


class TrainIte(str, enum.Enum):
    """How tau_hat is obtained for repairing the training fold."""

    IN_SAMPLE = "in_sample"      # the twin model scores the rows it was fitted on
    CROSS_FIT = "cross_fit"      # each half of the fold is scored by a twin fitted on the other half


ALL_SETTINGS = tuple(Setting)

# which labels each setting is scored against (besides the latent oracle)
EVAL_LABELS = {
    Setting.BR: LabelSource.OBSERVED,
    Setting.EBR: LabelSource.OBSERVED,
    Setting.ITE_TRAIN_AND_TEST: LabelSource.REPAIRED,
    Setting.EBR_TRAIN_ITE_TEST: LabelSource.REPAIRED,
}


@dataclass(frozen=True)
class Sweep:
    kind: str                     # "discrimination_doubling" or "spanish_disparity"
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("discrimination_doubling", "spanish_disparity"):
            raise ConfigError(f"unknown sweep kind {self.kind!r}")
        if not self.values:
            raise ConfigError("a sweep needs at least one value")
        for v in self.values:
            if not 0.0 <= float(v) <= 1.0:
                raise ConfigError(f"sweep values must lie in [0, 1], got {v}")

    @property
    def x_label(self) -> str:
        return "target_gap" if self.kind == "discrimination_doubling" else "spanish_disparity"


@dataclass(frozen=True)
class ExperimentConfig:
    settings: tuple[Setting, ...] = ALL_SETTINGS
    model: Model = Model.FOREST
    k_folds: int = 5
    budget_rate: float = 0.16
    seeds: tuple[int, ...] = (0,)
    data_source: SynthConfig | str = field(default_factory=table2_replica)
    sweep: Sweep | None = None
    forest: ForestParams = field(default_factory=ForestParams)
    mlp: MlpParams = field(default_factory=MlpParams)
    train_ite: TrainIte = TrainIte.CROSS_FIT
    n_jobs: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, "settings", tuple(Setting(s) for s in self.settings))
            object.__setattr__(self, "model", Model(self.model))
            object.__setattr__(self, "train_ite", TrainIte(self.train_ite))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.settings:
            raise ConfigError("at least one setting is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if not 0.0 < self.budget_rate < 1.0:
            raise ConfigError("budget_rate must lie in (0, 1)")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be positive")

    @property
    def seed(self) -> int:
        return self.seeds[0]

    def to_dict(self) -> dict:
        src = self.data_source
        return {
            "settings": [s.value for s in self.settings],
            "model": self.model.value,
            "k_folds": self.k_folds,
            "budget_rate": self.budget_rate,
            "seeds": list(self.seeds),
            "data_source": ({"csv": str(src)} if isinstance(src, (str, os.PathLike))
                            else {"synthetic": src.to_dict()}),
            "sweep": None if self.sweep is None else {"kind": self.sweep.kind,
                                                      "values": list(self.sweep.values)},
            "forest": dataclasses.asdict(self.forest),
            "mlp": {**dataclasses.asdict(self.mlp), "hidden": list(self.mlp.hidden)},
            "train_ite": self.train_ite.value,
        }

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        if "data_source" in raw:
            src = raw["data_source"]
            if isinstance(src, dict) and "csv" in src:
                raw["data_source"] = str(src["csv"])
            elif isinstance(src, dict):
                synth = src.get("synthetic", src)
                raw["data_source"] = SynthConfig.from_mapping(synth)
            elif src == "table2-replica":
                raw["data_source"] = table2_replica()
            else:
                raw["data_source"] = str(src)
        if raw.get("sweep") is not None:
            sw = raw["sweep"]
            raw["sweep"] = Sweep(sw["kind"], tuple(float(v) for v in sw["values"]))
        for key, typ in (("forest", ForestParams), ("mlp", MlpParams)):
            if isinstance(raw.get(key), dict):
                vals = dict(raw[key])
                if "hidden" in vals:
                    vals["hidden"] = tuple(vals["hidden"])
                try:
                    raw[key] = typ(**vals)
                except TypeError as exc:
                    raise ConfigError(f"{key}: {exc}") from None
        for key in ("settings", "seeds"):
            if key in raw and not isinstance(raw[key], (list, tuple)):
                raw[key] = (raw[key],)
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_mapping(raw)


@dataclass(frozen=True)
class FoldResult:
    x_label: str
    x_value: float | None
    seed: int
    fold: int
    setting: Setting
    report: EvalReport
    n_train: int
    repair: dict

    @property
    def label_source(self) -> LabelSource:
        return self.report.label_source


@dataclass
class RunResult:
    config: ExperimentConfig
    folds: list[FoldResult]
    duration_s: float = 0.0

    def select(self, setting, label_source=None, x_value=None, seed=None) -> list[FoldResult]:
        setting = Setting(setting)
        source = EVAL_LABELS[setting] if label_source is None else LabelSource(label_source)
        return [f for f in self.folds
                if f.setting is setting and f.label_source is source
                and (x_value is None or f.x_value == x_value)
                and (seed is None or f.seed == seed)]

    def values(self, metric: str, setting, **kw) -> np.ndarray:
        return np.array([getattr(f.report, metric) for f in self.select(setting, **kw)])

    def mean(self, metric: str, setting, **kw) -> float:
        return float(np.mean(self.values(metric, setting, **kw)))

    def seed_means(self, metric: str, setting, **kw) -> np.ndarray:
        return np.array([self.mean(metric, setting, seed=s, **kw) for s in self.config.seeds])

    @property
    def x_values(self) -> list:
        seen = []
        for f in self.folds:
            if f.x_value not in seen:
                seen.append(f.x_value)
        return seen

    def discrepancy(self, x_value=None) -> float:
        """Mean FPRD(EBR train, repaired test) minus mean FPRD(EBR train, observed test)."""
        return (self.mean("fprd", Setting.EBR_TRAIN_ITE_TEST, x_value=x_value)
                - self.mean("fprd", Setting.EBR, x_value=x_value))

    def aggregate(self) -> list[dict]:
        groups = defaultdict(list)
        for f in self.folds:
            groups[(f.x_label, f.x_value, f.setting.value, f.label_source.value)].append(f)
        rows = []
        for (x_label, x_value, setting, source), items in groups.items():
            auc = np.array([f.report.auc for f in items])
            fprd = np.array([f.report.fprd for f in items])
            per_seed = defaultdict(list)
            for f in items:
                per_seed[f.seed].append(f.report.fprd)
            seed_fprd = np.array([np.mean(v) for _, v in sorted(per_seed.items())])
            rows.append({
                "x_label": x_label, "x_value": x_value, "setting": setting, "label_source": source,
                "n_folds": len(items),
                "auc_mean": float(np.mean(auc)), "auc_std": _std(auc),
                "fprd_mean": float(np.mean(fprd)), "fprd_std": _std(fprd),
                "fprd_seed_std": _std(seed_fprd),
                "fprd_pooled": _pooled_fprd(items),
            })
        return rows


def _std(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def _pooled_fprd(items) -> float:
    """FPRD from confusion counts summed over folds rather than averaged."""
    fp_y = sum(f.report.confusion.young.fp for f in items)
    an_y = sum(f.report.confusion.young.actual_negatives for f in items)
    fp_o = sum(f.report.confusion.older.fp for f in items)
    an_o = sum(f.report.confusion.older.actual_negatives for f in items)
    return fp_y / an_y - fp_o / an_o


# ---------------------------------------------------------------------------
# Per-fold work
# ---------------------------------------------------------------------------

def _source_data(config: ExperimentConfig, seed: int) -> Dataset:
    src = config.data_source
    if isinstance(src, SynthConfig):
        return generate_synthetic(replace(src, seed=seed))
    return load_csv(src)


def _sweep_data(config: ExperimentConfig, x_value, seed: int) -> Dataset:
    data = _source_data(config, seed)
    if x_value is None or config.sweep is None:
        return data
    if config.sweep.kind == "discrimination_doubling":
        return double_discrimination(data, x_value, child_seed(seed, "rq3"))
    return inject_selection_bias(data, BiasTarget.from_disparity(x_value), child_seed(seed, "rq4"))


_PREPARED: dict = {}


def _prepared(config: ExperimentConfig, x_value, seed: int):
    """Dataset, encoded features and folds for one (sweep point, seed), cached per process."""
    key = (json.dumps(config.to_dict(), sort_keys=True), x_value, seed)
    if key not in _PREPARED:
        _PREPARED.clear()
        data = _sweep_data(config, x_value, seed)
        X = encode_features(data, include_age=True)
        _PREPARED[key] = (data, X, kfold_split(data, config.k_folds, seed))
    return _PREPARED[key]


def _fit_predict(config, X_train, y_train, X_test, seed) -> np.ndarray:
    if config.model is Model.FOREST:
        model = fit_forest(X_train, y_train, replace(config.forest, seed=seed))
    else:
        model = fit_mlp(X_train, y_train, replace(config.mlp, seed=seed))
    return model.predict_proba(X_test)


def _train_tau(config, frame, twin, seed) -> np.ndarray:
    if config.train_ite is TrainIte.IN_SAMPLE:
        return estimate_ite(twin, frame.X).tau_hat
    half = stream(seed, "twin.crossfit").permutation(len(frame)) % 2
    tau = np.empty(len(frame))
    for h in (0, 1):
        fit_rows, score_rows = np.flatnonzero(half != h), np.flatnonzero(half == h)
        sub = TreatmentFrame(frame.X.rows(fit_rows), frame.A[fit_rows], frame.Y[fit_rows])
        model = fit_twin_model(sub, replace(config.forest, seed=child_seed(seed, "twin.crossfit", h)))
        tau[score_rows] = estimate_ite(model, frame.X.rows(score_rows)).tau_hat
    return tau


def _repair_summary(log, data: Dataset) -> dict:
    out = {"iterations": log.iterations, "initial_gap": log.initial_gap, "final_gap": log.final_gap}
    planted = data.planted_bias
    if planted is not None:
        flipped = log.flipped_indices
        out["precision"] = float(planted[flipped].mean()) if len(flipped) else float("nan")
        young, y = data.young, data.callback
        eligible = (young & (y == 1)) | (~young & (y == 0))
        out["random_precision"] = float(planted[eligible].mean())
    return out


def run_fold(config: ExperimentConfig, x_value, seed: int, fold: int) -> list[FoldResult]:
    data, X, folds = _prepared(config, x_value, seed)
    x_label = config.sweep.x_label if config.sweep is not None else ""
    tr, te = folds.train_index(fold), folds.test_index(fold)
    train, test = data.subset(tr), data.subset(te)
    X_tr, X_te = X.values[tr], X.values[te]
    model_seed = child_seed(seed, "model", fold)
    wanted = set(config.settings)
    latent = test.latent_callback
    groups = test.young

    def report(setting, scores, labels, source):
        return evaluate(scores, labels, groups, config.budget_rate, source)

    out = []

    def emit(setting, scores, labels, n_train, repair):
        reports = [report(setting, scores, labels, EVAL_LABELS[setting])]
        if latent is not None:
            reports.append(report(setting, scores, latent, LabelSource.LATENT))
        for r in reports:
            out.append(FoldResult(x_label, x_value, seed, fold, setting, r, n_train, repair))

    if Setting.BR in wanted:
        emit(Setting.BR, _fit_predict(config, X_tr, train.callback, X_te, model_seed),
             test.callback, len(train), {})

    need_ite = wanted & {Setting.ITE_TRAIN_AND_TEST, Setting.EBR_TRAIN_ITE_TEST}
    if need_ite:
        covariates = X.without(AGE_COLUMN)
        frame = TreatmentFrame(covariates.rows(tr), train.treatment, train.callback)
        twin = fit_twin_model(frame, replace(config.forest, seed=child_seed(seed, "twin", fold)))
        test_fixed, test_log = repair_labels_ite(test, estimate_ite(twin, covariates.rows(te)))
        test_repair = {"test": _repair_summary(test_log, test)}

    if wanted & {Setting.EBR, Setting.EBR_TRAIN_ITE_TEST}:
        ebr = equalize_base_rate(train, child_seed(seed, "ebr", fold))
        # EBR only deletes rows, so kept rows map back by record id
        keep = np.searchsorted(train.record_id, ebr.record_id)
        if not np.array_equal(train.record_id[keep], ebr.record_id):
            raise AssertionError("record ids of a training fold must be increasing")
        scores = _fit_predict(config, X_tr[keep], ebr.callback, X_te, model_seed)
        if Setting.EBR in wanted:
            emit(Setting.EBR, scores, test.callback, len(ebr), {})
        if Setting.EBR_TRAIN_ITE_TEST in wanted:
            emit(Setting.EBR_TRAIN_ITE_TEST, scores, test_fixed.callback, len(ebr), test_repair)

    if Setting.ITE_TRAIN_AND_TEST in wanted:
        tau_train = _train_tau(config, frame, twin, child_seed(seed, "twin.train", fold))
        train_fixed, train_log = repair_labels_ite(train, tau_train)
        scores = _fit_predict(config, X_tr, train_fixed.callback, X_te, model_seed)
        emit(Setting.ITE_TRAIN_AND_TEST, scores, test_fixed.callback, len(train),
             {**test_repair, "train": _repair_summary(train_log, train)})

    order = {s: i for i, s in enumerate(ALL_SETTINGS)}
    out.sort(key=lambda f: (order[f.setting], f.label_source.value))
    return out


def _tasks(config: ExperimentConfig, points):
    return [(x, s, k) for x in points for s in config.seeds for k in range(config.k_folds)]


def _run_task(args):
    config, x, seed, fold = args
    return run_fold(config, x, seed, fold)


def _execute(config: ExperimentConfig, points) -> RunResult:
    start = time.perf_counter()
    tasks = _tasks(config, points)
    if config.n_jobs == 1:
        chunks = [run_fold(config, *t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            # tasks sharing a dataset sit next to each other so each worker's cache hits
            chunks = list(pool.map(_run_task, [(config, *t) for t in tasks],
                                   chunksize=max(1, config.k_folds // 2)))
    _PREPARED.clear()
    folds = [f for chunk in chunks for f in chunk]
    return RunResult(config, folds, time.perf_counter() - start)


def run_setting(config: ExperimentConfig) -> RunResult:
    """Cross-validate the configured settings; a sweep, if any, runs every point."""
    points = [None] if config.sweep is None else list(config.sweep.values)
    return _execute(config, points)


def run_rq3(config: ExperimentConfig, target_gap: float = 0.10) -> tuple[RunResult, RunResult]:
    """Results on the source data and on the data with the age gap widened to ``target_gap``."""
    base = replace(config, sweep=None)
    doubled = replace(config, sweep=Sweep("discrimination_doubling", (float(target_gap),)))
    return run_setting(base), run_setting(doubled)


def run_rq4(config: ExperimentConfig, levels=(0.0, 0.2, 0.4, 0.6, 0.8)) -> RunResult:
    """Run the settings at each Spanish-disparity level; infeasible levels are skipped."""
    feasible = []
    for x in levels:
        try:
            for s in config.seeds:
                inject_selection_bias(_source_data(config, s), BiasTarget.from_disparity(x), 0)
        except InfeasibleError as exc:
            warnings.warn(f"skipping disparity {x}: {exc}", stacklevel=2)
            continue
        feasible.append(float(x))
    if not feasible:
        raise ConfigError("no feasible disparity level")
    return run_setting(replace(config, sweep=Sweep("spanish_disparity", tuple(feasible))))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


FOLD_COLUMNS = ("x_label", "x_value", "seed", "fold", "setting", "model", "label_source",
                "n_train", "n_test", "auc", "fpr_young", "fpr_old", "fprd",
                "young_tp", "young_fp", "young_tn", "young_fn",
                "older_tp", "older_fp", "older_tn", "older_fn",
                "test_repair_iterations", "test_repair_precision",
                "train_repair_iterations", "train_repair_precision")

PLOT_COLUMNS = ("setting", "model", "x_label", "x_value", "fprd_mean", "fprd_std",
                "auc_mean", "auc_std", "n_folds", "seed")


def folds_csv(result: RunResult) -> str:
    model = result.config.model.value
    rows = []
    for f in result.folds:
        r, c = f.report, f.report.confusion
        test_rep, train_rep = f.repair.get("test", {}), f.repair.get("train", {})
        rows.append((f.x_label, f.x_value, f.seed, f.fold, f.setting.value, model, r.label_source.value,
                     f.n_train, r.n_records, r.auc, r.fpr_young, r.fpr_old, r.fprd,
                     c.young.tp, c.young.fp, c.young.tn, c.young.fn,
                     c.older.tp, c.older.fp, c.older.tn, c.older.fn,
                     test_rep.get("iterations"), test_rep.get("precision"),
                     train_rep.get("iterations"), train_rep.get("precision")))
    return _csv_text(FOLD_COLUMNS, rows)


def aggregate_json(result: RunResult) -> str:
    body = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "data_schema_version": SCHEMA_VERSION,
        "model": result.config.model.value,
        "seeds": list(result.config.seeds),
        "k_folds": result.config.k_folds,
        "budget_rate": result.config.budget_rate,
        "aggregates": result.aggregate(),
    }
    if {Setting.EBR, Setting.EBR_TRAIN_ITE_TEST} <= set(result.config.settings):
        body["ebr_discrepancy"] = {_fmt(x) or "none": result.discrepancy(x) for x in result.x_values}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def plot_csv(result: RunResult) -> str:
    model = result.config.model.value
    seeds = ";".join(str(s) for s in result.config.seeds)
    rows = []
    for a in result.aggregate():
        if a["label_source"] != EVAL_LABELS[Setting(a["setting"])].value:
            continue
        if a["x_label"]:
            x_label, x_value = a["x_label"], a["x_value"]
        else:
            x_label, x_value = "auc", a["auc_mean"]
        rows.append((a["setting"], model, x_label, x_value, a["fprd_mean"], a["fprd_std"],
                     a["auc_mean"], a["auc_std"], a["n_folds"], seeds))
    return _csv_text(PLOT_COLUMNS, rows)


def config_json(result: RunResult) -> str:
    body = {"schema_version": REPORT_SCHEMA_VERSION, "config": result.config.to_dict(),
            "timing": {"duration_s": result.duration_s, "n_jobs": result.config.n_jobs}}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def emit_reports(result: RunResult, out_dir) -> list[Path]:
    """Write the four report files and return their paths.

    Only ``config.json`` carries wall-clock timing; the other three files
    depend on nothing but the config and seeds.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bodies = dict(zip(REPORT_FILES, (config_json(result), folds_csv(result),
                                     aggregate_json(result), plot_csv(result))))
    paths = []
    for name in REPORT_FILES:
        path = out / name
        path.write_text(bodies[name], encoding="utf-8")
        paths.append(path)
    return paths

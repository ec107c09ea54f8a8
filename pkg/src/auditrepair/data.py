"""Applicant records, audit-study CSV I/O, synthetic audit data and folds.

A :class:`Dataset` is stored column-wise (one numpy array per field) and
is immutable; interventions return new datasets that append an entry to
the provenance trail.  ``record_id`` is the index of a record in the
dataset it was first constructed in, and survives subsetting.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import yaml
from scipy.optimize import brentq
from scipy.special import expit

from .errors import (
    ConfigError,
    EmptyDataset,
    EmptyFile,
    InfeasibleDelta,
    InvalidValue,
    MissingColumn,
    TooFewRecords,
)
from .rng import stream

SCHEMA_VERSION = "audit-v1"


class AgeGroup(str, enum.Enum):
    YOUNG = "young"
    OLDER = "older"

    @classmethod
    def parse(cls, token) -> "AgeGroup":
        """Accepts two- and three-way codings; middle and old both map to OLDER."""
        if isinstance(token, AgeGroup):
            return token
        key = str(token).strip().lower()
        if key in _YOUNG_TOKENS:
            return cls.YOUNG
        if key in _OLDER_TOKENS:
            return cls.OLDER
        raise ValueError(f"unknown age group {token!r}")


_YOUNG_TOKENS = {"young", "younger", "y", "1"}
_OLDER_TOKENS = {"older", "old", "o", "middle", "m", "mid", "old/middle", "0"}


class Provenance(str, enum.Enum):
    INGESTED = "ingested"
    SYNTHETIC = "synthetic"
    RESAMPLED = "resampled"


CATEGORIES: dict[str, tuple[str, ...]] = {
    "gender": ("F", "M"),
    "occupation": ("Admin", "Sales", "Janitor", "Security"),
    "resume_type": ("Y", "M", "O", "B", "BL", "BE"),
    "template": ("A", "B", "C"),
}
BOOLEAN_FIELDS = (
    "employment", "spanish", "internship", "customer_service", "cpr",
    "tech_skills", "grammar", "college", "employee_month", "volunteer", "skill",
)
WPM_VALUES = (45, 50, 55)

# Audit CSV column order, then the label.
COLUMNS = (
    "city_zip", "age_group", "gender", "employment", "occupation", "resume_type",
    "template", "spanish", "internship", "customer_service", "cpr", "tech_skills",
    "wpm", "grammar", "college", "employee_month", "volunteer", "skill", "callback",
)
OPTIONAL_COLUMNS = ("latent_callback",)

DEFAULT_ALIASES = {
    "city": "city_zip", "cityzip": "city_zip", "zip": "city_zip",
    "age": "age_group", "agegroup": "age_group",
    "type": "resume_type", "resumetype": "resume_type",
    "customerservice": "customer_service",
    "techskills": "tech_skills", "tech": "tech_skills",
    "employeemonth": "employee_month", "employee_of_month": "employee_month",
    "employee_of_the_month": "employee_month",
    "typing_speed": "wpm",
    "callback_received": "callback", "y": "callback",
    "latent": "latent_callback", "y_star": "latent_callback",
}

_TRUE = {"1", "true", "t", "yes", "y", "high"}
_FALSE = {"0", "false", "f", "no", "n", "low"}


@dataclass(frozen=True)
class SchemaSpec:
    """How CSV headers map onto the canonical column names."""

    aliases: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_ALIASES))

    def canonical(self, header: str) -> str:
        key = header.strip().lower().replace("-", "_").replace(" ", "_")
        while "__" in key:
            key = key.replace("__", "_")
        return self.aliases.get(key, self.aliases.get(key.replace("_", ""), key))


@dataclass(frozen=True)
class ApplicantRecord:
    city_zip: str
    age_group: AgeGroup
    gender: str
    employment: bool
    occupation: str
    resume_type: str
    template: str
    spanish: bool
    internship: bool
    customer_service: bool
    cpr: bool
    tech_skills: bool
    wpm: int
    grammar: bool
    college: bool
    employee_month: bool
    volunteer: bool
    skill: int
    callback: int
    latent_callback: int | None = None


def young_indicator(groups) -> np.ndarray:
    """Boolean young-mask from a Dataset, AgeGroup values, strings or 0/1."""
    if isinstance(groups, Dataset):
        return groups.young.copy()
    if isinstance(groups, (list, tuple)):
        # str-enum members would otherwise be cut to their class name by numpy
        groups = [g.value if isinstance(g, AgeGroup) else g for g in groups]
    arr = np.asarray(groups)
    if arr.dtype == bool:
        return arr.copy()
    if np.issubdtype(arr.dtype, np.number):
        return arr.astype(bool)
    return np.array([AgeGroup.parse(g) is AgeGroup.YOUNG for g in arr], dtype=bool)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return arr


class Dataset:
    """An ordered, immutable collection of applicant records."""

    def __init__(self, columns: Mapping[str, np.ndarray], provenance=Provenance.INGESTED,
                 schema_version: str = SCHEMA_VERSION, record_id=None, trail=()):
        missing = [c for c in COLUMNS if c not in columns]
        if missing:
            raise MissingColumn(missing[0])
        n = len(columns["callback"])
        cols = {}
        for name in COLUMNS + OPTIONAL_COLUMNS:
            if name not in columns or columns[name] is None:
                continue
            col = np.asarray(columns[name])
            if len(col) != n:
                raise ValueError(f"column {name!r} has {len(col)} rows, expected {n}")
            cols[name] = _freeze(col.copy())
        self._cols = cols
        self.provenance = Provenance(provenance)
        self.schema_version = schema_version
        self.record_id = _freeze(np.arange(n) if record_id is None else np.asarray(record_id).copy())
        self.trail = tuple(trail)

    # -- access ---------------------------------------------------------
    def __len__(self) -> int:
        return len(self._cols["callback"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self._cols[name]

    def __contains__(self, name: str) -> bool:
        return name in self._cols

    @property
    def columns(self) -> dict[str, np.ndarray]:
        return dict(self._cols)

    @property
    def callback(self) -> np.ndarray:
        return self._cols["callback"]

    @property
    def latent_callback(self) -> np.ndarray | None:
        return self._cols.get("latent_callback")

    @property
    def young(self) -> np.ndarray:
        return self._cols["age_group"] == AgeGroup.YOUNG.value

    @property
    def treatment(self) -> np.ndarray:
        """Young -> 1, Older -> 0."""
        return self.young.astype(np.int8)

    @property
    def planted_bias(self) -> np.ndarray | None:
        """Records whose observed label differs from the latent fair label."""
        if self.latent_callback is None:
            return None
        return self.callback != self.latent_callback

    def record(self, i: int) -> ApplicantRecord:
        values = {}
        for f in fields(ApplicantRecord):
            if f.name not in self._cols:
                values[f.name] = None
                continue
            v = self._cols[f.name][i]
            if f.name == "age_group":
                v = AgeGroup(v)
            elif f.name in BOOLEAN_FIELDS and f.name != "skill":
                v = bool(v)
            elif isinstance(v, np.generic):
                v = v.item()
            values[f.name] = v
        return ApplicantRecord(**values)

    @property
    def records(self) -> Iterator[ApplicantRecord]:
        return (self.record(i) for i in range(len(self)))

    # -- summaries ------------------------------------------------------
    def group_counts(self) -> dict[tuple[AgeGroup, int], int]:
        y, young = self.callback, self.young
        return {
            (AgeGroup.YOUNG, 1): int(np.sum(young & (y == 1))),
            (AgeGroup.YOUNG, 0): int(np.sum(young & (y == 0))),
            (AgeGroup.OLDER, 1): int(np.sum(~young & (y == 1))),
            (AgeGroup.OLDER, 0): int(np.sum(~young & (y == 0))),
        }

    def callback_rate(self, group: AgeGroup | None = None) -> float:
        if group is None:
            return float(self.callback.mean())
        mask = self.young if AgeGroup.parse(group) is AgeGroup.YOUNG else ~self.young
        return float(self.callback[mask].mean())

    def rate_gap(self) -> float:
        """Young callback rate minus older callback rate."""
        return self.callback_rate(AgeGroup.YOUNG) - self.callback_rate(AgeGroup.OLDER)

    # -- derivation -----------------------------------------------------
    def _derive(self, columns, record_id, op: dict | None):
        trail = self.trail + ((op,) if op else ())
        return Dataset(columns, provenance=Provenance.RESAMPLED, schema_version=self.schema_version,
                       record_id=record_id, trail=trail)

    def subset(self, indices, op: dict | None = None) -> "Dataset":
        idx = np.asarray(indices)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        cols = {k: v[idx] for k, v in self._cols.items()}
        out = self._derive(cols, self.record_id[idx], op)
        if op is None:
            # plain row selection (e.g. a CV fold) keeps its provenance
            out.provenance = self.provenance
        return out

    def with_callback(self, callback, op: dict | None = None) -> "Dataset":
        cols = dict(self._cols)
        cols["callback"] = np.asarray(callback, dtype=np.int8)
        return self._derive(cols, self.record_id, op)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _parse_bool(token: str) -> int:
    key = token.strip().lower()
    if key in _TRUE:
        return 1
    if key in _FALSE:
        return 0
    raise ValueError(token)


def _parse_category(name: str, token: str) -> str:
    key = token.strip()
    if name == "gender":
        key = {"female": "F", "male": "M", "f": "F", "m": "M"}.get(key.lower(), key)
    for level in CATEGORIES[name]:
        if key.lower() == level.lower():
            return level
    raise ValueError(token)


def _parse_field(name: str, token: str):
    if name == "city_zip":
        key = token.strip()
        if not key:
            raise ValueError(token)
        return key
    if name == "age_group":
        return AgeGroup.parse(token).value
    if name in CATEGORIES:
        return _parse_category(name, token)
    if name == "wpm":
        value = int(token.strip())
        if value not in WPM_VALUES:
            raise ValueError(token)
        return value
    # booleans, skill and the labels are all binary
    return _parse_bool(token)


_DTYPES = {"city_zip": object, "age_group": object, "wpm": np.int16,
           **{c: object for c in CATEGORIES}}


def load_csv(path, schema: SchemaSpec | None = None) -> Dataset:
    """Read an audit-study CSV into a Dataset (provenance ``ingested``).

    Headers are matched case-insensitively through ``schema.aliases``.
    Row numbers in errors count data rows from 1.  Any latent label column
    in the file is ignored: ingested data never carries ground truth.
    """
    schema = schema or SchemaSpec()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path} is empty") from None
        names = [schema.canonical(h) for h in header]
        position = {}
        for i, name in enumerate(names):
            position.setdefault(name, i)
        for required in COLUMNS:
            if required not in position:
                raise MissingColumn(required)
        values: dict[str, list] = {c: [] for c in COLUMNS}
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            for name in COLUMNS:
                i = position[name]
                token = row[i] if i < len(row) else ""
                try:
                    values[name].append(_parse_field(name, token))
                except ValueError:
                    raise InvalidValue(row_no, name, token) from None
    if not values["callback"]:
        raise EmptyFile(f"{path} has a header but no rows")
    cols = {name: np.array(vals, dtype=_DTYPES.get(name, np.int8)) for name, vals in values.items()}
    return Dataset(cols, provenance=Provenance.INGESTED,
                   trail=({"operation": "load_csv", "path": str(path)},))


def write_csv(data: Dataset, path) -> None:
    names = list(COLUMNS) + [c for c in OPTIONAL_COLUMNS if c in data]
    cols = [data[name] for name in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*cols):
            writer.writerow([v.item() if isinstance(v, np.generic) else v for v in row])


# ---------------------------------------------------------------------------
# Synthetic audit data
# ---------------------------------------------------------------------------

def _default_marginals() -> dict:
    cities = {f"city_{i:02d}": 1 / 11 for i in range(1, 12)}
    return {
        "city_zip": cities,
        "gender": {"F": 0.5, "M": 0.5},
        "employment": 0.5,
        "occupation": {"Admin": 0.3, "Sales": 0.35, "Janitor": 0.15, "Security": 0.2},
        "resume_type": {"Y": 0.2, "M": 0.2, "O": 0.2, "B": 0.2, "BL": 0.1, "BE": 0.1},
        "template": {"A": 1 / 3, "B": 1 / 3, "C": 1 / 3},
        "spanish": 0.5,
        "internship": 0.3,
        "customer_service": 0.5,
        "cpr": 0.5,
        "tech_skills": 0.5,
        "wpm": {45: 1 / 3, 50: 1 / 3, 55: 1 / 3},
        "grammar": 0.5,
        "college": 0.5,
        "employee_month": 0.5,
        "volunteer": 0.5,
        "skill": 0.5,
    }


def _default_weights() -> dict:
    # latent qualification, on the logit scale; wpm enters as (wpm - 45) / 10
    return {
        "skill": 1.8, "spanish": 1.5, "college": 1.2, "employment": 1.05,
        "grammar": 1.05, "customer_service": 0.9, "tech_skills": 0.75,
        "employee_month": 0.75, "volunteer": 0.45, "cpr": 0.3, "internship": -0.6,
        "wpm": 0.75,
        "occupation=Sales": 0.45, "occupation=Janitor": -0.3, "occupation=Security": 0.15,
        "city_zip=city_01": 0.45, "city_zip=city_02": -0.45, "city_zip=city_03": 0.3,
        "city_zip=city_04": -0.3, "city_zip=city_05": 0.15,
    }


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic audit generator.

    ``young_flip_share`` is the fraction of the planted rate gap produced by
    upgrading young no-callbacks; the rest comes from downgrading older
    callbacks.  ``group_callbacks`` pins the observed (young, older)
    callback counts exactly and overrides both the share and the delta.
    """

    n_records: int = 38_933
    p_young: float = 13_401 / 38_933
    base_callback_rate: float = 0.16
    discrimination_delta: float = 0.05
    feature_marginals: Mapping = field(default_factory=_default_marginals)
    qualification_weights: Mapping = field(default_factory=_default_weights)
    young_flip_share: float = 0.6
    group_callbacks: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_records < 2:
            raise ConfigError("n_records must be at least 2")
        if not 0.0 < self.p_young < 1.0:
            raise ConfigError("p_young must lie in (0, 1)")
        if not 0.0 <= self.base_callback_rate <= 1.0:
            raise ConfigError("base_callback_rate must lie in [0, 1]")
        if self.discrimination_delta < 0:
            raise ConfigError("discrimination_delta must be non-negative")
        if not 0.0 <= self.young_flip_share <= 1.0:
            raise ConfigError("young_flip_share must lie in [0, 1]")
        unknown = set(self.feature_marginals) - set(COLUMNS)
        if unknown:
            raise ConfigError(f"unknown features in feature_marginals: {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, raw: Mapping) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        raw = dict(raw)
        if "feature_marginals" in raw:
            merged = _default_marginals()
            merged.update(raw["feature_marginals"])
            if isinstance(merged.get("wpm"), Mapping):
                # JSON round trips turn the integer levels into strings
                merged["wpm"] = {int(k): v for k, v in merged["wpm"].items()}
            raw["feature_marginals"] = merged
        if raw.get("group_callbacks") is not None:
            raw["group_callbacks"] = tuple(int(v) for v in raw["group_callbacks"])
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "SynthConfig":
        """YAML or JSON file whose keys are the field names of this class."""
        text = Path(path).read_text(encoding="utf-8")
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_mapping(raw)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["feature_marginals"] = {k: (dict(v) if isinstance(v, Mapping) else v)
                                    for k, v in self.feature_marginals.items()}
        out["qualification_weights"] = dict(self.qualification_weights)
        out["group_callbacks"] = list(self.group_callbacks) if self.group_callbacks else None
        return json.loads(json.dumps(out, default=str))


TABLE2_COUNTS = {"young": (2_505, 13_401), "older": (3_587, 25_532)}


def table2_replica(seed: int = 0, **overrides) -> SynthConfig:
    """Synthetic config with the audit's group sizes and exact callback counts.

    The fair callback rate of 0.175 puts about three quarters of the
    planted gap on qualified older applicants losing callbacks, the rest on
    young applicants gaining them.
    """
    (y_pos, n_young), (o_pos, n_older) = TABLE2_COUNTS["young"], TABLE2_COUNTS["older"]
    n = n_young + n_older
    params = dict(n_records=n, p_young=n_young / n, base_callback_rate=0.175,
                  discrimination_delta=0.05, group_callbacks=(y_pos, o_pos), seed=seed)
    params.update(overrides)
    return SynthConfig(**params)


def _draw_column(name, spec, n, rng):
    if name in CATEGORIES or name in ("city_zip", "wpm"):
        if not isinstance(spec, Mapping):
            raise ConfigError(f"feature {name!r} needs a {{value: probability}} mapping")
        levels = list(spec)
        probs = np.array([float(spec[v]) for v in levels])
        if np.any(probs < 0) or probs.sum() <= 0:
            raise ConfigError(f"bad probabilities for {name!r}")
        probs = probs / probs.sum()
        if name == "wpm":
            levels = [int(v) for v in levels]
            if any(v not in WPM_VALUES for v in levels):
                raise ConfigError(f"wpm levels must be drawn from {WPM_VALUES}")
            return np.array(levels, dtype=np.int16)[rng.choice(len(levels), size=n, p=probs)]
        if name in CATEGORIES:
            bad = [v for v in levels if v not in CATEGORIES[name]]
            if bad:
                raise ConfigError(f"invalid levels for {name!r}: {bad}")
        return np.array(levels, dtype=object)[rng.choice(len(levels), size=n, p=probs)]
    p = float(spec)
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"probability for {name!r} must lie in [0, 1]")
    return (rng.random(n) < p).astype(np.int8)


def _qualification_logit(cols: Mapping[str, np.ndarray], weights: Mapping[str, float]) -> np.ndarray:
    n = len(cols["gender"])
    z = np.zeros(n)
    for key, w in weights.items():
        if "=" in key:
            name, level = key.split("=", 1)
            if name not in cols:
                raise ConfigError(f"unknown feature in weight {key!r}")
            z += float(w) * (cols[name].astype(str) == level)
        elif key == "wpm":
            z += float(w) * (cols["wpm"] - 45) / 10.0
        elif key in cols:
            z += float(w) * cols[key].astype(float)
        else:
            raise ConfigError(f"unknown feature in weight {key!r}")
    return z


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Audit-style data with a planted, logged age-discrimination mechanism.

    Covariates are drawn independently of age.  The fair label
    ``latent_callback`` comes from a logistic qualification model whose
    intercept is solved so the mean propensity equals the base rate.  The
    observed ``callback`` then flips uniformly chosen young no-callbacks to
    callbacks and older callbacks to no-callbacks until the realized gap
    matches the target.
    """
    n = config.n_records
    if config.discrimination_delta > config.base_callback_rate:
        raise InfeasibleDelta(
            f"delta {config.discrimination_delta} exceeds base rate {config.base_callback_rate}")
    seed = config.seed

    n_young = int(round(config.p_young * n))
    if n_young == 0 or n_young == n:
        raise ConfigError("both age groups must be non-empty")
    young = np.zeros(n, dtype=bool)
    young[stream(seed, "synth.age").permutation(n)[:n_young]] = True

    marginals = config.feature_marginals
    cols: dict[str, np.ndarray] = {}
    for name in COLUMNS:
        if name in ("age_group", "callback"):
            continue
        if name not in marginals:
            raise ConfigError(f"no marginal distribution for feature {name!r}")
        cols[name] = _draw_column(name, marginals[name], n, stream(seed, "synth.feature", COLUMNS.index(name)))
    cols["age_group"] = np.where(young, AgeGroup.YOUNG.value, AgeGroup.OLDER.value).astype(object)

    z = _qualification_logit(cols, config.qualification_weights)
    base = config.base_callback_rate
    if base <= 0.0 or base >= 1.0:
        propensity = np.full(n, base)
    else:
        intercept = brentq(lambda b: expit(z + b).mean() - base, -50.0, 50.0, xtol=1e-12)
        propensity = expit(z + intercept)
    latent = (stream(seed, "synth.latent").random(n) < propensity).astype(np.int8)

    n_older = n - n_young
    y_pool = np.flatnonzero(young & (latent == 0))
    o_pool = np.flatnonzero(~young & (latent == 1))
    if config.group_callbacks is not None:
        y_target, o_target = config.group_callbacks
        k_young = y_target - int(latent[young].sum())
        k_older = int(latent[~young].sum()) - o_target
        if k_young < 0 or k_older < 0:
            raise InfeasibleDelta(
                f"latent callbacks ({int(latent[young].sum())} young, {int(latent[~young].sum())} older) "
                f"cannot reach observed counts {config.group_callbacks} by the planted flips")
    elif config.discrimination_delta == 0:
        k_young = k_older = 0
    else:
        latent_gap = latent[young].mean() - latent[~young].mean()
        need = config.discrimination_delta - latent_gap
        if need <= 0:
            k_young = k_older = 0
        else:
            k_young = int(round(config.young_flip_share * need * n_young))
            k_older = int(round((need - k_young / n_young) * n_older))
    if k_young > len(y_pool) or k_older > len(o_pool):
        raise InfeasibleDelta(
            f"planted gap needs {k_young} young and {k_older} older flips; "
            f"only {len(y_pool)} and {len(o_pool)} eligible records")

    flips = stream(seed, "synth.flips")
    callback = latent.copy()
    callback[np.sort(flips.choice(y_pool, size=k_young, replace=False))] = 1
    callback[np.sort(flips.choice(o_pool, size=k_older, replace=False))] = 0
    cols["callback"] = callback
    cols["latent_callback"] = latent

    op = {"operation": "generate_synthetic", "seed": seed,
          "young_flips": k_young, "older_flips": k_older}
    return Dataset(cols, provenance=Provenance.SYNTHETIC, trail=(op,))


# ---------------------------------------------------------------------------
# Folds and feature encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    fold: np.ndarray
    k: int

    def test_index(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.fold == i)

    def train_index(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.fold != i)

    def sizes(self) -> list[int]:
        return np.bincount(self.fold, minlength=self.k).tolist()


def kfold_split(data: Dataset, k: int, seed: int) -> FoldAssignment:
    """Stratified k-fold assignment over (age group, callback).

    Each stratum is shuffled and the strata are dealt round-robin in one
    continuous sequence, so per-stratum and overall fold sizes differ by at
    most one.
    """
    n = len(data)
    if k < 2 or k > n:
        raise TooFewRecords(f"k={k} folds needs 2 <= k <= {n} records")
    rng = stream(seed, "kfold")
    young, y = data.young, data.callback
    order = []
    for mask in (young & (y == 1), young & (y == 0), ~young & (y == 1), ~young & (y == 0)):
        order.append(rng.permutation(np.flatnonzero(mask)))
    order = np.concatenate(order)
    fold = np.empty(n, dtype=np.int64)
    fold[order] = np.arange(n) % k
    return FoldAssignment(fold=fold, k=k)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    columns: tuple[str, ...]

    @property
    def shape(self):
        return self.values.shape

    def rows(self, index) -> "FeatureMatrix":
        return FeatureMatrix(self.values[index], self.columns)

    def without(self, column: str) -> "FeatureMatrix":
        j = self.columns.index(column)
        keep = [i for i in range(len(self.columns)) if i != j]
        return FeatureMatrix(self.values[:, keep], tuple(self.columns[i] for i in keep))


AGE_COLUMN = "age_young"


def encode_features(data: Dataset, include_age: bool = False, city_min_count: int = 30,
                    city_levels: Sequence[str] | None = None) -> FeatureMatrix:
    """Numeric design matrix in audit column order.

    Column layout: one-hot ``city_zip=<level>`` (sorted levels seen at least
    ``city_min_count`` times, then ``city_zip=other`` if anything was
    bucketed), one-hot gender, employment, one-hot occupation, one-hot
    resume_type, one-hot template, the binary skills, ``wpm`` as
    ``(wpm - 45) / 10``, grammar, college, employee_month, volunteer, skill,
    and finally ``age_young`` when ``include_age`` is set.
    """
    n = len(data)
    if n == 0:
        raise EmptyDataset("cannot encode an empty dataset")
    city = data["city_zip"].astype(str)
    if city_levels is None:
        levels, counts = np.unique(city, return_counts=True)
        kept = sorted(levels[counts >= city_min_count].tolist())
        bucket = len(kept) < len(levels)
    else:
        kept = list(city_levels)
        bucket = bool(np.any(~np.isin(city, kept)))
    blocks, names = [], []

    def add(col, name):
        blocks.append(np.asarray(col, dtype=float))
        names.append(name)

    for level in kept:
        add(city == level, f"city_zip={level}")
    if bucket:
        add(~np.isin(city, kept), "city_zip=other")
    for name in COLUMNS[2:-1]:
        if name in CATEGORIES:
            values = data[name].astype(str)
            for level in CATEGORIES[name]:
                add(values == level, f"{name}={level}")
        elif name == "wpm":
            add((data["wpm"].astype(float) - 45.0) / 10.0, "wpm")
        else:
            add(data[name], name)
    if include_age:
        add(data.young, AGE_COLUMN)
    return FeatureMatrix(np.column_stack(blocks), tuple(names))

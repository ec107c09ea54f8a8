import csv
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from auditrepair.data import (AGE_COLUMN, COLUMNS, AgeGroup, Dataset, Provenance, SynthConfig,
                              encode_features, generate_synthetic, kfold_split, load_csv, table2_replica,
                              write_csv)
from auditrepair.errors import (ConfigError, EmptyDataset, EmptyFile, InfeasibleDelta, InvalidValue,
                                MissingColumn, TooFewRecords)

ROW = {"city_zip": "10001", "age_group": "young", "gender": "F", "employment": "1", "occupation": "Sales",
       "resume_type": "Y", "template": "A", "spanish": "0", "internship": "1", "customer_service": "1",
       "cpr": "0", "tech_skills": "1", "wpm": "50", "grammar": "1", "college": "0", "employee_month": "0",
       "volunteer": "1", "skill": "1", "callback": "0"}


def write_rows(path, rows, header=None):
    header = header or list(ROW)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r.get(h, "") for h in header])
    return path


# -- loading ---------------------------------------------------------------

def test_load_collapses_three_way_age(tmp_path):
    rows = [dict(ROW, age_group=a) for a in ("young", "middle", "old")]
    data = load_csv(write_rows(tmp_path / "a.csv", rows))
    assert data.provenance is Provenance.INGESTED
    assert data["age_group"].tolist() == ["young", "older", "older"]
    assert data.latent_callback is None


def test_load_header_aliases_are_case_insensitive(tmp_path):
    header = [h.upper() for h in ROW]
    header[header.index("CUSTOMER_SERVICE")] = "Customer Service"
    path = tmp_path / "b.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow(list(ROW.values()))
    assert len(load_csv(path)) == 1


def test_load_header_only_is_empty_file(tmp_path):
    with pytest.raises(EmptyFile):
        load_csv(write_rows(tmp_path / "c.csv", []))


def test_load_empty_file(tmp_path):
    (tmp_path / "d.csv").write_text("")
    with pytest.raises(EmptyFile):
        load_csv(tmp_path / "d.csv")


def test_load_bad_wpm_names_row_and_column(tmp_path):
    rows = [ROW, ROW, dict(ROW, wpm="60")]
    with pytest.raises(InvalidValue) as err:
        load_csv(write_rows(tmp_path / "e.csv", rows))
    assert err.value.row == 3 and err.value.column == "wpm" and err.value.token == "60"


def test_load_missing_column_is_named(tmp_path):
    header = [h for h in ROW if h != "grammar"]
    with pytest.raises(MissingColumn) as err:
        load_csv(write_rows(tmp_path / "f.csv", [ROW], header))
    assert err.value.column == "grammar"


def test_replica_group_totals_survive_csv(tmp_path):
    data = generate_synthetic(table2_replica(seed=3))
    write_csv(data, tmp_path / "t2.csv")
    loaded = load_csv(tmp_path / "t2.csv")
    c = loaded.group_counts()
    assert c[AgeGroup.YOUNG, 1] + c[AgeGroup.YOUNG, 0] == 13_401
    assert c[AgeGroup.OLDER, 1] + c[AgeGroup.OLDER, 0] == 25_532
    assert (c[AgeGroup.YOUNG, 1], c[AgeGroup.OLDER, 1]) == (2_505, 3_587)


def test_round_trip_is_field_for_field(tmp_path, small_data):
    write_csv(small_data, tmp_path / "one.csv")
    write_csv(load_csv(tmp_path / "one.csv"), tmp_path / "two.csv")
    with open(tmp_path / "one.csv") as a, open(tmp_path / "two.csv") as b:
        first = [r[:len(COLUMNS)] for r in csv.reader(a)]
        second = list(csv.reader(b))
    assert first == second


def test_records_are_typed(small_data):
    rec = small_data.record(0)
    assert isinstance(rec.age_group, AgeGroup)
    assert rec.wpm in (45, 50, 55) and isinstance(rec.spanish, bool)
    assert rec.latent_callback in (0, 1)


def test_dataset_is_immutable(small_data):
    with pytest.raises(ValueError):
        small_data.callback[0] = 1


# -- generation ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_planted_gap_matches_delta(seed):
    data = generate_synthetic(SynthConfig(n_records=40_000, base_callback_rate=0.16,
                                          discrimination_delta=0.05, seed=seed))
    assert abs(data.rate_gap() - 0.05) <= 0.005
    # latent labels carry no age gap beyond sampling noise
    latent = data.latent_callback
    assert abs(latent[data.young].mean() - latent[~data.young].mean()) < 0.015


def test_zero_delta_leaves_labels_untouched():
    data = generate_synthetic(SynthConfig(n_records=20_000, discrimination_delta=0.0, seed=1))
    assert np.array_equal(data.callback, data.latent_callback)
    assert abs(data.rate_gap()) < 0.02


def test_delta_above_base_rate_is_infeasible():
    with pytest.raises(InfeasibleDelta):
        generate_synthetic(SynthConfig(n_records=1000, base_callback_rate=0.05, discrimination_delta=0.2))


def test_unreachable_group_counts_are_infeasible():
    # planted flips only add young callbacks, so zero young callbacks cannot be reached
    cfg = SynthConfig(n_records=1000, group_callbacks=(0, 0))
    with pytest.raises(InfeasibleDelta):
        generate_synthetic(cfg)


def test_generation_is_deterministic():
    cfg = SynthConfig(n_records=2000, seed=5)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    for name in COLUMNS:
        assert np.array_equal(a[name], b[name])


def test_planted_flips_are_logged(small_data):
    op = small_data.trail[0]
    flipped = small_data.planted_bias
    young, y = small_data.young, small_data.callback
    assert flipped.sum() == op["young_flips"] + op["older_flips"]
    assert np.all(y[flipped & young] == 1) and np.all(y[flipped & ~young] == 0)


@pytest.mark.parametrize("seed", range(3))
def test_covariates_independent_of_age(seed):
    data = generate_synthetic(SynthConfig(n_records=20_000, seed=100 + seed))
    for name in COLUMNS:
        if name in ("age_group", "callback"):
            continue
        values = data[name].astype(str)
        levels = np.unique(values)
        table = [[np.sum((values == v) & data.young) for v in levels],
                 [np.sum((values == v) & ~data.young) for v in levels]]
        assert chi2_contingency(table)[1] > 0.001, name


def test_synth_config_file(tmp_path):
    (tmp_path / "s.yaml").write_text("n_records: 500\ndiscrimination_delta: 0.03\nseed: 9\n"
                                     "feature_marginals:\n  spanish: 0.8\n")
    cfg = SynthConfig.from_file(tmp_path / "s.yaml")
    assert cfg.n_records == 500 and cfg.feature_marginals["spanish"] == 0.8
    assert cfg.feature_marginals["college"] == 0.5
    assert SynthConfig.from_mapping(cfg.to_dict()) == cfg


@pytest.mark.parametrize("bad", [{"n_records": 1}, {"p_young": 1.0}, {"discrimination_delta": -0.1},
                                 {"unknown_key": 1}, {"feature_marginals": {"height": 0.5}}])
def test_synth_config_validation(bad):
    with pytest.raises(ConfigError):
        SynthConfig.from_mapping(bad)


# -- folds -----------------------------------------------------------------

def test_hundred_records_five_folds(small_data):
    folds = kfold_split(small_data.subset(np.arange(100)), 5, seed=0)
    assert folds.sizes() == [20] * 5


def test_replica_folds_split_young_evenly():
    data = generate_synthetic(table2_replica(seed=0))
    folds = kfold_split(data, 5, seed=4)
    young_per_fold = [int(data.young[folds.test_index(i)].sum()) for i in range(5)]
    assert set(young_per_fold) <= {2680, 2681} and sum(young_per_fold) == 13_401


def test_folds_are_stratified(small_data):
    folds = kfold_split(small_data, 7, seed=2)
    young, y = small_data.young, small_data.callback
    for mask in (young & (y == 1), young & (y == 0), ~young & (y == 1), ~young & (y == 0)):
        per_fold = np.bincount(folds.fold[mask], minlength=7)
        assert per_fold.max() - per_fold.min() <= 1
    sizes = folds.sizes()
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == len(small_data)
    assert np.array_equal(np.sort(np.concatenate([folds.test_index(i) for i in range(7)])),
                          np.arange(len(small_data)))


@pytest.mark.parametrize("k", [0, 1])
def test_too_few_folds(small_data, k):
    with pytest.raises(TooFewRecords):
        kfold_split(small_data, k, seed=0)


def test_folds_deterministic(small_data):
    assert np.array_equal(kfold_split(small_data, 5, 3).fold, kfold_split(small_data, 5, 3).fold)


# -- encoding --------------------------------------------------------------

def test_wpm_scaling_endpoints(small_data):
    X = encode_features(small_data)
    wpm = X.values[:, X.columns.index("wpm")]
    assert set(np.round(wpm, 12)) == {0.0, 0.5, 1.0}
    assert np.all(wpm[small_data["wpm"] == 45] == 0.0) and np.all(wpm[small_data["wpm"] == 55] == 1.0)


def test_one_hot_occupation(small_data):
    X = encode_features(small_data)
    cols = [i for i, c in enumerate(X.columns) if c.startswith("occupation=")]
    assert np.all(X.values[:, cols].sum(axis=1) == 1)
    sales = X.columns.index("occupation=Sales")
    assert np.array_equal(X.values[:, sales] == 1, small_data["occupation"] == "Sales")


def test_age_column_only_on_request(small_data):
    plain = encode_features(small_data)
    with_age = encode_features(small_data, include_age=True)
    assert AGE_COLUMN not in plain.columns
    assert with_age.columns[-1] == AGE_COLUMN and with_age.shape[1] == plain.shape[1] + 1
    assert np.array_equal(with_age.without(AGE_COLUMN).values, plain.values)


def test_identical_records_encode_identically(small_data):
    doubled = small_data.subset(np.array([4, 4]))
    X = encode_features(doubled, city_levels=sorted(set(small_data["city_zip"])))
    assert np.array_equal(X.values[0], X.values[1])


def test_rare_cities_bucketed():
    data = generate_synthetic(SynthConfig(n_records=300, seed=0))
    X = encode_features(data, city_min_count=1000)
    assert [c for c in X.columns if c.startswith("city_zip")] == ["city_zip=other"]


def test_encode_empty_dataset(small_data):
    with pytest.raises(EmptyDataset):
        encode_features(small_data.subset(np.zeros(0, dtype=int)))

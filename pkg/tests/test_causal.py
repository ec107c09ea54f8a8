import csv

import numpy as np
import pytest

from auditrepair.causal import ITEScores, TreatmentFrame, TwinModel, estimate_ite, fit_twin_model
from auditrepair.data import AGE_COLUMN, FeatureMatrix, SynthConfig, encode_features, generate_synthetic
from auditrepair.errors import ShapeMismatch, SingleArm
from auditrepair.forest import ForestModel, ForestParams, Tree


def stratified_tau(X, A, Y):
    """Difference of arm means within each covariate stratum (exact matching)."""
    out = {}
    for key in {tuple(r) for r in X.astype(int)}:
        in_stratum = np.all(X == key, axis=1)
        out[key] = Y[in_stratum & (A == 1)].mean() - Y[in_stratum & (A == 0)].mean()
    return out


def frame_from(data, seed_split=0):
    X = encode_features(data)
    return TreatmentFrame.from_dataset(data, X), X


def test_frame_recodes_age(small_data):
    frame, X = frame_from(small_data)
    assert np.array_equal(frame.A, small_data.young.astype(np.int8))
    assert AGE_COLUMN not in frame.X.columns
    with pytest.raises(ShapeMismatch):
        TreatmentFrame(encode_features(small_data, include_age=True), frame.A, frame.Y)


def test_twin_model_input_has_treatment_column(small_data):
    frame, X = frame_from(small_data)
    twin = fit_twin_model(frame, ForestParams(n_estimators=3))
    assert twin.forest.n_features == X.shape[1] + 1


def test_single_arm_rejected(small_data):
    young = small_data.subset(small_data.young)
    frame, _ = frame_from(young)
    with pytest.raises(SingleArm):
        fit_twin_model(frame)


def test_constant_model_gives_zero_effect():
    tree = Tree(np.array([-1], np.int32), np.zeros(1), np.array([-1], np.int32), np.array([-1], np.int32),
                np.array([0.16]), np.array([10], np.int32))
    twin = TwinModel(ForestModel((tree, tree), ForestParams(n_estimators=2), 4), ("a", "b", "c"))
    scores = estimate_ite(twin, np.random.default_rng(0).random((20, 3)))
    assert np.all(scores.tau_hat == 0.0)


def test_stump_on_treatment():
    stump = Tree(feature=np.array([2, -1, -1], np.int32), threshold=np.array([0.5, 0.0, 0.0]),
                 left=np.array([1, -1, -1], np.int32), right=np.array([2, -1, -1], np.int32),
                 value=np.array([0.16, 0.14, 0.19]), n_samples=np.array([200, 100, 100], np.int32))
    twin = TwinModel(ForestModel((stump,), ForestParams(n_estimators=1), 3), ("x1", "x2"))
    scores = estimate_ite(twin, np.random.default_rng(0).random((5, 2)))
    assert scores.tau_hat == pytest.approx([0.05] * 5, abs=1e-15)


def test_shape_checked(small_data):
    frame, X = frame_from(small_data)
    twin = fit_twin_model(frame, ForestParams(n_estimators=2))
    with pytest.raises(ShapeMismatch):
        estimate_ite(twin, X.values[:, :-1])
    with pytest.raises(ShapeMismatch):
        estimate_ite(twin, FeatureMatrix(X.values, tuple(reversed(X.columns))))


@pytest.mark.parametrize("seed", range(3))
def test_matches_stratified_estimator(seed):
    r = np.random.default_rng(seed)
    n = 20_000  # about 5,000 per stratum
    X = r.integers(0, 2, size=(n, 2)).astype(float)
    A = r.integers(0, 2, n)
    p = 0.1 + 0.2 * X[:, 0] + 0.1 * X[:, 1] + A * (0.05 + 0.1 * X[:, 0] * X[:, 1])
    Y = (r.random(n) < p).astype(int)
    frame = TreatmentFrame(FeatureMatrix(X, ("x1", "x2")), A, Y)
    tau = estimate_ite(fit_twin_model(frame, ForestParams(seed=seed)), frame.X).tau_hat
    oracle = stratified_tau(X, A, Y)
    for key, value in oracle.items():
        in_stratum = np.all(X == key, axis=1)
        assert in_stratum.sum() >= 2000
        assert np.abs(tau[in_stratum] - value).max() < 0.05


@pytest.mark.parametrize("seed", range(2))
def test_null_effect_is_centered(seed):
    data = generate_synthetic(SynthConfig(n_records=40_000, discrimination_delta=0.0, seed=seed))
    X = encode_features(data)
    train = np.arange(len(data)) % 5 != 0
    frame = TreatmentFrame(X.rows(train), data.treatment[train], data.callback[train])
    tau = estimate_ite(fit_twin_model(frame, ForestParams(seed=seed)), X.rows(~train)).tau_hat
    assert abs(tau.mean()) < 0.02
    assert np.all((tau >= -1) & (tau <= 1))


def test_sign_recovery():
    data = generate_synthetic(SynthConfig(n_records=20_000, discrimination_delta=0.05, seed=4))
    frame, X = frame_from(data)
    tau = estimate_ite(fit_twin_model(frame, ForestParams(seed=1)), X).tau_hat
    planted = data.planted_bias
    assert tau.mean() > 0
    assert tau[planted].mean() > tau[~planted].mean()


def test_ite_csv(tmp_path, small_data):
    frame, X = frame_from(small_data)
    scores = estimate_ite(fit_twin_model(frame, ForestParams(n_estimators=3)), X, provenance="small")
    scores.write_csv(tmp_path / "ite.csv", frame.A, frame.Y)
    with open(tmp_path / "ite.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(small_data) and scores.provenance == "small"
    assert float(rows[7]["tau_hat"]) == scores.tau_hat[7]
    assert int(rows[7]["A"]) == frame.A[7] and int(rows[7]["Y"]) == frame.Y[7]

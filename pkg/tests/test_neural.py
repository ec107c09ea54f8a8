import numpy as np
import pytest

from auditrepair.errors import NonFiniteLoss, ShapeMismatch
from auditrepair.neural import (AdamState, MlpModel, MlpParams, fit_mlp, gradient_check, loss_and_gradient,
                                mlp_predict_proba)


def blobs(seed, n=500):
    r = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = r.normal(size=(n, 2)) * 0.5 + np.where(y[:, None] == 1, 2.0, -2.0)
    return X, y


@pytest.mark.parametrize("seed", range(3))
def test_separable_blobs(seed):
    X, y = blobs(seed)
    # the blobs are split by the line x0 + x1 = 0
    assert np.mean((X.sum(axis=1) > 0) == y) >= 0.99
    model = fit_mlp(X, y, MlpParams(seed=seed))
    assert np.mean((model.predict_proba(X) > 0.5) == y) >= 0.99


@pytest.mark.parametrize("seed", range(3))
def test_early_epoch_loss_does_not_increase(seed):
    X, y = blobs(seed)
    hist = fit_mlp(X, y, MlpParams(seed=seed, epochs=5)).loss_history
    assert all(b <= a + 1e-3 for a, b in zip(hist, hist[1:]))


def test_all_positive_targets():
    X = np.random.default_rng(0).normal(size=(200, 3))
    model = fit_mlp(X, np.ones(200), MlpParams(epochs=50))
    assert model.predict_proba(X).min() >= 0.9


def test_zero_learning_rate_keeps_initial_weights():
    X, y = blobs(0, 100)
    params = MlpParams(learning_rate=0.0, epochs=3, seed=4)
    trained = fit_mlp(X, y, params)
    init = MlpModel.initialize(2, params.hidden, seed=4, dtype=np.float32)
    assert np.array_equal(trained.theta, init.theta)


def test_architecture_and_init():
    m = MlpModel.initialize(39, seed=0)
    assert m.layer_dims == (39, 128, 64, 32, 1)
    for w, b in m.layers:
        limit = np.sqrt(6 / w.shape[0])
        assert np.abs(w).max() <= limit and np.all(b == 0)
    shapes = [w.shape for w in m.weights]
    assert all(a[1] == b[0] for a, b in zip(shapes, shapes[1:]))


def test_zero_network_outputs_half():
    m = MlpModel.initialize(5, seed=0)
    m.theta[:] = 0
    assert np.all(m.predict_proba(np.random.default_rng(0).normal(size=(7, 5))) == 0.5)


def test_dead_signal_path_outputs_half():
    m = MlpModel.initialize(4, seed=1)
    for w, b in m.layers[1:]:
        w[...] = 0
        b[...] = 0
    m.layers[0][0][...] *= 2
    assert np.all(m.predict_proba(np.random.default_rng(1).normal(size=(9, 4))) == 0.5)


def test_outputs_strictly_inside_unit_interval():
    X, y = blobs(1)
    p = fit_mlp(X, y, MlpParams(epochs=5)).predict_proba(np.vstack([X, X * 100]))
    assert np.all((p > 0) & (p < 1))


def test_duplicate_rows_identical_outputs():
    m = MlpModel.initialize(3, seed=2)
    X = np.tile(np.array([[0.3, -1.0, 2.0]]), (4, 1))
    assert len(set(m.predict_proba(X).tolist())) == 1


def test_seed_determinism():
    X, y = blobs(2, 200)
    a = fit_mlp(X, y, MlpParams(epochs=3, seed=9))
    b = fit_mlp(X, y, MlpParams(epochs=3, seed=9))
    assert np.array_equal(a.theta, b.theta) and a.final_loss == b.final_loss


def test_divergence_is_reported():
    X, y = blobs(0, 256)
    with pytest.raises(NonFiniteLoss):
        # float32 activations overflow to inf at this input scale
        fit_mlp(X * 1e37, y, MlpParams(epochs=2, learning_rate=1e3))


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        fit_mlp(np.zeros((5, 2)), np.zeros(4))
    with pytest.raises(ShapeMismatch):
        mlp_predict_proba(MlpModel.initialize(3), np.zeros((2, 4)))


def test_invalid_params():
    for bad in ({"learning_rate": -1}, {"batch_size": 0}, {"epochs": -1}):
        with pytest.raises(ValueError):
            MlpParams(**bad)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check_at_random_init(seed):
    r = np.random.default_rng(seed)
    d = int(r.integers(1, 8))
    m = MlpModel.initialize(d, hidden=(8, 6, 4), seed=seed)
    n = int(r.integers(1, 33))
    assert gradient_check(m, (r.normal(size=(n, d)), r.integers(0, 2, n))) < 1e-4


def test_linear_squared_loss_matches_closed_form():
    r = np.random.default_rng(3)
    X, y = r.normal(size=(20, 4)), r.normal(size=20)
    m = MlpModel.initialize(4, hidden=(), seed=3, output="identity")
    _, grad = loss_and_gradient(m, X, y, loss="squared")
    w, b = m.layers[0]
    resid = X @ w[:, 0] + b[0] - y
    closed = np.concatenate([X.T @ resid, [resid.sum()]]) / len(y)
    assert np.allclose(grad, closed, rtol=0, atol=1e-12)
    assert gradient_check(m, (X, y), loss="squared") < 1e-7


def test_empty_batch_scores_zero():
    assert gradient_check(MlpModel.initialize(3), (np.zeros((0, 3)), np.zeros(0))) == 0.0


def test_adam_second_moment_nonnegative():
    params = MlpParams()
    state = AdamState.zeros(5, params, np.float64)
    theta = np.zeros(5)
    scratch = np.empty(5)
    for g in np.random.default_rng(0).normal(size=(10, 5)):
        state.update(theta, g, scratch)
        assert np.all(state.v >= 0)
    assert state.step == 10


def test_first_adam_step_moves_by_learning_rate():
    state = AdamState.zeros(3, MlpParams(learning_rate=0.01), np.float64)
    theta = np.zeros(3)
    state.update(theta, np.array([2.0, -0.5, 1e-3]), np.empty(3))
    assert np.allclose(theta, [-0.01, 0.01, -0.01 * 1e-3 / (1e-3 + 1e-8)])


def test_serialization_round_trip(tmp_path):
    X, y = blobs(0, 100)
    model = fit_mlp(X, y, MlpParams(epochs=2))
    model.save(tmp_path / "m.json")
    loaded = MlpModel.load(tmp_path / "m.json")
    assert np.allclose(loaded.predict_proba(X), model.predict_proba(X), atol=1e-6)

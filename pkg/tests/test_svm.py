import numpy as np
import pytest

from leishscan.svm import (
    ClassifierModel,
    Kernel,
    ModelError,
    TrainingError,
    solve_binary,
    train_model,
)


def separable(rng, n=40):
    a = rng.normal((-3, -3), 0.7, (n, 2))
    b = rng.normal((3, 3), 0.7, (n, 2))
    return np.vstack([a, b]), np.array([0] * n + [1] * n)


def xor(rng, n=50):
    x = rng.uniform(-1, 1, (4 * n, 2))
    x += np.sign(x) * 0.15
    y = (np.sign(x[:, 0]) == np.sign(x[:, 1])).astype(int)
    return x, y


def test_separable_linear(rng):
    x, y = separable(rng)
    model = train_model(x, y, Kernel("linear"), C=10)
    assert (model.predict(x) == y).all()
    dec = model.decision_values(x)[:, 0]
    # positive decision favours the first class of the pair
    assert (dec[y == 0] > 0).all() and (dec[y == 1] < 0).all()


def test_rbf_beats_linear_on_xor(rng):
    x, y = xor(rng)
    lin = (train_model(x, y, Kernel("linear"), C=10).predict(x) == y).mean()
    rbf = (train_model(x, y, Kernel("rbf", gamma=2.0), C=10).predict(x) == y).mean()
    assert rbf > lin and rbf > 0.95


def test_single_class_rejected():
    with pytest.raises(TrainingError):
        train_model(np.zeros((5, 2)), np.zeros(5, int))
    with pytest.raises(TrainingError):
        train_model(np.zeros((3, 2)), np.array([0, 0, 1]))


def test_training_vector_keeps_its_label(rng):
    x = rng.normal(size=(30, 4)) + np.repeat(np.arange(3), 10)[:, None] * 4
    y = np.repeat([2, 3, 4], 10)
    model = train_model(x, y, Kernel("rbf"), C=100)
    assert model.predict(x[7])[0] == 2 and model.predict(x[25])[0] == 4


def test_smo_satisfies_kkt(rng):
    x, y = xor(rng, 20)
    yy = np.where(y == 1, 1.0, -1.0)
    kern = Kernel("rbf", gamma=1.5)
    K = kern(x, x)
    C = 5.0
    alpha, rho, gap = solve_binary(K, yy, C, tol=1e-6)
    assert abs(alpha @ yy) < 1e-9
    assert (alpha >= -1e-12).all() and (alpha <= C + 1e-12).all()
    f = K @ (alpha * yy) - rho
    m = yy * f
    free = (alpha > 1e-8) & (alpha < C - 1e-8)
    assert np.allclose(m[free], 1.0, atol=1e-4)
    assert (m[alpha < 1e-8] >= 1 - 1e-4).all()
    assert (m[alpha > C - 1e-8] <= 1 + 1e-4).all()


def test_json_roundtrip(rng, tmp_path):
    x = rng.normal(size=(30, 3)) + np.repeat(np.arange(3), 10)[:, None] * 3
    y = np.repeat([2, 3, 5], 10)
    model = train_model(x, y)
    model.save(tmp_path / "m.json")
    loaded = ClassifierModel.load(tmp_path / "m.json")
    assert loaded.to_json() == model.to_json()
    assert np.array_equal(loaded.predict(x), model.predict(x))


def test_training_is_deterministic(rng):
    x, y = xor(rng, 15)
    assert train_model(x, y).to_json() == train_model(x, y).to_json()


def test_model_errors(rng):
    x, y = separable(rng, 5)
    model = train_model(x, y)
    with pytest.raises(ModelError):
        model.predict(np.zeros(3))
    with pytest.raises(ModelError):
        ClassifierModel.from_json("{not json")
    with pytest.raises(ModelError):
        ClassifierModel.from_json('{"format": "other", "version": 1}')


def test_unknown_kernel():
    with pytest.raises(ValueError):
        Kernel("sigmoidal")

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from orbitllp import DownconvLLP, QkmLLP, RegressionToMean
from orbitllp import models as M


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 256, (12, 100, 100, 3), dtype=np.uint8)
    y = rng.dirichlet(np.ones(3), 12)
    return X, y


@pytest.mark.parametrize("cls", [DownconvLLP, QkmLLP])
def test_params_and_clone(cls):
    est = cls(epochs=3, random_state=4)
    params = est.get_params()
    assert params["epochs"] == 3 and params["random_state"] == 4
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(batch_size=7)
    assert est.batch_size == 7


@pytest.mark.parametrize("cls,hyper", [(DownconvLLP, {"n_filters": 6}), (QkmLLP, {"n_components": 6})])
def test_fit_predict(cls, hyper, toy):
    X, y = toy
    est = cls(epochs=2, batch_size=4, **hyper).fit(X[:8], y[:8], X[8:], y[8:])
    pred = est.predict(X)
    assert pred.shape == (12, 3)
    np.testing.assert_allclose(pred.sum(1), 1, atol=1e-5)
    assert len(est.run_.history) == 2
    assert est.n_params_ == M.param_count(est._kind, 6, 3)
    cells = est.predict_cell_probs(X[:2])
    assert cells.shape[0] == 2 and cells.shape[-1] == 3
    assert est.score(X, y) <= 0


def test_uint8_and_float_inputs_agree(toy):
    X, y = toy
    est = DownconvLLP(n_filters=4, epochs=1).fit(X[:4], y[:4])
    np.testing.assert_allclose(est.predict(X[:4]), est.predict(X[:4].astype(np.float32) / 255), rtol=1e-6)


def test_fit_is_reproducible(toy):
    X, y = toy
    a = QkmLLP(n_components=4, epochs=2, batch_size=4).fit(X, y)
    b = QkmLLP(n_components=4, epochs=2, batch_size=4).fit(X, y)
    assert M.model_to_bytes(a.params_) == M.model_to_bytes(b.params_)


def test_input_validation(toy):
    X, y = toy
    est = DownconvLLP(epochs=1)
    with pytest.raises(ValueError):
        est.fit(X[:, :50, :50], y)
    with pytest.raises(ValueError):
        est.fit(X, y[:5])
    with pytest.raises(ValueError):
        est.fit(X, y * 2)
    with pytest.raises(ValueError):
        est.fit(np.full((2, 100, 100, 3), 1.5), y[:2])
    with pytest.raises(NotFittedError):
        est.predict(X)


def test_from_params():
    params = M.QkmParams.initialize(8, 4, seed=2)
    est = QkmLLP.from_params(params)
    assert est.predict(np.zeros((1, 100, 100, 3))).shape == (1, 4)
    with pytest.raises(ValueError):
        DownconvLLP.from_params(params)


def test_regression_to_mean(toy):
    X, y = toy
    base = RegressionToMean().fit(X, y)
    np.testing.assert_allclose(base.predict(X[:3]), np.tile(y.mean(0) / y.mean(0).sum(), (3, 1)))
    assert base.score(X, y) < 0

"""The sklearn-style wrapper: parameter plumbing (get_params/set_params/
clone), fit/sample shapes, and the not-fitted guard."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fdmsde import FDMGenerator
from fdmsde.processes import ou, simulate_exact


def small_model(**kw):
    kw.setdefault("steps", 3)
    kw.setdefault("batch_size", 8)
    kw.setdefault("d_z", 2)
    kw.setdefault("d_noise", 1)
    kw.setdefault("hidden_sizes", (4,))
    return FDMGenerator(**kw)


def ou_data(n=32, n_times=8, seed=0):
    return simulate_exact(ou(), np.linspace(0, 1, n_times), n, seed).values


def test_get_set_params_round_trip():
    model = small_model(gamma=0.5, seed=7)
    params = model.get_params()
    assert params["gamma"] == 0.5
    assert params["seed"] == 7
    model.set_params(gamma=2.0)
    assert model.gamma == 2.0


def test_clone_preserves_params():
    model = small_model(learning_rate=5e-4, sigma_cap=0.8)
    twin = clone(model)
    assert twin.get_params() == model.get_params()


def test_sample_before_fit_raises():
    with pytest.raises(NotFittedError):
        small_model().sample(3)
    with pytest.raises(NotFittedError):
        small_model().score(ou_data())


def test_fit_sample_shapes_3d():
    X = ou_data()
    model = small_model().fit(X)
    out = model.sample(5)
    assert out.shape == (5, 8, 1)
    assert model.n_features_in_ == 1


def test_fit_sample_shapes_2d_input_squeezed():
    X = ou_data()[:, :, 0]  # (n, T)
    model = small_model().fit(X)
    out = model.sample(4)
    assert out.shape == (4, 8)


def test_fit_returns_self_and_sets_attrs():
    model = small_model()
    assert model.fit(ou_data()) is model
    assert hasattr(model, "params_")
    assert hasattr(model, "train_log_")
    assert model.sde_config_.num_steps == 7


def test_sample_deterministic_in_seed():
    model = small_model().fit(ou_data())
    np.testing.assert_array_equal(model.sample(3, seed=5), model.sample(3, seed=5))
    assert not np.array_equal(model.sample(3, seed=5), model.sample(3, seed=6))


def test_score_runs_and_is_finite():
    X = ou_data()
    model = small_model().fit(X)
    s = model.score(ou_data(seed=1))
    assert np.isfinite(s)


def test_fit_rejects_bad_input():
    model = small_model()
    with pytest.raises(ValueError, match="shape"):
        model.fit(np.zeros(5))
    with pytest.raises(ValueError, match="2 timestamps"):
        model.fit(np.zeros((8, 1, 1)))
    bad = ou_data()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        model.fit(bad)


def test_score_rejects_feature_mismatch():
    model = small_model().fit(ou_data())
    with pytest.raises(ValueError, match="features"):
        model.score(np.zeros((8, 8, 2)))

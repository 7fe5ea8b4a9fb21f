import numpy as np
import pytest

from oracles import central_difference
from tecflow.forecast.learners import (
    IncompatibleWeightsError,
    LinearAR,
    RecurrentNet,
    learner_from_tag,
)


def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(b))))


@pytest.mark.parametrize("seed", range(10))
def test_linear_gradient(seed):
    rng = np.random.default_rng(seed)
    lr = LinearAR(int(rng.integers(1, 6)), int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    p = rng.standard_normal(lr.n_params)
    X = rng.standard_normal((5, lr.past_obs, lr.n_inputs))
    Y = rng.standard_normal((5, lr.future_obs))
    _, g = lr.loss_and_grad(p, X, Y)
    fd = central_difference(lambda q: lr.loss_and_grad(q, X, Y)[0], p)
    assert _rel_err(g, fd) <= 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_recurrent_gradient_with_dropout(seed):
    rng = np.random.default_rng(100 + seed)
    net = RecurrentNet(int(rng.integers(2, 5)), int(rng.integers(1, 3)), 1, (3, 4, 3), dropout=0.2)
    p = net.init_params(rng) + 0.1 * rng.standard_normal(net.n_params)
    X = rng.standard_normal((4, net.past_obs, 1))
    Y = rng.standard_normal((4, net.future_obs))
    masks = net.dropout_masks(rng, 4)
    _, g = net.loss_and_grad(p, X, Y, masks=masks)
    fd = central_difference(lambda q: net.loss_and_grad(q, X, Y, masks=masks)[0], p)
    assert _rel_err(g, fd) <= 1e-5


def test_linear_design_matches_predict():
    rng = np.random.default_rng(0)
    lr = LinearAR(4, 2, 1)
    p = rng.standard_normal(lr.n_params)
    X = rng.standard_normal((6, 4, 1))
    A = lr.design(X)
    np.testing.assert_allclose(A @ p.reshape(5, 2), lr.predict(p, X), rtol=1e-14)


def test_zero_linear_model_predicts_zero():
    lr = LinearAR(3)
    assert np.all(lr.predict(lr.init_params(), np.ones((2, 3, 1))) == 0.0)


def test_recurrent_shapes_and_default_stack():
    net = RecurrentNet(8, 2)
    assert net.hidden == (16, 16, 16)
    p = net.init_params(np.random.default_rng(0))
    assert p.size == net.n_params
    y = net.predict(p, np.random.default_rng(1).random((3, 8, 1)))
    assert y.shape == (3, 2) and np.all(np.isfinite(y))


def test_dropout_masks_skip_first_layer():
    net = RecurrentNet(5, 1, 1, (4, 4, 4), 0.5)
    masks = net.dropout_masks(np.random.default_rng(0), 7)
    assert masks[0] is None
    assert masks[1].shape == (7, 5, 4)
    assert masks[2].shape == (7, 4)
    assert set(np.unique(masks[2])) <= {0.0, 2.0}
    assert RecurrentNet(5, dropout=0.0).dropout_masks(np.random.default_rng(0), 2) == [None] * 3


@pytest.mark.parametrize("learner", [LinearAR(96, 1, 2), RecurrentNet(12, 3, 1, (5, 6, 6), 0.25)])
def test_tag_round_trip(learner):
    again = learner_from_tag(learner.arch_tag)
    assert type(again) is type(learner)
    assert again.arch_tag == learner.arch_tag
    assert again.n_params == learner.n_params


def test_bad_tag():
    with pytest.raises(IncompatibleWeightsError):
        learner_from_tag("transformer:p3")

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import least_squares_ar
from tecflow.data import generate_community
from tecflow.forecast.federated import (
    ClientDataset,
    ClientTrainingError,
    DataTooShortError,
    FedConfig,
    LearnerConfig,
    ModelWeights,
    RoundLog,
    denormalize,
    fedavg,
    forecast,
    initial_weights,
    load_weights,
    local_train,
    local_train_detailed,
    make_windows,
    normalize,
    rolling_forecast,
    run_federated,
    save_weights,
    select_participants,
    train_local_only,
    write_training_log,
    zero_weights,
)
from tecflow.forecast.learners import IncompatibleWeightsError
from tecflow.model import InvalidInputError, TimeSeries

SMALL = LearnerConfig(epochs=3, batch_size=8, past_obs=8, lr=0.05)


def _w(values, tag="t"):
    return ModelWeights(np.asarray(values, dtype=float), tag)


def _series(values, start="2018-01-01"):
    return TimeSeries.from_start(start, values)


def _client(values, bid="b001", kind="demand", norm=None):
    return ClientDataset(bid, kind, _series(values), norm)


def _sine_client(seed, n=600, bid="b001"):
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    v = 2.0 + np.sin(2 * np.pi * t / 24) + 0.05 * rng.standard_normal(n)
    return _client(v, bid)


# -- fedavg ---------------------------------------------------------------------

def test_fedavg_examples():
    assert list(fedavg([_w([1, 2]), _w([3, 4]), _w([5, 6])]).params) == [3.0, 4.0]
    single = _w([0.1, -2.0])
    assert fedavg([single]) == single
    with pytest.raises(IncompatibleWeightsError):
        fedavg([_w([1, 2, 3, 4]), _w([1, 2, 3, 4, 5])])
    with pytest.raises(IncompatibleWeightsError):
        fedavg([_w([1, 2], "a"), _w([1, 2], "b")])
    with pytest.raises(InvalidInputError):
        fedavg([])


@given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), min_size=1, max_size=25),
       st.randoms(use_true_random=False))
def test_fedavg_permutation_invariant(rows, rnd):
    ws = [_w(r) for r in rows]
    a = fedavg(ws)
    rnd.shuffle(ws)
    assert np.array_equal(a.params, fedavg(ws).params)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.integers(1, 25), st.floats(-10, 10))
def test_fedavg_of_scaled_copies(row, k, scale):
    w = _w(np.asarray(row) * scale)
    np.testing.assert_allclose(fedavg([w] * k).params, w.params, rtol=1e-15, atol=0)


def test_weights_must_be_finite():
    with pytest.raises(InvalidInputError):
        _w([1.0, math.nan])
    w = _w([1.0])
    with pytest.raises(ValueError):
        w.params[0] = 2.0


# -- selection ------------------------------------------------------------------

def test_select_participants():
    pool = list(range(100))
    assert select_participants(pool, 100, np.random.default_rng(0)) == pool
    # regression fixture recorded on first run
    assert select_participants(pool, 5, np.random.default_rng(2018)) == [9, 13, 17, 29, 47]
    assert select_participants(pool, 5, np.random.default_rng(2018)) == [9, 13, 17, 29, 47]
    with pytest.raises(InvalidInputError):
        select_participants(pool, 0, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        select_participants(pool[:3], 4, np.random.default_rng(0))


@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_selection_without_replacement(k, seed):
    chosen = select_participants(list(range(30)), k, np.random.default_rng(seed))
    assert len(chosen) == len(set(chosen)) == k


# -- datasets and windows ----------------------------------------------------------

def test_normalization_round_trip():
    c = _client([2.0, 4.0, 6.0])
    assert c.normalization == (2.0, 6.0)
    np.testing.assert_allclose(c.scaled(), [0.0, 0.5, 1.0])
    np.testing.assert_allclose(denormalize(normalize([3.0, 7.0], (2.0, 6.0)), (2.0, 6.0)), [3.0, 7.0])
    flat = _client([5.0, 5.0])
    np.testing.assert_allclose(flat.scaled(), [0.0, 0.0])


def test_make_windows():
    X, Y = make_windows(np.arange(6.0), np.arange(6.0), 3, 2)
    assert X.shape == (2, 3, 1) and Y.shape == (2, 2)
    assert list(X[1, :, 0]) == [1, 2, 3] and list(Y[1]) == [4, 5]
    with pytest.raises(DataTooShortError):
        make_windows(np.arange(4.0), np.arange(4.0), 3, 2)


def test_learner_config_validation():
    with pytest.raises(InvalidInputError):
        LearnerConfig(val_split=1.0)
    with pytest.raises(InvalidInputError):
        LearnerConfig(past_obs=0)
    with pytest.raises(InvalidInputError):
        LearnerConfig(learner_kind="gru")
    with pytest.raises(InvalidInputError):
        FedConfig(0, 1)


# -- local training -------------------------------------------------------------------

def test_constant_series_fits_exactly():
    # a flat series scales to all zeros, which the zero model already predicts
    c = _client(np.full(200, 3.7))
    w, loss = local_train(c, zero_weights(SMALL), SMALL, np.random.default_rng(0))
    assert loss <= 1e-6
    # the same series placed inside a wider range must be learnt through the bias
    c = _client(np.full(200, 3.7), norm=(0.0, 7.4))
    coef, lsq = least_squares_ar(c.scaled(), SMALL.past_obs)
    assert lsq <= 1e-20
    w, loss = local_train(c, zero_weights(SMALL), LearnerConfig(epochs=8, batch_size=8, past_obs=8, lr=0.05),
                          np.random.default_rng(0))
    assert loss <= 1e-6
    window = c.scaled()[-SMALL.past_obs:]
    assert forecast(w, window, c.normalization)[0] == pytest.approx(3.7, abs=1e-3)


def test_zero_epochs_returns_init():
    c = _sine_client(0)
    init = _w(np.full(SMALL.past_obs + 1, 0.01), zero_weights(SMALL).arch_tag)
    cfg = LearnerConfig(epochs=0, past_obs=8)
    out = local_train_detailed(c, init, cfg, np.random.default_rng(0))
    assert out.weights == init and out.best_epoch == 0
    X, Y = make_windows(c.inputs(), c.scaled(), 8, 1)
    n_val = round(0.25 * X.shape[0])
    pred = X[-n_val:, :, 0] @ init.params[:-1] + init.params[-1]
    assert out.val_loss == pytest.approx(float(np.mean((pred - Y[-n_val:, 0]) ** 2)), rel=1e-12)


def test_too_short_series():
    with pytest.raises(DataTooShortError):
        local_train(_client(np.arange(8.0)), zero_weights(SMALL), SMALL, np.random.default_rng(0))
    with pytest.raises(DataTooShortError):
        train_local_only(_client(np.arange(9.0)), SMALL, np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(5))
def test_best_epoch_dominates_final(seed):
    out = local_train_detailed(_sine_client(seed), zero_weights(SMALL), LearnerConfig(
        epochs=5, batch_size=4, past_obs=8, lr=0.3), np.random.default_rng(seed))
    assert out.val_loss <= out.history[-1]
    assert out.val_loss == min([out.val_loss] + out.history)


def test_training_reduces_loss_towards_least_squares():
    c = _sine_client(3, n=2000)
    cfg = LearnerConfig(epochs=8, batch_size=4, past_obs=8, lr=0.05)
    out = local_train_detailed(c, zero_weights(cfg), cfg, np.random.default_rng(0))
    _, lsq = least_squares_ar(c.scaled(), 8)
    assert out.val_loss < 0.05
    assert out.val_loss < 5 * lsq + 1e-3


def test_mismatched_init_rejected():
    with pytest.raises(IncompatibleWeightsError):
        local_train(_sine_client(0), _w(np.zeros(3), "linear-ar:p2:f1:x1"), SMALL, np.random.default_rng(0))


def test_recurrent_learner_trains():
    cfg = LearnerConfig(epochs=2, batch_size=16, past_obs=6, cells_input=4, cells_hidden=4,
                        learner_kind="recurrent", lr=0.05)
    c = _sine_client(1, n=300)
    init = initial_weights(cfg, 0)
    w, loss = local_train(c, init, cfg, np.random.default_rng(0))
    assert np.isfinite(loss) and w.arch_tag == init.arch_tag


# -- federation ----------------------------------------------------------------------

def test_degenerate_federation_equals_local_train():
    c = _sine_client(2)
    fed = FedConfig(1, 1, seed=11)
    g = run_federated([c], fed, SMALL)
    # reproduce the client's generator by hand
    rs = np.random.SeedSequence(11).spawn(1)[0]
    _, train_ss = rs.spawn(2)
    w, _ = local_train(c, zero_weights(SMALL), SMALL, np.random.default_rng(train_ss.spawn(1)[0]))
    assert g == w


def test_federation_deterministic_and_parallel_safe():
    clients = [_sine_client(s, bid=f"b{s:03d}") for s in range(6)]
    fed = FedConfig(3, 3, seed=4)
    a = run_federated(clients, fed, SMALL)
    b = run_federated(clients, fed, SMALL)
    c = run_federated(clients, fed, SMALL, workers=3)
    assert a == b == c
    assert np.all(np.isfinite(a.params))


def test_transfer_init_reaches_every_round_one_client(monkeypatch):
    import tecflow.forecast.federated as fedmod
    seen = []
    real = fedmod.local_train

    def spy(dataset, init, cfg, rng):
        seen.append(init)
        return real(dataset, init, cfg, rng)

    monkeypatch.setattr(fedmod, "local_train", spy)
    clients = [_sine_client(s, bid=f"b{s:03d}") for s in range(4)]
    start = _w(np.linspace(-0.1, 0.2, SMALL.past_obs + 1), zero_weights(SMALL).arch_tag)
    run_federated(clients, FedConfig(1, 4), SMALL, init=start)
    assert len(seen) == 4 and all(w == start for w in seen)
    assert np.any(start.params != 0)


def test_client_errors_are_tagged():
    clients = [_sine_client(0), _client(np.arange(5.0), bid="tiny")]
    with pytest.raises(ClientTrainingError) as info:
        run_federated(clients, FedConfig(1, 2), SMALL)
    assert info.value.building_id == "tiny" and info.value.round_index == 1


def test_community_scale_run_is_finite():
    buildings = generate_community("a", 6, 10, seed=1)
    clients = [ClientDataset(b.id, "demand", b.demand) for b in buildings]
    cfg = LearnerConfig(epochs=2, past_obs=16, batch_size=16)
    log: list = []
    g = run_federated(clients, FedConfig(4, 3, seed=0), cfg, log=log)
    assert np.all(np.isfinite(g.params))
    assert len(log) == 12 and {e.round_index for e in log} == {1, 2, 3, 4}


# -- inference and persistence ------------------------------------------------------------

def test_forecast_zero_model_and_window_errors():
    w = zero_weights(SMALL)
    assert forecast(w, np.ones(8), (2.0, 6.0))[0] == 2.0
    with pytest.raises(InvalidInputError):
        forecast(w, np.ones(7), (2.0, 6.0))


def test_rolling_forecast_matches_pointwise():
    rng = np.random.default_rng(0)
    w = _w(rng.standard_normal(9) * 0.1, zero_weights(SMALL).arch_tag)
    history = rng.random(50) * 4
    norm = (0.0, 4.0)
    roll = rolling_forecast(w, history, norm, 20, 30)
    for k, t in enumerate(range(20, 30)):
        single = forecast(w, normalize(history[t - 8:t], norm), norm)[0]
        assert roll[k] == pytest.approx(single, rel=1e-12)


def test_weights_file_round_trip(tmp_path):
    w = initial_weights(LearnerConfig(learner_kind="recurrent", past_obs=4, cells_input=3, cells_hidden=2), 5)
    path = tmp_path / "w.txt"
    save_weights(w, path, ["config_hash=x", "seed=5"])
    assert load_weights(path) == w
    path.write_text("arch_tag linear-ar:p3:f1:x1\n1.0\n")
    with pytest.raises(IncompatibleWeightsError):
        load_weights(path)
    path.write_text("1.0\n")
    with pytest.raises(IncompatibleWeightsError):
        load_weights(path)


def test_training_log_csv(tmp_path):
    path = tmp_path / "log.csv"
    write_training_log([RoundLog(1, "a001", "demand", 0.25)], path)
    assert path.read_text().splitlines() == ["round,building,target_kind,val_loss", "1,a001,demand,0.25"]

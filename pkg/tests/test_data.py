import os
import tempfile

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tecflow.data import (
    AlignmentError,
    BuildingProfileParams,
    CsvFormatError,
    SpanError,
    SplitMode,
    SplitSpec,
    aggregate_community,
    gen_building,
    generate_community,
    load_csv,
    net_demand,
    solar_elevation_sine,
    split,
    write_csv,
)
from tecflow.model import InvalidInputError, TimeSeries

PARAMS = BuildingProfileParams(base_load=1.0, daily_peak_amp=2.0, peak_hour=19.0, noise_sigma=0.1,
                               pv_capacity=4.0, cloudiness=0.3, seed=7, seasonal_amp=0.2, noise_corr=0.8)


def test_gen_building_shape_and_determinism():
    d, g = gen_building(PARAMS, 2)
    assert len(d) == len(g) == 192
    assert d.aligned_with(g)
    d2, g2 = gen_building(PARAMS, 2)
    assert d == d2 and g == g2
    assert np.all(d.values >= 0) and np.all(g.values >= 0)


def test_gen_building_night_has_no_sun():
    _, g = gen_building(PARAMS, 3)
    hours = (g.timestamps - g.timestamps.astype("datetime64[D]")).astype(int) / 60
    night = (hours < 4) | (hours > 21)
    assert np.all(g.values[night] == 0.0)
    assert g.values.max() > 0.0


def test_noiseless_profile_is_exact():
    p = BuildingProfileParams(1.0, 2.0, 18.0, 0.0, 0.0, 0.0)
    d, g = gen_building(p, 1)
    hour = np.arange(96) / 4.0
    expected = 1.0 + 2.0 * 0.5 * (1.0 + np.cos(2 * np.pi * (hour - 18.0) / 24.0))
    np.testing.assert_allclose(d.values, expected, rtol=1e-12)
    assert np.all(g.values == 0.0)


def test_ar1_noise_keeps_marginal_spread():
    p = BuildingProfileParams(10.0, 0.0, 0.0, 1.0, 0.0, 0.0, seed=3, noise_corr=0.9)
    d, _ = gen_building(p, 200)
    noise = d.values - 10.0
    assert np.std(noise) == pytest.approx(1.0, rel=0.1)
    assert np.corrcoef(noise[:-1], noise[1:])[0, 1] == pytest.approx(0.9, abs=0.03)


def test_solar_elevation_peaks_near_noon():
    ts = np.datetime64("2018-06-21T00:00", "m") + np.arange(96) * np.timedelta64(15, "m")
    s = solar_elevation_sine(ts, 32.7)
    assert abs(int(np.argmax(s)) - 48) <= 1
    # summer solstice noon elevation = 90 - lat + 23.45 deg
    assert s.max() == pytest.approx(np.sin(np.deg2rad(90 - 32.7 + 23.45)), abs=2e-3)


def test_param_validation():
    with pytest.raises(InvalidInputError):
        BuildingProfileParams(1.0, 1.0, 24.0, 0.1, 1.0, 0.1)
    with pytest.raises(InvalidInputError):
        BuildingProfileParams(1.0, 1.0, 12.0, 0.1, 1.0, 1.5)
    with pytest.raises(InvalidInputError):
        gen_building(PARAMS, 0)


def test_net_and_aggregate():
    a = TimeSeries.from_start("2018-01-01", [3.0, 1.0])
    b = TimeSeries.from_start("2018-01-01", [1.0, 4.0])
    assert list(net_demand(a, b).values) == [2.0, -3.0]
    assert list(aggregate_community([a, b]).values) == [4.0, 5.0]
    with pytest.raises(AlignmentError):
        net_demand(a, TimeSeries.from_start("2018-01-02", [1.0, 1.0]))
    with pytest.raises(AlignmentError):
        aggregate_community([a, TimeSeries.from_start("2018-01-01", [1.0])])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_csv_round_trip_is_exact(values):
    ts = TimeSeries.from_start("2018-03-01", values)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "x.csv")
        write_csv(ts, path, ["config_hash=abc", "seed=1"])
        assert load_csv(path) == ts


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,value\n")
    with pytest.raises(CsvFormatError, match="header"):
        load_csv(p)
    p.write_text("timestamp,kw\n2018-01-01T00:00,1.0\n2018-01-01T00:15,abc\n")
    with pytest.raises(CsvFormatError, match=":3:"):
        load_csv(p)
    p.write_text("timestamp,kw\n2018-01-01T00:00,1.0\n2018-01-01T00:45,2.0\n")
    with pytest.raises(CsvFormatError, match="15 minutes"):
        load_csv(p)
    p.write_text("")
    with pytest.raises(CsvFormatError):
        load_csv(p)


def _year():
    return TimeSeries.from_start("2018-01-01", np.arange(365 * 96, dtype=float))


def test_split_full_history():
    train, test = split(_year(), SplitSpec(4))
    assert str(train.timestamps[0]) == "2018-01-01T00:00"
    assert str(train.timestamps[-1]) == "2018-03-31T23:45"
    assert str(test.timestamps[0]) == "2018-04-01T00:00"
    assert len(test) == 30 * 96


def test_split_scarce():
    train, test = split(_year(), SplitSpec("August", SplitMode.SCARCE))
    assert len(train) == 28 * 96
    assert str(train.timestamps[0]) == "2018-08-01T00:00"
    assert len(test) == 3 * 96
    assert str(test.timestamps[-1]) == "2018-08-31T23:45"


@pytest.mark.parametrize("month", [4, 8, 12])
@pytest.mark.parametrize("mode", list(SplitMode))
def test_split_is_disjoint_and_ordered(month, mode):
    train, test = split(_year(), SplitSpec(month, mode))
    assert train.timestamps[-1] < test.timestamps[0]
    assert test.timestamps[0] - train.timestamps[-1] == np.timedelta64(15, "m")


def test_split_errors():
    with pytest.raises(SpanError):
        split(TimeSeries.from_start("2018-01-01", np.zeros(96)), SplitSpec(4))
    with pytest.raises(SpanError):
        split(TimeSeries.from_start("2018-04-01", np.zeros(30 * 96)), SplitSpec(4))
    with pytest.raises(InvalidInputError):
        SplitSpec(13)
    with pytest.raises(InvalidInputError):
        SplitSpec("smarch")


def test_generate_community_ids_and_determinism():
    a = generate_community("b", 3, 2, seed=5)
    b = generate_community("b", 3, 2, seed=5)
    assert [x.id for x in a] == ["b001", "b002", "b003"]
    assert all(x.demand == y.demand and x.generation == y.generation for x, y in zip(a, b))
    c = generate_community("b", 3, 2, seed=6)
    assert not all(x.demand == y.demand for x, y in zip(a, c))

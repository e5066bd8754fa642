import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from windgp.dataset import (
    AffineTransform,
    Dataset,
    SplitSpec,
    TimePoint,
    make_dataset,
    split,
    standardize,
)
from windgp.errors import OutOfRange, ZeroVariance


def _series(y, X=None):
    y = np.asarray(y, dtype=float)
    n = len(y)
    X = np.arange(n, dtype=float) if X is None else X
    return Dataset(600 * np.arange(n), X, y)


def test_two_point_targets():
    s = standardize(_series([0.0, 2.0]))
    assert s.target_transform.shift[0] == 1.0
    # sample std (ddof=1) of [0, 2] is sqrt(2), so the values map to -+1/sqrt(2)
    np.testing.assert_allclose(s.target_transform.scale[0], np.sqrt(2.0))
    np.testing.assert_allclose(s.y, [-1 / np.sqrt(2.0), 1 / np.sqrt(2.0)])
    np.testing.assert_allclose(s.raw_y, [0.0, 2.0], atol=1e-15)


def test_three_point_targets_round_trip():
    s = standardize(_series([100.0, 200.0, 300.0]))
    assert s.target_transform.shift[0] == pytest.approx(200.0)
    assert s.target_transform.scale[0] == pytest.approx(100.0)  # ddof = 1
    np.testing.assert_allclose(s.raw_y, [100.0, 200.0, 300.0], rtol=1e-12)


def test_already_standardized_is_fixed_point():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(50)
    y = (y - y.mean()) / y.std(ddof=1)
    X = rng.standard_normal(50)
    X = (X - X.mean()) / X.std(ddof=1)
    s = standardize(_series(y, X))
    np.testing.assert_allclose(s.target_transform.shift, 0.0, atol=1e-12)
    np.testing.assert_allclose(s.target_transform.scale, 1.0, rtol=1e-12)
    np.testing.assert_allclose(s.feature_transform.scale, 1.0, rtol=1e-12)


def test_zero_variance_feature():
    with pytest.raises(ZeroVariance) as exc:
        standardize(_series([1.0, 2.0, 3.0], np.column_stack([[0, 1, 2], [5, 5, 5]])))
    assert exc.value.dimension == "x1"


def test_standardize_needs_two_points():
    with pytest.raises(ValueError):
        standardize(_series([1.0]))


@pytest.mark.parametrize("n,spec", [(3000, (1000, 2000, 0)), (15000, (5000, 10000, 0)),
                                    (17000, (7000, 10000, 0))])
def test_table_scenario_shapes(n, spec):
    data = _series(np.sin(np.arange(n) / 50.0))
    train, test = split(data, SplitSpec(*spec))
    assert (len(train), len(test)) == spec[:2]
    assert train.timestamps[-1] < test.timestamps[0]


def test_split_out_of_range():
    with pytest.raises(OutOfRange):
        split(_series(np.arange(10.0)), SplitSpec(8, 3, 0))
    with pytest.raises(OutOfRange):
        split(_series(np.arange(10.0)), SplitSpec(5, 5, 1))


def test_split_uses_train_statistics_only():
    y = np.concatenate([np.zeros(5) + [0, 1, 2, 3, 4], 100 + np.arange(5.0)])
    train, test = split(_series(y), SplitSpec(5, 5, 0))
    np.testing.assert_allclose(train.y.mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(train.y.std(ddof=1), 1.0)
    assert test.y.mean() > 10  # test statistics are never used
    assert test.target_transform == train.target_transform
    np.testing.assert_allclose(test.raw_y, y[5:], rtol=1e-12)


@given(st.integers(0, 20), st.integers(2, 30), st.integers(1, 30))
def test_split_is_contiguous_partition(offset, n_train, n_test):
    n = offset + n_train + n_test
    data = _series(np.sin(np.arange(n, dtype=float)))
    train, test = split(data, SplitSpec(n_train, n_test, offset))
    np.testing.assert_array_equal(train.timestamps, data.timestamps[offset:offset + n_train])
    np.testing.assert_array_equal(test.timestamps, data.timestamps[offset + n_train:n])
    assert train.timestamps.max() < test.timestamps.min()


@given(arrays(float, st.tuples(st.integers(2, 30), st.integers(1, 3)),
              elements=st.floats(-1e4, 1e4, allow_nan=False)))
def test_transform_round_trip(X):
    if np.any(np.std(X, axis=0, ddof=1) < 1e-6 * (1 + np.abs(X).max())):
        return
    tr = AffineTransform.fit(X)
    back = tr.invert(tr.apply(X))
    np.testing.assert_allclose(back, X, rtol=1e-12, atol=1e-12 * (1 + np.abs(X).max()))


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset([0, 0], [1.0, 2.0], [1.0, 2.0])  # timestamps not increasing
    with pytest.raises(ValueError):
        Dataset([0, 1], [1.0, 2.0], [1.0, np.nan])
    d = _series([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        d.y[0] = 5.0  # immutable


def test_points_round_trip():
    d = make_dataset([0, 600, 1200], [3.0, 4.0, 5.0], [10.0, 20.0, 30.0],
                     features=("time", "wind_speed"))
    pts = d.points
    assert pts[1] == TimePoint(600, (600 / 3600.0, 4.0), 20.0)
    back = Dataset.from_points(pts, feature_names=d.feature_names)
    np.testing.assert_array_equal(back.X, d.X)


def test_time_feature_is_affine_in_normalized_index():
    ts = 1451779200 + 600 * np.array([0, 1, 2, 5, 9, 10, 11])
    data = make_dataset(ts, np.zeros(7), np.arange(7.0))
    train, _ = split(data, SplitSpec(5, 2, 0))
    idx = (ts[:5] - ts[0]) / (ts[4] - ts[0])
    coef = np.polyfit(idx, train.X[:, 0], 1)
    np.testing.assert_allclose(np.polyval(coef, idx), train.X[:, 0], atol=1e-12)


def test_unknown_feature():
    with pytest.raises(ValueError):
        make_dataset([0, 1], [1, 2], [1, 2], features=("pressure",))

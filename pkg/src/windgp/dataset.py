"""Data containers, standardization and chronological splitting.

Values inside a :class:`Dataset` live in whatever space its transforms say:
``raw = z * scale + shift``.  A freshly built dataset carries identity
transforms; :func:`standardize` and :func:`split` return datasets whose
``X``/``y`` are standardized and whose transforms map back to kW.

Standard deviations use the sample convention (divide by ``N - 1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import OutOfRange, ZeroVariance

DEFAULT_RATED_POWER = 2050.0
SECONDS_PER_HOUR = 3600.0
FEATURE_CHOICES = ("time", "wind_speed")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AffineTransform:
    """``raw = z * scale + shift``, per dimension."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shift", _frozen(np.atleast_1d(self.shift)))
        object.__setattr__(self, "scale", _frozen(np.atleast_1d(self.scale)))
        if self.shift.shape != self.scale.shape:
            raise ValueError("shift and scale must have the same shape")
        if not np.all(self.scale > 0) or not np.all(np.isfinite(self.scale)):
            raise ValueError("transform scale factors must be strictly positive")

    @classmethod
    def identity(cls, dim=1):
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, values, dims_label=None):
        """Sample mean / sample std (ddof=1) of ``values`` along axis 0."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        shift = values.mean(axis=0)
        scale = values.std(axis=0, ddof=1)
        for d, s in enumerate(scale):
            if not s > 0:
                raise ZeroVariance(d if dims_label is None else dims_label[d])
        return cls(shift, scale)

    def apply(self, raw):
        return (np.asarray(raw, dtype=float) - self.shift) / self.scale

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift

    def invert_variance(self, var):
        return np.asarray(var, dtype=float) * self.scale**2

    @property
    def is_identity(self):
        return bool(np.all(self.shift == 0) and np.all(self.scale == 1))


@dataclass(frozen=True)
class TimePoint:
    timestamp: int
    features: tuple
    target: float


@dataclass(frozen=True)
class SplitSpec:
    train_size: int
    test_size: int
    offset: int = 0

    def __post_init__(self):
        if self.train_size < 1 or self.test_size < 0 or self.offset < 0:
            raise ValueError(f"invalid split {self}")

    def check(self, n):
        if self.offset + self.train_size + self.test_size > n:
            raise OutOfRange(
                f"split {self.train_size}+{self.test_size} at offset {self.offset} "
                f"exceeds dataset length {n}"
            )

    def label(self):
        return f"{self.train_size}/{self.test_size}@{self.offset}"


@dataclass(frozen=True)
class Dataset:
    """Immutable time-ordered regression data ``(timestamps, X, y)``."""

    timestamps: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_transform: AffineTransform = None
    target_transform: AffineTransform = None
    rated_power: float = DEFAULT_RATED_POWER
    feature_names: tuple = field(default=("time",))

    def __post_init__(self):
        ts = _frozen(self.timestamps, dtype=np.int64)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X = _frozen(X)
        y = _frozen(np.ravel(self.y))
        if not (len(ts) == X.shape[0] == y.shape[0]):
            raise ValueError("timestamps, X and y must have equal length")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise ValueError("non-finite values in dataset")
        ft = self.feature_transform or AffineTransform.identity(X.shape[1])
        tt = self.target_transform or AffineTransform.identity(1)
        if ft.shift.shape[0] != X.shape[1]:
            raise ValueError("feature transform dimension mismatch")
        names = tuple(self.feature_names)
        if len(names) != X.shape[1]:
            names = tuple(f"x{d}" for d in range(X.shape[1]))
        if not self.rated_power > 0:
            raise ValueError("rated_power must be positive")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_transform", ft)
        object.__setattr__(self, "target_transform", tt)
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return len(self.y)

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def raw_X(self):
        return self.feature_transform.invert(self.X)

    @property
    def raw_y(self):
        return self.target_transform.invert(self.y)

    @property
    def points(self):
        Xr, yr = self.raw_X, self.raw_y
        return [
            TimePoint(int(t), tuple(float(v) for v in x), float(v))
            for t, x, v in zip(self.timestamps, Xr, yr)
        ]

    @classmethod
    def from_points(cls, points: Sequence[TimePoint], feature_names=None,
                    rated_power=DEFAULT_RATED_POWER):
        ts = [p.timestamp for p in points]
        X = np.array([p.features for p in points], dtype=float).reshape(len(points), -1)
        y = [p.target for p in points]
        return cls(ts, X, y, rated_power=rated_power,
                   feature_names=feature_names or tuple(f"x{d}" for d in range(X.shape[1])))

    def slice(self, start, stop):
        """Contiguous block ``[start, stop)`` sharing this dataset's transforms."""
        return Dataset(self.timestamps[start:stop], self.X[start:stop], self.y[start:stop],
                       self.feature_transform, self.target_transform, self.rated_power,
                       self.feature_names)

    def with_transforms(self, feature_transform, target_transform):
        """Re-express the raw values of this dataset under new transforms."""
        return Dataset(self.timestamps,
                       feature_transform.apply(self.raw_X),
                       target_transform.apply(self.raw_y[:, None])[:, 0],
                       feature_transform, target_transform, self.rated_power,
                       self.feature_names)

    def raw(self):
        return self.with_transforms(AffineTransform.identity(self.dim),
                                    AffineTransform.identity(1))


def standardize(raw: Dataset) -> Dataset:
    """Fit mean-0 / std-1 transforms on all points of ``raw`` and apply them."""
    if len(raw) < 2:
        raise ValueError("standardize needs at least 2 points")
    ft = AffineTransform.fit(raw.raw_X, dims_label=raw.feature_names)
    tt = AffineTransform.fit(raw.raw_y, dims_label=("target",))
    return raw.with_transforms(ft, tt)


def split(data: Dataset, spec: SplitSpec):
    """Chronological train/test blocks; transforms are fitted on train only."""
    spec.check(len(data))
    a = spec.offset
    b = a + spec.train_size
    c = b + spec.test_size
    train = standardize(data.slice(a, b))
    test = data.slice(b, c).with_transforms(train.feature_transform, train.target_transform)
    return train, test


def make_dataset(timestamps, wind_speed, power, features=("time",),
                 rated_power=DEFAULT_RATED_POWER) -> Dataset:
    """Build a raw dataset from aligned series.

    ``time`` is exposed as hours since the first timestamp; after
    :func:`split` it becomes an affine image of the normalized index
    ``(t - train_start) / train_span``.
    """
    timestamps = np.asarray(timestamps, dtype=np.int64)
    cols = []
    for name in features:
        if name == "time":
            cols.append((timestamps - timestamps[0]) / SECONDS_PER_HOUR if len(timestamps)
                        else np.zeros(0))
        elif name == "wind_speed":
            cols.append(np.asarray(wind_speed, dtype=float))
        else:
            raise ValueError(f"unknown feature {name!r}; choose from {FEATURE_CHOICES}")
    if not cols:
        raise ValueError("at least one feature is required")
    X = np.column_stack(cols) if len(timestamps) else np.zeros((0, len(cols)))
    return Dataset(timestamps, X, power, rated_power=rated_power, feature_names=tuple(features))

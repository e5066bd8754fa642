"""Scoring: NLPD, RMSE, MAE, NMAPE, hourly lead-time windows and cumulative horizons.

NLPD uses the natural logarithm.  All inputs are expected in kW (kW^2 for
variances).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import DEFAULT_RATED_POWER
from .errors import EmptySet, NonPositiveRatedPower, NonPositiveVariance

LOG_2PI = math.log(2.0 * math.pi)
METRICS = ("nlpd", "rmse", "mae", "nmape")


@dataclass(frozen=True)
class ScoredSet:
    mean: np.ndarray
    variance: np.ndarray
    actual: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        arrs = {}
        for name in ("mean", "variance", "actual"):
            arrs[name] = np.asarray(getattr(self, name), dtype=float).ravel()
        ts = np.asarray(self.timestamps, dtype=np.int64).ravel()
        n = len(arrs["actual"])
        if any(len(a) != n for a in arrs.values()) or len(ts) != n:
            raise ValueError("ScoredSet fields must have equal lengths")
        if n > 1 and np.any(np.diff(ts) < 0):
            raise ValueError("ScoredSet timestamps must be sorted")
        for k, v in arrs.items():
            object.__setattr__(self, k, v)
        object.__setattr__(self, "timestamps", ts)

    @classmethod
    def from_prediction(cls, pred, actual, timestamps):
        return cls(pred.mean, pred.variance, actual, timestamps)

    def __len__(self):
        return len(self.actual)

    def subset(self, mask):
        return ScoredSet(self.mean[mask], self.variance[mask], self.actual[mask],
                         self.timestamps[mask])

    @property
    def residuals(self):
        return self.actual - self.mean


def nlpd_arrays(y, mean, var):
    y, mean, var = (np.asarray(a, dtype=float) for a in (y, mean, var))
    if np.any(~(var > 0)):
        raise NonPositiveVariance("predictive variances must be strictly positive")
    return float(np.mean(0.5 * LOG_2PI + 0.5 * np.log(var) + 0.5 * (y - mean) ** 2 / var))


def nlpd(s: ScoredSet) -> float:
    """Mean negative log Gaussian predictive density of the actuals."""
    if len(s) == 0:
        raise EmptySet("NLPD of an empty set")
    return nlpd_arrays(s.actual, s.mean, s.variance)


def rmse(s: ScoredSet) -> float:
    if len(s) == 0:
        raise EmptySet("RMSE of an empty set")
    r = s.residuals
    return float(np.sqrt(np.mean(r * r)))


def mae(s: ScoredSet) -> float:
    if len(s) == 0:
        raise EmptySet("MAE of an empty set")
    return float(np.mean(np.abs(s.residuals)))


def nmape(s: ScoredSet, rated_power=DEFAULT_RATED_POWER) -> float:
    """Mean absolute error as a percentage of rated power."""
    if not rated_power > 0:
        raise NonPositiveRatedPower(f"rated power must be positive, got {rated_power}")
    return mae(s) / rated_power * 100.0


@dataclass
class WindowRow:
    window: str
    lo_hours: float
    hi_hours: float
    n_points: int
    energy_kwh: Optional[float]
    nlpd: Optional[float]
    rmse_kw: Optional[float]
    mae_kw: Optional[float]
    nmape_pct: Optional[float]

    @property
    def empty(self):
        return self.n_points == 0


def _window_label(lo, hi):
    def fmt(v):
        return str(int(v)) if float(v).is_integer() else f"{v:g}"

    return f"({fmt(lo)}, {fmt(hi)}]"


def lead_hours(s: ScoredSet, train_end):
    return (s.timestamps - int(train_end)) / 3600.0


def score_rows(s: ScoredSet, rated_power=DEFAULT_RATED_POWER, interval_minutes=10.0):
    """``(energy_kwh, nlpd, rmse, mae, nmape)`` for a non-empty set."""
    energy = float(np.sum(s.actual) * interval_minutes / 60.0)
    return energy, nlpd(s), rmse(s), mae(s), nmape(s, rated_power)


def hourly_table(s: ScoredSet, train_end, horizon_hours=24, rated_power=DEFAULT_RATED_POWER,
                 interval_minutes=10.0, first_hour=0):
    """One row per lead-time window ``(h, h+1]`` for ``h = first_hour .. horizon-1``.

    Empty windows are kept with ``None`` metrics.
    """
    lead = lead_hours(s, train_end)
    rows = []
    for h in range(first_hour, horizon_hours):
        mask = (lead > h) & (lead <= h + 1)
        sub = s.subset(mask)
        label = _window_label(h, h + 1)
        if len(sub) == 0:
            rows.append(WindowRow(label, h, h + 1, 0, None, None, None, None, None))
            continue
        e, nl, rm, ma, nm = score_rows(sub, rated_power, interval_minutes)
        rows.append(WindowRow(label, h, h + 1, len(sub), e, nl, rm, ma, nm))
    return rows


@dataclass
class HorizonPoint:
    horizon_hours: float
    n_points: int
    rmse_kw: float
    nlpd: float
    mae_kw: float


def cumulative_curve(s: ScoredSet, train_end, step_hours=24.0):
    """Metrics over all points with lead time ``<= k * step`` for ``k = 1, 2, ...``."""
    if len(s) == 0:
        raise EmptySet("cumulative curve of an empty set")
    lead = lead_hours(s, train_end)
    k_max = max(1, int(math.ceil(lead.max() / step_hours - 1e-12)))
    out = []
    for k in range(1, k_max + 1):
        sub = s.subset(lead <= k * step_hours)
        if len(sub) == 0:
            continue
        out.append(HorizonPoint(k * step_hours, len(sub), rmse(sub), nlpd(sub), mae(sub)))
    return out


def mean_rows(tables: Sequence[Sequence[WindowRow]]):
    """Element-wise mean of several hourly tables with identical windows."""
    out = []
    for rows in zip(*tables):
        base = rows[0]
        vals = {}
        for k in ("nlpd", "rmse_kw", "mae_kw", "nmape_pct"):
            xs = [getattr(r, k) for r in rows if getattr(r, k) is not None]
            vals[k] = float(np.mean(xs)) if xs else None
        out.append(WindowRow(base.window, base.lo_hours, base.hi_hours, base.n_points,
                             base.energy_kwh, **vals))
    return out


def mean_curves(curves):
    out = []
    for pts in zip(*curves):
        out.append(HorizonPoint(pts[0].horizon_hours, pts[0].n_points,
                                float(np.mean([p.rmse_kw for p in pts])),
                                float(np.mean([p.nlpd for p in pts])),
                                float(np.mean([p.mae_kw for p in pts]))))
    return out


# --------------------------------------------------------------------------
# serialization

_ROW_FIELD = {"nlpd": "nlpd", "rmse": "rmse_kw", "mae": "mae_kw", "nmape": "nmape_pct"}


def _fmt(v):
    return "" if v is None else repr(float(v))


def _parse(v):
    return None if v == "" else float(v)


def _reader(text):
    """CSV reader over ``text`` ignoring ``#`` comment lines (manifest headers)."""
    return csv.reader(line for line in io.StringIO(text) if not line.startswith("#"))


@dataclass
class MetricReport:
    """Hourly rows for several kernels sharing the same windows.

    CSV columns: ``window, n_points, energy_kwh`` then ``<metric>_<kernel>``
    for metric in (nlpd, rmse, mae, nmape) and kernel in ``kernels`` order.
    """

    kernels: tuple
    rows: dict = field(default_factory=dict)  # kernel -> list[WindowRow]

    def columns(self):
        cols = ["window", "n_points", "energy_kwh"]
        for m in METRICS:
            cols += [f"{m}_{k}" for k in self.kernels]
        return cols

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        first = self.rows[self.kernels[0]]
        for i, base in enumerate(first):
            line = [base.window, base.n_points, _fmt(base.energy_kwh)]
            for m in METRICS:
                line += [_fmt(getattr(self.rows[k][i], _ROW_FIELD[m])) for k in self.kernels]
            w.writerow(line)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        reader = _reader(text)
        header = next(reader)
        kernels = tuple(c[len("nlpd_"):] for c in header if c.startswith("nlpd_"))
        rows = {k: [] for k in kernels}
        for line in reader:
            rec = dict(zip(header, line))
            lo, hi = (float(x) for x in rec["window"].strip("(]").split(","))
            for k in kernels:
                rows[k].append(WindowRow(
                    rec["window"], lo, hi, int(rec["n_points"]), _parse(rec["energy_kwh"]),
                    _parse(rec[f"nlpd_{k}"]), _parse(rec[f"rmse_{k}"]),
                    _parse(rec[f"mae_{k}"]), _parse(rec[f"nmape_{k}"])))
        return cls(kernels, rows)

    def to_json(self):
        return json.dumps({"kernels": list(self.kernels),
                           "rows": {k: [asdict(r) for r in v] for k, v in self.rows.items()}},
                          indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple(d["kernels"]),
                   {k: [WindowRow(**r) for r in v] for k, v in d["rows"].items()})

    def best_by_window(self, metric="nlpd"):
        out = []
        for i in range(len(self.rows[self.kernels[0]])):
            vals = {k: getattr(self.rows[k][i], _ROW_FIELD[metric]) for k in self.kernels}
            vals = {k: v for k, v in vals.items() if v is not None}
            out.append(min(vals, key=vals.get) if vals else None)
        return out


def curves_to_csv(curves: dict):
    """Cumulative-horizon CSV: ``horizon_hours, n_points`` then rmse/nlpd/mae per kernel."""
    kernels = list(curves)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["horizon_hours", "n_points"]
    for m in ("rmse", "nlpd", "mae"):
        header += [f"{m}_{k}" for k in kernels]
    w.writerow(header)
    for i, base in enumerate(curves[kernels[0]]):
        line = [_fmt(base.horizon_hours), base.n_points]
        for attr in ("rmse_kw", "nlpd", "mae_kw"):
            line += [_fmt(getattr(curves[k][i], attr)) for k in kernels]
        w.writerow(line)
    return buf.getvalue()


def curves_from_csv(text):
    reader = _reader(text)
    header = next(reader)
    kernels = [c[len("rmse_"):] for c in header if c.startswith("rmse_")]
    out = {k: [] for k in kernels}
    for line in reader:
        rec = dict(zip(header, line))
        for k in kernels:
            out[k].append(HorizonPoint(float(rec["horizon_hours"]), int(rec["n_points"]),
                                       float(rec[f"rmse_{k}"]), float(rec[f"nlpd_{k}"]),
                                       float(rec[f"mae_{k}"])))
    return out

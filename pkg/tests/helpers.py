"""Shared test data builders."""

import numpy as np

from windgp.dataset import Dataset, SplitSpec, split
from windgp.kernels import GsmLatents, KernelModel, LatentPrior, RbfParams, SmParams


def random_kernel(rng, family, X, noise=None, Q=None):
    """A valid random KernelModel of ``family`` on inputs ``X`` (N, D)."""
    D = X.shape[1]
    noise = float(rng.uniform(0.05, 0.5)) if noise is None else noise
    if family == "rbf":
        return KernelModel(RbfParams(rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.0, D)), noise)
    f_max = np.full(D, 2.0)
    if family == "sm":
        Q = Q or int(rng.integers(1, 4))
        p = SmParams(rng.uniform(0.2, 1.0, Q), rng.uniform(0.05, 1.9, (Q, D)),
                     rng.uniform(0.01, 0.5, (Q, D)), f_max)
        return KernelModel(p, noise)
    Q = Q or int(rng.integers(1, 3))
    N = X.shape[0]
    prior = LatentPrior.default(X, 0.5)

    def draw(scale, shift=0.0):
        # smooth latent vectors drawn from the latent prior
        out = np.empty((Q, D, N))
        for d in range(D):
            L = prior.factor("w", d)[0]
            out[:, d, :] = shift + scale * rng.standard_normal((Q, N)) @ L.T
        return out

    p = GsmLatents(prior, draw(0.3), draw(0.2, np.log(rng.uniform(0.4, 1.5))), draw(0.5), f_max)
    return KernelModel(p, noise)


def sine_data(n=40, d=1, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    t = 600 * np.arange(n)
    X = np.column_stack([np.arange(n, dtype=float)] + [rng.standard_normal(n) for _ in range(d - 1)])
    y = np.sin(2 * np.pi * 0.05 * X[:, 0]) + noise * rng.standard_normal(n)
    return Dataset(t, X, y)


def train_test(n_train=30, n_test=10, d=1, seed=0):
    return split(sine_data(n_train + n_test, d, seed), SplitSpec(n_train, n_test, 0))


def write_kelmarsh_fixture(root, n=300, events=(), seed=0, preamble=True):
    """SCADA and status files in the Kelmarsh export layout.

    ``events`` holds ``(start_step, end_step, status)`` triples on the
    10-minute grid.  Returns ``(scada_path, events_path)``.
    """
    from datetime import datetime, timedelta, timezone

    rng = np.random.default_rng(seed)
    t0 = datetime(2016, 1, 3, tzinfo=timezone.utc)

    def stamp(i):
        return (t0 + timedelta(minutes=10 * i)).strftime("%Y-%m-%d %H:%M:%S")

    wind = rng.uniform(3, 14, n)
    power = np.clip(2050 / (1 + np.exp(-(wind - 9))) + rng.normal(0, 40, n), 0, 2050)
    lines = ["# Kelmarsh export", "# Turbine: 1", ""] if preamble else []
    lines.append("# Date and time,Wind speed (m/s),Power (kW)")
    lines += [f"{stamp(i)},{wind[i]:.3f},{power[i]:.3f}" for i in range(n)]
    scada = root / "scada.csv"
    scada.write_text("\n".join(lines) + "\n", encoding="utf-8")
    ev = ["Timestamp start,Timestamp end,Status,IEC category"]
    ev += [f"{stamp(a)},{stamp(b)},{status},x" for a, b, status in events]
    events_path = root / "events.csv"
    events_path.write_text("\n".join(ev) + "\n", encoding="utf-8")
    return scada, events_path

"""Training objectives, gradients, ADAM and the multi-restart protocol.

Sign convention: every objective here is *minimized*.  ``NllObjective`` is the
negative log marginal likelihood; ``MapObjective`` is the negative
log-posterior of the GSM model (likelihood plus latent-function priors).

GSM latent vectors are optimized in whitened coordinates: for a latent vector
``u`` with prior ``N(0, K) = N(0, L L^T)`` the optimizer sees ``v = L^{-1} u``.
The prior term is then ``0.5 |v|^2 + 0.5 log|2 pi K|``, numerically identical
to ``-log N(u | 0, K)``, but far better conditioned for a diagonal optimizer.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .dataset import Dataset
from .errors import (
    AllRestartsFailed,
    DivergedToInfinity,
    NonFiniteGradient,
    SingularGram,
    WindGPError,
)
from .gp import LOG_2PI, fit_xy, predict
from .kernels import (
    TWO_PI,
    GsmLatents,
    KernelModel,
    LagGrid,
    LatentPrior,
    RbfParams,
    SmParams,
    gsm_lengthscale_to_sm_variance,
    input_range,
    jittered_cholesky,
    logistic,
    logit,
    nyquist_frequency,
    phase_cos_sin,
    safe_exp,
)

try:
    from . import _fused
except ImportError:  # numba unavailable: vectorized numpy path
    _fused = None

log = logging.getLogger(__name__)

FAMILIES = ("rbf", "sm", "gsm")
DEFAULT_Q = {"sm": 3, "gsm": 2}


# --------------------------------------------------------------------------
# flat parameter vectors


@dataclass(frozen=True)
class Segment:
    name: str
    start: int
    stop: int
    transform: str  # "log", "scaled-logit", "whitened", "identity"
    shape: tuple

    @property
    def slice(self):
        return slice(self.start, self.stop)


class ParamSpace:
    """Layout of the unconstrained optimizer vector for one kernel family.

    Parameters
    ----------
    family : {"rbf", "sm", "gsm"}
    dim : int
        Input dimension D.
    Q : int, optional
        Mixture components (SM, GSM).
    f_max : array_like, optional
        Per-dimension upper bound on spectral means (SM, GSM).
    prior : LatentPrior, optional
        Required for GSM; fixes the anchor set N.
    whiten : bool
        GSM only: optimize whitened latent coordinates.
    """

    def __init__(self, family, dim, Q=None, f_max=None, prior=None, whiten=True):
        if family not in FAMILIES:
            raise ValueError(f"unknown kernel family {family!r}")
        self.family = family
        self.dim = int(dim)
        self.Q = int(Q if Q is not None else DEFAULT_Q.get(family, 0))
        self.f_max = None if f_max is None else np.broadcast_to(
            np.asarray(f_max, dtype=float), (self.dim,)).copy()
        self.prior = prior
        self.whiten = whiten
        D, Q = self.dim, self.Q
        if family == "rbf":
            shapes = [("log_signal_variance", "log", ()), ("log_lengthscales", "log", (D,))]
        elif family == "sm":
            if self.f_max is None:
                raise ValueError("SM parameter space needs f_max")
            shapes = [("log_weights", "log", (Q,)), ("logit_means", "scaled-logit", (Q, D)),
                      ("log_variances", "log", (Q, D))]
        else:
            if prior is None or self.f_max is None:
                raise ValueError("GSM parameter space needs a latent prior and f_max")
            if prior.dim != D:
                raise ValueError("latent prior dimension mismatch")
            N = prior.n
            t = "whitened" if whiten else "identity"
            shapes = [("log_w", t, (Q, D, N)), ("log_l", t, (Q, D, N)),
                      ("logit_mu", t, (Q, D, N))]
        shapes.append(("log_noise_variance", "log", ()))
        segs = []
        pos = 0
        for name, tr, shape in shapes:
            n = int(np.prod(shape)) if shape else 1
            segs.append(Segment(name, pos, pos + n, tr, shape))
            pos += n
        self.layout = tuple(segs)
        self.size = pos

    def __repr__(self):
        return f"ParamSpace({self.family}, D={self.dim}, Q={self.Q}, size={self.size})"

    def segment(self, name):
        for s in self.layout:
            if s.name == name:
                return s
        raise KeyError(name)

    def _get(self, values, name):
        s = self.segment(name)
        v = values[s.slice]
        return v.reshape(s.shape) if s.shape else float(v[0])

    # latent (un)whitening, per kind and dimension
    def _latent_from_values(self, values, name, kind):
        raw = self._get(values, name)
        if not self.whiten:
            return raw
        out = np.empty_like(raw)
        for d in range(self.dim):
            L, _, _ = self.prior.factor(kind, d)
            out[:, d, :] = raw[:, d, :] @ L.T
        return out

    def _latent_to_values(self, u, kind):
        if not self.whiten:
            return np.asarray(u, dtype=float)
        out = np.empty_like(u, dtype=float)
        for d in range(self.dim):
            L, _, _ = self.prior.factor(kind, d)
            out[:, d, :] = sla.solve_triangular(L, u[:, d, :].T, lower=True,
                                                check_finite=False).T
        return out

    def decode(self, values) -> KernelModel:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.size,):
            raise ValueError(f"expected {self.size} values, got {values.shape}")
        noise = math.exp(self._get(values, "log_noise_variance"))
        if self.family == "rbf":
            p = RbfParams(math.exp(self._get(values, "log_signal_variance")),
                          np.exp(self._get(values, "log_lengthscales")))
        elif self.family == "sm":
            p = SmParams(np.exp(self._get(values, "log_weights")),
                         self.f_max * logistic(self._get(values, "logit_means")),
                         np.exp(self._get(values, "log_variances")), self.f_max)
        else:
            p = GsmLatents(self.prior,
                           self._latent_from_values(values, "log_w", "w"),
                           self._latent_from_values(values, "log_l", "l"),
                           self._latent_from_values(values, "logit_mu", "mu"),
                           self.f_max)
        return KernelModel(p, noise)

    def encode(self, kernel: KernelModel) -> np.ndarray:
        if kernel.family != self.family:
            raise ValueError(f"kernel family {kernel.family} != space family {self.family}")
        out = np.empty(self.size)
        p = kernel.params

        def put(name, v):
            out[self.segment(name).slice] = np.ravel(v)

        if self.family == "rbf":
            put("log_signal_variance", math.log(p.signal_variance))
            put("log_lengthscales", np.log(p.lengthscales))
        elif self.family == "sm":
            put("log_weights", np.log(p.weights))
            put("logit_means", logit(p.means / self.f_max))
            put("log_variances", np.log(p.variances))
        else:
            put("log_w", self._latent_to_values(p.log_w, "w"))
            put("log_l", self._latent_to_values(p.log_l, "l"))
            put("logit_mu", self._latent_to_values(p.logit_mu, "mu"))
        put("log_noise_variance", math.log(kernel.noise_variance))
        return out

    @property
    def n_free(self):
        """True number of optimized scalars."""
        return self.size

    @property
    def table_count(self):
        """Parameter count in the reporting convention of the scenario table.

        RBF: signal variance + D lengthscales + noise.  SM: Q * (1 + 2D) + noise.
        GSM: two summary scalars per latent function (3 Q D functions) + noise.
        """
        D, Q = self.dim, self.Q
        if self.family == "rbf":
            return D + 2
        if self.family == "sm":
            return Q * (1 + 2 * D) + 1
        return 2 * 3 * Q * D + 1


@dataclass(frozen=True)
class FlatParams:
    values: np.ndarray
    space: ParamSpace

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.space.size,):
            raise ValueError("values do not match the parameter layout")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def decode(self) -> KernelModel:
        return self.space.decode(self.values)

    @classmethod
    def encode(cls, kernel, space):
        return cls(space.encode(kernel), space)

    def with_values(self, values):
        return FlatParams(values, self.space)


def make_space(family, train: Dataset, Q=None, f_max=None, latent_lengthscale_fraction=0.2,
               latent_variance=1.0, whiten=True) -> ParamSpace:
    """Parameter space for ``family`` fitted to the standardized training inputs."""
    X = train.X
    if f_max is None:
        f_max = nyquist_frequency(X)
    prior = None
    if family == "gsm":
        prior = LatentPrior.default(X, latent_lengthscale_fraction, latent_variance)
    if family == "rbf":
        return ParamSpace("rbf", X.shape[1])
    return ParamSpace(family, X.shape[1], Q, f_max, prior, whiten)


# --------------------------------------------------------------------------
# objectives


def _nll_core(K, noise, y, need_grad):
    """NLL of ``y`` under ``N(0, K + noise I)`` and (optionally) ``dNLL/dK``.

    ``K`` is overwritten.
    """
    n = len(y)
    K.flat[::n + 1] += noise
    L, _ = jittered_cholesky(K)
    alpha = sla.cho_solve((L, True), y, check_finite=False)
    nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * LOG_2PI
    if not need_grad:
        return nll, None
    Ai, info = sla.lapack.dpotri(L, lower=1)
    if info != 0:
        raise SingularGram("dpotri failed")
    if _fused is not None:
        return nll, _fused.half_inverse_minus_outer(Ai, alpha)
    Ai = np.tril(Ai)
    Ai += np.tril(Ai, -1).T
    Ai -= np.outer(alpha, alpha)
    Ai *= 0.5
    return nll, Ai


def _gsm_forward(X, dec, keep=False):
    """Per-dimension GSM factors, their product and (optionally) cached terms."""
    Q, D, _ = dec.w.shape
    mats = []
    cache = {}
    for d in range(D):
        x = X[:, d]
        diff2 = (x[:, None] - x[None, :]) ** 2
        Kd = np.zeros_like(diff2)
        for q in range(Q):
            w, l, mu = dec.w[q, d], dec.l[q, d], dec.mu[q, d]
            l2 = l * l
            S = l2[:, None] + l2[None, :]
            G = np.sqrt(2.0 * np.outer(l, l) / S)
            G *= safe_exp(-diff2 / S)
            ang = TWO_PI * mu * x
            a, b = w * np.cos(ang), w * np.sin(ang)
            # w_i w_j cos(ang_i - ang_j) and w_i w_j sin(ang_i - ang_j)
            T = G * (np.outer(a, a) + np.outer(b, b))
            Kd += T
            if keep:
                cache[(q, d)] = (T, G * (np.outer(b, a) - np.outer(a, b)), S)
        if keep:
            cache[("diff2", d)] = diff2
        mats.append(Kd)
    K = mats[0].copy()
    for Kd in mats[1:]:
        K *= Kd
    return mats, K, cache


def _gsm_backward(X, dec, latents, mats, cache, W):
    """Gradients of ``sum(W * K)`` w.r.t. the unconstrained latent vectors.

    Each latent value ``u_i`` enters row and column ``i`` symmetrically, so the
    gradient is ``2 * sum_k W_ik dK_ik/du_i``.  Returns (Q, D, N) arrays for
    ``log w``, ``log l`` and ``logit mu``.
    """
    Q, D, N = dec.w.shape
    gw = np.empty((Q, D, N))
    gl = np.empty((Q, D, N))
    gm = np.empty((Q, D, N))
    for d in range(D):
        if D > 1:
            P = np.ones_like(W)
            for dd in range(D):
                if dd != d:
                    P *= mats[dd]
            WP = W * P
        else:
            WP = W
        x = X[:, d]
        diff2 = cache[("diff2", d)]
        for q in range(Q):
            T, TS, S = cache[(q, d)]
            l2 = dec.l[q, d] ** 2
            BC = WP * T
            gw[q, d] = 2.0 * BC.sum(axis=1)
            # d log G / d log l_i = 1/2 - l_i^2 / S + 2 diff2 l_i^2 / S^2
            R = l2[:, None] / S
            fac = 0.5 - R + 2.0 * diff2 * R / S
            gl[q, d] = 2.0 * (BC * fac).sum(axis=1)
            sig = logistic(latents.logit_mu[q, d])
            dmu = latents.f_max[d] * sig * (1.0 - sig)
            gm[q, d] = -2.0 * (WP * TS).sum(axis=1) * TWO_PI * x * dmu
    return gw, gl, gm


def _other_dims(mats, W, d):
    if len(mats) == 1:
        return W
    P = W.copy()
    for dd, M in enumerate(mats):
        if dd != d:
            P *= M
    return P


def _phases(X, dec):
    ang = TWO_PI * dec.mu * X.T[None, :, :]
    return dec.w * np.cos(ang), dec.w * np.sin(ang)


def _gsm_forward_fused(X, dec):
    a, b = _phases(X, dec)
    mats = [_fused.gsm_gram_dim(np.ascontiguousarray(X[:, d]), np.ascontiguousarray(dec.l[:, d]),
                                np.ascontiguousarray(a[:, d]), np.ascontiguousarray(b[:, d]))
            for d in range(X.shape[1])]
    K = mats[0].copy()
    for M in mats[1:]:
        K *= M
    return mats, K, (a, b)


def _gsm_backward_fused(X, dec, latents, mats, ab, W):
    a, b = ab
    Q, D, N = dec.w.shape
    gw = np.empty((Q, D, N))
    gl = np.empty((Q, D, N))
    gm = np.empty((Q, D, N))
    for d in range(D):
        x = np.ascontiguousarray(X[:, d])
        WP = _other_dims(mats, W, d)
        gw[:, d], gl[:, d], gs = _fused.gsm_grad_dim(
            x, np.ascontiguousarray(dec.l[:, d]), np.ascontiguousarray(a[:, d]),
            np.ascontiguousarray(b[:, d]), WP)
        sig = logistic(latents.logit_mu[:, d])
        gm[:, d] = -2.0 * gs * TWO_PI * x * latents.f_max[d] * sig * (1.0 - sig)
    return gw, gl, gm


class Objective:
    """Base class: ``f(values)`` plus ``value_and_grad(values)``.

    Singular Gram matrices map to ``+inf``.
    """

    analytic = True
    fused = _fused is not None

    def __init__(self, space: ParamSpace, X, y):
        self.space = space
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(y, dtype=float).ravel()

    @classmethod
    def for_dataset(cls, space, train: Dataset):
        return cls(space, train.X, train.y)

    def __call__(self, values):
        try:
            return float(self._evaluate(np.asarray(values, dtype=float), False)[0])
        except (SingularGram, FloatingPointError, ValueError, np.linalg.LinAlgError):
            return math.inf

    def value_and_grad(self, values):
        try:
            f, g = self._evaluate(np.asarray(values, dtype=float), True)
        except (SingularGram, FloatingPointError, ValueError, np.linalg.LinAlgError):
            return math.inf, None
        return float(f), g

    def _likelihood(self, values, need_grad):
        sp = self.space
        kernel = sp.decode(values)
        noise = kernel.noise_variance
        X, y = self.X, self.y
        grad = np.zeros(sp.size) if need_grad else None
        p = kernel.params
        if sp.family == "gsm":
            dec = p.decode()
            if self.fused:
                mats, K, cache = _gsm_forward_fused(X, dec)
            else:
                mats, K, cache = _gsm_forward(X, dec, keep=need_grad)
            nll, W = _nll_core(K, noise, y, need_grad)
            if need_grad:
                backward = _gsm_backward_fused if self.fused else _gsm_backward
                gw, gl, gm = backward(X, dec, p, mats, cache, W)
                for name, kind, g in (("log_w", "w", gw), ("log_l", "l", gl),
                                      ("logit_mu", "mu", gm)):
                    if sp.whiten:
                        g = np.stack([g[:, d, :] @ sp.prior.factor(kind, d)[0]
                                      for d in range(sp.dim)], axis=1)
                    grad[sp.segment(name).slice] = g.ravel()
        else:
            grid = self.grid
            if grid is not None:
                taus = [grid.lags]
            else:
                taus = [X[:, d][:, None] - X[:, d][None, :] for d in range(sp.dim)]
            parts = self._stationary_parts(p, values, taus, grid)
            kvals = sum(parts["value"])
            K = grid.expand(kvals) if grid is not None else kvals
            nll, W = _nll_core(K, noise, y, need_grad)
            if need_grad:
                if grid is not None:
                    ws = grid.lag_sums(W)

                    def contract(M):
                        return ws @ M
                else:
                    def contract(M):
                        return np.sum(W * M)

                for name, mats in parts["grads"].items():
                    grad[sp.segment(name).slice] = [contract(M) for M in mats]
        if need_grad:
            grad[sp.segment("log_noise_variance").slice] = noise * np.trace(W)
        return nll, grad, kernel

    @cached_property
    def grid(self):
        if self.space.family == "gsm" or self.X.shape[1] != 1:
            return None
        return LagGrid.detect(self.X[:, 0])

    def _stationary_parts(self, p, values, taus, grid):
        """Kernel terms and their parameter derivatives on lags ``taus``.

        With a lag grid ``taus`` holds the single vector of lag values;
        otherwise one pairwise-difference matrix per dimension.
        """
        sp = self.space
        if sp.family == "rbf":
            r2 = [t * t for t in taus]
            Kf = p.signal_variance * safe_exp(
                -0.5 * sum(r / ls**2 for r, ls in zip(r2, p.lengthscales)))
            return {"value": [Kf], "grads": {
                "log_signal_variance": [Kf],
                "log_lengthscales": [Kf * r / ls**2 for r, ls in zip(r2, p.lengthscales)],
            }}
        z = sp._get(values, "logit_means")
        sig = logistic(z)
        dmu = sp.f_max[None, :] * sig * (1.0 - sig)
        vals, gw, gmu, gv = [], [], [], []
        for q in range(p.Q):
            expo = sum(t * t * p.variances[q, d] for d, t in enumerate(taus))
            E = safe_exp(-2.0 * np.pi**2 * expo)
            if grid is not None:
                ang = TWO_PI * p.means[q, 0] * taus[0]
                cos, sin = np.cos(ang), np.sin(ang)
            else:
                a = TWO_PI * (self.X @ p.means[q])
                cos, sin = phase_cos_sin(a, a)
            T = p.weights[q] * cos * E
            TS = -p.weights[q] * sin * E
            vals.append(T)
            gw.append(T)
            for d, t in enumerate(taus):
                gmu.append(TS * t * (TWO_PI * dmu[q, d]))
                gv.append(T * (t * t) * (-2.0 * np.pi**2 * p.variances[q, d]))
        return {"value": vals, "grads": {"log_weights": gw, "logit_means": gmu,
                                          "log_variances": gv}}

    def _evaluate(self, values, need_grad):
        nll, grad, _ = self._likelihood(values, need_grad)
        return nll, grad


class NllObjective(Objective):
    """Negative log marginal likelihood ``-log p(y | X, theta)``."""


class MapObjective(Objective):
    """Negative log-posterior of the GSM model.

    ``-[log N(y | 0, K + s^2 I) + sum_{q,d} log N(u_qd | 0, K_prior)]`` over the
    unconstrained latent vectors ``u`` (``log w``, ``log l``, ``logit mu``).
    """

    def __init__(self, space, X, y):
        if space.family != "gsm":
            raise ValueError("MAP objective is defined for the GSM family")
        super().__init__(space, X, y)

    def prior_term(self, values, need_grad=False):
        sp = self.space
        total = 0.0
        grad = np.zeros(sp.size) if need_grad else None
        N = sp.prior.n
        for name, kind in (("log_w", "w"), ("log_l", "l"), ("logit_mu", "mu")):
            raw = sp._get(values, name)
            g = np.empty_like(raw) if need_grad else None
            for d in range(sp.dim):
                L, _, logdet = sp.prior.factor(kind, d)
                const = 0.5 * logdet + 0.5 * N * LOG_2PI
                if sp.whiten:
                    v = raw[:, d, :]
                    total += 0.5 * np.sum(v * v) + sp.Q * const
                    if need_grad:
                        g[:, d, :] = v
                else:
                    U = raw[:, d, :].T  # (N, Q)
                    Z = sla.solve_triangular(L, U, lower=True, check_finite=False)
                    total += 0.5 * np.sum(Z * Z) + sp.Q * const
                    if need_grad:
                        g[:, d, :] = sla.cho_solve((L, True), U, check_finite=False).T
            if need_grad:
                grad[sp.segment(name).slice] = g.ravel()
        return total, grad

    def _evaluate(self, values, need_grad):
        nll, g1, _ = self._likelihood(values, need_grad)
        pr, g2 = self.prior_term(values, need_grad)
        return nll + pr, (g1 + g2 if need_grad else None)


def objective_for(space: ParamSpace, train: Dataset) -> Objective:
    """MAP for GSM, marginal likelihood for the stationary families."""
    cls = MapObjective if space.family == "gsm" else NllObjective
    return cls.for_dataset(space, train)


def nll_objective(params: FlatParams, train: Dataset, kernel_family=None) -> float:
    if kernel_family is not None and kernel_family != params.space.family:
        raise ValueError("kernel_family does not match the parameter layout")
    return NllObjective.for_dataset(params.space, train)(params.values)


def map_objective(params: FlatParams, train: Dataset) -> float:
    return MapObjective.for_dataset(params.space, train)(params.values)


def finite_difference_gradient(f, x, rel_step=1e-5):
    """Central differences with step ``rel_step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def gradient(objective: Callable, params, mode="auto"):
    """Gradient of ``objective`` at ``params``; returns ``(grad, mode_used)``.

    Objectives exposing ``value_and_grad`` get analytic gradients unless
    ``mode="finite-difference"``; anything else falls back to central
    differences.
    """
    x = params.values if isinstance(params, FlatParams) else np.asarray(params, dtype=float)
    if mode not in ("auto", "analytic", "finite-difference"):
        raise ValueError(mode)
    g = None
    used = "finite-difference"
    if mode != "finite-difference" and hasattr(objective, "value_and_grad"):
        _, g = objective.value_and_grad(x)
        used = "analytic"
    if g is None:
        if mode == "analytic":
            raise NonFiniteGradient("analytic gradient unavailable at this point")
        g = finite_difference_gradient(objective, x)
        used = "finite-difference"
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient has non-finite components")
    return g, used


# --------------------------------------------------------------------------
# ADAM


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iters: int = 2000
    rel_tol: float = 1e-6
    patience: int = 50
    gradient_mode: str = "analytic"
    checkpoint_every: int = 100

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.gradient_mode not in ("analytic", "finite-difference"):
            raise ValueError("gradient_mode must be 'analytic' or 'finite-difference'")


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, params):
        params = np.asarray(params, dtype=float)
        return cls(params.copy(), np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(state: AdamState, grad, cfg: OptimConfig, lr_scale=1.0) -> AdamState:
    """One bias-corrected ADAM update."""
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (grad * grad)
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    step = cfg.learning_rate * lr_scale * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return AdamState(state.params - step, m, v, t)


@dataclass
class OptimResult:
    params: np.ndarray
    value: float
    trace: list
    iterations: int
    converged: bool


def _save_checkpoint(path, state, best_x, best_f, trace, it, calm):
    tmp = Path(str(path) + ".tmp.npz")
    np.savez(tmp, params=state.params, m=state.m, v=state.v, t=state.t,
             best_x=best_x, best_f=best_f, trace=np.asarray(trace), it=it, calm=calm)
    os.replace(tmp, path)


def optimize(objective, init, cfg: OptimConfig = OptimConfig(), checkpoint=None,
             progress: Optional[Callable] = None) -> OptimResult:
    """Minimize ``objective`` with ADAM from ``init``; returns the best-seen point.

    A non-finite objective after a step undoes that step and retries it at half
    the learning rate; ten consecutive non-finite evaluations raise
    :class:`DivergedToInfinity`.  Convergence: relative change below
    ``cfg.rel_tol`` for ``cfg.patience`` consecutive iterations.
    """
    x0 = init.values if isinstance(init, FlatParams) else np.asarray(init, dtype=float)

    def evaluate(x):
        if cfg.gradient_mode == "analytic" and hasattr(objective, "value_and_grad"):
            f, g = objective.value_and_grad(x)
        else:
            f = objective(x)
            g = finite_difference_gradient(objective, x) if math.isfinite(f) else None
        if g is not None and not np.all(np.isfinite(g)):
            f, g = math.inf, None
        return f, g

    state = AdamState.zeros(x0)
    f, g = evaluate(state.params)
    if not math.isfinite(f):
        raise DivergedToInfinity("objective is not finite at the initial point")
    best_x, best_f = state.params.copy(), f
    trace = [f]
    start = 0
    calm = 0
    if checkpoint is not None and Path(checkpoint).exists():
        ck = np.load(checkpoint)
        state = AdamState(ck["params"], ck["m"], ck["v"], int(ck["t"]))
        best_x, best_f = ck["best_x"], float(ck["best_f"])
        trace = list(ck["trace"])
        start = int(ck["it"])
        calm = int(ck["calm"])
        f, g = evaluate(state.params)
    converged = False
    it = start
    while it < cfg.max_iters:
        prev_state, prev_f, prev_g = state, f, g
        state = adam_step(prev_state, prev_g, cfg)
        f, g = evaluate(state.params)
        it += 1
        scale = 1.0
        bad = 0
        while not math.isfinite(f):
            trace.append(math.inf)
            bad += 1
            if bad >= 10:
                raise DivergedToInfinity("objective non-finite for 10 consecutive iterations")
            scale *= 0.5
            state = adam_step(prev_state, prev_g, cfg, lr_scale=scale)
            f, g = evaluate(state.params)
            it += 1
        trace.append(f)
        if f < best_f:
            best_x, best_f = state.params.copy(), f
        if abs(f - prev_f) <= cfg.rel_tol * max(abs(prev_f), 1e-12):
            calm += 1
            if calm >= cfg.patience:
                converged = True
                break
        else:
            calm = 0
        if progress is not None:
            progress(it, f, best_f)
        if checkpoint is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            _save_checkpoint(checkpoint, state, best_x, best_f, trace, it, calm)
    return OptimResult(best_x, best_f, trace, it, converged)


# --------------------------------------------------------------------------
# initialization and restarts


def _jitter(rng, size=None, sigma=0.3):
    return np.exp(sigma * rng.standard_normal(size))


def initialize(space: ParamSpace, train: Dataset, rng_seed) -> FlatParams:
    """Random starting point for ``space.family`` drawn from ``rng_seed``."""
    rng = np.random.default_rng(rng_seed)
    X = train.X
    var = float(np.var(train.y, ddof=1)) if len(train) > 1 else 1.0
    var = var if var > 0 else 1.0
    rng_x = input_range(X)
    D, Q = space.dim, space.Q
    if space.family == "rbf":
        p = RbfParams(var * _jitter(rng), 0.5 * rng_x * _jitter(rng, D))
        noise = 0.1 * var * _jitter(rng)
        return FlatParams.encode(KernelModel(p, noise), space)

    f_max = space.f_max
    means = rng.uniform(0.0, 1.0, size=(Q, D)) * f_max
    means = np.clip(means, 1e-6 * f_max, (1 - 1e-6) * f_max)
    frac = np.exp(rng.uniform(np.log(0.05), np.log(0.5), size=(Q, D)))
    lengthscales = frac * rng_x
    if space.family == "sm":
        p = SmParams(var / Q * _jitter(rng, Q), means,
                     gsm_lengthscale_to_sm_variance(lengthscales), f_max)
        noise = 0.1 * var * _jitter(rng)
        return FlatParams.encode(KernelModel(p, noise), space)

    # GSM: constant latents at SM-style values; per-dimension weights chosen
    # so the zero-lag variance product over dimensions equals the target variance.
    w_sm = (var ** (1.0 / D) / Q) * _jitter(rng, (Q, D))
    consts = {
        "w": 0.5 * np.log(w_sm),
        "l": np.log(lengthscales),
        "mu": logit(means / f_max),
    }
    N = space.prior.n
    values = np.empty(space.size)
    for name, kind in (("log_w", "w"), ("log_l", "l"), ("logit_mu", "mu")):
        seg = space.segment(name)
        arr = np.empty((Q, D, N))
        for q in range(Q):
            for d in range(D):
                target = np.full(N, consts[kind][q, d])
                arr[q, d] = _whitened_constant(space, kind, d, target)
        arr += 0.05 * rng.standard_normal(arr.shape)
        if not space.whiten:
            arr = np.stack([arr[:, d, :] @ space.prior.factor(kind, d)[0].T
                            for d in range(D)], axis=1)
        values[seg.slice] = arr.ravel()
    noise = 0.1 * var * _jitter(rng)
    values[space.segment("log_noise_variance").slice] = math.log(noise)
    return FlatParams(values, space)


def _whitened_constant(space, kind, d, target, ridge=1e-6):
    """Small-norm ``v`` with ``L v ~= target`` (ridge-regularized whitening)."""
    L, _, _ = space.prior.factor(kind, d)
    K = L @ L.T
    a = np.linalg.solve(K + ridge * np.eye(len(target)), target)
    return L.T @ a


@dataclass
class RestartResult:
    index: int
    seed: int
    objective: float = math.inf
    iterations: int = 0
    converged: bool = False
    test_nlpd: Optional[float] = None
    params: Optional[np.ndarray] = None
    failed: bool = False
    error: str = ""
    trace: list = field(default_factory=list)


@dataclass
class RestartReport:
    family: str
    restarts: list
    space: ParamSpace = None

    @property
    def completed(self):
        return [r for r in self.restarts if not r.failed]

    @property
    def mean_nlpd(self):
        vals = [r.test_nlpd for r in self.completed if r.test_nlpd is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def best_index(self):
        done = self.completed
        return min(done, key=lambda r: (r.objective, r.index)).index if done else None

    def best(self):
        return self.restarts[self.best_index]

    def model(self, index=None):
        r = self.restarts[self.best_index if index is None else index]
        return self.space.decode(r.params)


def _run_restart(family, space, train, test, index, seed, cfg, include_noise, checkpoint_dir):
    from .metrics import nlpd_arrays

    res = RestartResult(index, seed)
    try:
        init = initialize(space, train, seed)
        obj = objective_for(space, train)
        ck = None
        if checkpoint_dir is not None:
            ck = Path(checkpoint_dir) / f"{family}_seed{seed}.npz"
        def progress(it, f, best):
            log.debug("%s restart %d iter %d: objective %.6g (best %.6g)", family, index, it, f, best)

        out = optimize(obj, init, cfg, checkpoint=ck, progress=progress)
        if ck is not None and ck.exists():
            ck.unlink()
        res.objective = out.value
        res.iterations = out.iterations
        res.converged = out.converged
        res.params = out.params
        res.trace = out.trace
        if test is not None and len(test):
            model = fit_xy(train.X, train.y, space.decode(out.params), train.target_transform)
            pred = predict(model, test.X, include_noise=include_noise)
            res.test_nlpd = nlpd_arrays(test.raw_y, pred.mean, pred.variance)
    except (DivergedToInfinity, SingularGram, WindGPError, FloatingPointError) as exc:
        log.warning("restart %d (seed %d, %s) failed: %s", index, seed, family, exc)
        res.failed = True
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def multi_restart(family, train: Dataset, test: Optional[Dataset] = None, n_restarts=10,
                  base_seed=0, cfg: OptimConfig = OptimConfig(), Q=None, space=None,
                  include_noise=True, n_jobs=1, checkpoint_dir=None) -> RestartReport:
    """Run ``n_restarts`` independent initialize/optimize/score cycles.

    Restart ``r`` uses seed ``base_seed + r``.  Failed restarts are excluded from
    the mean NLPD; if every restart fails, :class:`AllRestartsFailed` is raised.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    space = space or make_space(family, train, Q=Q)
    args = [(family, space, train, test, r, base_seed + r, cfg, include_noise, checkpoint_dir)
            for r in range(n_restarts)]
    if n_jobs == 1:
        results = [_run_restart(*a) for a in args]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_run_restart)(*a) for a in args)
    results.sort(key=lambda r: r.index)
    report = RestartReport(family, results, space)
    if not report.completed:
        raise AllRestartsFailed(f"all {n_restarts} {family} restarts failed")
    return report

"""Covariance functions: RBF, spectral mixture (SM), Gibbs and generalized SM (GSM).

GSM hyperparameters are input-dependent functions ``w_q(x)``, ``l_q(x)``,
``mu_q(x)`` per input dimension, stored as their values at the training inputs
("anchors") on unconstrained scales (``log w``, ``log l``, ``logit mu``).
Each latent function has a zero-mean unit-variance RBF GP prior over the
coordinate of its own dimension.

Matching GSM with constant latents against SM in one dimension gives
``w_sm = w_gsm**2`` and ``exp(-tau**2 / (2 l**2)) == exp(-2 pi**2 tau**2 v)``,
i.e. ``l = GSM_LENGTHSCALE_CONSTANT / sqrt(v)`` with the constant ``1 / (2 pi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    IllegalNoise,
    NonPositiveLatent,
    NonPositiveLengthscale,
    SingularGram,
    SingularLatentGram,
)

TWO_PI = 2.0 * np.pi
GSM_LENGTHSCALE_CONSTANT = 1.0 / TWO_PI
JITTER_START = 1e-8
JITTER_MAX = 1e-4
LATENT_PRIOR_LENGTHSCALE_FRACTION = 0.2


def sm_variance_to_gsm_lengthscale(v):
    return GSM_LENGTHSCALE_CONSTANT / np.sqrt(v)


def gsm_lengthscale_to_sm_variance(l):
    return (GSM_LENGTHSCALE_CONSTANT / np.asarray(l)) ** 2


def logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def jittered_cholesky(K, allow_jitter=True, error=SingularGram):
    """Lower Cholesky factor of ``K``, escalating diagonal jitter on failure.

    The first attempt is jitter-free.  Then jitter runs from 1e-8 to 1e-4 times
    the mean diagonal in factors of ten.  Returns ``(L, jitter)``.
    """
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise error("non-finite Gram matrix")
    scale = float(np.mean(np.diag(K))) if K.size else 1.0
    if not scale > 0:
        scale = 1.0
    levels = [0.0]
    if allow_jitter:
        j = JITTER_START
        while j <= JITTER_MAX * (1 + 1e-9):
            levels.append(j * scale)
            j *= 10.0
    n = K.shape[0]
    for jitter in levels:
        A = K if jitter == 0.0 else K + jitter * np.eye(n)
        L, info = sla.lapack.dpotrf(A, lower=1, clean=1)
        if info == 0:
            return L, jitter
    raise error(f"Cholesky failed up to jitter {levels[-1]:.3g}")


def nyquist_frequency(X):
    """Per-dimension ``0.5 / median spacing`` of the sorted distinct inputs."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    out = np.empty(X.shape[1])
    for d in range(X.shape[1]):
        u = np.unique(X[:, d])
        gaps = np.diff(u)
        gaps = gaps[gaps > 0]
        out[d] = 0.5 / np.median(gaps) if len(gaps) else 0.5
    return out


def input_range(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    r = X.max(axis=0) - X.min(axis=0)
    return np.where(r > 0, r, 1.0)


EXP_FLOOR = -700.0  # keeps exp() out of the subnormal range


def safe_exp(a):
    return np.exp(np.maximum(a, EXP_FLOOR))


@dataclass(frozen=True)
class LagGrid:
    """Inputs on a regular 1-D grid: ``x_i = x_0 + k_i * step`` with integer ``k_i``.

    A stationary kernel on such inputs only takes values at the lags
    ``m * step`` for ``m = 0 .. max(k)``; ``index[i, j] = |k_i - k_j|``.
    """

    index: np.ndarray
    lags: np.ndarray

    @classmethod
    def detect(cls, x, rtol=1e-9):
        x = np.asarray(x, dtype=float).ravel()
        if len(x) < 2:
            return None
        u = np.unique(x)
        gaps = np.diff(u)
        if len(gaps) == 0 or not np.all(gaps > 0):
            return None
        step = gaps.min()
        k = np.rint((x - u[0]) / step)
        span = u[-1] - u[0]
        if np.max(np.abs(u[0] + k * step - x)) > rtol * max(span, 1.0):
            return None
        kmax = int(k.max())
        if kmax > 50 * len(x):
            return None
        k = k.astype(np.int64)
        index = np.abs(k[:, None] - k[None, :])
        return cls(index, np.arange(kmax + 1) * step)

    def expand(self, values):
        return values[self.index]

    def lag_sums(self, W):
        """``s[m] = sum of W[i, j] over pairs with lag index m``."""
        return np.bincount(self.index.ravel(), weights=W.ravel(), minlength=len(self.lags))


# --------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class RbfParams:
    signal_variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.array(self.lengthscales, dtype=float))
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        if not (self.signal_variance > 0 and np.isfinite(self.signal_variance)):
            raise ValueError("signal_variance must be positive and finite")
        if not (np.all(ls > 0) and np.all(np.isfinite(ls))):
            raise NonPositiveLengthscale("RBF lengthscales must be positive and finite")

    @property
    def dim(self):
        return len(self.lengthscales)


@dataclass(frozen=True)
class SmParams:
    """``weights`` (Q,), ``means`` (Q, D), ``variances`` (Q, D)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    f_max: np.ndarray = None

    def __post_init__(self):
        w = np.atleast_1d(np.array(self.weights, dtype=float))
        mu = np.array(self.means, dtype=float).reshape(len(w), -1)
        v = np.array(self.variances, dtype=float).reshape(mu.shape)
        f_max = None if self.f_max is None else np.broadcast_to(
            np.array(self.f_max, dtype=float), (mu.shape[1],)).copy()
        for a in (w, mu, v):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "f_max", f_max)
        if len(w) < 1:
            raise ValueError("SM kernel needs Q >= 1")
        if not (np.all(w > 0) and np.all(v > 0)):
            raise ValueError("SM weights and variances must be positive")

    @property
    def Q(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]


@dataclass(frozen=True)
class LatentPrior:
    """Fixed RBF priors for the GSM latent functions over the anchor inputs.

    ``lengthscales`` maps ``"w"``, ``"l"``, ``"mu"`` to per-dimension
    lengthscales; ``variances`` to per-kind signal variances.  Cholesky
    factors of the anchor Gram matrices are computed once and cached.
    """

    anchors: np.ndarray
    lengthscales: dict
    variances: dict = field(default_factory=lambda: {"w": 1.0, "l": 1.0, "mu": 1.0})

    KINDS = ("w", "l", "mu")

    def __post_init__(self):
        a = np.array(self.anchors, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        a.setflags(write=False)
        object.__setattr__(self, "anchors", a)
        ls = {}
        for k in self.KINDS:
            v = np.broadcast_to(np.array(self.lengthscales[k], dtype=float), (a.shape[1],)).copy()
            if not np.all(v > 0):
                raise ValueError("latent prior lengthscales must be positive")
            ls[k] = v
        object.__setattr__(self, "lengthscales", ls)
        var = {k: float(self.variances.get(k, 1.0)) for k in self.KINDS}
        if not all(v > 0 for v in var.values()):
            raise ValueError("latent prior variances must be positive")
        object.__setattr__(self, "variances", var)

    @classmethod
    def default(cls, anchors, fraction=LATENT_PRIOR_LENGTHSCALE_FRACTION, variance=1.0):
        anchors = np.asarray(anchors, dtype=float)
        ls = fraction * input_range(anchors)
        return cls(anchors, {k: ls for k in cls.KINDS}, {k: variance for k in cls.KINDS})

    @property
    def n(self):
        return self.anchors.shape[0]

    @property
    def dim(self):
        return self.anchors.shape[1]

    def _gram_1d(self, kind, d, a, b):
        ls = self.lengthscales[kind][d]
        diff = a[:, None] - b[None, :]
        return self.variances[kind] * safe_exp(-0.5 * (diff / ls) ** 2)

    @cached_property
    def _factors(self):
        by_key = {}
        out = {}
        for kind in self.KINDS:
            for d in range(self.dim):
                key = (d, float(self.lengthscales[kind][d]), self.variances[kind])
                if key not in by_key:
                    x = self.anchors[:, d]
                    L, jitter = jittered_cholesky(self._gram_1d(kind, d, x, x),
                                                  error=SingularLatentGram)
                    by_key[key] = (L, jitter, 2.0 * np.sum(np.log(np.diag(L))))
                out[(kind, d)] = by_key[key]
        return out

    def factor(self, kind, d):
        """``(L, jitter, logdet)`` of the anchor Gram for ``kind`` in dimension ``d``."""
        return self._factors[(kind, d)]

    def neg_log_density(self, kind, d, u):
        """``-log N(u | 0, K)`` for one latent vector."""
        L, _, logdet = self.factor(kind, d)
        z = sla.solve_triangular(L, u, lower=True, check_finite=False)
        return 0.5 * (z @ z) + 0.5 * logdet + 0.5 * len(u) * np.log(TWO_PI)

    def extend(self, kind, d, u, x_star):
        """Posterior mean at ``x_star`` of the latent GP conditioned on anchor values ``u``."""
        L, _, _ = self.factor(kind, d)
        alpha = sla.cho_solve((L, True), u, check_finite=False)
        Ks = self._gram_1d(kind, d, np.asarray(x_star, dtype=float), self.anchors[:, d])
        return Ks @ alpha

    def whiten(self, kind, d, u):
        L, _, _ = self.factor(kind, d)
        return sla.solve_triangular(L, u, lower=True, check_finite=False)

    def color(self, kind, d, v):
        L, _, _ = self.factor(kind, d)
        return L @ v


@dataclass(frozen=True)
class DecodedLatents:
    """Constrained latent values, each of shape (Q, D, M) for M input points."""

    w: np.ndarray
    l: np.ndarray
    mu: np.ndarray

    @property
    def Q(self):
        return self.w.shape[0]

    def at(self, i):
        return DecodedLatents(self.w[:, :, i:i + 1], self.l[:, :, i:i + 1], self.mu[:, :, i:i + 1])


@dataclass(frozen=True)
class GsmLatents:
    """Unconstrained latent vectors ``log_w``, ``log_l``, ``logit_mu`` of shape (Q, D, N)."""

    prior: LatentPrior
    log_w: np.ndarray
    log_l: np.ndarray
    logit_mu: np.ndarray
    f_max: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.log_w)
        if len(shape) != 3:
            raise ValueError("latent arrays must have shape (Q, D, N)")
        for name in ("log_w", "log_l", "logit_mu"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != shape:
                raise ValueError("latent arrays must share one shape")
            if not np.all(np.isfinite(a)):
                raise NonPositiveLatent(f"non-finite latent values in {name}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        Q, D, N = shape
        if Q < 1 or D != self.prior.dim or N != self.prior.n:
            raise DimensionMismatch("latent arrays do not match the anchor set")
        f_max = np.broadcast_to(np.array(self.f_max, dtype=float), (D,)).copy()
        if not np.all(f_max > 0):
            raise ValueError("f_max must be positive")
        object.__setattr__(self, "f_max", f_max)

    @property
    def Q(self):
        return self.log_w.shape[0]

    @property
    def dim(self):
        return self.log_w.shape[1]

    @property
    def anchors(self):
        return self.prior.anchors

    def decode(self):
        return DecodedLatents(
            np.exp(self.log_w),
            np.exp(self.log_l),
            self.f_max[None, :, None] * logistic(self.logit_mu),
        )

    def unconstrained(self, kind):
        return {"w": self.log_w, "l": self.log_l, "mu": self.logit_mu}[kind]


KernelParams = Union[RbfParams, SmParams, GsmLatents]


@dataclass(frozen=True)
class KernelModel:
    """One of RBF / SM / GSM plus the observation noise variance.

    ``noise_variance == 0`` denotes an exact-interpolation model; such models
    are factorized without jitter.
    """

    params: KernelParams
    noise_variance: float

    def __post_init__(self):
        if not (self.noise_variance >= 0 and np.isfinite(self.noise_variance)):
            raise ValueError("noise_variance must be non-negative and finite")
        if not isinstance(self.params, (RbfParams, SmParams, GsmLatents)):
            raise TypeError(f"unsupported kernel parameters {type(self.params).__name__}")

    @property
    def family(self):
        if isinstance(self.params, RbfParams):
            return "rbf"
        if isinstance(self.params, SmParams):
            return "sm"
        return "gsm"

    @property
    def dim(self):
        return self.params.dim


# --------------------------------------------------------------------------
# scalar evaluations


def _vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


def rbf_eval(x_i, x_j, p: RbfParams):
    x_i, x_j = _vec(x_i), _vec(x_j)
    if x_i.shape != x_j.shape or x_i.shape[0] != p.dim:
        raise DimensionMismatch(f"RBF inputs {x_i.shape}, {x_j.shape} vs D={p.dim}")
    r = (x_i - x_j) / p.lengthscales
    return float(p.signal_variance * np.exp(-0.5 * (r @ r)))


def sm_eval(tau, p: SmParams):
    tau = _vec(tau)
    if tau.shape[0] != p.dim:
        raise DimensionMismatch(f"SM lag of dimension {tau.shape[0]} vs D={p.dim}")
    total = 0.0
    for q in range(p.Q):
        env = np.prod(np.exp(-2.0 * np.pi**2 * tau**2 * p.variances[q]))
        total += p.weights[q] * np.cos(TWO_PI * (p.means[q] @ tau)) * env
    return float(total)


def gibbs_eval(x_i, x_j, l_i, l_j):
    if not (l_i > 0 and l_j > 0):
        raise NonPositiveLengthscale(f"Gibbs lengthscales must be positive, got {l_i}, {l_j}")
    s = l_i * l_i + l_j * l_j
    # written via the effective lengthscale sqrt(s / 2) so that l_i == l_j
    # reproduces rbf_eval bit for bit
    r = (x_i - x_j) / np.sqrt(0.5 * s)
    return float(np.sqrt(2.0 * l_i * l_j / s) * np.exp(-0.5 * (r * r)))


def gsm_eval_1d(x_i, x_j, w_i, w_j, l_i, l_j, mu_i, mu_j):
    """One-dimensional GSM value from per-component latent values at both points.

    ``w_i`` etc. are length-Q sequences.
    """
    w_i, w_j, l_i, l_j, mu_i, mu_j = map(_vec, (w_i, w_j, l_i, l_j, mu_i, mu_j))
    if np.any(w_i <= 0) or np.any(w_j <= 0) or np.any(l_i <= 0) or np.any(l_j <= 0):
        raise NonPositiveLatent("GSM weights and lengthscales must be positive")
    total = 0.0
    for q in range(len(w_i)):
        g = gibbs_eval(x_i, x_j, l_i[q], l_j[q])
        total += w_i[q] * w_j[q] * g * np.cos(TWO_PI * (mu_i[q] * x_i - mu_j[q] * x_j))
    return float(total)


def gsm_eval(x_i, x_j, dec_i: DecodedLatents, dec_j: DecodedLatents):
    """Product over dimensions of :func:`gsm_eval_1d`.

    ``dec_i``/``dec_j`` hold latent values at the single points, shape (Q, D, 1).
    """
    x_i, x_j = _vec(x_i), _vec(x_j)
    D = dec_i.w.shape[1]
    if x_i.shape != x_j.shape or x_i.shape[0] != D or dec_j.w.shape[1] != D:
        raise DimensionMismatch("GSM inputs and latent values disagree on D")
    out = 1.0
    for d in range(D):
        out *= gsm_eval_1d(x_i[d], x_j[d],
                           dec_i.w[:, d, 0], dec_j.w[:, d, 0],
                           dec_i.l[:, d, 0], dec_j.l[:, d, 0],
                           dec_i.mu[:, d, 0], dec_j.mu[:, d, 0])
    return out


# --------------------------------------------------------------------------
# latent functions


def latent_decode(latents: GsmLatents, index: int) -> DecodedLatents:
    if not 0 <= index < latents.prior.n:
        raise IndexError(f"anchor index {index} out of range")
    return DecodedLatents(
        np.exp(latents.log_w[:, :, index:index + 1]),
        np.exp(latents.log_l[:, :, index:index + 1]),
        latents.f_max[None, :, None] * logistic(latents.logit_mu[:, :, index:index + 1]),
    )


def latent_extend(latents: GsmLatents, x_star) -> DecodedLatents:
    """Decoded latent values at new inputs via the latent GP posterior means."""
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim == 1:
        x_star = x_star[None, :] if x_star.shape[0] == latents.dim else x_star[:, None]
    if x_star.shape[1] != latents.dim:
        raise DimensionMismatch(f"x_star has D={x_star.shape[1]}, latents D={latents.dim}")
    Q, D, _ = latents.log_w.shape
    M = x_star.shape[0]
    out = {k: np.empty((Q, D, M)) for k in LatentPrior.KINDS}
    for kind in LatentPrior.KINDS:
        u = latents.unconstrained(kind)
        for d in range(D):
            L, _, _ = latents.prior.factor(kind, d)
            alpha = sla.cho_solve((L, True), u[:, d, :].T, check_finite=False)  # (N, Q)
            Ks = latents.prior._gram_1d(kind, d, x_star[:, d], latents.anchors[:, d])
            out[kind][:, d, :] = (Ks @ alpha).T
    return DecodedLatents(
        np.exp(out["w"]),
        np.exp(out["l"]),
        latents.f_max[None, :, None] * logistic(out["mu"]),
    )


def decoded_at(latents: GsmLatents, X):
    """Decoded latents at ``X``: anchor values when ``X`` is the anchor set, else extended."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape == latents.anchors.shape and np.array_equal(X, latents.anchors):
        return latents.decode()
    return latent_extend(latents, X)


# --------------------------------------------------------------------------
# Gram matrices


def _as2d(X, D=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if D in (None, 1) else X[None, :]
    if D is not None and X.shape[1] != D:
        raise DimensionMismatch(f"inputs have D={X.shape[1]}, kernel expects D={D}")
    return X


def rbf_gram(X1, X2, p: RbfParams):
    A = X1 / p.lengthscales
    B = X2 / p.lengthscales
    sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    if X1 is X2:
        # exact zeros on the diagonal and exact symmetry
        sq = 0.5 * (sq + sq.T)
        np.fill_diagonal(sq, 0.0)
    return p.signal_variance * safe_exp(-0.5 * np.maximum(sq, 0.0))


def sm_gram(X1, X2, p: SmParams):
    K = np.zeros((X1.shape[0], X2.shape[0]))
    for q in range(p.Q):
        K += sm_component(X1, X2, p, q)
    return K


def phase_cos_sin(a1, a2):
    """``cos(a1_i - a2_j)`` and ``sin(a1_i - a2_j)`` from per-point angles."""
    c1, s1, c2, s2 = np.cos(a1), np.sin(a1), np.cos(a2), np.sin(a2)
    return np.outer(c1, c2) + np.outer(s1, s2), np.outer(s1, c2) - np.outer(c1, s2)


def sm_component(X1, X2, p: SmParams, q):
    expo = np.zeros((X1.shape[0], X2.shape[0]))
    for d in range(p.dim):
        tau = X1[:, d][:, None] - X2[:, d][None, :]
        expo += tau * tau * p.variances[q, d]
    cos, _ = phase_cos_sin(TWO_PI * (X1 @ p.means[q]), TWO_PI * (X2 @ p.means[q]))
    return p.weights[q] * cos * safe_exp(-2.0 * np.pi**2 * expo)


def gsm_term(x1, x2, w1, w2, l1, l2, mu1, mu2):
    """One GSM mixture term over 1-D inputs; returns ``(T, S, diff2)``."""
    S = l1[:, None] ** 2 + l2[None, :] ** 2
    diff2 = (x1[:, None] - x2[None, :]) ** 2
    G = np.sqrt(2.0 * np.outer(l1, l2) / S) * safe_exp(-diff2 / S)
    C, _ = phase_cos_sin(TWO_PI * mu1 * x1, TWO_PI * mu2 * x2)
    return np.outer(w1, w2) * G * C, S, diff2


def gsm_dim_grams(X1, dec1: DecodedLatents, X2, dec2: DecodedLatents):
    """Per-dimension factor matrices ``K_d`` whose product is the GSM Gram."""
    Q, D, _ = dec1.w.shape
    mats = []
    for d in range(D):
        Kd = np.zeros((X1.shape[0], X2.shape[0]))
        for q in range(Q):
            T, _, _ = gsm_term(X1[:, d], X2[:, d], dec1.w[q, d], dec2.w[q, d],
                               dec1.l[q, d], dec2.l[q, d], dec1.mu[q, d], dec2.mu[q, d])
            Kd += T
        mats.append(Kd)
    return mats


def gsm_gram(X1, dec1, X2, dec2):
    mats = gsm_dim_grams(X1, dec1, X2, dec2)
    K = mats[0]
    for Kd in mats[1:]:
        K = K * Kd
    return K


def gram(kernel: KernelModel, X1, X2=None, include_noise=False):
    """Matrix of kernel values between rows of ``X1`` and ``X2`` (default ``X1``)."""
    D = kernel.dim
    same = X2 is None or X2 is X1
    X1 = _as2d(X1, D)
    if not same:
        X2a = _as2d(X2, D)
        if include_noise:
            if not (X2a.shape == X1.shape and np.array_equal(X1, X2a)):
                raise IllegalNoise("include_noise requires X2 to be the same input set as X1")
            same = True
    X2 = X1 if same else X2a
    p = kernel.params
    if isinstance(p, RbfParams):
        K = rbf_gram(X1, X2, p)
    elif isinstance(p, SmParams):
        K = sm_gram(X1, X2, p)
    else:
        d1 = decoded_at(p, X1)
        d2 = d1 if same else decoded_at(p, X2)
        K = gsm_gram(X1, d1, X2, d2)
    if same:
        K = 0.5 * (K + K.T)
    if include_noise:
        K = K + kernel.noise_variance * np.eye(X1.shape[0])
    return K


def gram_diag(kernel: KernelModel, X):
    """Diagonal ``k(x, x)`` for each row of ``X``."""
    X = _as2d(X, kernel.dim)
    p = kernel.params
    if isinstance(p, RbfParams):
        return np.full(X.shape[0], p.signal_variance)
    if isinstance(p, SmParams):
        return np.full(X.shape[0], float(np.sum(p.weights)))
    dec = decoded_at(p, X)
    return np.prod(np.sum(dec.w**2, axis=0), axis=0)

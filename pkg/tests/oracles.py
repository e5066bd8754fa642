"""Brute-force reference implementations used as test oracles.

These deliberately avoid the package's Cholesky code paths: densities use an
explicit inverse and determinant, Gram matrices use scalar kernel loops.
"""

import numpy as np

from windgp.kernels import (
    DecodedLatents,
    GsmLatents,
    RbfParams,
    SmParams,
    gsm_eval,
    latent_extend,
    rbf_eval,
    sm_eval,
)


def mvn_logpdf(y, mean, cov):
    y = np.asarray(y, dtype=float) - mean
    n = len(y)
    inv = np.linalg.inv(cov)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(-0.5 * y @ inv @ y - 0.5 * logdet - 0.5 * n * np.log(2 * np.pi))


def condition(joint, y, n):
    """Mean and marginal variances of the last block given the first ``n`` values."""
    A = joint[:n, :n]
    B = joint[n:, :n]
    C = joint[n:, n:]
    inv = np.linalg.inv(A)
    mean = B @ inv @ y
    cov = C - B @ inv @ B.T
    return mean, np.diag(cov)


def scalar_kernel(kernel):
    """``k(x_i, x_j)`` for a KernelModel, evaluated point by point."""
    p = kernel.params
    if isinstance(p, RbfParams):
        return lambda a, b: rbf_eval(a, b, p)
    if isinstance(p, SmParams):
        return lambda a, b: sm_eval(np.atleast_1d(a) - np.atleast_1d(b), p)
    assert isinstance(p, GsmLatents)

    def k(a, b):
        da = latent_extend(p, np.atleast_1d(a)[None, :])
        db = latent_extend(p, np.atleast_1d(b)[None, :])
        return gsm_eval(a, b, da, db)

    return k


def scalar_kernel_on_anchors(p: GsmLatents):
    """GSM kernel between anchor ``i`` and anchor ``j`` using stored latent values."""
    dec = p.decode()

    def k(i, j):
        return gsm_eval(p.anchors[i], p.anchors[j], _at(dec, i), _at(dec, j))

    return k


def _at(dec, i):
    return DecodedLatents(dec.w[:, :, i:i + 1], dec.l[:, :, i:i + 1], dec.mu[:, :, i:i + 1])


def brute_gram(kernel, X1, X2):
    k = scalar_kernel(kernel)
    return np.array([[k(a, b) for b in X2] for a in X1])


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g

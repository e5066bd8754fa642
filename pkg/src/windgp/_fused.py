"""Fused GSM Gram and gradient loops (numba).

Each loop visits the lower triangle once and accumulates every mixture
component, avoiding the N x N temporaries of the vectorized form.  Inputs are
the decoded latents of one input dimension: ``w, l`` of shape (Q, N) and the
phase factors ``a = w cos(2 pi mu x)``, ``b = w sin(2 pi mu x)``.
"""

import math

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def gsm_gram_dim(x, l, a, b):
    Q, N = l.shape
    K = np.empty((N, N))
    for i in range(N):
        for j in range(i + 1):
            d = x[i] - x[j]
            d2 = d * d
            acc = 0.0
            for q in range(Q):
                li = l[q, i]
                lj = l[q, j]
                S = li * li + lj * lj
                G = math.sqrt(2.0 * li * lj / S) * math.exp(-d2 / S)
                acc += G * (a[q, i] * a[q, j] + b[q, i] * b[q, j])
            K[i, j] = acc
            K[j, i] = acc
    return K


@numba.njit(cache=True, fastmath=False)
def gsm_grad_dim(x, l, a, b, WP):
    """Row sums ``sum_j WP_ij dK_ij`` per latent; see ``_gsm_backward``.

    Returns ``(gw, gl, gs)`` where ``gs`` is ``sum_j WP_ij TS_ij`` (the phase
    factor still to be multiplied by ``-2 * 2 pi x_i * dmu_i``).
    """
    Q, N = l.shape
    gw = np.zeros((Q, N))
    gl = np.zeros((Q, N))
    gs = np.zeros((Q, N))
    for i in range(N):
        for j in range(i + 1):
            d = x[i] - x[j]
            d2 = d * d
            wp = WP[i, j]
            for q in range(Q):
                li = l[q, i]
                lj = l[q, j]
                li2 = li * li
                lj2 = lj * lj
                S = li2 + lj2
                G = math.sqrt(2.0 * li * lj / S) * math.exp(-d2 / S)
                bc = wp * G * (a[q, i] * a[q, j] + b[q, i] * b[q, j])
                ts = wp * G * (b[q, i] * a[q, j] - a[q, i] * b[q, j])
                Ri = li2 / S
                if i == j:
                    gw[q, i] += 2.0 * bc
                    gl[q, i] += 2.0 * bc * (0.5 - Ri + 2.0 * d2 * Ri / S)
                else:
                    Rj = lj2 / S
                    gw[q, i] += 2.0 * bc
                    gw[q, j] += 2.0 * bc
                    gl[q, i] += 2.0 * bc * (0.5 - Ri + 2.0 * d2 * Ri / S)
                    gl[q, j] += 2.0 * bc * (0.5 - Rj + 2.0 * d2 * Rj / S)
                    gs[q, i] += ts
                    gs[q, j] -= ts
    return gw, gl, gs


@numba.njit(cache=True, fastmath=False)
def half_inverse_minus_outer(Ai, alpha):
    """``0.5 * (A^{-1} - alpha alpha^T)`` from the lower triangle of ``Ai``."""
    N = Ai.shape[0]
    W = np.empty((N, N))
    for i in range(N):
        for j in range(i + 1):
            v = 0.5 * (Ai[i, j] - alpha[i] * alpha[j])
            W[i, j] = v
            W[j, i] = v
    return W

"""Pure-NumPy MLP kernels (any depth).

These are the fallback used when the compiled extension is missing or when
``STREAMRX_PURE_PYTHON=1``; they are also the reference the compiled path is
tested against. Parameter layout: for every layer, the ``(d_out, d_in)``
weight matrix in row-major order followed by the bias vector.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def layer_slices(widths: tuple) -> tuple:
    """``((w_slice, b_slice, d_in, d_out), ...)`` for every layer."""
    out = []
    off = 0
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        w = slice(off, off + d_in * d_out)
        off += d_in * d_out
        b = slice(off, off + d_out)
        off += d_out
        out.append((w, b, d_in, d_out))
    return tuple(out)


def sigmoid(z):
    # two-branch form avoids overflow in exp
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _hidden(widths, theta, x):
    acts = [x]
    masks = []
    a = x
    layers = layer_slices(widths)
    for w, b, d_in, d_out in layers[:-1]:
        z = theta[w].reshape(d_out, d_in) @ a + theta[b]
        m = z > 0
        a = np.where(m, z, 0.0)
        acts.append(a)
        masks.append(m)
    w, b, d_in, d_out = layers[-1]
    z = theta[w].reshape(d_out, d_in) @ a + theta[b]
    return z, acts, masks


def logits(widths, theta, x):
    return _hidden(widths, theta, x)[0]


def forward(widths, theta, x):
    return sigmoid(_hidden(widths, theta, x)[0])


def forward_batch(widths, theta, X):
    a = np.asarray(X, dtype=np.float64)
    layers = layer_slices(widths)
    for w, b, d_in, d_out in layers[:-1]:
        a = np.maximum(a @ theta[w].reshape(d_out, d_in).T + theta[b], 0.0)
    w, b, d_in, d_out = layers[-1]
    return sigmoid(a @ theta[w].reshape(d_out, d_in).T + theta[b])


def logit_jacobian(widths, theta, x):
    """Soft outputs and the ``(B, P)`` Jacobian of the output logits."""
    z, acts, masks = _hidden(widths, theta, x)
    layers = layer_slices(widths)
    B = widths[-1]
    P = theta.shape[0]
    J = np.zeros((B, P))
    delta = np.eye(B)
    for li in range(len(layers) - 1, -1, -1):
        w, b, d_in, d_out = layers[li]
        a_prev = acts[li]
        J[:, w] = (delta[:, :, None] * a_prev[None, None, :]).reshape(B, -1)
        J[:, b] = delta
        if li > 0:
            delta = (delta @ theta[w].reshape(d_out, d_in)) * masks[li - 1]
    return sigmoid(z), J


def _vjp_from(widths, theta, acts, masks, wvec):
    layers = layer_slices(widths)
    g = np.empty(theta.shape[0])
    delta = np.asarray(wvec, dtype=np.float64)
    for li in range(len(layers) - 1, -1, -1):
        w, b, d_in, d_out = layers[li]
        g[w] = np.outer(delta, acts[li]).ravel()
        g[b] = delta
        if li > 0:
            delta = (delta @ theta[w].reshape(d_out, d_in)) * masks[li - 1]
    return g


def score_batch(widths, thetas, x, bits):
    """Log-likelihood gradients ``J_z^T (b - ell)`` at each row of ``thetas``."""
    thetas = np.atleast_2d(thetas)
    bits = np.asarray(bits, dtype=np.float64)
    out = np.empty_like(thetas)
    for m in range(thetas.shape[0]):
        z, acts, masks = _hidden(widths, thetas[m], x)
        out[m] = _vjp_from(widths, thetas[m], acts, masks, bits - sigmoid(z))
    return out


def _chol_lower(S, jitter):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(S + jitter * np.eye(S.shape[0]))
    except np.linalg.LinAlgError:
        return None


def cmekf_step(mean, sigma, H, r, innov, g2, q, jitter=1e-9):
    """In-place twin of the compiled ``cmekf_step`` (same contract and status codes)."""
    sigma *= g2
    sigma.flat[:: sigma.shape[0] + 1] += q
    SH = sigma @ H.T
    S = H @ SH
    S = 0.5 * (S + S.T)
    S.flat[:: S.shape[0] + 1] += r
    L = _chol_lower(S, jitter)
    if L is None:
        return -1
    G = np.linalg.solve(L, SH.T).T
    mean += G @ np.linalg.solve(L, innov)
    sigma -= G @ G.T
    sym = sigma.T.copy()
    sigma += sym
    sigma *= 0.5
    return 0

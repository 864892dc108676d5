"""Shared fixtures and independent reference implementations for the tests."""

from __future__ import annotations

import math

import numpy as np
import pytest

from streamrx.belief import FullCov, GaussianBelief
from streamrx.network import MlpSpec, forward


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, P: int, scale: float = 1.0) -> np.ndarray:
    A = rng.standard_normal((P, P))
    return scale * (A @ A.T / P + 0.1 * np.eye(P))


def random_full_belief(rng, P: int, scale: float = 1.0) -> GaussianBelief:
    return GaussianBelief(rng.standard_normal(P), FullCov(random_spd(rng, P, scale)))


def reference_forward(widths, theta, x) -> np.ndarray:
    """Scalar-loop MLP written independently of the library kernels."""
    a = [float(v) for v in x]
    off = 0
    n_layers = len(widths) - 1
    for layer in range(n_layers):
        d_in, d_out = widths[layer], widths[layer + 1]
        W = theta[off:off + d_in * d_out]
        off += d_in * d_out
        b = theta[off:off + d_out]
        off += d_out
        z = []
        for i in range(d_out):
            acc = float(b[i])
            for j in range(d_in):
                acc += float(W[i * d_in + j]) * a[j]
            z.append(acc)
        if layer < n_layers - 1:
            a = [v if v > 0.0 else 0.0 for v in z]
        else:
            a = [1.0 / (1.0 + math.exp(-v)) for v in z]
    return np.array(a)


def hidden_preactivations(widths, theta, x) -> list:
    """Pre-activations of every hidden layer (to keep finite differences off kinks)."""
    out = []
    a = np.asarray(x, dtype=float)
    off = 0
    for layer in range(len(widths) - 2):
        d_in, d_out = widths[layer], widths[layer + 1]
        W = theta[off:off + d_in * d_out].reshape(d_out, d_in)
        off += d_in * d_out
        z = W @ a + theta[off:off + d_out]
        off += d_out
        out.append(z)
        a = np.maximum(z, 0.0)
    return out


def fd_jacobian(spec: MlpSpec, theta, x, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of the soft outputs."""
    J = np.empty((spec.d_out, spec.n_params))
    for p in range(spec.n_params):
        e = np.zeros(spec.n_params)
        e[p] = step
        J[:, p] = (forward(spec, theta + e, x) - forward(spec, theta - e, x)) / (2 * step)
    return J


def deepsic_input(rng, n_obs: int, n_soft: int) -> np.ndarray:
    """A module input: received samples followed by soft bits in (0, 1)."""
    return np.concatenate([rng.standard_normal(n_obs), rng.uniform(0.0, 1.0, n_soft)])

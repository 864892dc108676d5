"""Small fully-connected networks over a flat parameter vector.

Hidden layers use ReLU, the output layer an element-wise sigmoid producing
per-bit soft estimates in (0, 1). The flat layout (per layer: weights of
shape ``(d_out, d_in)`` row-major, then biases) is shared with the beliefs,
so coordinate ``p`` means the same weight everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from ._pykernels import layer_slices, sigmoid
from .errors import ConfigurationError

__all__ = [
    "MlpSpec",
    "forward",
    "forward_batch",
    "jacobian",
    "logit_jacobian",
    "forward_jacobian",
    "score",
    "score_batch",
    "cross_entropy",
    "bernoulli_moments",
    "sigmoid",
]


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ConfigurationError(f"invalid layer widths {self.widths}")
        object.__setattr__(self, "widths", widths)

    @classmethod
    def single_hidden(cls, d_in: int, hidden: int, d_out: int) -> "MlpSpec":
        return cls((d_in, hidden, d_out))

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    @property
    def _compiled(self) -> bool:
        return _backend.ext is not None and len(self.widths) == 3

    def unflatten(self, theta) -> list:
        """List of ``(W, b)`` views into ``theta``."""
        theta = self._check_theta(theta)
        return [
            (theta[w].reshape(d_out, d_in), theta[b])
            for w, b, d_in, d_out in layer_slices(self.widths)
        ]

    def flatten(self, layers) -> np.ndarray:
        parts = []
        for (W, b), (_, _, d_in, d_out) in zip(layers, layer_slices(self.widths)):
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if W.shape != (d_out, d_in) or b.shape != (d_out,):
                raise ConfigurationError("layer shapes do not match spec")
            parts += [W.ravel(), b]
        return np.concatenate(parts)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform(+-1/sqrt(fan_in)) for weights and biases."""
        layers = []
        for _, _, d_in, d_out in layer_slices(self.widths):
            bound = 1.0 / np.sqrt(d_in)
            layers.append((rng.uniform(-bound, bound, (d_out, d_in)),
                           rng.uniform(-bound, bound, d_out)))
        return self.flatten(layers)

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ConfigurationError(
                f"theta has shape {theta.shape}, expected ({self.n_params},)"
            )
        return theta

    def _check_x(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.d_in,):
            raise ConfigurationError(f"input has shape {x.shape}, expected ({self.d_in},)")
        return x


def forward(spec: MlpSpec, theta, x) -> np.ndarray:
    theta = spec._check_theta(theta)
    x = spec._check_x(x)
    if spec._compiled:
        d, h, B = spec.widths
        return _backend.ext.mlp1_forward(theta, x, d, h, B)
    return _backend.py.forward(spec.widths, theta, x)


def forward_batch(spec: MlpSpec, theta, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.d_in:
        raise ConfigurationError(f"batch has shape {X.shape}, expected (n, {spec.d_in})")
    return _backend.py.forward_batch(spec.widths, spec._check_theta(theta), X)


def logit_jacobian(spec: MlpSpec, theta, x):
    """``(ell, J_z)`` with ``J_z[i, p] = d logit_i / d theta_p``."""
    theta = spec._check_theta(theta)
    x = spec._check_x(x)
    if spec._compiled:
        d, h, B = spec.widths
        return _backend.ext.mlp1_logit_jacobian(theta, x, d, h, B)
    return _backend.py.logit_jacobian(spec.widths, theta, x)


def forward_jacobian(spec: MlpSpec, theta, x):
    """Soft outputs and their ``(B, P)`` Jacobian in one pass."""
    ell, Jz = logit_jacobian(spec, theta, x)
    Jz *= (ell * (1.0 - ell))[:, None]
    return ell, Jz


def jacobian(spec: MlpSpec, theta, x) -> np.ndarray:
    return forward_jacobian(spec, theta, x)[1]


def score_batch(spec: MlpSpec, thetas, x, bits) -> np.ndarray:
    """Gradient of the Bernoulli log-likelihood of ``bits`` at every row of ``thetas``."""
    thetas = np.ascontiguousarray(np.atleast_2d(thetas), dtype=np.float64)
    if thetas.shape[1] != spec.n_params:
        raise ConfigurationError("sample matrix has the wrong number of columns")
    x = spec._check_x(x)
    bits = np.ascontiguousarray(bits, dtype=np.float64)
    if spec._compiled:
        d, h, B = spec.widths
        return _backend.ext.mlp1_score_batch(thetas, x, bits, d, h, B)
    return _backend.py.score_batch(spec.widths, thetas, x, bits)


def score(spec: MlpSpec, theta, x, bits) -> np.ndarray:
    return score_batch(spec, theta, x, bits)[0]


def cross_entropy(spec: MlpSpec, theta, x, bits) -> float:
    """Binary cross-entropy summed over bits, computed from logits."""
    z = _backend.py.logits(spec.widths, spec._check_theta(theta), spec._check_x(x))
    b = np.asarray(bits, dtype=np.float64)
    # softplus(z) - b*z
    return float(np.sum(np.logaddexp(0.0, z) - b * z))


def bernoulli_moments(ell):
    """Mean and (diagonal) covariance of independent Bernoulli bits."""
    ell = np.asarray(ell, dtype=np.float64)
    return ell.copy(), np.diag(ell * (1.0 - ell))

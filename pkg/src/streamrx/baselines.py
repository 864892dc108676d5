"""Model-based reference detectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import Constellation, from_real, to_real
from .errors import ConfigurationError, NumericalError

__all__ = [
    "rotation_matrix",
    "map_decode",
    "NlmsState",
    "nlms_step",
    "nlms_decode",
    "mmse_equalize",
    "mmse_detect",
]


def rotation_matrix(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def _min_distance(r, templates) -> np.ndarray:
    # r: (n, 2) or (2,), templates: (M, 2); argmin keeps the lowest index on ties
    r = np.asarray(r, dtype=np.float64)
    d = ((r[..., None, :] - templates) ** 2).sum(axis=-1)
    return np.argmin(d, axis=-1)


def map_decode(r, phi: float, c: Constellation, noise_var: float = 1.0 / 16) -> np.ndarray:
    """MAP symbol index for the rotation channel.

    With equiprobable symbols and isotropic Gaussian noise the MAP rule is the
    nearest point of the rotated constellation, whatever ``noise_var`` is.
    """
    templates = to_real(c.points[:, None]) @ rotation_matrix(phi).T
    return _min_distance(r, templates)


@dataclass
class NlmsState:
    """Real 2x2 channel estimate tracked by normalised LMS."""

    H: np.ndarray = field(default_factory=lambda: np.eye(2))
    step: float = 0.5
    delta: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.step < 2.0:
            raise ConfigurationError("NLMS step size must lie in [0, 2)")
        if self.delta <= 0.0:
            raise ConfigurationError("NLMS regulariser must be positive")
        self.H = np.array(self.H, dtype=np.float64)


def nlms_step(state: NlmsState, s_pilot, r) -> NlmsState:
    """``H += step * (r - H s) s^T / (delta + |s|^2)`` for a real pilot vector ``s``."""
    s = np.asarray(s_pilot, dtype=np.float64)
    err = np.asarray(r, dtype=np.float64) - state.H @ s
    H = state.H + state.step * np.outer(err, s) / (state.delta + s @ s)
    return NlmsState(H, state.step, state.delta)


def nlms_decode(state: NlmsState, r, c: Constellation) -> np.ndarray:
    """Minimum-distance decision against the estimated channel."""
    templates = to_real(c.points[:, None]) @ state.H.T
    return _min_distance(r, templates)


def mmse_equalize(r, H, noise_var: float) -> np.ndarray:
    """Linear MMSE estimate ``(H^H H + noise_var I)^-1 H^H r`` (complex).

    ``r`` may be stacked-real ``(2N,)``/``(n, 2N)`` or complex; ``noise_var`` is
    the complex noise variance per antenna relative to unit symbol energy.
    """
    H = np.asarray(H, dtype=complex)
    r = np.asarray(r)
    y = r if np.iscomplexobj(r) else from_real(r)
    K = H.shape[1]
    A = H.conj().T @ H + noise_var * np.eye(K)
    if noise_var == 0.0 and np.linalg.matrix_rank(H) < K:
        raise NumericalError("normal matrix is singular", rank=int(np.linalg.matrix_rank(H)), K=K)
    try:
        W = np.linalg.solve(A, H.conj().T)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("normal matrix is singular", noise_var=noise_var) from exc
    return y @ W.T


def mmse_detect(r, H, noise_var: float, c: Constellation):
    """Per-user nearest-point decisions after MMSE equalisation.

    Returns ``(symbol_indices, bits)`` with bits shaped ``(..., K, B)``.
    """
    s_hat = mmse_equalize(r, H, noise_var)
    idx = c.nearest(s_hat)
    return idx, c.bit_table[idx]

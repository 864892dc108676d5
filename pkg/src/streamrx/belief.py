"""Gaussian beliefs over module weights and the state-evolution predict step.

Three covariance representations are supported:

``FullCov``  explicit covariance matrix.
``DiagCov``  per-coordinate variances.
``DlrCov``   diagonal-plus-low-rank *precision* ``diag(d) + W W^T``.

The latent weights follow ``theta_t | theta_{t-1} ~ N(gamma theta_{t-1}, sigma2 I)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, NumericalError

__all__ = [
    "FullCov",
    "DiagCov",
    "DlrCov",
    "GaussianBelief",
    "SsmHyper",
    "prior_belief",
    "predict",
    "as_covariance",
    "dlr_cov_matvec",
    "floor_obs_cov",
    "min_eigenvalue",
    "dump_belief",
    "load_belief",
]


@dataclass
class FullCov:
    sigma: np.ndarray


@dataclass
class DiagCov:
    var: np.ndarray


@dataclass
class DlrCov:
    prec_diag: np.ndarray
    W: np.ndarray

    @property
    def rank(self) -> int:
        return self.W.shape[1]


Covariance = Union[FullCov, DiagCov, DlrCov]

_KIND = {FullCov: "full", DiagCov: "diag", DlrCov: "dlr"}


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: Covariance

    @property
    def kind(self) -> str:
        return _KIND[type(self.cov)]

    @property
    def n_params(self) -> int:
        return self.mean.shape[0]

    def copy(self) -> "GaussianBelief":
        c = self.cov
        if isinstance(c, FullCov):
            cov = FullCov(c.sigma.copy())
        elif isinstance(c, DiagCov):
            cov = DiagCov(c.var.copy())
        else:
            cov = DlrCov(c.prec_diag.copy(), c.W.copy())
        return GaussianBelief(self.mean.copy(), cov)

    def is_finite(self) -> bool:
        c = self.cov
        arrays = [self.mean] + [getattr(c, f) for f in c.__dataclass_fields__]
        return all(np.all(np.isfinite(a)) for a in arrays)


@dataclass(frozen=True)
class SsmHyper:
    """State evolution ``N(gamma * theta, sigma2 * I)`` and prior scale."""

    gamma: float = 0.999
    sigma2: float = 1e-4
    prior_var: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma={self.gamma} outside (0, 1]")
        if self.sigma2 < 0.0:
            raise ConfigurationError(f"sigma2={self.sigma2} must be non-negative")
        if self.prior_var <= 0.0:
            raise ConfigurationError("prior_var must be positive")


def prior_belief(mean0, hyper: SsmHyper, kind: str = "full", rank: int = 0) -> GaussianBelief:
    """``N(mean0, prior_var * I)`` in the requested representation."""
    mean0 = np.array(mean0, dtype=np.float64)
    P = mean0.shape[0]
    v = hyper.prior_var
    if kind == "full":
        return GaussianBelief(mean0, FullCov(v * np.eye(P)))
    if kind == "diag":
        return GaussianBelief(mean0, DiagCov(np.full(P, v)))
    if kind == "dlr":
        if rank < 0:
            raise ConfigurationError("rank must be non-negative")
        return GaussianBelief(mean0, DlrCov(np.full(P, 1.0 / v), np.zeros((P, rank))))
    raise ConfigurationError(f"unknown covariance kind {kind!r}")


def predict(b: GaussianBelief, h: SsmHyper) -> GaussianBelief:
    """Marginalise the Gauss-Markov transition: ``gamma*mu``, ``gamma^2 Sigma + sigma2 I``."""
    g, q = h.gamma, h.sigma2
    mean = g * b.mean
    c = b.cov
    if isinstance(c, FullCov):
        sigma = (g * g) * c.sigma
        sigma.flat[:: sigma.shape[0] + 1] += q
        return GaussianBelief(mean, FullCov(sigma))
    if isinstance(c, DiagCov):
        return GaussianBelief(mean, DiagCov(g * g * c.var + q))
    return GaussianBelief(mean, _dlr_predict(c, g, q))


def _dlr_predict(c: DlrCov, g: float, q: float) -> DlrCov:
    # Exact in precision form: (g^2 (D + W W^T)^-1 + q I)^-1 stays diagonal
    # plus rank R, so no truncation is needed.
    d, W = c.prec_diag, c.W
    if q == 0.0:
        return DlrCov(d / (g * g), W / g)
    d_new = d / (g * g + q * d)
    if W.shape[1] == 0:
        return DlrCov(d_new, W.copy())
    Wt = W / g
    e_inv = 1.0 / (d / (g * g) + 1.0 / q)
    EW = e_inv[:, None] * Wt
    C = np.eye(W.shape[1]) + Wt.T @ EW
    # W' L' with L' L'^T = C^-1: take L' = inverse-transpose of chol(C)
    Lc = np.linalg.cholesky(C)
    W_new = sla.solve_triangular(Lc, EW.T, lower=True).T / q
    return DlrCov(d_new, W_new)


def dlr_cov_matvec(c: DlrCov, v) -> np.ndarray:
    """``(diag(d) + W W^T)^-1 v`` via Woodbury; ``v`` may be a matrix."""
    v = np.asarray(v, dtype=np.float64)
    d_inv = 1.0 / c.prec_diag
    Dv = d_inv[:, None] * v if v.ndim == 2 else d_inv * v
    R = c.W.shape[1]
    if R == 0:
        return Dv
    DW = d_inv[:, None] * c.W
    S = np.eye(R) + c.W.T @ DW
    return Dv - DW @ np.linalg.solve(S, c.W.T @ Dv)


def as_covariance(b: GaussianBelief) -> np.ndarray:
    c = b.cov
    if isinstance(c, FullCov):
        return c.sigma.copy()
    if isinstance(c, DiagCov):
        return np.diag(c.var)
    if np.any(c.prec_diag <= 0):
        raise NumericalError("DLR diagonal is not positive", min_d=float(c.prec_diag.min()))
    return dlr_cov_matvec(c, np.eye(b.n_params))


def min_eigenvalue(b: GaussianBelief) -> float:
    c = b.cov
    if isinstance(c, DiagCov):
        return float(c.var.min())
    if isinstance(c, DlrCov):
        # precision is d + PSD, so covariance is PD iff d > 0
        return float(np.linalg.eigvalsh(as_covariance(b)).min())
    return float(np.linalg.eigvalsh(c.sigma).min())


def floor_obs_cov(Rt, eps: float = 1e-6) -> np.ndarray:
    """Clamp the diagonal of a diagonal observation covariance from below."""
    Rt = np.array(Rt, dtype=np.float64)
    if Rt.ndim == 1:
        return np.maximum(Rt, eps)
    idx = np.diag_indices_from(Rt)
    Rt[idx] = np.maximum(Rt[idx], eps)
    return Rt


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

_MAGIC = "STREAMRX-BELIEF/1"


def dump_belief(b: GaussianBelief, fh) -> None:
    """Write ``b`` as text: a header line, the mean, then the covariance payload.

    Header: ``STREAMRX-BELIEF/1 kind=<full|diag|dlr> P=<P> R=<rank>``.
    Payload (one number per line, ``%.17g``): ``full`` the row-major
    covariance; ``diag`` the variances; ``dlr`` the precision diagonal
    followed by ``W`` row-major.
    """
    c = b.cov
    R = c.rank if isinstance(c, DlrCov) else 0
    if isinstance(c, FullCov):
        payload = c.sigma.ravel()
    elif isinstance(c, DiagCov):
        payload = c.var
    else:
        payload = np.concatenate([c.prec_diag, c.W.ravel()])
    fh.write(f"{_MAGIC} kind={b.kind} P={b.n_params} R={R}\n")
    np.savetxt(fh, np.concatenate([b.mean, payload]), fmt="%.17g")


def load_belief(fh) -> GaussianBelief:
    header = fh.readline().split()
    if not header or header[0] != _MAGIC:
        raise ConfigurationError(f"not a belief dump (header {header[:1]!r})")
    fields = dict(item.split("=", 1) for item in header[1:])
    kind, P, R = fields["kind"], int(fields["P"]), int(fields["R"])
    data = np.loadtxt(io.StringIO(fh.read()), ndmin=1)
    mean, rest = data[:P], data[P:]
    if kind == "full":
        cov = FullCov(rest.reshape(P, P))
    elif kind == "diag":
        cov = DiagCov(rest)
    elif kind == "dlr":
        cov = DlrCov(rest[:P], rest[P:].reshape(P, R))
    else:
        raise ConfigurationError(f"unknown kind {kind!r} in belief dump")
    return GaussianBelief(mean, cov)


def with_mean(b: GaussianBelief, mean) -> GaussianBelief:
    return replace(b, mean=np.asarray(mean, dtype=np.float64))

"""Online update rules for module weights.

Every Bayesian rule maps a *predicted* belief and one labelled sample
``(x, bits)`` to a posterior belief. The Kalman-type rules linearise the
network around the predicted mean and use the Bernoulli covariance
``diag(ell * (1 - ell))`` as observation noise:

* ``cmekf_update``   full covariance (conditional-moments EKF)
* ``vdekf_update``   diagonal precision
* ``lofi_update``    diagonal plus rank-R precision
* ``bong_lin_update`` the natural-gradient step with linearised-Gaussian
  expectations written in information form; algebraically the same as
  ``cmekf_update`` for full covariances, used as a cross-check
* ``bong_ef_update`` natural-gradient step with a sampled empirical Fisher

Frequentist baselines (``gd_online_update``, ``sgd_batch_update``) act on a
plain parameter vector with the binary cross-entropy loss.

The ``Updater`` classes at the bottom bundle a rule with its predict step and
hyperparameters; they are what the receivers and the harness drive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from . import _backend
from .belief import (
    DiagCov,
    DlrCov,
    FullCov,
    GaussianBelief,
    SsmHyper,
    dlr_cov_matvec,
    predict,
    prior_belief,
)
from .errors import CapabilityError, ConfigurationError, NumericalError
from .network import MlpSpec, forward_jacobian, score_batch

__all__ = [
    "linearize",
    "kalman_step",
    "cmekf_update",
    "vdekf_update",
    "lofi_update",
    "bong_lin_update",
    "bong_ef_update",
    "bbb_online_update",
    "gd_online_update",
    "sgd_batch_update",
    "CmEkf",
    "VdEkf",
    "LoFi",
    "BongEf",
    "BbbOnline",
    "GdOnline",
    "SgdBatch",
    "Frozen",
    "make_updater",
    "UPDATER_NAMES",
]

OBS_FLOOR = 1e-6
_JITTER = 1e-9


@dataclass
class Linearization:
    ell: np.ndarray     # soft outputs at the predicted mean
    H: np.ndarray       # (B, P) output Jacobian
    r: np.ndarray       # floored Bernoulli variances (diagonal of R_t)
    innov: np.ndarray   # bits - ell


def linearize(spec: MlpSpec, mean, x, bits, eps: float = OBS_FLOOR) -> Linearization:
    bits = _bits(spec, bits)
    ell, H = forward_jacobian(spec, mean, x)
    r = np.maximum(ell * (1.0 - ell), eps)
    return Linearization(ell, H, r, bits - ell)


def _bits(spec: MlpSpec, bits) -> np.ndarray:
    bits = np.ascontiguousarray(bits, dtype=np.float64)
    if bits.shape != (spec.d_out,):
        raise ConfigurationError(f"expected {spec.d_out} label bits, got shape {bits.shape}")
    return bits


def _chol_innovation(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(S + _JITTER * np.eye(S.shape[0]))
    except np.linalg.LinAlgError:
        raise NumericalError(
            "innovation covariance is not positive definite",
            diag=np.diag(S).tolist(),
            min_eig=float(np.linalg.eigvalsh(S).min()),
        ) from None


def kalman_step(mean, sigma, H, r, innov):
    """Full-covariance Kalman correction; returns new ``(mean, sigma)``.

    ``K = Sigma H^T (H Sigma H^T + diag(r))^-1``, ``mu + K innov``,
    ``Sigma - K H Sigma`` (symmetrised).
    """
    H = np.atleast_2d(H)
    B = H.shape[0]
    SH = sigma @ H.T
    S = H @ SH
    S.flat[:: B + 1] += r
    L = _chol_innovation(S)
    # G = Sigma H^T L^-T, so K H Sigma = G G^T and K innov = G L^-1 innov;
    # one triangular solve handles both right-hand sides
    rhs = np.empty((B, SH.shape[0] + 1))
    rhs[:, :-1] = SH.T
    rhs[:, -1] = innov
    sol = sla.solve_triangular(L, rhs, lower=True, check_finite=False)
    G, w = sol[:, :-1].T, sol[:, -1]
    new_mean = mean + G @ w
    new_sigma = sigma - G @ G.T
    new_sigma += new_sigma.T
    new_sigma *= 0.5
    return new_mean, new_sigma


def cmekf_update(b_pred: GaussianBelief, spec: MlpSpec, x, bits,
                 eps: float = OBS_FLOOR) -> GaussianBelief:
    if not isinstance(b_pred.cov, FullCov):
        raise ConfigurationError("cmekf_update needs a full-covariance belief")
    lin = linearize(spec, b_pred.mean, x, bits, eps)
    mean, sigma = kalman_step(b_pred.mean, b_pred.cov.sigma, lin.H, lin.r, lin.innov)
    return GaussianBelief(mean, FullCov(sigma))


def bong_lin_update(b_pred: GaussianBelief, spec: MlpSpec, x, bits,
                    eps: float = OBS_FLOOR) -> GaussianBelief:
    """Natural-gradient step under the linearised-Gaussian likelihood (full covariance).

    Computed in information form: the expected Hessian of the Gaussian
    surrogate is ``-H^T R^-1 H`` and the expected gradient at the predicted
    mean is ``H^T R^-1 (bits - ell)``.
    """
    if not isinstance(b_pred.cov, FullCov):
        raise ConfigurationError("bong_lin_update needs a full-covariance belief")
    lin = linearize(spec, b_pred.mean, x, bits, eps)
    HtRinv = lin.H.T / lin.r
    prec = np.linalg.inv(b_pred.cov.sigma) + HtRinv @ lin.H
    sigma = np.linalg.inv(prec)
    sigma = 0.5 * (sigma + sigma.T)
    mean = b_pred.mean + sigma @ (HtRinv @ lin.innov)
    return GaussianBelief(mean, FullCov(sigma))


def _diag_step(mean, var, H, r, innov):
    prec = 1.0 / var + (H * H / r[:, None]).sum(axis=0)
    new_var = 1.0 / prec
    return mean + new_var * (H.T @ (innov / r)), new_var


def vdekf_update(b_pred: GaussianBelief, spec: MlpSpec, x, bits,
                 eps: float = OBS_FLOOR) -> GaussianBelief:
    """Diagonal variational EKF: the precision gains ``diag(H^T R^-1 H)``."""
    if not isinstance(b_pred.cov, DiagCov):
        raise ConfigurationError("vdekf_update needs a diagonal belief")
    lin = linearize(spec, b_pred.mean, x, bits, eps)
    mean, var = _diag_step(b_pred.mean, b_pred.cov.var, lin.H, lin.r, lin.innov)
    return GaussianBelief(mean, DiagCov(var))


def _dlr_absorb(c: DlrCov, A) -> DlrCov:
    """Add ``A A^T`` to the precision and project back to the original rank.

    The leading R directions of ``[W, A]`` are found from its small Gram
    matrix (same subspace as a thin SVD, much cheaper for tall factors); the
    diagonal of whatever is discarded is moved into ``prec_diag`` so the
    precision diagonal stays exact.
    """
    R = c.rank
    if R == 0:
        return DlrCov(c.prec_diag + (A * A).sum(axis=1), c.W.copy())
    Wt = np.hstack([c.W, A])
    try:
        _, V = np.linalg.eigh(Wt.T @ Wt)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition of low-rank factor failed",
                             shape=Wt.shape) from exc
    V = V[:, ::-1]
    W_new = Wt @ V[:, :R]
    extra = Wt @ V[:, R:]
    return DlrCov(c.prec_diag + (extra * extra).sum(axis=1), W_new)


def lofi_update(b_pred: GaussianBelief, spec: MlpSpec, x, bits,
                eps: float = OBS_FLOOR) -> GaussianBelief:
    """Diagonal-plus-low-rank EKF step.

    Precision ``D + W W^T + H^T R^-1 H`` truncated back to rank R; the mean
    moves by ``Sigma_t H^T R^-1 (bits - ell)`` with the truncated posterior
    covariance applied through Woodbury.
    """
    if not isinstance(b_pred.cov, DlrCov):
        raise ConfigurationError("lofi_update needs a DLR belief")
    lin = linearize(spec, b_pred.mean, x, bits, eps)
    A = lin.H.T / np.sqrt(lin.r)
    cov = _dlr_absorb(b_pred.cov, A)
    mean = b_pred.mean + dlr_cov_matvec(cov, lin.H.T @ (lin.innov / lin.r))
    return GaussianBelief(mean, cov)


# ---------------------------------------------------------------------------
# Empirical-Fisher natural gradient
# ---------------------------------------------------------------------------


def _chol_cov(sigma):
    try:
        return sla.cholesky(sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    try:
        return sla.cholesky(sigma + _JITTER * np.eye(sigma.shape[0]), lower=True,
                            check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance is not positive definite",
                             min_diag=float(np.diag(sigma).min())) from None


def sample_belief(b: GaussianBelief, n: int, rng: np.random.Generator,
                  antithetic: bool = True) -> np.ndarray:
    """``(n, P)`` draws from ``b``; antithetic pairs ``mu +- z`` when requested."""
    P = b.n_params
    half = (n + 1) // 2 if antithetic else n
    c = b.cov
    if isinstance(c, FullCov):
        L = _chol_cov(c.sigma)
        Z = rng.standard_normal((half, P)) @ L.T
    elif isinstance(c, DiagCov):
        Z = rng.standard_normal((half, P)) * np.sqrt(c.var)
    else:
        # Lambda^-1 (sqrt(d) e1 + W e2) has covariance Lambda^-1
        E = (rng.standard_normal((half, P)) * np.sqrt(c.prec_diag)
             + rng.standard_normal((half, c.rank)) @ c.W.T)
        Z = dlr_cov_matvec(c, E.T).T
    if antithetic:
        Z = np.vstack([Z, -Z])[:n]
    return b.mean + Z


def bong_ef_update(b_pred: GaussianBelief, spec: Optional[MlpSpec], x, bits,
                   n_samples: int = 10, rng: Optional[np.random.Generator] = None,
                   score_fn: Optional[Callable] = None,
                   antithetic: bool = True) -> GaussianBelief:
    """One natural-gradient step with Monte-Carlo expectations.

    The precision grows by the mean outer product of the sampled
    log-likelihood gradients (empirical Fisher); the mean moves by the new
    covariance times the mean sampled gradient. ``score_fn(thetas)`` may
    replace the network score for testing.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    thetas = sample_belief(b_pred, n_samples, rng, antithetic)
    if score_fn is None:
        G = score_batch(spec, thetas, x, bits)
    else:
        G = np.atleast_2d(score_fn(thetas))
    gbar = G.mean(axis=0)
    U = G.T / math.sqrt(n_samples)
    c = b_pred.cov
    if isinstance(c, FullCov):
        SU = c.sigma @ U
        C = np.eye(n_samples) + U.T @ SU
        sigma = c.sigma - SU @ np.linalg.solve(C, SU.T)
        sigma = 0.5 * (sigma + sigma.T)
        return GaussianBelief(b_pred.mean + sigma @ gbar, FullCov(sigma))
    if isinstance(c, DiagCov):
        var = 1.0 / (1.0 / c.var + (U * U).sum(axis=1))
        return GaussianBelief(b_pred.mean + var * gbar, DiagCov(var))
    cov = _dlr_absorb(c, U)
    return GaussianBelief(b_pred.mean + dlr_cov_matvec(cov, gbar), cov)


# ---------------------------------------------------------------------------
# Iterative baselines
# ---------------------------------------------------------------------------


def online_elbo(mu, log_var, mu_pred, var_pred, lin: Linearization) -> float:
    """Linearised online ELBO loss for a diagonal Gaussian (up to constants)."""
    var = np.exp(log_var)
    d = mu - mu_pred
    resid = lin.innov - lin.H @ d
    nll = 0.5 * np.sum((resid**2 + (lin.H**2) @ var) / lin.r)
    kl = 0.5 * np.sum(var / var_pred + d * d / var_pred - 1.0 - (log_var - np.log(var_pred)))
    return float(nll + kl)


def online_elbo_grad(mu, log_var, mu_pred, var_pred, lin: Linearization):
    var = np.exp(log_var)
    d = mu - mu_pred
    resid = lin.innov - lin.H @ d
    g_mu = -lin.H.T @ (resid / lin.r) + d / var_pred
    curv = (lin.H**2).T @ (1.0 / lin.r)
    g_logvar = var * (0.5 * curv + 0.5 * (1.0 / var_pred - 1.0 / var))
    return g_mu, g_logvar


def bbb_online_update(b_pred: GaussianBelief, spec: MlpSpec, x, bits,
                      iters: int = 10, lr: float = 1e-2,
                      eps: float = OBS_FLOOR) -> GaussianBelief:
    """``iters`` gradient steps on the online ELBO over ``(mu, log var)``.

    The expected log-likelihood uses the Gaussian surrogate linearised at the
    predicted mean, so both terms are closed form; the KL term is taken
    against the predicted belief and vanishes at the starting point.
    """
    if not isinstance(b_pred.cov, DiagCov):
        raise ConfigurationError("bbb_online_update needs a diagonal belief")
    if iters < 0:
        raise ConfigurationError("iters must be non-negative")
    mu_p, var_p = b_pred.mean, b_pred.cov.var
    if iters == 0 or lr == 0.0:
        return b_pred.copy()
    lin = linearize(spec, mu_p, x, bits, eps)
    mu, log_var = mu_p.copy(), np.log(var_p)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        for _ in range(iters):
            g_mu, g_lv = online_elbo_grad(mu, log_var, mu_p, var_p, lin)
            mu -= lr * g_mu
            log_var -= lr * g_lv
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(log_var))):
        raise NumericalError("online ELBO iterates diverged", lr=lr, iters=iters)
    return GaussianBelief(mu, DiagCov(np.exp(log_var)))


def gd_online_update(theta, spec: MlpSpec, x, bits, iters: int = 10,
                     lr: float = 1e-2) -> np.ndarray:
    """``iters`` gradient steps on the cross-entropy of one sample."""
    theta = np.array(theta, dtype=np.float64)
    for _ in range(iters):
        theta += lr * score_batch(spec, theta, x, bits)[0]
    return theta


def sgd_batch_update(theta, spec: MlpSpec, X, bits, epochs: int = 8, batch: int = 4,
                     lr: float = 1e-2, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Mini-batch SGD over a buffer of pilots (mean gradient per batch)."""
    theta = np.array(theta, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.float64)
    n = X.shape[0] if X.ndim == 2 else 0
    if n == 0 or lr == 0.0:
        return theta
    rng = np.random.default_rng(0) if rng is None else rng
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            g = np.zeros_like(theta)
            for i in idx:
                g += score_batch(spec, theta, X[i], bits[i])[0]
            theta += lr * g / len(idx)
    return theta


# ---------------------------------------------------------------------------
# Updater objects
# ---------------------------------------------------------------------------


@dataclass
class _Bayesian:
    hyper: SsmHyper = field(default_factory=SsmHyper)
    eps: float = OBS_FLOOR
    max_full_params: int = 16384

    bayesian = True
    streaming = True
    representation = "full"

    def init_state(self, theta0, rng=None) -> GaussianBelief:
        theta0 = np.asarray(theta0, dtype=np.float64)
        if self.representation == "full" and theta0.shape[0] > self.max_full_params:
            raise CapabilityError(
                f"{self.name}: full covariance over P={theta0.shape[0]} parameters "
                f"exceeds the cap of {self.max_full_params}"
            )
        return prior_belief(theta0, self.hyper, self.representation, getattr(self, "rank", 0))

    def params(self, state: GaussianBelief) -> np.ndarray:
        return state.mean

    def step(self, state, spec, x, bits, rng=None):
        return self.update(predict(state, self.hyper), spec, x, bits, rng)


@dataclass
class CmEkf(_Bayesian):
    name = "cm-ekf"
    representation = "full"

    def update(self, b_pred, spec, x, bits, rng=None):
        return cmekf_update(b_pred, spec, x, bits, self.eps)

    def step(self, state, spec, x, bits, rng=None):
        """Predict + update, overwriting ``state`` (the O(P^2) buffers are reused)."""
        g, q = self.hyper.gamma, self.hyper.sigma2
        mean, sigma = state.mean, state.cov.sigma
        mean *= g
        lin = linearize(spec, mean, x, bits, self.eps)
        kern = (_backend.ext or _backend.py).cmekf_step
        if kern(mean, sigma, np.ascontiguousarray(lin.H), lin.r, lin.innov, g * g, q) != 0:
            raise NumericalError("innovation covariance is not positive definite",
                                 r=lin.r.tolist())
        return state


@dataclass
class VdEkf(_Bayesian):
    name = "vd-ekf"
    representation = "diag"

    def update(self, b_pred, spec, x, bits, rng=None):
        return vdekf_update(b_pred, spec, x, bits, self.eps)

    def step(self, state, spec, x, bits, rng=None):
        if not spec._compiled:
            return super().step(state, spec, x, bits, rng)
        # fused predict + update; works in place on copies of the state
        mean, var = state.mean.copy(), state.cov.var.copy()
        d, h, B = spec.widths
        _backend.ext.diag_ekf_step(mean, var, spec._check_x(x), _bits(spec, bits),
                                   self.hyper.gamma, self.hyper.sigma2, self.eps, d, h, B)
        return GaussianBelief(mean, DiagCov(var))


@dataclass
class LoFi(_Bayesian):
    rank: int = 10
    name = "lo-fi"
    representation = "dlr"

    def update(self, b_pred, spec, x, bits, rng=None):
        return lofi_update(b_pred, spec, x, bits, self.eps)

    def step(self, state, spec, x, bits, rng=None):
        if _backend.ext is None:
            return super().step(state, spec, x, bits, rng)
        g, q = self.hyper.gamma, self.hyper.sigma2
        mean = g * state.mean
        d, W = state.cov.prec_diag.copy(), np.ascontiguousarray(state.cov.W, dtype=np.float64).copy()
        lin = linearize(spec, mean, x, bits, self.eps)
        info = _backend.ext.dlr_step(mean, d, W, np.ascontiguousarray(lin.H), lin.r,
                                     lin.innov, g, q)
        if info != 0:
            raise NumericalError("low-rank factor update failed", lapack_info=int(info))
        return GaussianBelief(mean, DlrCov(d, W))


@dataclass
class BongEf(_Bayesian):
    n_samples: int = 10
    kind: str = "full"
    rank: int = 10
    antithetic: bool = True
    name = "bong-ef"

    @property
    def representation(self):
        return self.kind

    def update(self, b_pred, spec, x, bits, rng=None):
        return bong_ef_update(b_pred, spec, x, bits, self.n_samples, rng,
                              antithetic=self.antithetic)

    def step(self, state, spec, x, bits, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        if self.kind == "full":
            return self._full_step(state, spec, x, bits, rng)
        if self.kind == "diag" and spec._compiled:
            M = self.n_samples
            half = (M + 1) // 2 if self.antithetic else M
            mean, var = state.mean.copy(), state.cov.var.copy()
            Z = rng.standard_normal((half, mean.shape[0]))
            d, h, B = spec.widths
            _backend.ext.diag_ef_step(mean, var, Z, M, spec._check_x(x), _bits(spec, bits),
                                      self.hyper.gamma, self.hyper.sigma2, d, h, B)
            return GaussianBelief(mean, DiagCov(var))
        return super().step(state, spec, x, bits, rng)

    def _full_step(self, state, spec, x, bits, rng):
        # same arithmetic as predict + bong_ef_update, overwriting ``state``
        g, q, M = self.hyper.gamma, self.hyper.sigma2, self.n_samples
        mean, sigma = state.mean, state.cov.sigma
        mean *= g
        sigma *= g * g
        sigma.flat[:: sigma.shape[0] + 1] += q
        thetas = sample_belief(state, M, rng, self.antithetic)
        G = score_batch(spec, thetas, x, bits)
        U = G.T / math.sqrt(M)
        SU = sigma @ U
        C = U.T @ SU
        C.flat[:: C.shape[0] + 1] += 1.0
        F = sla.solve_triangular(_chol_innovation(C), SU.T, lower=True,
                                 check_finite=False).T
        sigma -= F @ F.T
        mean += sigma @ G.mean(axis=0)
        return state


@dataclass
class BbbOnline(_Bayesian):
    iters: int = 10
    lr: float = 1e-2
    name = "bbb"
    representation = "diag"

    def update(self, b_pred, spec, x, bits, rng=None):
        return bbb_online_update(b_pred, spec, x, bits, self.iters, self.lr, self.eps)


@dataclass
class GdOnline:
    iters: int = 10
    lr: float = 1e-2
    name = "gd"
    bayesian = False
    streaming = True

    def init_state(self, theta0, rng=None):
        return np.array(theta0, dtype=np.float64)

    def params(self, state):
        return state

    def step(self, state, spec, x, bits, rng=None):
        return gd_online_update(state, spec, x, bits, self.iters, self.lr)


@dataclass
class SgdBatch:
    epochs: int = 8
    batch: int = 4
    lr: float = 1e-2
    name = "sgd"
    bayesian = False
    streaming = False

    def init_state(self, theta0, rng=None):
        return np.array(theta0, dtype=np.float64)

    def params(self, state):
        return state

    def fit(self, state, spec, X, bits, rng=None):
        return sgd_batch_update(state, spec, X, bits, self.epochs, self.batch, self.lr, rng)


@dataclass
class Frozen:
    """No adaptation; keeps the initial weights."""

    name = "none"
    bayesian = False
    streaming = True

    def init_state(self, theta0, rng=None):
        return np.array(theta0, dtype=np.float64)

    def params(self, state):
        return state

    def step(self, state, spec, x, bits, rng=None):
        return state


_FACTORY = {
    "cm-ekf": CmEkf,
    "vd-ekf": VdEkf,
    "lo-fi": LoFi,
    "bong-ef": BongEf,
    "bbb": BbbOnline,
    "gd": GdOnline,
    "sgd": SgdBatch,
    "none": Frozen,
}

UPDATER_NAMES = tuple(_FACTORY)


def make_updater(name: str, hyper: Optional[SsmHyper] = None, **kw):
    """Build an updater by name (``cm-ekf``, ``vd-ekf``, ``lo-fi``, ``bong-ef``,
    ``bbb``, ``gd``, ``sgd``, ``none``)."""
    try:
        cls = _FACTORY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown updater {name!r}; choose from {', '.join(UPDATER_NAMES)}"
        ) from None
    if issubclass(cls, _Bayesian) and hyper is not None:
        kw["hyper"] = hyper
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigurationError(f"bad options for {name}: {exc}") from None

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for single-hidden-layer MLPs.

Layout matches the NumPy path: W1 (h, d) row-major, b1 (h), W2 (B, h), b2 (B).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt
cimport scipy.linalg.cython_blas as blas
cimport scipy.linalg.cython_lapack as lapack

cnp.import_array()

cdef Py_ssize_t _TILE = 32


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef void _hidden(const double[::1] th, const double[::1] x, int d, int h, int B,
                  double[::1] a, double[::1] z2) noexcept nogil:
    cdef Py_ssize_t j, m, i
    cdef Py_ssize_t ob1 = h * d
    cdef Py_ssize_t ow2 = ob1 + h
    cdef Py_ssize_t ob2 = ow2 + B * h
    cdef double s
    for j in range(h):
        s = 0.0
        for m in range(d):
            s += th[j * d + m] * x[m]
        s += th[ob1 + j]
        a[j] = s if s > 0 else 0.0
    for i in range(B):
        s = 0.0
        for j in range(h):
            s += th[ow2 + i * h + j] * a[j]
        z2[i] = s + th[ob2 + i]


def mlp1_forward(const double[::1] theta, const double[::1] x, int d, int h, int B):
    cdef double[::1] a = np.empty(h)
    cdef double[::1] z2 = np.empty(B)
    out = np.empty(B)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        _hidden(theta, x, d, h, B, a, z2)
        for i in range(B):
            o[i] = _sigmoid(z2[i])
    return out


def mlp1_logit_jacobian(const double[::1] theta, const double[::1] x, int d, int h, int B):
    """Return ``(ell, J)`` where ``J`` is the ``(B, P)`` logit Jacobian."""
    cdef Py_ssize_t P = h * d + h + B * h + B
    cdef double[::1] a = np.empty(h)
    cdef double[::1] z2 = np.empty(B)
    ell = np.empty(B)
    J = np.zeros((B, P))
    cdef double[::1] o = ell
    cdef double[:, ::1] Jv = J
    cdef Py_ssize_t i, j, m
    cdef Py_ssize_t ob1 = h * d
    cdef Py_ssize_t ow2 = ob1 + h
    cdef Py_ssize_t ob2 = ow2 + B * h
    cdef double c
    with nogil:
        _hidden(theta, x, d, h, B, a, z2)
        for i in range(B):
            o[i] = _sigmoid(z2[i])
            for j in range(h):
                if a[j] > 0:
                    c = theta[ow2 + i * h + j]
                    for m in range(d):
                        Jv[i, j * d + m] = c * x[m]
                    Jv[i, ob1 + j] = c
                Jv[i, ow2 + i * h + j] = a[j]
            Jv[i, ob2 + i] = 1.0
    return ell, J


def mlp1_score_batch(const double[:, ::1] thetas, const double[::1] x,
                     const double[::1] bits, int d, int h, int B):
    """Rows ``J_z(theta_m)^T (bits - ell(theta_m))`` for every sample."""
    cdef Py_ssize_t M = thetas.shape[0]
    cdef Py_ssize_t P = thetas.shape[1]
    cdef double[::1] a = np.empty(h)
    cdef double[::1] z2 = np.empty(B)
    cdef double[::1] w = np.empty(B)
    out = np.empty((M, P))
    cdef double[:, ::1] G = out
    cdef Py_ssize_t s, i, j, m
    cdef Py_ssize_t ob1 = h * d
    cdef Py_ssize_t ow2 = ob1 + h
    cdef Py_ssize_t ob2 = ow2 + B * h
    cdef double delta
    with nogil:
        for s in range(M):
            _hidden(thetas[s], x, d, h, B, a, z2)
            for i in range(B):
                w[i] = bits[i] - _sigmoid(z2[i])
                for j in range(h):
                    G[s, ow2 + i * h + j] = w[i] * a[j]
                G[s, ob2 + i] = w[i]
            for j in range(h):
                delta = 0.0
                if a[j] > 0:
                    for i in range(B):
                        delta = delta + w[i] * thetas[s, ow2 + i * h + j]
                for m in range(d):
                    G[s, j * d + m] = delta * x[m]
                G[s, ob1 + j] = delta
    return out



cdef int _chol_small(double[:, ::1] S, double[:, ::1] L, int n, double jitter) noexcept nogil:
    """Lower Cholesky of a tiny SPD matrix; returns 0 on success."""
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        for j in range(i + 1):
            acc = S[i, j]
            if i == j:
                acc = acc + jitter
            for k in range(j):
                acc = acc - L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return -1
                L[i, i] = sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
        for j in range(i + 1, n):
            L[i, j] = 0.0
    return 0


def cmekf_step(double[::1] mean, double[:, ::1] sigma, const double[:, ::1] H,
               const double[::1] r, const double[::1] innov, double g2, double q,
               double jitter=1e-9):
    """Fused predict + Kalman correction, in place.

    ``mean`` must already hold the predicted mean (the point ``H`` was taken
    at); ``sigma`` holds the previous posterior covariance and is replaced by
    the new posterior ``g2 * sigma + q I - K H Sigma``. Only the upper
    triangle of the input is read and the result is mirrored, so the output
    is exactly symmetric. Returns 0, or -1 if the innovation matrix is not
    SPD even after one jitter retry.
    """
    cdef int P = sigma.shape[0]
    cdef int B = H.shape[0]
    cdef int PP = P * P, one = 1
    cdef double[:, ::1] SH = np.empty((P, B))
    cdef double[:, ::1] G = np.empty((P, B))
    cdef double[:, ::1] S = np.empty((B, B))
    cdef double[:, ::1] L = np.empty((B, B))
    cdef double[::1] w = np.empty(B)
    cdef double alpha = 1.0, beta = 0.0, minus = -1.0
    cdef Py_ssize_t i, j, a, b, ib, jb, ie, je, it, jt, nt
    cdef double acc
    cdef int status
    with nogil:
        blas.dscal(&PP, &g2, &sigma[0, 0], &one)
        for i in range(P):
            sigma[i, i] += q
        # row-major SH (P x B) is column-major (B x P) = H Sigma
        blas.dgemm(b"T", b"N", &B, &P, &P, &alpha, <double*>&H[0, 0], &P,
                   &sigma[0, 0], &P, &beta, &SH[0, 0], &B)
        for a in range(B):
            for b in range(a + 1):
                acc = 0.0
                for i in range(P):
                    acc = acc + H[a, i] * SH[i, b]
                S[a, b] = acc
                S[b, a] = acc
            S[a, a] += r[a]
        status = _chol_small(S, L, B, 0.0)
        if status != 0:
            status = _chol_small(S, L, B, jitter)
        if status == 0:
            # G = SH L^-T (row-wise forward substitution), w = L^-1 innov
            for i in range(P):
                for a in range(B):
                    acc = SH[i, a]
                    for b in range(a):
                        acc = acc - L[a, b] * G[i, b]
                    G[i, a] = acc / L[a, a]
            for a in range(B):
                acc = innov[a]
                for b in range(a):
                    acc = acc - L[a, b] * w[b]
                w[a] = acc / L[a, a]
            for i in range(P):
                acc = 0.0
                for a in range(B):
                    acc = acc + G[i, a] * w[a]
                mean[i] += acc
            # column-major lower triangle == row-major upper triangle
            blas.dsyrk(b"L", b"T", &P, &B, &minus, &G[0, 0], &B, &alpha, &sigma[0, 0], &P)
            nt = (P + _TILE - 1) // _TILE
            for it in range(nt):
                ib = it * _TILE
                ie = ib + _TILE if ib + _TILE < P else P
                for jt in range(it + 1):
                    jb = jt * _TILE
                    for i in range(ib, ie):
                        je = jb + _TILE if jb + _TILE < i else i
                        for j in range(jb, je):
                            sigma[i, j] = sigma[j, i]
    return status


def diag_ekf_step(double[::1] mean, double[::1] var, const double[::1] x,
                  const double[::1] bits, double gamma, double q, double eps,
                  int d, int h, int B):
    """Fused predict + diagonal-precision EKF step for a one-hidden-layer MLP, in place.

    Uses the structure of the Jacobian directly instead of materialising it.
    """
    cdef Py_ssize_t P = h * d + h + B * h + B
    cdef Py_ssize_t ob1 = h * d
    cdef Py_ssize_t ow2 = ob1 + h
    cdef Py_ssize_t ob2 = ow2 + B * h
    cdef double[::1] a = np.empty(h)
    cdef double[::1] z2 = np.empty(B)
    cdef double[::1] sp = np.empty(B)
    cdef double[::1] rinv = np.empty(B)
    cdef double[::1] e = np.empty(B)
    cdef double[::1] alpha = np.empty(h)
    cdef double[::1] beta = np.empty(h)
    cdef Py_ssize_t i, j, m, p
    cdef double ell, c, g, wv, prec
    with nogil:
        for p in range(P):
            mean[p] = gamma * mean[p]
            var[p] = gamma * gamma * var[p] + q
        _hidden(mean, x, d, h, B, a, z2)
        for i in range(B):
            ell = _sigmoid(z2[i])
            sp[i] = ell * (1.0 - ell)
            rinv[i] = 1.0 / (sp[i] if sp[i] > eps else eps)
            e[i] = bits[i] - ell
        for j in range(h):
            alpha[j] = 0.0
            beta[j] = 0.0
            if a[j] > 0:
                for i in range(B):
                    wv = sp[i] * mean[ow2 + i * h + j]
                    alpha[j] += wv * wv * rinv[i]
                    beta[j] += wv * e[i] * rinv[i]
        for j in range(h):
            for m in range(d):
                p = j * d + m
                c = alpha[j] * x[m] * x[m]
                g = beta[j] * x[m]
                prec = 1.0 / var[p] + c
                var[p] = 1.0 / prec
                mean[p] += var[p] * g
            p = ob1 + j
            prec = 1.0 / var[p] + alpha[j]
            var[p] = 1.0 / prec
            mean[p] += var[p] * beta[j]
        for i in range(B):
            for j in range(h):
                p = ow2 + i * h + j
                wv = sp[i] * a[j]
                prec = 1.0 / var[p] + wv * wv * rinv[i]
                var[p] = 1.0 / prec
                mean[p] += var[p] * wv * e[i] * rinv[i]
            p = ob2 + i
            prec = 1.0 / var[p] + sp[i] * sp[i] * rinv[i]
            var[p] = 1.0 / prec
            mean[p] += var[p] * sp[i] * e[i] * rinv[i]
    return 0


def diag_ef_step(double[::1] mean, double[::1] var, const double[:, ::1] Z, int M,
                 const double[::1] x, const double[::1] bits, double gamma, double q,
                 int d, int h, int B):
    """Fused predict + empirical-Fisher natural-gradient step, diagonal belief, in place.

    ``Z`` holds standard-normal draws; sample ``s`` uses ``+Z[s]`` for the
    first ``Z.shape[0]`` samples and ``-Z[s - half]`` afterwards (antithetic).
    """
    cdef Py_ssize_t P = h * d + h + B * h + B
    cdef Py_ssize_t half = Z.shape[0]
    cdef Py_ssize_t ob1 = h * d
    cdef Py_ssize_t ow2 = ob1 + h
    cdef Py_ssize_t ob2 = ow2 + B * h
    cdef double[::1] sd = np.empty(P)
    cdef double[::1] th = np.empty(P)
    cdef double[::1] gsum = np.zeros(P)
    cdef double[::1] gsq = np.zeros(P)
    cdef double[::1] a = np.empty(h)
    cdef double[::1] z2 = np.empty(B)
    cdef double[::1] w = np.empty(B)
    cdef Py_ssize_t s, i, j, m, p, row
    cdef double sign, delta, g, invM = 1.0 / M
    with nogil:
        for p in range(P):
            mean[p] = gamma * mean[p]
            var[p] = gamma * gamma * var[p] + q
            sd[p] = sqrt(var[p])
        for s in range(M):
            if s < half:
                row = s
                sign = 1.0
            else:
                row = s - half
                sign = -1.0
            for p in range(P):
                th[p] = mean[p] + sign * sd[p] * Z[row, p]
            _hidden(th, x, d, h, B, a, z2)
            for i in range(B):
                w[i] = bits[i] - _sigmoid(z2[i])
                for j in range(h):
                    g = w[i] * a[j]
                    p = ow2 + i * h + j
                    gsum[p] += g
                    gsq[p] += g * g
                p = ob2 + i
                gsum[p] += w[i]
                gsq[p] += w[i] * w[i]
            for j in range(h):
                if a[j] > 0:
                    delta = 0.0
                    for i in range(B):
                        delta = delta + w[i] * th[ow2 + i * h + j]
                    for m in range(d):
                        g = delta * x[m]
                        p = j * d + m
                        gsum[p] += g
                        gsq[p] += g * g
                    gsum[ob1 + j] += delta
                    gsq[ob1 + j] += delta * delta
        for p in range(P):
            var[p] = 1.0 / (1.0 / var[p] + gsq[p] * invM)
            mean[p] += var[p] * gsum[p] * invM
    return 0


cdef inline void _gram(double* A, int lda, double* B, int ldb, double* C, int ldc,
                       int m, int P) noexcept nogil:
    """``C = A^T B`` over the first ``m`` columns of row-major ``(P, ld)`` buffers.

    Column-major the buffers are ``(ld, P)``, so this is ``A B^T`` on the
    leading ``m`` rows; ``C`` is written column-major with leading dim ``ldc``.
    """
    cdef double one = 1.0, zero = 0.0
    blas.dgemm(b"N", b"T", &m, &m, &P, &one, A, &lda, B, &ldb, &zero, C, &ldc)


cdef int _dlr_core(double[::1] mean, double[::1] d, double[:, ::1] W,
                   const double[:, ::1] H, const double[::1] r, const double[::1] innov,
                   double g, double q, double[:, ::1] X, double[:, ::1] C,
                   double[:, ::1] Xo, double[::1] ev, double[::1] work,
                   double[::1] e_inv, double[::1] v, double[::1] t) noexcept nogil:
    cdef int P = W.shape[0]
    cdef int R = W.shape[1]
    cdef int B = H.shape[0]
    cdef int n = R + B
    cdef int lwork = work.shape[0]
    cdef int info = 0, nrhs = 1
    cdef double one = 1.0, zero = 0.0, g2 = g * g, inv_q
    cdef double ig = 1.0 / g, ig2 = 1.0 / (g * g)
    cdef double rs[16]
    cdef Py_ssize_t i, j, k, b
    cdef double acc, s
    if B > 16:
        return -1000
    # predict
    if q == 0.0:
        for i in range(P):
            d[i] = d[i] * ig2
            for j in range(R):
                W[i, j] = W[i, j] * ig
    else:
        inv_q = 1.0 / q
        for i in range(P):
            e_inv[i] = 1.0 / (d[i] * ig2 + inv_q)
            d[i] = d[i] / (g2 + q * d[i])
        if R > 0:
            # Wt = W / g (kept in X), EW = e_inv * Wt (kept in W)
            for i in range(P):
                for j in range(R):
                    X[i, j] = W[i, j] * ig
                    W[i, j] = e_inv[i] * X[i, j]
            # C = I + Wt^T EW; with row-major (P, R) == column-major (R, P)
            _gram(&X[0, 0], n, &W[0, 0], R, &C[0, 0], n, R, P)
            for j in range(R):
                C[j, j] += 1.0
            lapack.dpotrf(b"U", &R, &C[0, 0], &n, &info)
            if info != 0:
                return info
            # W' = EW chol^-T / q  (column-major: solve U^T Y = EW^T)
            lapack.dtrtrs(b"U", b"T", b"N", &R, &P, &C[0, 0], &n, &W[0, 0], &R, &info)
            if info != 0:
                return info
            for i in range(P):
                for j in range(R):
                    W[i, j] = W[i, j] * inv_q
    # absorb A = H^T / sqrt(r)
    for b in range(B):
        rs[b] = 1.0 / sqrt(r[b])
    if R == 0:
        for b in range(B):
            s = 1.0 / r[b]
            for i in range(P):
                d[i] += H[b, i] * H[b, i] * s
    else:
        for i in range(P):
            for j in range(R):
                X[i, j] = W[i, j]
            for b in range(B):
                X[i, R + b] = H[b, i] * rs[b]
        _gram(&X[0, 0], n, &X[0, 0], n, &C[0, 0], n, n, P)
        lapack.dsyev(b"V", b"U", &n, &C[0, 0], &n, &ev[0], &work[0], &lwork, &info)
        if info != 0:
            return info
        # eigenvectors are the rows of C in row-major (columns column-major);
        # ascending order, so the last R are kept and the first B discarded
        blas.dgemm(b"T", b"N", &n, &P, &n, &one, &C[0, 0], &n, &X[0, 0], &n,
                   &zero, &Xo[0, 0], &n)
        for i in range(P):
            acc = 0.0
            for k in range(B):
                acc = acc + Xo[i, k] * Xo[i, k]
            d[i] += acc
            for j in range(R):
                W[i, j] = Xo[i, B + j]
    # mean += (D + W W^T)^-1 H^T R^-1 innov via Woodbury
    for i in range(P):
        acc = 0.0
        for b in range(B):
            acc = acc + H[b, i] * rs[b] * rs[b] * innov[b]
        v[i] = acc / d[i]
    if R > 0:
        for i in range(P):
            for j in range(R):
                X[i, j] = W[i, j] / d[i]
        _gram(&W[0, 0], R, &X[0, 0], n, &C[0, 0], n, R, P)
        for j in range(R):
            C[j, j] += 1.0
            acc = 0.0
            for i in range(P):
                acc = acc + W[i, j] * v[i]
            t[j] = acc
        lapack.dpotrf(b"U", &R, &C[0, 0], &n, &info)
        if info != 0:
            return info
        lapack.dpotrs(b"U", &R, &nrhs, &C[0, 0], &n, &t[0], &R, &info)
        if info != 0:
            return info
        for i in range(P):
            acc = 0.0
            for j in range(R):
                acc = acc + X[i, j] * t[j]
            v[i] = v[i] - acc
    for i in range(P):
        mean[i] += v[i]
    return 0


def dlr_step(double[::1] mean, double[::1] d, double[:, ::1] W, const double[:, ::1] H,
             const double[::1] r, const double[::1] innov, double g, double q):
    """Fused predict + diagonal-plus-low-rank precision update, in place.

    ``mean`` already holds the predicted mean; ``d`` and ``W`` hold the
    previous posterior precision ``diag(d) + W W^T`` and are overwritten by the
    new one (rank kept at ``W.shape[1]``). Same arithmetic as the NumPy path:
    exact predict, absorb ``H^T R^-1 H``, keep the leading R directions of
    the stacked factor, move the diagonal of the rest into ``d``, then move
    the mean by the new covariance times ``H^T R^-1 innov``.
    Returns 0, or the failing LAPACK ``info`` (non-zero).
    """
    cdef int P = W.shape[0]
    cdef int n = W.shape[1] + H.shape[0]
    cdef int info
    cdef double[:, ::1] X = np.empty((P, n))
    cdef double[:, ::1] C = np.empty((n, n))
    cdef double[:, ::1] Xo = np.empty((P, n))
    cdef double[::1] ev = np.empty(n)
    cdef double[::1] work = np.empty(8 * n + 8)
    cdef double[::1] e_inv = np.empty(P)
    cdef double[::1] v = np.empty(P)
    cdef double[::1] t = np.empty(max(W.shape[1], 1))
    with nogil:
        info = _dlr_core(mean, d, W, H, r, innov, g, q, X, C, Xo, ev, work, e_inv, v, t)
    return info

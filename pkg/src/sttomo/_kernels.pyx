# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: bump jets, inverse-metric jets, Hamiltonian field.

Signatures match ``sttomo._fallback`` one to one.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()

cdef enum:
    MAXD = 8


def bump_jet(x, centers, widths, int order):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(centers, dtype=np.float64)
    cdef double[::1] W = np.ascontiguousarray(widths, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], K = C.shape[0], n = X.shape[1]
    cdef Py_ssize_t b, k, i, j, l
    cdef double q, a, F, F1 = 0.0, F2 = 0.0, F3 = 0.0, w, w2, dij, dik, djk
    cdef double u[MAXD]
    cdef double qi[MAXD]

    b0 = np.zeros((B, K))
    cdef double[:, ::1] V0 = b0
    out = [b0]
    cdef double[:, :, ::1] V1
    cdef double[:, :, :, ::1] V2
    cdef double[:, :, :, :, ::1] V3
    if order >= 1:
        a1 = np.zeros((B, K, n))
        V1 = a1
        out.append(a1)
    if order >= 2:
        a2 = np.zeros((B, K, n, n))
        V2 = a2
        out.append(a2)
    if order >= 3:
        a3 = np.zeros((B, K, n, n, n))
        V3 = a3
        out.append(a3)

    with nogil:
        for b in range(B):
            for k in range(K):
                w = W[k]
                w2 = w * w
                q = 0.0
                for i in range(n):
                    u[i] = (X[b, i] - C[k, i]) / w
                    q = q + u[i] * u[i]
                if q >= 1.0:
                    continue
                a = 1.0 / (1.0 - q)
                F = exp(1.0 - a)
                V0[b, k] = F
                if order < 1:
                    continue
                F1 = -a * a * F
                for i in range(n):
                    qi[i] = 2.0 * u[i] / w
                    V1[b, k, i] = F1 * qi[i]
                if order < 2:
                    continue
                F2 = (a * a * a * a - 2.0 * a * a * a) * F
                for i in range(n):
                    for j in range(n):
                        dij = 2.0 / w2 if i == j else 0.0
                        V2[b, k, i, j] = F2 * qi[i] * qi[j] + F1 * dij
                if order < 3:
                    continue
                F3 = (-a * a * a * a * a * a + 6.0 * a * a * a * a * a - 6.0 * a * a * a * a) * F
                for i in range(n):
                    for j in range(n):
                        dij = 2.0 / w2 if i == j else 0.0
                        for l in range(n):
                            dik = 2.0 / w2 if i == l else 0.0
                            djk = 2.0 / w2 if j == l else 0.0
                            V3[b, k, i, j, l] = (F3 * qi[i] * qi[j] * qi[l]
                                                 + F2 * (dij * qi[l] + dik * qi[j] + djk * qi[i]))
    return out


cdef int _invert(double* A, double* Ainv, int D) noexcept nogil:
    # Gauss-Jordan with partial pivoting on a D x D row-major block.
    cdef double M[MAXD * 2 * MAXD]
    cdef int i, j, r, piv, W = 2 * D
    cdef double best, f, t
    for i in range(D):
        for j in range(D):
            M[i * W + j] = A[i * D + j]
            M[i * W + D + j] = 1.0 if i == j else 0.0
    for i in range(D):
        piv = i
        best = fabs(M[i * W + i])
        for r in range(i + 1, D):
            if fabs(M[r * W + i]) > best:
                best = fabs(M[r * W + i])
                piv = r
        if best == 0.0:
            return -1
        if piv != i:
            for j in range(W):
                t = M[i * W + j]
                M[i * W + j] = M[piv * W + j]
                M[piv * W + j] = t
        f = 1.0 / M[i * W + i]
        for j in range(W):
            M[i * W + j] = M[i * W + j] * f
        for r in range(D):
            if r != i:
                f = M[r * W + i]
                if f != 0.0:
                    for j in range(W):
                        M[r * W + j] = M[r * W + j] - f * M[i * W + j]
    for i in range(D):
        for j in range(D):
            Ainv[i * D + j] = M[i * W + D + j]
    return 0


def inverse_jet(G, dG, d2G=None):
    cdef double[:, :, ::1] Gm = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:, :, :, ::1] dGm = np.ascontiguousarray(dG, dtype=np.float64)
    cdef Py_ssize_t B = Gm.shape[0], D = Gm.shape[1], n = dGm.shape[3]
    cdef bint second = d2G is not None
    cdef double[:, :, :, :, ::1] d2Gm
    if second:
        d2Gm = np.ascontiguousarray(d2G, dtype=np.float64)

    Ginv = np.empty((B, D, D))
    dGinv = np.empty((B, D, D, n))
    cdef double[:, :, ::1] Gi = Ginv
    cdef double[:, :, :, ::1] dGi = dGinv
    cdef double[:, :, :, :, ::1] d2Gi
    if second:
        d2Ginv = np.empty((B, D, D, n, n))
        d2Gi = d2Ginv
    else:
        d2Ginv = None

    cdef double A[MAXD * MAXD]
    cdef double Ai[MAXD * MAXD]
    cdef double T[MAXD * MAXD * MAXD]   # T[k][i][j] = (Ginv dG_k)_ij
    cdef Py_ssize_t b, i, j, m, r, k, l
    cdef double s
    cdef int bad = 0

    with nogil:
        for b in range(B):
            for i in range(D):
                for j in range(D):
                    A[i * D + j] = Gm[b, i, j]
            if _invert(A, Ai, D) != 0:
                bad = 1
                break
            for i in range(D):
                for j in range(D):
                    Gi[b, i, j] = Ai[i * D + j]
            for k in range(n):
                for i in range(D):
                    for j in range(D):
                        s = 0.0
                        for m in range(D):
                            s = s + Ai[i * D + m] * dGm[b, m, j, k]
                        T[(k * D + i) * D + j] = s
                for i in range(D):
                    for r in range(D):
                        s = 0.0
                        for j in range(D):
                            s = s + T[(k * D + i) * D + j] * Ai[j * D + r]
                        dGi[b, i, r, k] = -s
            if not second:
                continue
            for k in range(n):
                for l in range(n):
                    for i in range(D):
                        for r in range(D):
                            s = 0.0
                            for j in range(D):
                                for m in range(D):
                                    s = s - Ai[i * D + j] * d2Gm[b, j, m, k, l] * Ai[m * D + r]
                                # G^-1 dG_k G^-1 dG_l G^-1 + (k <-> l)
                                s = s - T[(k * D + i) * D + j] * dGi[b, j, r, l]
                                s = s - T[(l * D + i) * D + j] * dGi[b, j, r, k]
                            d2Gi[b, i, r, k, l] = s
    if bad:
        raise np.linalg.LinAlgError("Singular matrix")
    return Ginv, dGinv, d2Ginv


def hamilton_rhs(Ginv, dGinv, d2Ginv, p, J, int off):
    cdef double[:, :, ::1] K = np.ascontiguousarray(Ginv, dtype=np.float64)
    cdef double[:, :, :, ::1] dK = np.ascontiguousarray(dGinv, dtype=np.float64)
    cdef double[:, ::1] P = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t B = P.shape[0], D = P.shape[1], n = dK.shape[3]
    cdef Py_ssize_t b, i, j, k, l, c
    cdef double s
    cdef bint var = J is not None
    cdef double[:, :, :, :, ::1] d2K
    cdef double[:, :, ::1] Jm
    dq = np.empty((B, D))
    dp = np.zeros((B, D))
    cdef double[:, ::1] DQ = dq
    cdef double[:, ::1] DP = dp
    cdef double[:, :, ::1] dJm
    cdef double Kp[MAXD * MAXD]
    cdef double DV[4 * MAXD * MAXD]
    if var:
        d2K = np.ascontiguousarray(d2Ginv, dtype=np.float64)
        Jm = np.ascontiguousarray(J, dtype=np.float64)
        dJ = np.empty((B, 2 * D, 2 * D))
        dJm = dJ
    else:
        dJ = None
    cdef Py_ssize_t W = 2 * D

    with nogil:
        for b in range(B):
            for i in range(D):
                s = 0.0
                for j in range(D):
                    s = s + K[b, i, j] * P[b, j]
                DQ[b, i] = s
            for k in range(n):
                for i in range(D):
                    s = 0.0
                    for j in range(D):
                        s = s + dK[b, i, j, k] * P[b, j]
                    Kp[i * n + k] = s
                s = 0.0
                for i in range(D):
                    s = s + Kp[i * n + k] * P[b, i]
                DP[b, off + k] = -0.5 * s
            if not var:
                continue
            for i in range(W * W):
                DV[i] = 0.0
            for i in range(D):
                for k in range(n):
                    DV[i * W + off + k] = Kp[i * n + k]
                for j in range(D):
                    DV[i * W + D + j] = K[b, i, j]
            for k in range(n):
                for l in range(n):
                    s = 0.0
                    for i in range(D):
                        for j in range(D):
                            s = s + P[b, i] * d2K[b, i, j, k, l] * P[b, j]
                    DV[(D + off + k) * W + off + l] = -0.5 * s
                for j in range(D):
                    DV[(D + off + k) * W + D + j] = -Kp[j * n + k]
            for i in range(W):
                for c in range(W):
                    s = 0.0
                    for j in range(W):
                        s = s + DV[i * W + j] * Jm[b, j, c]
                    dJm[b, i, c] = s
    return dq, dp, dJ


cdef void _mm(double* A, double* C, double* out, int D) noexcept nogil:
    # out = A C
    cdef int i, j, a
    cdef double s
    for i in range(D):
        for j in range(D):
            s = 0.0
            for a in range(D):
                s = s + A[i * D + a] * C[a * D + j]
            out[i * D + j] = s


cdef void _atmm(double* A, double* Y, double* out, int D, int off) noexcept nogil:
    # out += A^T Y, skipping the first ``off`` rows of A (zero for derivative blocks)
    cdef int i, j, a
    cdef double s
    for i in range(D):
        for j in range(D):
            s = 0.0
            for a in range(off, D):
                s = s + A[a * D + i] * Y[a * D + j]
            out[i * D + j] = out[i * D + j] + s


def pullback_jet(M, dM, d2M, P1, P2, P3, int order):
    cdef double[:, :, ::1] Mm = np.ascontiguousarray(M, dtype=np.float64)
    cdef double[:, :, ::1] P1m = np.ascontiguousarray(P1, dtype=np.float64)
    cdef Py_ssize_t B = Mm.shape[0], D = Mm.shape[1], n = P1m.shape[1]
    cdef int off = D - n
    cdef double[:, :, :, ::1] dMm
    cdef double[:, :, :, :, ::1] d2Mm
    cdef double[:, :, :, ::1] P2m
    cdef double[:, :, :, :, ::1] P3m
    if order >= 1:
        dMm = np.ascontiguousarray(dM, dtype=np.float64)
        P2m = np.ascontiguousarray(P2, dtype=np.float64)
    if order >= 2:
        d2Mm = np.ascontiguousarray(d2M, dtype=np.float64)
        P3m = np.ascontiguousarray(P3, dtype=np.float64)

    G = np.empty((B, D, D))
    cdef double[:, :, ::1] Gv = G
    out = [G]
    cdef double[:, :, :, ::1] dGv
    cdef double[:, :, :, :, ::1] d2Gv
    if order >= 1:
        dG = np.empty((B, D, D, n))
        dGv = dG
        out.append(dG)
    if order >= 2:
        d2G = np.empty((B, D, D, n, n))
        d2Gv = d2G
        out.append(d2G)

    cdef double L[MAXD * MAXD]
    cdef double X[MAXD * MAXD]
    cdef double XL[MAXD * MAXD]
    cdef double R[MAXD * MAXD]
    cdef double Y[MAXD * MAXD]
    cdef double Lk[MAXD * MAXD * MAXD]
    cdef double MkL[MAXD * MAXD * MAXD]
    cdef double Mk[MAXD * MAXD]
    cdef double Lkl[MAXD * MAXD]
    cdef double Mkl[MAXD * MAXD]
    cdef Py_ssize_t b, i, j, k, l, c, e
    cdef int DD = D * D
    cdef double s

    with nogil:
        for b in range(B):
            for i in range(DD):
                L[i] = 0.0
            for i in range(off):
                L[i * D + i] = 1.0
            for i in range(n):
                for j in range(n):
                    L[(off + i) * D + off + j] = P1m[b, i, j]
            for i in range(D):
                for j in range(D):
                    X[i * D + j] = Mm[b, i, j]
            _mm(X, L, XL, D)
            for i in range(DD):
                R[i] = 0.0
            _atmm(L, XL, R, D, 0)
            for i in range(D):
                for j in range(D):
                    Gv[b, i, j] = R[i * D + j]
            if order < 1:
                continue
            for k in range(n):
                for i in range(DD):
                    Lk[k * DD + i] = 0.0
                for i in range(n):
                    for j in range(n):
                        Lk[k * DD + (off + i) * D + off + j] = P2m[b, i, j, k]
                for i in range(D):
                    for j in range(D):
                        s = 0.0
                        for c in range(n):
                            s = s + dMm[b, i, j, c] * P1m[b, c, k]
                        Mk[i * D + j] = s
                _mm(Mk, L, &MkL[k * DD], D)
                # L_k^T (X L), symmetrised, plus L^T (M_k L)
                for i in range(DD):
                    R[i] = 0.0
                _atmm(&Lk[k * DD], XL, R, D, off)
                for i in range(D):
                    for j in range(D):
                        Y[i * D + j] = R[i * D + j] + R[j * D + i]
                _atmm(L, &MkL[k * DD], Y, D, 0)
                for i in range(D):
                    for j in range(D):
                        dGv[b, i, j, k] = Y[i * D + j]
            if order < 2:
                continue
            for k in range(n):
                for l in range(k, n):
                    for i in range(DD):
                        Lkl[i] = 0.0
                    for i in range(n):
                        for j in range(n):
                            Lkl[(off + i) * D + off + j] = P3m[b, i, j, k, l]
                    for i in range(D):
                        for j in range(D):
                            s = 0.0
                            for c in range(n):
                                s = s + dMm[b, i, j, c] * P2m[b, c, k, l]
                                for e in range(n):
                                    s = s + d2Mm[b, i, j, c, e] * P1m[b, c, k] * P1m[b, e, l]
                            Mkl[i * D + j] = s
                    for i in range(DD):
                        R[i] = 0.0
                    _atmm(Lkl, XL, R, D, off)
                    _atmm(&Lk[k * DD], &MkL[l * DD], R, D, off)
                    _atmm(&Lk[l * DD], &MkL[k * DD], R, D, off)
                    _mm(X, &Lk[l * DD], Y, D)
                    _atmm(&Lk[k * DD], Y, R, D, off)
                    for i in range(D):
                        for j in range(D):
                            Y[i * D + j] = R[i * D + j] + R[j * D + i]
                    _mm(Mkl, L, R, D)
                    _atmm(L, R, Y, D, 0)
                    for i in range(D):
                        for j in range(D):
                            d2Gv[b, i, j, k, l] = Y[i * D + j]
                            d2Gv[b, i, j, l, k] = Y[i * D + j]
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled EP sweep loop.

Same algorithm and bookkeeping as ``epcbal.ep.python_sweeps``: cavity by
natural-parameter subtraction, halfspace moments through the change of
variables ``y = x T`` and the one-side moment recursion, site refit, 50/50
damping on a non-PD total.  Dense small-matrix linear algebra is written
out by hand; the dimension is at most a few tens.
"""
import numpy as np

from libc.math cimport erfc, exp, sqrt, fabs, M_PI

cdef double SQRT1_2 = 0.7071067811865476
cdef int DAMPING_RETRIES = 3


cdef inline double _ndtr(double z) nogil:
    return 0.5 * erfc(-z * SQRT1_2)


cdef int _chol(double[:, ::1] A, double[:, ::1] L, int n) noexcept nogil:
    """Lower Cholesky factor of ``A`` into ``L``; returns -1 if not PD."""
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if not (s > 0.0):
                    return -1
                L[i, i] = sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, n):
            L[i, j] = 0.0
    return 0


cdef void _chol_inverse(double[:, ::1] L, double[:, ::1] out,
                        double[:, ::1] W, int n) noexcept nogil:
    """``out = (L L^T)^{-1}`` using ``W`` for ``L^{-1}``."""
    cdef int i, j, k
    cdef double s
    for j in range(n):
        for i in range(n):
            W[i, j] = 0.0
        W[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, n):
            s = 0.0
            for k in range(j, i):
                s -= L[i, k] * W[k, j]
            W[i, j] = s / L[i, i]
    for i in range(n):
        for j in range(i + 1):
            s = 0.0
            for k in range(i, n):
                s += W[k, i] * W[k, j]
            out[i, j] = s
            out[j, i] = s


cdef void _matmul(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C,
                  int n) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += A[i, k] * B[k, j]
            C[i, j] = s


cdef void _matTmul(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C,
                   int n) noexcept nogil:
    """``C = A^T B``."""
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += A[k, i] * B[k, j]
            C[i, j] = s


cdef int _is_pd(double[:, ::1] A, double[:, ::1] L, int n) noexcept nogil:
    return _chol(A, L, n) == 0


cdef int _site_moments(const double[:] a, double b, double[:, ::1] cav_prec,
                       double[:] cav_shift, double mass_floor,
                       double[:, ::1] L, double[:, ::1] W, double[:, ::1] S,
                       double[:] mu, double[:, ::1] T, double[:, ::1] Tinv,
                       double[:, ::1] tmp, double[:, ::1] Sy, double[:] my,
                       double[:] w, double[:, ::1] Cy, double[:] q,
                       double[:, ::1] Q, int n) noexcept nogil:
    """Truncated moments of the cavity on ``a x^T <= b`` into ``q``, ``Q``.

    Returns 0 on success, 1 for an uninformative truncation (skip), -1 for a
    failure (non-PD cavity or mass below the floor).
    """
    cdef int i, j, k, r, piv
    cdef double s, big, u, var, z, mass, dens

    if _chol(cav_prec, L, n) != 0:
        return -1
    _chol_inverse(L, S, W, n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += S[i, j] * cav_shift[j]
        mu[i] = s

    # T: first column a, unit columns for every coordinate except the pivot.
    piv = 0
    big = fabs(a[0])
    for i in range(1, n):
        if fabs(a[i]) > big:
            big = fabs(a[i])
            piv = i
    for i in range(n):
        for j in range(n):
            T[i, j] = 0.0
            Tinv[i, j] = 0.0
    r = 1
    for i in range(n):
        T[i, 0] = a[i]
        if i != piv:
            T[i, r] = 1.0
            Tinv[r, i] = 1.0
            Tinv[r, piv] = -a[i] / a[piv]
            r += 1
    Tinv[0, piv] = 1.0 / a[piv]

    # Sigma_y = T^T Sigma T; only the mean of y_1 is needed (centred recursion).
    _matmul(S, T, tmp, n)
    _matTmul(T, tmp, Sy, n)
    u = b
    for i in range(n):
        u -= a[i] * mu[i]
    var = Sy[0, 0]
    z = u / sqrt(var)
    mass = _ndtr(z)
    if not (mass >= mass_floor):
        return -1
    if mass > 1.0 - mass_floor:
        return 1
    dens = exp(-0.5 * z * z) / sqrt(2.0 * M_PI * var)

    # One-side recursion about the cavity mean: L_{e_i} = -Sy[i,0] dens and
    # L_{e_m+e_n} = Sy[n,m] mass - Sy[n,0] dens E[y_m | y_1 = u].
    for i in range(n):
        my[i] = -Sy[i, 0] * dens / mass
        w[i] = Sy[i, 0] * u / var
    w[0] = u
    for i in range(n):
        for j in range(n):
            Cy[i, j] = (Sy[j, i] * mass - Sy[j, 0] * dens * w[i]) / mass - my[i] * my[j]

    # Back to x: q = mu + my T^{-1}, Q = T^{-T} Cy T^{-1}.
    for j in range(n):
        s = mu[j]
        for i in range(n):
            s += my[i] * Tinv[i, j]
        q[j] = s
    _matmul(Cy, Tinv, tmp, n)
    _matTmul(Tinv, tmp, Q, n)
    for i in range(n):
        for j in range(i):
            s = 0.5 * (Q[i, j] + Q[j, i])
            Q[i, j] = s
            Q[j, i] = s
    return 0


def ep_sweeps(const double[:, ::1] normals, const double[:] offsets, double[:, :, ::1] prec,
              double[:, ::1] shift, active, double[:, ::1] total_prec,
              double[:] total_shift, const double[:, ::1] ref_prec, const double[:] ref_shift,
              int n_sweeps, double mass_floor=1e-12):
    """Run ``n_sweeps`` EP passes in place; see ``epcbal.ep.python_sweeps``."""
    cdef int n = normals.shape[1]
    cdef int n_sites = normals.shape[0]
    cdef int sweep, j, i, k, attempt, rc, bootstrap, total_pd, accepted
    cdef double s
    cdef unsigned char[:] act = np.asarray(active).view(np.uint8)

    stats_arr = np.zeros((n_sweeps, 4), dtype=np.int64)
    cdef long long[:, ::1] stats = stats_arr

    cdef double[:, ::1] cav_prec = np.zeros((n, n)), work_prec = np.zeros((n, n)), L = np.zeros((n, n)), W = np.zeros((n, n))
    cdef double[:, ::1] S = np.zeros((n, n)), T = np.zeros((n, n)), Tinv = np.zeros((n, n)), tmp = np.zeros((n, n)), Sy = np.zeros((n, n))
    cdef double[:, ::1] Cy = np.zeros((n, n)), Q = np.zeros((n, n)), Qinv = np.zeros((n, n)), new_prec = np.zeros((n, n))
    cdef double[:] cav_shift = np.zeros(n), work_shift = np.zeros(n), mu = np.zeros(n), my = np.zeros(n)
    cdef double[:] w = np.zeros(n), q = np.zeros(n), new_shift = np.zeros(n)

    total_pd = _is_pd(total_prec, L, n)
    with nogil:
        for sweep in range(n_sweeps):
            for j in range(n_sites):
                for i in range(n):
                    cav_shift[i] = total_shift[i] - shift[j, i]
                    for k in range(n):
                        cav_prec[i, k] = total_prec[i, k] - prec[j, i, k]
                bootstrap = 0
                if not _is_pd(cav_prec, L, n):
                    if total_pd:
                        stats[sweep, 2] += 1
                        continue
                    bootstrap = 1
                for i in range(n):
                    work_shift[i] = cav_shift[i]
                    for k in range(n):
                        work_prec[i, k] = cav_prec[i, k]
                        if bootstrap:
                            work_prec[i, k] += ref_prec[i, k]
                    if bootstrap:
                        work_shift[i] += ref_shift[i]

                rc = _site_moments(normals[j], offsets[j], work_prec, work_shift,
                                   mass_floor, L, W, S, mu, T, Tinv, tmp, Sy, my,
                                   w, Cy, q, Q, n)
                if rc == 1:
                    stats[sweep, 1] += 1
                    continue
                if rc != 0 or _chol(Q, L, n) != 0:
                    stats[sweep, 2] += 1
                    continue
                _chol_inverse(L, Qinv, W, n)
                for i in range(n):
                    s = -work_shift[i]
                    for k in range(n):
                        s += Qinv[i, k] * q[k]
                        new_prec[i, k] = Qinv[i, k] - work_prec[i, k]
                    new_shift[i] = s
                for i in range(n):
                    for k in range(i):
                        s = 0.5 * (new_prec[i, k] + new_prec[k, i])
                        new_prec[i, k] = s
                        new_prec[k, i] = s

                accepted = 1
                if not bootstrap:
                    attempt = 0
                    while True:
                        for i in range(n):
                            for k in range(n):
                                tmp[i, k] = cav_prec[i, k] + new_prec[i, k]
                        if _is_pd(tmp, L, n):
                            break
                        if attempt == DAMPING_RETRIES:
                            accepted = 0
                            break
                        for i in range(n):
                            new_shift[i] = 0.5 * (new_shift[i] + shift[j, i])
                            for k in range(n):
                                new_prec[i, k] = 0.5 * (new_prec[i, k] + prec[j, i, k])
                        stats[sweep, 3] += 1
                        attempt += 1
                if not accepted:
                    stats[sweep, 2] += 1
                    continue

                for i in range(n):
                    shift[j, i] = new_shift[i]
                    total_shift[i] = cav_shift[i] + new_shift[i]
                    for k in range(n):
                        prec[j, i, k] = new_prec[i, k]
                        total_prec[i, k] = cav_prec[i, k] + new_prec[i, k]
                for i in range(n):
                    for k in range(i):
                        s = 0.5 * (total_prec[i, k] + total_prec[k, i])
                        total_prec[i, k] = s
                        total_prec[k, i] = s
                act[j] = 1
                stats[sweep, 0] += 1
                if not total_pd:
                    total_pd = _is_pd(total_prec, L, n)
    return stats_arr

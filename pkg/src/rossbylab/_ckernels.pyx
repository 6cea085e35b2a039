# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Bessel J0/J1 and closed-form mode eigensystems."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, fabs, M_PI

cnp.import_array()

cdef double DEGENERATE_XI = 1e-8
cdef double DEGENERATE_GAP = 1e-10
cdef double ZERO_LAMBDA3 = 1e-12
cdef double PHASE_TOL = 1e-10

cdef double SERIES_MAX = 8.0
cdef double ASYMPTOTIC_MIN = 25.0
cdef int TRAP_NODES = 64
cdef int ASYM_TERMS = 26


cdef double _series(double x, int order) nogil:
    cdef double h = 0.25 * x * x
    cdef double term = 1.0 if order == 0 else 0.5 * x
    cdef double total = term
    cdef int j
    for j in range(1, 40):
        term = -term * h / (j * (j + order))
        total += term
    return total


cdef double _TRAP_SIN[15]
for _j in range(15):
    _TRAP_SIN[_j] = sin(2.0 * M_PI * (_j + 1) / TRAP_NODES)


cdef double _trapezoid(double x, int order) nogil:
    # nodes folded by the symmetries of sin; see _pykernels._trapezoid
    cdef double acc = 0.0
    cdef int j
    if order == 0:
        for j in range(15):
            acc += cos(x * _TRAP_SIN[j])
        return (2.0 + 4.0 * acc + 2.0 * cos(x)) / TRAP_NODES
    for j in range(15):
        acc += _TRAP_SIN[j] * sin(x * _TRAP_SIN[j])
    return (4.0 * acc + 2.0 * sin(x)) / TRAP_NODES


cdef double _asymptotic(double x, int order) nogil:
    cdef double mu = 4.0 * order * order
    cdef double p = 1.0
    cdef double q = 0.0
    cdef double term = 1.0
    cdef double chi
    cdef int kk
    for kk in range(1, ASYM_TERMS):
        term = term * (mu - (2 * kk - 1) * (2 * kk - 1)) / (kk * 8.0 * x)
        if kk % 2 == 1:
            if (kk // 2) % 2 == 0:
                q += term
            else:
                q -= term
        else:
            if (kk // 2) % 2 == 1:
                p -= term
            else:
                p += term
        if fabs(term) < 1e-17:
            break
    chi = x - (0.5 * order + 0.25) * M_PI
    return sqrt(2.0 / (M_PI * x)) * (p * cos(chi) - q * sin(chi))


cdef double _bessel(int order, double x) nogil:
    cdef double sgn = 1.0
    cdef double ax = fabs(x)
    if order == 1 and x < 0:
        sgn = -1.0
    if ax < SERIES_MAX:
        return sgn * _series(ax, order)
    if ax >= ASYMPTOTIC_MIN:
        return sgn * _asymptotic(ax, order)
    return sgn * _trapezoid(ax, order)


def bessel_j(int order, x):
    if order != 0 and order != 1:
        raise ValueError("only orders 0 and 1 are implemented")
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(arr.ravel())
    cdef Py_ssize_t n = flat.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = _bessel(order, flat[i])
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)


def bessel_j0(x):
    return bessel_j(0, x)


def bessel_j1(x):
    return bessel_j(1, x)


cdef inline double _diff_sq(double lin, double rd, double z, double c2) nogil:
    if lin >= 0:
        return 0.5 * (lin + rd)
    if rd - lin == 0:
        return 0.0
    return 2.0 * z * c2 / (rd - lin)


def eigenvalues_closed(z, k, omega):
    zz, kk, ww = np.broadcast_arrays(np.asarray(z, dtype=np.float64),
                                     np.asarray(k, dtype=np.float64),
                                     np.asarray(omega, dtype=np.float64))
    shape = zz.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zf = np.ascontiguousarray(zz.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] kf = np.ascontiguousarray(kk.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wf = np.ascontiguousarray(ww.ravel())
    cdef Py_ssize_t n = zf.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] l1 = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] l3 = np.empty(n)
    cdef Py_ssize_t i
    cdef double s, disc, rd, k2, w2
    with nogil:
        for i in range(n):
            k2 = kf[i] * kf[i]
            w2 = wf[i] * wf[i]
            s = w2 + zf[i] + k2
            disc = (w2 - k2) * (w2 - k2) + zf[i] * (zf[i] + 2.0 * (w2 + k2))
            if disc < 0:
                disc = 0.0
            rd = sqrt(disc)
            l1[i] = sqrt(0.5 * (s + rd))
            if s + rd > 0:
                l3[i] = sqrt(2.0 * w2 * k2 / (s + rd))
            else:
                l3[i] = 0.0
    a = l1.reshape(shape)
    b = l3.reshape(shape)
    if a.ndim == 0:
        return float(a), -float(a), float(b), -float(b)
    return a, -a, b, -b


cdef void _fill_branch(double complex[:, :, ::1] vec, Py_ssize_t m, int j,
                       double lmb, double lsq, double d, double xi1, double xi2,
                       double k, double w, double z) nogil:
    cdef double complex e0, e1, e2, e3
    cdef double nrm
    if d == 0:
        d = 1.0
    e0 = lsq * z / d
    e1 = lmb * xi1 + 1j * w * xi2
    e2 = lmb * xi2 - 1j * w * xi1
    e3 = k * lmb * z / d
    nrm = sqrt(e0.real * e0.real + e0.imag * e0.imag + e1.real * e1.real + e1.imag * e1.imag
               + e2.real * e2.real + e2.imag * e2.imag + e3.real * e3.real + e3.imag * e3.imag)
    if nrm == 0:
        nrm = 1.0
    vec[m, 0, j] = e0 / nrm
    vec[m, 1, j] = e1 / nrm
    vec[m, 2, j] = e2 / nrm
    vec[m, 3, j] = e3 / nrm


cdef void _phase(double complex[:, :, ::1] vec, Py_ssize_t m) nogil:
    cdef int j, r
    cdef double complex c, ph
    cdef double a
    for j in range(4):
        for r in range(4):
            c = vec[m, r, j]
            a = sqrt(c.real * c.real + c.imag * c.imag)
            if a > PHASE_TOL:
                ph = (c.real - 1j * c.imag) / a
                for r in range(4):
                    vec[m, r, j] = vec[m, r, j] * ph
                break


def mode_eigensystem(xi1, xi2, k, omega):
    a1 = np.atleast_1d(np.asarray(xi1, dtype=np.float64)).ravel()
    a2 = np.atleast_1d(np.asarray(xi2, dtype=np.float64)).ravel()
    ak = np.ascontiguousarray(np.broadcast_to(np.asarray(k, dtype=np.float64), a1.shape))
    aw = np.ascontiguousarray(np.broadcast_to(np.asarray(omega, dtype=np.float64), a1.shape))
    cdef const double[::1] x1 = np.ascontiguousarray(a1)
    cdef const double[::1] x2 = np.ascontiguousarray(a2)
    cdef const double[::1] kv = ak
    cdef const double[::1] wv = aw
    cdef Py_ssize_t M = a1.shape[0]
    lam_a = np.empty((M, 4))
    vec_a = np.full((M, 4, 4), np.nan + 0j)
    deg_a = np.zeros(M, dtype=np.uint8)
    cdef double[:, ::1] lam = lam_a
    cdef double complex[:, :, ::1] vec = vec_a
    cdef unsigned char[::1] deg = deg_a
    cdef Py_ssize_t m
    cdef double z, kk, w, k2, w2, s, disc, rd, l1s, l3s, l1, l3, d1, e1, d3, nk
    with nogil:
        for m in range(M):
            z = x1[m] * x1[m] + x2[m] * x2[m]
            kk = kv[m]
            w = wv[m]
            k2 = kk * kk
            w2 = w * w
            s = w2 + z + k2
            disc = (w2 - k2) * (w2 - k2) + z * (z + 2.0 * (w2 + k2))
            if disc < 0:
                disc = 0.0
            rd = sqrt(disc)
            l1s = 0.5 * (s + rd)
            l3s = 2.0 * w2 * k2 / (s + rd) if s + rd > 0 else 0.0
            l1 = sqrt(l1s)
            l3 = sqrt(l3s)
            lam[m, 0] = l1
            lam[m, 1] = -l1
            lam[m, 2] = l3
            lam[m, 3] = -l3
            if sqrt(z) < DEGENERATE_XI or l1 - l3 < DEGENERATE_GAP or (kk != 0 and l3 < ZERO_LAMBDA3):
                deg[m] = 1
                continue
            d1 = _diff_sq(w2 - k2 + z, rd, z, k2)
            e1 = _diff_sq(k2 - w2 + z, rd, z, w2)
            d3 = -k2 * e1 / l1s
            _fill_branch(vec, m, 0, l1, l1s, d1, x1[m], x2[m], kk, w, z)
            _fill_branch(vec, m, 1, -l1, l1s, d1, x1[m], x2[m], kk, w, z)
            if kk == 0:
                nk = sqrt(z + w2)
                vec[m, 0, 2] = -1j * w / nk
                vec[m, 1, 2] = -x2[m] / nk
                vec[m, 2, 2] = x1[m] / nk
                vec[m, 3, 2] = 0
                vec[m, 0, 3] = 0
                vec[m, 1, 3] = 0
                vec[m, 2, 3] = 0
                vec[m, 3, 3] = 1
            else:
                _fill_branch(vec, m, 2, l3, l3s, d3, x1[m], x2[m], kk, w, z)
                _fill_branch(vec, m, 3, -l3, l3s, d3, x1[m], x2[m], kk, w, z)
            _phase(vec, m)
    return lam_a, vec_a, deg_a.astype(bool)

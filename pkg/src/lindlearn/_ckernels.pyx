# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``; same names and signatures."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef double complex cplx

cdef cplx[4] _IPOW
_IPOW[0] = 1.0
_IPOW[1] = 1.0j
_IPOW[2] = -1.0
_IPOW[3] = -1.0j


cdef inline int _parity(long long v) nogil:
    cdef int p = 0
    while v:
        v &= v - 1
        p ^= 1
    return p


def pauli_monomial(long long xmask, long long zmask, int n):
    cdef long long d = 1LL << n
    cdef long long b
    cdef int n_y = bin(xmask & zmask).count("1")
    cdef cplx base = _IPOW[n_y % 4]
    perm_arr = np.empty(d, dtype=np.int64)
    ph_arr = np.empty(d, dtype=np.complex128)
    cdef long long[::1] perm = perm_arr
    cdef cplx[::1] ph = ph_arr
    with nogil:
        for b in range(d):
            perm[b] = b ^ xmask
            if _parity(b & zmask):
                ph[b] = -base
            else:
                ph[b] = base
    return perm_arr, ph_arr


def add_monomial_superop(cplx[:, ::1] L, cplx coeff,
                         long long[::1] perm_a, cplx[::1] ph_a,
                         long long[::1] perm_b, cplx[::1] ph_b):
    cdef Py_ssize_t d = perm_a.shape[0]
    cdef Py_ssize_t r, cp
    cdef cplx w
    with nogil:
        for cp in range(d):
            w = coeff * ph_b[cp]
            for r in range(d):
                L[cp * d + perm_a[r], perm_b[cp] * d + r] += w * ph_a[r]


def pauli_rotate(cplx[:, ::1] rho, long long[::1] perm, cplx[::1] ph,
                 double c, double s):
    cdef Py_ssize_t d = perm.shape[0]
    cdef Py_ssize_t r, k, pr, pk
    cdef double cc = c * c, ss = s * s
    cdef cplx ics = 1j * c * s
    out_arr = np.empty((d, d), dtype=np.complex128)
    cdef cplx[:, ::1] out = out_arr
    with nogil:
        for r in range(d):
            pr = perm[r]
            for k in range(d):
                pk = perm[k]
                # (P rho)[r,k] = ph[pr] rho[pr,k]; (rho P)[r,k] = rho[r,pk] ph[k]
                out[r, k] = (cc * rho[r, k]
                             + ss * ph[pr] * rho[pr, pk] * ph[k]
                             + ics * (rho[r, pk] * ph[k] - ph[pr] * rho[pr, k]))
    return out_arr


def apply_1q_superop(cplx[:, ::1] rho, cplx[:, ::1] S, int q, int n):
    cdef Py_ssize_t d = rho.shape[0]
    cdef Py_ssize_t bit = 1 << (n - 1 - q)
    cdef Py_ssize_t R, C, a, b
    cdef cplx v00, v10, v01, v11
    cdef Py_ssize_t[2] rr
    cdef Py_ssize_t[2] cc
    out_arr = np.empty((d, d), dtype=np.complex128)
    cdef cplx[:, ::1] out = out_arr
    with nogil:
        for R in range(d):
            if R & bit:
                continue
            for C in range(d):
                if C & bit:
                    continue
                # vec index c*2 + r over the local 2x2 block
                v00 = rho[R, C]
                v10 = rho[R | bit, C]
                v01 = rho[R, C | bit]
                v11 = rho[R | bit, C | bit]
                rr[0] = R
                rr[1] = R | bit
                cc[0] = C
                cc[1] = C | bit
                for a in range(2):
                    for b in range(2):
                        out[rr[b], cc[a]] = (S[2 * a + b, 0] * v00 + S[2 * a + b, 1] * v10
                                             + S[2 * a + b, 2] * v01 + S[2 * a + b, 3] * v11)
    return out_arr


def pauli_expectation(cplx[:, ::1] rho, long long[::1] perm, cplx[::1] ph):
    cdef Py_ssize_t d = perm.shape[0]
    cdef Py_ssize_t x
    cdef cplx acc = 0
    with nogil:
        for x in range(d):
            acc += ph[x] * rho[x, perm[x]]
    return complex(acc)


def z_expectations(probs, masks):
    cdef double[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef long long[::1] m = np.ascontiguousarray(masks, dtype=np.int64)
    out_arr = np.zeros(m.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, x
    cdef double acc
    with nogil:
        for i in range(m.shape[0]):
            acc = 0.0
            for x in range(p.shape[0]):
                if _parity(x & m[i]):
                    acc -= p[x]
                else:
                    acc += p[x]
            out[i] = acc
    return out_arr

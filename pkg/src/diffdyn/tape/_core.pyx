# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tape executor: forward replay and reverse-mode accumulation.

Operates on the packed node arrays produced by Tape.finalize().  The opcode
numbers and kernel semantics mirror diffdyn.tape.ops exactly (parity is
enforced by tests); reductions run in sequential index order so replays are
bit-identical run to run.  All loops execute without the GIL, so independent
tapes can be driven from a thread pool in parallel.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan, cos, fabs, sin, sqrt

cdef enum:
    LEAF = 0
    ADD_SS = 1
    ADD_SB = 2
    ADD_RB = 3
    ADD_CB = 4
    SUB_SS = 5
    SUB_SB = 6
    SUB_BS = 7
    SUB_RB = 8
    SUB_CB = 9
    MUL_SS = 10
    MUL_SB = 11
    MUL_RB = 12
    MUL_CB = 13
    DIV_SS = 14
    DIV_SB = 15
    DIV_BS = 16
    DIV_CB = 17
    NEG = 18
    RELU = 19
    SIN = 20
    COS = 21
    SQRT = 22
    ABS = 23
    ATAN = 24
    MIN_SS = 25
    MAX_SS = 26
    CLAMP_CONST = 27
    CLAMP_TENSOR = 28
    WHERE_SS = 29
    WHERE_CB = 30
    CONCAT2 = 31
    SLICE_COLS = 32
    SUM_COLS = 33
    SUM_ALL = 34
    MEAN_COLS = 35
    MEAN_ALL = 36
    L2_COLS = 37
    MATMUL = 38
    BMM33 = 39
    BMV3 = 40
    T33 = 41
    T2D = 42
    CROSS3 = 43
    RESHAPE = 44

N_OPCODES = 45
L2_EPS = 1e-12

cdef double _L2_EPS = 1e-12


cdef void _gemm_rowmajor(double* A, double* B, double* C,
                         int n, int m, int k) nogil:
    # C (n x k) = A (n x m) @ B (m x k), row-major.  k-outer accumulation per
    # output row: each row's bits are independent of the batch size n.
    cdef Py_ssize_t i, j, p
    cdef double a
    for i in range(n):
        for j in range(k):
            C[i * k + j] = 0.0
        for p in range(m):
            a = A[i * m + p]
            for j in range(k):
                C[i * k + j] += a * B[p * k + j]


cdef void _gemm_gbt(double* G, double* B, double* dA,
                    int n, int m, int k) nogil:
    # dA (n x m) += G (n x k) @ B^T (k x m), row-major.
    cdef Py_ssize_t i, j, p
    cdef double acc
    for i in range(n):
        for p in range(m):
            acc = 0.0
            for j in range(k):
                acc += G[i * k + j] * B[p * k + j]
            dA[i * m + p] += acc


cdef void _gemm_atg(double* A, double* G, double* dB,
                    int n, int m, int k) nogil:
    # dB (m x k) += A^T (m x n) @ G (n x k), row-major.
    cdef Py_ssize_t i, j, p
    cdef double a
    for i in range(n):
        for p in range(m):
            a = A[i * m + p]
            for j in range(k):
                dB[p * k + j] += a * G[i * k + j]


cdef void _forward(Py_ssize_t n, int* op, int* abc, int* iaux, double* faux,
                   long long* off, long long* sz, double* buf) nogil:
    cdef Py_ssize_t i, j, r, q, b_i
    cdef int o_i, ia, ib, ic, rows, k, k1, k2, s, t, mm, nn, kk
    cdef long long m
    cdef double *o
    cdef double *x
    cdef double *y
    cdef double *z
    cdef double v, acc, lo, hi

    for i in range(n):
        o_i = op[i]
        if o_i == LEAF:
            continue
        ia = abc[3 * i]
        ib = abc[3 * i + 1]
        ic = abc[3 * i + 2]
        o = buf + off[i]
        x = buf + off[ia] if ia >= 0 else NULL
        y = buf + off[ib] if ib >= 0 else NULL
        z = buf + off[ic] if ic >= 0 else NULL
        m = sz[i]

        if o_i == ADD_SS:
            for j in range(m):
                o[j] = x[j] + y[j]
        elif o_i == ADD_SB:
            v = y[0]
            for j in range(m):
                o[j] = x[j] + v
        elif o_i == ADD_RB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                for q in range(k):
                    o[r * k + q] = x[r * k + q] + y[q]
        elif o_i == ADD_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                v = y[r]
                for q in range(k):
                    o[r * k + q] = x[r * k + q] + v
        elif o_i == SUB_SS:
            for j in range(m):
                o[j] = x[j] - y[j]
        elif o_i == SUB_SB:
            v = y[0]
            for j in range(m):
                o[j] = x[j] - v
        elif o_i == SUB_BS:
            v = x[0]
            for j in range(m):
                o[j] = v - y[j]
        elif o_i == SUB_RB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                for q in range(k):
                    o[r * k + q] = x[r * k + q] - y[q]
        elif o_i == SUB_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                v = y[r]
                for q in range(k):
                    o[r * k + q] = x[r * k + q] - v
        elif o_i == MUL_SS:
            for j in range(m):
                o[j] = x[j] * y[j]
        elif o_i == MUL_SB:
            v = y[0]
            for j in range(m):
                o[j] = x[j] * v
        elif o_i == MUL_RB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                for q in range(k):
                    o[r * k + q] = x[r * k + q] * y[q]
        elif o_i == MUL_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                v = y[r]
                for q in range(k):
                    o[r * k + q] = x[r * k + q] * v
        elif o_i == DIV_SS:
            for j in range(m):
                o[j] = x[j] / y[j]
        elif o_i == DIV_SB:
            v = y[0]
            for j in range(m):
                o[j] = x[j] / v
        elif o_i == DIV_BS:
            v = x[0]
            for j in range(m):
                o[j] = v / y[j]
        elif o_i == DIV_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                v = y[r]
                for q in range(k):
                    o[r * k + q] = x[r * k + q] / v
        elif o_i == NEG:
            for j in range(m):
                o[j] = -x[j]
        elif o_i == RELU:
            for j in range(m):
                v = x[j]
                o[j] = v if v > 0.0 else 0.0
        elif o_i == SIN:
            for j in range(m):
                o[j] = sin(x[j])
        elif o_i == COS:
            for j in range(m):
                o[j] = cos(x[j])
        elif o_i == SQRT:
            for j in range(m):
                o[j] = sqrt(x[j])
        elif o_i == ABS:
            for j in range(m):
                o[j] = fabs(x[j])
        elif o_i == ATAN:
            for j in range(m):
                o[j] = atan(x[j])
        elif o_i == MIN_SS:
            for j in range(m):
                o[j] = x[j] if x[j] < y[j] else y[j]
        elif o_i == MAX_SS:
            for j in range(m):
                o[j] = x[j] if x[j] > y[j] else y[j]
        elif o_i == CLAMP_CONST:
            lo = faux[2 * i]; hi = faux[2 * i + 1]
            for j in range(m):
                v = x[j]
                if v < lo:
                    v = lo
                if v > hi:
                    v = hi
                o[j] = v
        elif o_i == CLAMP_TENSOR:
            for j in range(m):
                v = x[j]
                if v < y[j]:
                    v = y[j]
                if v > z[j]:
                    v = z[j]
                o[j] = v
        elif o_i == WHERE_SS:
            for j in range(m):
                o[j] = y[j] if x[j] > 0.0 else z[j]
        elif o_i == WHERE_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                if x[r] > 0.0:
                    for q in range(k):
                        o[r * k + q] = y[r * k + q]
                else:
                    for q in range(k):
                        o[r * k + q] = z[r * k + q]
        elif o_i == CONCAT2:
            rows = iaux[4 * i]; k1 = iaux[4 * i + 1]; k2 = iaux[4 * i + 2]
            k = k1 + k2
            for r in range(rows):
                for q in range(k1):
                    o[r * k + q] = x[r * k1 + q]
                for q in range(k2):
                    o[r * k + k1 + q] = y[r * k2 + q]
        elif o_i == SLICE_COLS:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            s = iaux[4 * i + 2]; t = iaux[4 * i + 3]
            for r in range(rows):
                for q in range(t - s):
                    o[r * (t - s) + q] = x[r * k + s + q]
        elif o_i == SUM_COLS:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                acc = 0.0
                for q in range(k):
                    acc += x[r * k + q]
                o[r] = acc
        elif o_i == SUM_ALL:
            acc = 0.0
            for j in range(iaux[4 * i]):
                acc += x[j]
            o[0] = acc
        elif o_i == MEAN_COLS:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                acc = 0.0
                for q in range(k):
                    acc += x[r * k + q]
                o[r] = acc / k
        elif o_i == MEAN_ALL:
            acc = 0.0
            for j in range(iaux[4 * i]):
                acc += x[j]
            o[0] = acc / iaux[4 * i]
        elif o_i == L2_COLS:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                acc = 0.0
                for q in range(k):
                    acc += x[r * k + q] * x[r * k + q]
                o[r] = sqrt(acc)
        elif o_i == MATMUL:
            nn = iaux[4 * i]; mm = iaux[4 * i + 1]; kk = iaux[4 * i + 2]
            _gemm_rowmajor(x, y, o, nn, mm, kk)
        elif o_i == BMM33:
            rows = iaux[4 * i]
            for b_i in range(rows):
                for r in range(3):
                    for q in range(3):
                        o[b_i * 9 + r * 3 + q] = (
                            x[b_i * 9 + r * 3] * y[b_i * 9 + q]
                            + x[b_i * 9 + r * 3 + 1] * y[b_i * 9 + 3 + q]
                            + x[b_i * 9 + r * 3 + 2] * y[b_i * 9 + 6 + q])
        elif o_i == BMV3:
            rows = iaux[4 * i]
            for b_i in range(rows):
                for r in range(3):
                    o[b_i * 3 + r] = (
                        x[b_i * 9 + r * 3] * y[b_i * 3]
                        + x[b_i * 9 + r * 3 + 1] * y[b_i * 3 + 1]
                        + x[b_i * 9 + r * 3 + 2] * y[b_i * 3 + 2])
        elif o_i == T33:
            rows = iaux[4 * i]
            for b_i in range(rows):
                for r in range(3):
                    for q in range(3):
                        o[b_i * 9 + r * 3 + q] = x[b_i * 9 + q * 3 + r]
        elif o_i == T2D:
            nn = iaux[4 * i]; mm = iaux[4 * i + 1]
            for r in range(nn):
                for q in range(mm):
                    o[q * nn + r] = x[r * mm + q]
        elif o_i == CROSS3:
            rows = iaux[4 * i]
            for b_i in range(rows):
                o[b_i * 3] = (x[b_i * 3 + 1] * y[b_i * 3 + 2]
                              - x[b_i * 3 + 2] * y[b_i * 3 + 1])
                o[b_i * 3 + 1] = (x[b_i * 3 + 2] * y[b_i * 3]
                                  - x[b_i * 3] * y[b_i * 3 + 2])
                o[b_i * 3 + 2] = (x[b_i * 3] * y[b_i * 3 + 1]
                                  - x[b_i * 3 + 1] * y[b_i * 3])
        elif o_i == RESHAPE:
            for j in range(m):
                o[j] = x[j]


cdef void _backward(Py_ssize_t n, int* op, int* abc, int* iaux, double* faux,
                    long long* off, long long* sz, double* buf,
                    double* adj) nogil:
    cdef Py_ssize_t i, j, r, q, b_i
    cdef int o_i, ia, ib, ic, rows, k, k1, k2, s, t, mm, nn, kk
    cdef long long m
    cdef double *o
    cdef double *x
    cdef double *y
    cdef double *z
    cdef double *g
    cdef double *ax
    cdef double *ay
    cdef double *az
    cdef double v, acc, lo, hi, gj
    cdef bint any_nz

    for i in range(n - 1, -1, -1):
        o_i = op[i]
        if o_i == LEAF:
            continue
        m = sz[i]
        g = adj + off[i]
        any_nz = False
        for j in range(m):
            if g[j] != 0.0:
                any_nz = True
                break
        if not any_nz:
            continue
        ia = abc[3 * i]
        ib = abc[3 * i + 1]
        ic = abc[3 * i + 2]
        o = buf + off[i]
        x = buf + off[ia] if ia >= 0 else NULL
        y = buf + off[ib] if ib >= 0 else NULL
        z = buf + off[ic] if ic >= 0 else NULL
        ax = adj + off[ia] if ia >= 0 else NULL
        ay = adj + off[ib] if ib >= 0 else NULL
        az = adj + off[ic] if ic >= 0 else NULL

        if o_i == ADD_SS:
            for j in range(m):
                ax[j] += g[j]
                ay[j] += g[j]
        elif o_i == ADD_SB:
            acc = 0.0
            for j in range(m):
                ax[j] += g[j]
                acc += g[j]
            ay[0] += acc
        elif o_i == ADD_RB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                for q in range(k):
                    ax[r * k + q] += g[r * k + q]
            for q in range(k):
                acc = 0.0
                for r in range(rows):
                    acc += g[r * k + q]
                ay[q] += acc
        elif o_i == ADD_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                acc = 0.0
                for q in range(k):
                    ax[r * k + q] += g[r * k + q]
                    acc += g[r * k + q]
                ay[r] += acc
        elif o_i == SUB_SS:
            for j in range(m):
                ax[j] += g[j]
                ay[j] -= g[j]
        elif o_i == SUB_SB:
            acc = 0.0
            for j in range(m):
                ax[j] += g[j]
                acc += g[j]
            ay[0] -= acc
        elif o_i == SUB_BS:
            acc = 0.0
            for j in range(m):
                acc += g[j]
                ay[j] -= g[j]
            ax[0] += acc
        elif o_i == SUB_RB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                for q in range(k):
                    ax[r * k + q] += g[r * k + q]
            for q in range(k):
                acc = 0.0
                for r in range(rows):
                    acc += g[r * k + q]
                ay[q] -= acc
        elif o_i == SUB_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                acc = 0.0
                for q in range(k):
                    ax[r * k + q] += g[r * k + q]
                    acc += g[r * k + q]
                ay[r] -= acc
        elif o_i == MUL_SS:
            for j in range(m):
                ax[j] += g[j] * y[j]
                ay[j] += g[j] * x[j]
        elif o_i == MUL_SB:
            v = y[0]
            acc = 0.0
            for j in range(m):
                ax[j] += g[j] * v
                acc += g[j] * x[j]
            ay[0] += acc
        elif o_i == MUL_RB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                for q in range(k):
                    ax[r * k + q] += g[r * k + q] * y[q]
            for q in range(k):
                acc = 0.0
                for r in range(rows):
                    acc += g[r * k + q] * x[r * k + q]
                ay[q] += acc
        elif o_i == MUL_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                v = y[r]
                acc = 0.0
                for q in range(k):
                    ax[r * k + q] += g[r * k + q] * v
                    acc += g[r * k + q] * x[r * k + q]
                ay[r] += acc
        elif o_i == DIV_SS:
            for j in range(m):
                ax[j] += g[j] / y[j]
                ay[j] -= g[j] * o[j] / y[j]
        elif o_i == DIV_SB:
            v = y[0]
            acc = 0.0
            for j in range(m):
                ax[j] += g[j] / v
                acc += g[j] * o[j]
            ay[0] -= acc / v
        elif o_i == DIV_BS:
            acc = 0.0
            for j in range(m):
                acc += g[j] / y[j]
                ay[j] -= g[j] * o[j] / y[j]
            ax[0] += acc
        elif o_i == DIV_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                v = y[r]
                acc = 0.0
                for q in range(k):
                    ax[r * k + q] += g[r * k + q] / v
                    acc += g[r * k + q] * o[r * k + q] / v
                ay[r] -= acc
        elif o_i == NEG:
            for j in range(m):
                ax[j] -= g[j]
        elif o_i == RELU:
            for j in range(m):
                if x[j] > 0.0:
                    ax[j] += g[j]
        elif o_i == SIN:
            for j in range(m):
                ax[j] += g[j] * cos(x[j])
        elif o_i == COS:
            for j in range(m):
                ax[j] -= g[j] * sin(x[j])
        elif o_i == SQRT:
            for j in range(m):
                ax[j] += g[j] * 0.5 / o[j]
        elif o_i == ABS:
            for j in range(m):
                if x[j] > 0.0:
                    ax[j] += g[j]
                elif x[j] < 0.0:
                    ax[j] -= g[j]
        elif o_i == ATAN:
            for j in range(m):
                ax[j] += g[j] / (1.0 + x[j] * x[j])
        elif o_i == MIN_SS:
            for j in range(m):
                if x[j] <= y[j]:
                    ax[j] += g[j]
                else:
                    ay[j] += g[j]
        elif o_i == MAX_SS:
            for j in range(m):
                if x[j] >= y[j]:
                    ax[j] += g[j]
                else:
                    ay[j] += g[j]
        elif o_i == CLAMP_CONST:
            lo = faux[2 * i]; hi = faux[2 * i + 1]
            for j in range(m):
                if lo < x[j] < hi:
                    ax[j] += g[j]
        elif o_i == CLAMP_TENSOR:
            for j in range(m):
                if x[j] <= y[j]:
                    ay[j] += g[j]
                elif x[j] >= z[j]:
                    az[j] += g[j]
                else:
                    ax[j] += g[j]
        elif o_i == WHERE_SS:
            for j in range(m):
                if x[j] > 0.0:
                    ay[j] += g[j]
                else:
                    az[j] += g[j]
        elif o_i == WHERE_CB:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                if x[r] > 0.0:
                    for q in range(k):
                        ay[r * k + q] += g[r * k + q]
                else:
                    for q in range(k):
                        az[r * k + q] += g[r * k + q]
        elif o_i == CONCAT2:
            rows = iaux[4 * i]; k1 = iaux[4 * i + 1]; k2 = iaux[4 * i + 2]
            k = k1 + k2
            for r in range(rows):
                for q in range(k1):
                    ax[r * k1 + q] += g[r * k + q]
                for q in range(k2):
                    ay[r * k2 + q] += g[r * k + k1 + q]
        elif o_i == SLICE_COLS:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            s = iaux[4 * i + 2]; t = iaux[4 * i + 3]
            for r in range(rows):
                for q in range(t - s):
                    ax[r * k + s + q] += g[r * (t - s) + q]
        elif o_i == SUM_COLS:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                gj = g[r]
                for q in range(k):
                    ax[r * k + q] += gj
        elif o_i == SUM_ALL:
            gj = g[0]
            for j in range(iaux[4 * i]):
                ax[j] += gj
        elif o_i == MEAN_COLS:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                gj = g[r] / k
                for q in range(k):
                    ax[r * k + q] += gj
        elif o_i == MEAN_ALL:
            gj = g[0] / iaux[4 * i]
            for j in range(iaux[4 * i]):
                ax[j] += gj
        elif o_i == L2_COLS:
            rows = iaux[4 * i]; k = iaux[4 * i + 1]
            for r in range(rows):
                v = o[r]
                if v < _L2_EPS:
                    v = _L2_EPS
                gj = g[r] / v
                for q in range(k):
                    ax[r * k + q] += gj * x[r * k + q]
        elif o_i == MATMUL:
            nn = iaux[4 * i]; mm = iaux[4 * i + 1]; kk = iaux[4 * i + 2]
            _gemm_gbt(g, y, ax, nn, mm, kk)
            _gemm_atg(x, g, ay, nn, mm, kk)
        elif o_i == BMM33:
            rows = iaux[4 * i]
            for b_i in range(rows):
                for r in range(3):
                    for q in range(3):
                        gj = g[b_i * 9 + r * 3 + q]
                        ax[b_i * 9 + r * 3] += gj * y[b_i * 9 + q]
                        ax[b_i * 9 + r * 3 + 1] += gj * y[b_i * 9 + 3 + q]
                        ax[b_i * 9 + r * 3 + 2] += gj * y[b_i * 9 + 6 + q]
                        ay[b_i * 9 + q] += gj * x[b_i * 9 + r * 3]
                        ay[b_i * 9 + 3 + q] += gj * x[b_i * 9 + r * 3 + 1]
                        ay[b_i * 9 + 6 + q] += gj * x[b_i * 9 + r * 3 + 2]
        elif o_i == BMV3:
            rows = iaux[4 * i]
            for b_i in range(rows):
                for r in range(3):
                    gj = g[b_i * 3 + r]
                    for q in range(3):
                        ax[b_i * 9 + r * 3 + q] += gj * y[b_i * 3 + q]
                        ay[b_i * 3 + q] += gj * x[b_i * 9 + r * 3 + q]
        elif o_i == T33:
            rows = iaux[4 * i]
            for b_i in range(rows):
                for r in range(3):
                    for q in range(3):
                        ax[b_i * 9 + q * 3 + r] += g[b_i * 9 + r * 3 + q]
        elif o_i == T2D:
            nn = iaux[4 * i]; mm = iaux[4 * i + 1]
            for r in range(nn):
                for q in range(mm):
                    ax[r * mm + q] += g[q * nn + r]
        elif o_i == CROSS3:
            rows = iaux[4 * i]
            for b_i in range(rows):
                # d(a x b): da += b x g, db += g x a
                ax[b_i * 3] += (y[b_i * 3 + 1] * g[b_i * 3 + 2]
                                - y[b_i * 3 + 2] * g[b_i * 3 + 1])
                ax[b_i * 3 + 1] += (y[b_i * 3 + 2] * g[b_i * 3]
                                    - y[b_i * 3] * g[b_i * 3 + 2])
                ax[b_i * 3 + 2] += (y[b_i * 3] * g[b_i * 3 + 1]
                                    - y[b_i * 3 + 1] * g[b_i * 3])
                ay[b_i * 3] += (g[b_i * 3 + 1] * x[b_i * 3 + 2]
                                - g[b_i * 3 + 2] * x[b_i * 3 + 1])
                ay[b_i * 3 + 1] += (g[b_i * 3 + 2] * x[b_i * 3]
                                    - g[b_i * 3] * x[b_i * 3 + 2])
                ay[b_i * 3 + 2] += (g[b_i * 3] * x[b_i * 3 + 1]
                                    - g[b_i * 3 + 1] * x[b_i * 3])
        elif o_i == RESHAPE:
            for j in range(m):
                ax[j] += g[j]


def run_forward(cnp.ndarray[cnp.int32_t, ndim=1] op,
                cnp.ndarray[cnp.int32_t, ndim=2] abc,
                cnp.ndarray[cnp.int32_t, ndim=2] iaux,
                cnp.ndarray[cnp.float64_t, ndim=2] faux,
                cnp.ndarray[cnp.int64_t, ndim=1] off,
                cnp.ndarray[cnp.int64_t, ndim=1] sz,
                cnp.ndarray[cnp.float64_t, ndim=1] buf):
    cdef Py_ssize_t n = op.shape[0]
    if n == 0:
        return
    with nogil:
        _forward(n, <int*> op.data, <int*> abc.data, <int*> iaux.data,
                 <double*> faux.data, <long long*> off.data,
                 <long long*> sz.data, <double*> buf.data)


def run_backward(cnp.ndarray[cnp.int32_t, ndim=1] op,
                 cnp.ndarray[cnp.int32_t, ndim=2] abc,
                 cnp.ndarray[cnp.int32_t, ndim=2] iaux,
                 cnp.ndarray[cnp.float64_t, ndim=2] faux,
                 cnp.ndarray[cnp.int64_t, ndim=1] off,
                 cnp.ndarray[cnp.int64_t, ndim=1] sz,
                 cnp.ndarray[cnp.float64_t, ndim=1] buf,
                 cnp.ndarray[cnp.float64_t, ndim=1] adj):
    cdef Py_ssize_t n = op.shape[0]
    if n == 0:
        return
    with nogil:
        _backward(n, <int*> op.data, <int*> abc.data, <int*> iaux.data,
                  <double*> faux.data, <long long*> off.data,
                  <long long*> sz.data, <double*> buf.data,
                  <double*> adj.data)

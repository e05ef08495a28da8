"""Compiled gate-application kernel.

Mirrors ``_pure.apply_gate``; see that module for the index conventions.
"""
from libc.stdlib cimport free, malloc

import numpy as np


def apply_gate(double complex[::1] state, const double complex[:, ::1] matrix,
               const long long[::1] targets, unsigned long long ctrl_mask,
               unsigned long long ctrl_value):
    cdef Py_ssize_t n = state.shape[0]
    cdef Py_ssize_t k = targets.shape[0]
    cdef Py_ssize_t d = (<Py_ssize_t>1) << k
    cdef Py_ssize_t i, l, j, r, c
    cdef unsigned long long tmask = 0
    cdef unsigned long long ui
    cdef double complex acc
    cdef double complex *buf
    cdef Py_ssize_t *offs

    if matrix.shape[0] != d or matrix.shape[1] != d:
        raise ValueError("matrix shape does not match target count")

    buf = <double complex *>malloc(d * sizeof(double complex))
    offs = <Py_ssize_t *>malloc(d * sizeof(Py_ssize_t))
    if buf == NULL or offs == NULL:
        free(buf)
        free(offs)
        raise MemoryError()

    for j in range(k):
        tmask |= (<unsigned long long>1) << targets[j]
    for l in range(d):
        offs[l] = 0
        for j in range(k):
            if (l >> j) & 1:
                offs[l] += (<Py_ssize_t>1) << targets[j]

    with nogil:
        for i in range(n):
            ui = <unsigned long long>i
            if (ui & tmask) != 0 or (ui & ctrl_mask) != ctrl_value:
                continue
            for l in range(d):
                buf[l] = state[i + offs[l]]
            for r in range(d):
                acc = 0
                for c in range(d):
                    acc = acc + matrix[r, c] * buf[c]
                state[i + offs[r]] = acc

    free(buf)
    free(offs)

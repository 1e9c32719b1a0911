# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the feature front end.

Signatures mirror ``vtlkws._kernels_py`` exactly; see that module for the
reference semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()


def frame_signal(const double[::1] x, Py_ssize_t win_len, Py_ssize_t hop,
                 double preemph, const double[::1] window):
    cdef Py_ssize_t n = x.shape[0]
    if win_len <= 0 or hop <= 0:
        raise ValueError("win_len and hop must be positive")
    if n < win_len:
        raise ValueError(f"signal of {n} samples is shorter than one window ({win_len})")
    if window.shape[0] != win_len:
        raise ValueError("window length mismatch")
    cdef Py_ssize_t n_frames = 1 + (n - win_len) // hop
    out = np.empty((n_frames, win_len), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t t, j, s
    cdef double prev
    with nogil:
        for t in range(n_frames):
            s = t * hop
            for j in range(win_len):
                if s + j == 0:
                    prev = 0.0
                else:
                    prev = x[s + j - 1]
                o[t, j] = (x[s + j] - preemph * prev) * window[j]
    return out


def apply_filterbanks_log(const double[:, ::1] power, const double[:, :, ::1] weights,
                          const cnp.int64_t[:, ::1] starts, const cnp.int64_t[:, ::1] stops,
                          double floor):
    cdef Py_ssize_t n_frames = power.shape[0]
    cdef Py_ssize_t n_bins = power.shape[1]
    cdef Py_ssize_t n_banks = weights.shape[0]
    cdef Py_ssize_t n_filters = weights.shape[1]
    if weights.shape[2] != n_bins:
        raise ValueError("filterbank width does not match the power spectrum")
    if starts.shape[0] != n_banks or starts.shape[1] != n_filters:
        raise ValueError("starts shape mismatch")
    if stops.shape[0] != n_banks or stops.shape[1] != n_filters:
        raise ValueError("stops shape mismatch")
    out = np.empty((n_banks, n_frames, n_filters), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t a, t, m, k, k0, k1
    cdef double acc
    with nogil:
        for a in range(n_banks):
            for t in range(n_frames):
                for m in range(n_filters):
                    k0 = starts[a, m]
                    k1 = stops[a, m]
                    acc = 0.0
                    for k in range(k0, k1):
                        acc = acc + power[t, k] * weights[a, m, k]
                    if acc < floor:
                        acc = floor
                    o[a, t, m] = log(acc)
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in fedsel._pykernels."""

import numpy as np

from libc.math cimport exp, log

cdef double PROB_FLOOR = 1e-12


def pairwise_kl(probs):
    cdef const double[:, :, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t K = p.shape[0], M = p.shape[1], N = p.shape[2]
    cdef Py_ssize_t a, j, i, n
    cdef double acc, cross, pn, qn
    # split KL into sum p ln p minus sum p ln q so each log is taken once
    cdef double[:, :, ::1] logq = np.empty((K, M, N), dtype=np.float64)
    cdef double[:, ::1] plogp = np.zeros((K, M), dtype=np.float64)
    for a in range(K):
        for i in range(M):
            for n in range(N):
                pn = p[a, i, n]
                qn = pn if pn > PROB_FLOOR else PROB_FLOOR
                logq[a, i, n] = log(qn)
                if pn > 0.0:
                    plogp[a, i] += pn * log(pn)
    out = np.zeros((K, K), dtype=np.float64)
    cdef double[:, ::1] d = out
    for a in range(K):
        for j in range(K):
            if a == j:
                continue
            acc = 0.0
            for i in range(M):
                cross = 0.0
                for n in range(N):
                    cross += p[a, i, n] * logq[j, i, n]
                acc += plogp[a, i] - cross
            d[a, j] = acc / (N * M)
    return out


def softmax_sgd(w, x, y, orders, Py_ssize_t num_classes, Py_ssize_t batch_size, double lr):
    cdef double[::1] wv = np.array(w, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const long long[::1] yv = np.ascontiguousarray(y, dtype=np.int64)
    cdef const long long[:, ::1] ov = np.ascontiguousarray(orders, dtype=np.int64)
    cdef Py_ssize_t D = xv.shape[1], C = num_classes
    cdef Py_ssize_t n_samples = ov.shape[1], n_epochs = ov.shape[0]
    cdef Py_ssize_t bias = D * C
    cdef Py_ssize_t e, start, stop, r, s, f, c, bsz
    cdef double zmax, tot, scale
    cdef double[:, ::1] delta = np.empty((batch_size, C), dtype=np.float64)
    cdef double[::1] grad = np.empty(D * C + C, dtype=np.float64)

    for e in range(n_epochs):
        start = 0
        while start < n_samples:
            stop = start + batch_size
            if stop > n_samples:
                stop = n_samples
            bsz = stop - start
            scale = 1.0 / bsz
            for r in range(bsz):
                s = ov[e, start + r]
                for c in range(C):
                    tot = wv[bias + c]
                    for f in range(D):
                        tot += xv[s, f] * wv[f * C + c]
                    delta[r, c] = tot
                zmax = delta[r, 0]
                for c in range(1, C):
                    if delta[r, c] > zmax:
                        zmax = delta[r, c]
                tot = 0.0
                for c in range(C):
                    delta[r, c] = exp(delta[r, c] - zmax)
                    tot += delta[r, c]
                for c in range(C):
                    delta[r, c] = delta[r, c] / tot
                delta[r, yv[s]] -= 1.0
                for c in range(C):
                    delta[r, c] *= scale
            for f in range(D * C + C):
                grad[f] = 0.0
            for r in range(bsz):
                s = ov[e, start + r]
                for f in range(D):
                    for c in range(C):
                        grad[f * C + c] += xv[s, f] * delta[r, c]
                for c in range(C):
                    grad[bias + c] += delta[r, c]
            for f in range(D * C + C):
                wv[f] -= lr * grad[f]
            start = stop
    return np.asarray(wv)

"""Numpy reference versions of the compiled kernels."""

import numpy as np

PROB_FLOOR = 1e-12


def pairwise_kl(probs):
    """probs: (K, M, N) softmax outputs of K models on M probe samples.

    d[k, j] = mean_i (1/N) sum_n P[k,i,n] * ln(P[k,i,n] / max(P[j,i,n], 1e-12)),
    with 0 * ln(0 / q) taken as 0. The diagonal is set to exactly zero.
    """
    p = np.asarray(probs, dtype=np.float64)
    k, m, n = p.shape
    q = np.maximum(p, PROB_FLOOR)
    logq = np.log(q)
    # p ln p, with the 0 ln 0 = 0 convention
    plogp = (p * np.log(np.where(p > 0, p, 1.0))).sum(axis=2)
    d = np.empty((k, k))
    for a in range(k):
        # same product and reduction order as plogp, so d[a, a] and twins are exactly 0
        cross = (p[a][None, :, :] * logq).sum(axis=2)
        d[a] = (plogp[a][None, :] - cross).sum(axis=1) / (n * m)
    np.fill_diagonal(d, 0.0)
    return d


def softmax_sgd(w, x, y, orders, num_classes, batch_size, lr):
    w = np.array(w, dtype=np.float64)
    d = x.shape[1]
    nw = d * num_classes
    wm = w[:nw].reshape(d, num_classes)
    b = w[nw:]
    for order in orders:
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            xb = x[idx]
            z = xb @ wm + b
            z -= z.max(axis=1, keepdims=True)
            e = np.exp(z)
            delta = e / e.sum(axis=1, keepdims=True)
            delta[np.arange(len(idx)), y[idx]] -= 1.0
            delta /= len(idx)
            wm -= lr * (xb.T @ delta)
            b -= lr * delta.sum(axis=0)
    return w

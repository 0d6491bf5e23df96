"""Numpy implementations of the hot kernels, used when the extension is not built."""
import numpy as np


def mlp_forward(x, W1, b1, W2, b2, W3, b3):
    h1 = np.tanh(x @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    return h1, h2, h2 @ W3 + b3


def mlp_backward(x, h1, h2, W1, W2, W3, dy):
    gW3 = h2.T @ dy
    gb3 = dy.sum(axis=0)
    d2 = (dy @ W3.T) * (1.0 - h2 * h2)
    gW2 = h1.T @ d2
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ W2.T) * (1.0 - h1 * h1)
    gW1 = x.T @ d1
    gb1 = d1.sum(axis=0)
    return gW1, gb1, gW2, gb2, gW3, gb3, d1 @ W1.T


def greedy_proba(p, costs, budget, opt_in):
    """Index of the chosen action per arm (-1 for opted-out arms)."""
    p = np.asarray(p, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    xi = np.asarray(opt_in).astype(bool)
    n, n_act = p.shape
    out = np.full(n, -1, dtype=np.int64)
    remaining = int(xi.sum())
    spent = 0.0
    for flat in np.argsort(-p.ravel(), kind="stable"):
        if remaining == 0:
            break
        arm, act = divmod(int(flat), n_act)
        if not xi[arm] or out[arm] >= 0:
            continue
        if spent + costs[act] <= budget:
            out[arm] = act
            spent += costs[act]
            remaining -= 1
    out[xi & (out < 0)] = 0
    return out


def pav(y, w):
    """Weighted least-squares non-decreasing fit of ``y`` (pool adjacent violators)."""
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    means, weights, starts = [], [], []
    for i in range(len(y)):
        means.append(y[i])
        weights.append(w[i])
        starts.append(i)
        while len(means) > 1 and means[-2] > means[-1]:
            wsum = weights[-2] + weights[-1]
            means[-2] = (means[-2] * weights[-2] + means[-1] * weights[-1]) / wsum
            weights[-2] = wsum
            means.pop()
            weights.pop()
            starts.pop()
    fit = np.empty(len(y))
    bounds = starts[1:] + [len(y)]
    for m, lo, hi in zip(means, starts, bounds):
        fit[lo:hi] = m
    return fit

"""Small tanh MLPs with hand-written backprop and an Adam optimizer.

Parameters live in one flat float64 vector; the per-layer weight matrices are
views into it, so optimizers and checkpoints only deal with a single array.
"""
from __future__ import annotations

import numpy as np

from . import kernels

HIDDEN = 16


class Mlp:
    """Two hidden tanh layers, identity output.

    Weight matrices are stored input-major (``W.shape == (fan_in, fan_out)``)
    so a batch ``x`` of shape (B, n_in) maps to ``x @ W1 + b1``.
    """

    def __init__(self, n_in: int, n_out: int, hidden: int = HIDDEN, rng=None, params=None):
        self.sizes = (int(n_in), int(hidden), int(hidden), int(n_out))
        self.params = np.zeros(self.n_params) if params is None else np.array(params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")
        self._bind()
        if rng is not None and params is None:
            self.init(rng)

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        a, h1, h2, o = self.sizes
        return a * h1 + h1 + h1 * h2 + h2 + h2 * o + o

    def _bind(self):
        views, pos = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            views.append(self.params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
            views.append(self.params[pos:pos + fan_out])
            pos += fan_out
        self.W1, self.b1, self.W2, self.b2, self.W3, self.b3 = views

    def init(self, rng):
        """Scaled uniform init for weights, zero biases."""
        self.params[:] = 0.0
        for W in (self.W1, self.W2, self.W3):
            bound = np.sqrt(6.0 / sum(W.shape))
            W[...] = rng.uniform(-bound, bound, W.shape)
        return self

    def copy(self) -> "Mlp":
        return Mlp(self.n_in, self.n_out, self.sizes[1], params=self.params)

    def set_params(self, flat):
        self.params[:] = flat

    def forward(self, x):
        """Returns ``(y, cache)`` for a single vector or a (B, n_in) batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.ascontiguousarray(x.reshape(1, -1) if single else x)
        if xb.shape[1] != self.n_in:
            raise ValueError(f"input has {xb.shape[1]} features, network expects {self.n_in}")
        h1, h2, y = kernels.mlp_forward(xb, self.W1, self.b1, self.W2, self.b2, self.W3, self.b3)
        return (y[0] if single else y), (xb, h1, h2, single)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy):
        """Gradient of ``sum(dy * y)`` w.r.t. the flat parameters and the input."""
        xb, h1, h2, single = cache
        dy = np.ascontiguousarray(np.asarray(dy, dtype=np.float64).reshape(len(xb), self.n_out))
        gW1, gb1, gW2, gb2, gW3, gb3, dx = kernels.mlp_backward(xb, h1, h2, self.W1, self.W2, self.W3, dy)
        grad = np.concatenate([np.ravel(g) for g in (gW1, gb1, gW2, gb2, gW3, gb3)])
        return grad, (dx[0] if single else dx)

    # checkpoint helpers
    def manifest(self) -> dict:
        return {"sizes": list(self.sizes), "activation": ["tanh", "tanh", "identity"]}

    def to_bytes(self) -> bytes:
        return self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, manifest: dict, blob: bytes) -> "Mlp":
        n_in, hidden, _, n_out = manifest["sizes"]
        return cls(n_in, n_out, hidden, params=np.frombuffer(blob, dtype="<f8"))


class Adam:
    """Bias-corrected Adam over a flat parameter vector."""

    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params, grad, lr):
        """Update ``params`` in place and return it."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1 ** self.t)
        v_hat = self.v / (1 - b2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params

    def state(self) -> dict:
        return {"t": self.t, "m": self.m.tolist(), "v": self.v.tolist()}

    def load_state(self, d: dict):
        self.t = int(d["t"])
        self.m = np.asarray(d["m"], dtype=np.float64)
        self.v = np.asarray(d["v"], dtype=np.float64)


def adam_step(params, grads, state: Adam, lr: float):
    return state.step(params, grads, lr)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def stacked_forward(sizes, P, h, first_layer: int = 0):
    """Outputs of many parameter vectors ``P`` (K, n_params), shape (K, B, n_out).

    ``h`` is the batch input, or with ``first_layer > 0`` the (K, B, width)
    activations entering that layer.
    """
    pos = 0
    pairs = list(zip(sizes[:-1], sizes[1:]))
    for fan_in, fan_out in pairs[:first_layer]:
        pos += fan_in * fan_out + fan_out
    h = np.asarray(h, dtype=np.float64)
    for layer in range(first_layer, len(pairs)):
        fan_in, fan_out = pairs[layer]
        W = P[:, pos:pos + fan_in * fan_out].reshape(len(P), fan_in, fan_out)
        pos += fan_in * fan_out
        b = P[:, None, pos:pos + fan_out]
        pos += fan_out
        h = h @ W + b
        if layer < len(pairs) - 1:
            h = np.tanh(h)
    return h


def gradcheck(net: Mlp, x, dy=None, h: float = 1e-5, rng=None, chunk: int = 512):
    """Central-difference check of ``backward`` on the loss ``sum(dy * net(x))``.

    The perturbed networks are evaluated in stacked numpy passes, independent
    of the forward kernel. A single perturbed first-layer weight only moves
    one hidden pre-activation, so that layer is patched rather than
    recomputed. Returns the largest relative error over all parameters, using
    ``max(|analytic|, |numeric|, 1e-6)`` as the denominator.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y, cache = net.forward(x)
    if dy is None:
        dy = rng.standard_normal(np.shape(y))
    analytic, _ = net.backward(cache, dy)
    n, (n_in, width) = net.n_params, net.sizes[:2]
    base = x @ net.W1 + net.b1
    numeric = np.empty(n)
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(lo + chunk, n))
        m = len(idx)
        sign = np.concatenate([np.full(m, h), np.full(m, -h)])
        both = np.concatenate([idx, idx])
        P = np.repeat(net.params[None], 2 * m, axis=0)
        P[np.arange(2 * m), both] += sign
        pre = np.repeat(base[None], 2 * m, axis=0)
        rows = np.flatnonzero(both < n_in * width)
        pre[rows, :, both[rows] % width] += sign[rows, None] * x[:, both[rows] // width].T
        rows = np.flatnonzero((both >= n_in * width) & (both < n_in * width + width))
        pre[rows, :, both[rows] - n_in * width] += sign[rows, None]
        out = stacked_forward(net.sizes, P, np.tanh(pre), first_layer=1)
        loss = np.einsum("kbo,bo->k", out, dy)
        numeric[idx] = (loss[:m] - loss[m:]) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))

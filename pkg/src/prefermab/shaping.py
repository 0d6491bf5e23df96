"""Observation shaping so that reward becomes linear in the abstract state."""
from __future__ import annotations

import numpy as np

from . import kernels


class ShapingModel:
    """Maps raw observations ``s`` to ``s_bar`` using a fitted reward curve.

    ``s_bar = (r_hat(s) - r_min) / (r_max - r_min) * (s_max - s_min)``, with
    ``r_hat`` either an isotonic (PAV) fit or a k-nearest-neighbour mean.
    With fewer than two observations, a flat reward curve, or
    ``enabled=False`` the model passes states through unchanged.
    """

    def __init__(self, kind: str = "isotonic", k: int = 5, enabled: bool = True, max_points: int = 5000):
        if kind not in ("isotonic", "knn"):
            raise ValueError(f"unknown estimator {kind!r}")
        self.kind = kind
        self.k = int(k)
        self.enabled = enabled
        self.max_points = int(max_points)
        self.xs = np.zeros(0)
        self.ys = np.zeros(0)
        self.s_min = self.s_max = 0.0
        self.r_min = self.r_max = 0.0
        self._seen = 0

    @property
    def passthrough(self) -> bool:
        return not self.enabled or len(self.xs) < 2 or self.r_max == self.r_min

    def fit(self, s, r, rng=None):
        """Fit on (s, r) pairs, merged with previously retained data.

        The retained set is capped at ``max_points`` by uniform subsampling.
        Extrema are running values over everything ever seen.
        """
        s = np.asarray(s, dtype=np.float64).ravel()
        r = np.asarray(r, dtype=np.float64).ravel()
        if len(s) != len(r):
            raise ValueError("s and r must have equal length")
        if not len(s):
            return self
        if self._seen == 0:
            self.s_min, self.s_max = s.min(), s.max()
            self.r_min, self.r_max = r.min(), r.max()
        else:
            self.s_min, self.s_max = min(self.s_min, s.min()), max(self.s_max, s.max())
            self.r_min, self.r_max = min(self.r_min, r.min()), max(self.r_max, r.max())
        self._seen += len(s)
        data_s = np.concatenate([self._raw_s, s]) if self._seen > len(s) else s
        data_r = np.concatenate([self._raw_r, r]) if self._seen > len(s) else r
        if len(data_s) > self.max_points:
            rng = rng if rng is not None else np.random.default_rng(0)
            keep = np.sort(rng.choice(len(data_s), self.max_points, replace=False))
            data_s, data_r = data_s[keep], data_r[keep]
        self._raw_s, self._raw_r = data_s, data_r
        order = np.argsort(data_s, kind="stable")
        xs, ys = data_s[order], data_r[order]
        if self.kind == "isotonic":
            # collapse tied x values into weighted means before PAV
            ux, start, counts = np.unique(xs, return_index=True, return_counts=True)
            sums = np.add.reduceat(ys, start)
            self.xs, self.ys = ux, kernels.pav(sums / counts, counts.astype(np.float64))
        else:
            self.xs, self.ys = xs, ys
        return self

    def predict(self, s):
        """Estimated reward ``r_hat(s)``; queries are clamped to the observed range."""
        s = np.clip(np.asarray(s, dtype=np.float64), self.xs[0], self.xs[-1])
        if self.kind == "isotonic":
            return np.interp(s, self.xs, self.ys)
        k = min(self.k, len(self.xs))
        flat = np.atleast_1d(s).ravel()
        dist = np.abs(flat[:, None] - self.xs[None, :])
        idx = np.argpartition(dist, k - 1, axis=1)[:, :k]
        return self.ys[idx].mean(axis=1).reshape(np.shape(s))

    def shape(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.passthrough:
            return s.copy()
        r_hat = self.predict(s)
        return (r_hat - self.r_min) / (self.r_max - self.r_min) * (self.s_max - self.s_min)

    __call__ = shape

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "k": self.k, "enabled": self.enabled, "max_points": self.max_points,
            "xs": self.xs.tolist(), "ys": self.ys.tolist(),
            "raw_s": getattr(self, "_raw_s", np.zeros(0)).tolist(),
            "raw_r": getattr(self, "_raw_r", np.zeros(0)).tolist(),
            "extrema": [self.s_min, self.s_max, self.r_min, self.r_max], "seen": self._seen,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapingModel":
        m = cls(d["kind"], d["k"], d["enabled"], d.get("max_points", 5000))
        m.xs = np.asarray(d["xs"], dtype=np.float64)
        m.ys = np.asarray(d["ys"], dtype=np.float64)
        m._raw_s = np.asarray(d.get("raw_s", []), dtype=np.float64)
        m._raw_r = np.asarray(d.get("raw_r", []), dtype=np.float64)
        m.s_min, m.s_max, m.r_min, m.r_max = map(float, d["extrema"])
        m._seen = int(d["seen"])
        return m

"""Fast shape-preserving monotone cubic interpolation.

Thin wrapper around scipy's PCHIP construction (Fritsch-Carlson slopes) that
pre-extracts the piecewise-polynomial coefficients so scalar evaluations inside
tight loops avoid PPoly call overhead. Queries outside the knot span are
clamped to the end values, never extrapolated; callers that must surface
clamping inspect :meth:`in_domain`.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import PchipInterpolator


class MonotoneCubic:
    """Monotone piecewise-cubic interpolant through (x, y) with clamped ends."""

    __slots__ = ("x", "y", "_breaks", "_coefs", "_dcoefs")

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError("x and y must be one-dimensional and equally sized")
        if x.size < 2:
            raise ValueError("need at least two points to interpolate")
        if not np.all(np.diff(x) > 0):
            raise ValueError("x must be strictly increasing")
        poly = PchipInterpolator(x, y, extrapolate=False)
        self.x = x
        self.y = y
        self._breaks = poly.x
        # PPoly stores c[k, i] for the (3-k)-th power on interval i.
        self._coefs = np.ascontiguousarray(poly.c)
        c = self._coefs
        self._dcoefs = np.ascontiguousarray(
            np.vstack([3.0 * c[0], 2.0 * c[1], c[2]])
        )

    def _locate(self, t):
        idx = np.searchsorted(self._breaks, t, side="right") - 1
        return np.clip(idx, 0, self._breaks.size - 2)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tc = np.clip(t, self._breaks[0], self._breaks[-1])
        idx = self._locate(tc)
        dt = tc - self._breaks[idx]
        c = self._coefs
        out = ((c[0, idx] * dt + c[1, idx]) * dt + c[2, idx]) * dt + c[3, idx]
        return float(out) if scalar else out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tc = np.clip(t, self._breaks[0], self._breaks[-1])
        idx = self._locate(tc)
        dt = tc - self._breaks[idx]
        d = self._dcoefs
        out = (d[0, idx] * dt + d[1, idx]) * dt + d[2, idx]
        return float(out) if scalar else out

    def in_domain(self, t):
        t = np.asarray(t, dtype=float)
        ok = (t >= self._breaks[0]) & (t <= self._breaks[-1])
        return bool(ok) if t.ndim == 0 else ok

    @property
    def domain(self):
        return float(self._breaks[0]), float(self._breaks[-1])

"""Link functions for weight adjustment.

Calibration uses a bounded increasing ``G`` with ``G(0) = 1``; estimated
weights use a binary-regression link ``G_e`` mapping into ``[0, 1]``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

__all__ = [
    "GFunction",
    "TruncatedLinear",
    "ScaledLogit",
    "LinearG",
    "LogisticLink",
    "get_g_family",
]


class GFunction:
    """Calibration link. Subclasses define ``__call__`` and ``derivative``."""

    name = "abstract"
    lower = -np.inf
    upper = np.inf

    def __call__(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class TruncatedLinear(GFunction):
    """``clamp(1 + x, m1, M1)`` with quadratic blends of half-width ``eps``.

    The blend is the cubic Hermite interpolant matching value and slope at
    both ends of each corner band, which reduces to a quadratic. The result
    is continuously differentiable, flat outside ``[m1 - eps, M1 + eps]``.
    """

    name = "trunclinear"

    def __init__(self, m1=0.1, M1=10.0, eps=1e-3):
        if not (0 < m1 < 1 < M1):
            raise ValueError("bounds must satisfy 0 < m1 < 1 < M1")
        if not (m1 + eps <= 1 <= M1 - eps):
            raise ValueError("blend width too large for the bounds")
        self.m1, self.M1, self.eps = float(m1), float(M1), float(eps)
        self.lower, self.upper = self.m1, self.M1

    def __call__(self, x):
        s = 1.0 + np.asarray(x, dtype=float)
        m, M, e = self.m1, self.M1, self.eps
        out = np.clip(s, m, M)
        lo = np.abs(s - m) < e
        hi = np.abs(s - M) < e
        out = np.where(lo, m + (s - m + e) ** 2 / (4 * e), out)
        out = np.where(hi, M - (M + e - s) ** 2 / (4 * e), out)
        return out

    def derivative(self, x):
        s = 1.0 + np.asarray(x, dtype=float)
        m, M, e = self.m1, self.M1, self.eps
        out = ((s > m + e) & (s < M - e)).astype(float)
        lo = np.abs(s - m) < e
        hi = np.abs(s - M) < e
        out = np.where(lo, (s - m + e) / (2 * e), out)
        out = np.where(hi, (M + e - s) / (2 * e), out)
        return out

    def __repr__(self):
        return f"TruncatedLinear(m1={self.m1}, M1={self.M1}, eps={self.eps})"


class ScaledLogit(GFunction):
    """``m1 + (M1 - m1) * expit(c*x + b)`` with ``G(0) = 1`` and ``G'(0) = 1``."""

    name = "scaledlogit"

    def __init__(self, m1=0.1, M1=10.0):
        if not (0 < m1 < 1 < M1):
            raise ValueError("bounds must satisfy 0 < m1 < 1 < M1")
        self.m1, self.M1 = float(m1), float(M1)
        self.lower, self.upper = self.m1, self.M1
        q = (1.0 - m1) / (M1 - m1)
        self.offset = float(logit(q))
        self.scale = 1.0 / ((M1 - m1) * q * (1 - q))

    def __call__(self, x):
        return self.m1 + (self.M1 - self.m1) * expit(
            self.scale * np.asarray(x, float) + self.offset)

    def derivative(self, x):
        s = expit(self.scale * np.asarray(x, float) + self.offset)
        return (self.M1 - self.m1) * self.scale * s * (1 - s)

    def __repr__(self):
        return f"ScaledLogit(m1={self.m1}, M1={self.M1})"


class LinearG(GFunction):
    """Untruncated ``1 + x``; unbounded, so only for closed-form checks."""

    name = "linear"

    def __call__(self, x):
        return 1.0 + np.asarray(x, dtype=float)

    def derivative(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


class LogisticLink:
    """Binary-regression link ``expit`` used for estimated weights."""

    name = "logistic"

    def __call__(self, x):
        return expit(x)

    def derivative(self, x):
        s = expit(x)
        return s * (1 - s)

    def inverse(self, p):
        return logit(p)

    def __repr__(self):
        return "LogisticLink()"


_FAMILIES = {
    "trunclinear": TruncatedLinear,
    "scaledlogit": ScaledLogit,
    "linear": LinearG,
}


def get_g_family(name, **kwargs):
    if isinstance(name, GFunction):
        return name
    try:
        return _FAMILIES[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown G family {name!r}; "
                         f"choose from {sorted(_FAMILIES)}") from None

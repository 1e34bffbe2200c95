"""Vectorised log-gamma, digamma and trigamma.

All three shift the argument up to ``x >= 15`` with the recurrence relations
and then evaluate the asymptotic (Stirling / Bernoulli) series.
"""

from __future__ import annotations

import numpy as np

_SHIFT = 15.0
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)

# B_2k / (2k (2k-1)) for the log-gamma series, k = 1..7
_LGAMMA_COEF = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188, -691 / 360360, 1 / 156)
# B_2k / (2k) for the digamma series
_DIGAMMA_COEF = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
# B_2k for the trigamma series
_TRIGAMMA_COEF = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)


def _prepare(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise ValueError("argument must be positive")
    return x


def _series(inv_sq, coefs):
    acc = np.zeros_like(inv_sq)
    for c in reversed(coefs):
        acc = acc * inv_sq + c
    return acc


def log_gamma(x):
    x = _prepare(x)
    shift = np.zeros_like(x)
    y = x.copy()
    while True:
        small = y < _SHIFT
        if not small.any():
            break
        shift += np.where(small, np.log(np.where(small, y, 1.0)), 0.0)
        y = np.where(small, y + 1.0, y)
    inv = 1.0 / y
    tail = inv * _series(inv * inv, _LGAMMA_COEF)
    return (y - 0.5) * np.log(y) - y + _HALF_LOG_2PI + tail - shift


def digamma(x):
    x = _prepare(x)
    shift = np.zeros_like(x)
    y = x.copy()
    while True:
        small = y < _SHIFT
        if not small.any():
            break
        shift += np.where(small, 1.0 / y, 0.0)
        y = np.where(small, y + 1.0, y)
    inv2 = 1.0 / (y * y)
    return np.log(y) - 0.5 / y - inv2 * _series(inv2, _DIGAMMA_COEF) - shift


def trigamma(x):
    x = _prepare(x)
    shift = np.zeros_like(x)
    y = x.copy()
    while True:
        small = y < _SHIFT
        if not small.any():
            break
        shift += np.where(small, 1.0 / (y * y), 0.0)
        y = np.where(small, y + 1.0, y)
    inv = 1.0 / y
    inv2 = inv * inv
    return inv + 0.5 * inv2 + inv * inv2 * _series(inv2, _TRIGAMMA_COEF) + shift

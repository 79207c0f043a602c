"""Adaptive quadrature helpers with a single relative-tolerance knob.

All improper integrals over [0, inf) are mapped onto (0, 1) through
s = u / (1 - u) before adaptive subdivision, so endpoint behaviour like
s**g with g > -1 near zero and integrable tails are handled by the same
machinery.  Backed by scipy.integrate.quad (QUADPACK).
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

DEFAULT_RTOL = 1e-10

# absolute floor so that integrals whose true value is ~0 still converge
_ABS_FLOOR = 1e-15


def quad_interval(f, a, b, rtol=DEFAULT_RTOL, breakpoints=None, limit=400):
    """Integrate f on the finite interval [a, b]."""
    pts = None
    if breakpoints is not None:
        pts = sorted(p for p in breakpoints if a < p < b)
        if not pts:
            pts = None
    val, _ = integrate.quad(f, a, b, epsrel=rtol, epsabs=_ABS_FLOOR,
                            limit=limit, points=pts)
    return val


def quad_zero_inf(f, rtol=DEFAULT_RTOL, breakpoints=None, limit=600):
    """Integrate f over (0, inf) via the substitution s = u / (1 - u).

    breakpoints are locations on the s axis (e.g. integrand kinks); they are
    mapped to the u axis and passed to the adaptive subdivision.
    """

    def g(u):
        s = u / (1.0 - u)
        return f(s) / (1.0 - u) ** 2

    pts = None
    if breakpoints is not None:
        pts = sorted(b / (1.0 + b) for b in breakpoints if b > 0 and np.isfinite(b))
        if not pts:
            pts = None
    val, _ = integrate.quad(g, 0.0, 1.0, epsrel=rtol, epsabs=_ABS_FLOOR,
                            limit=limit, points=pts)
    return val


def quad_split_at_one(f, rtol=DEFAULT_RTOL, breakpoints=None):
    """Integrate f over (0, inf) splitting at s = 1.

    Used for radial Levy integrals where the integrand may carry an
    algebraic singularity at 0 and a slowly decaying tail.
    """
    bp = [1.0]
    if breakpoints is not None:
        bp.extend(breakpoints)
    return quad_zero_inf(f, rtol=rtol, breakpoints=bp)


def gauss_legendre_01(n):
    """Nodes and weights on (0, 1); cached per order."""
    key = int(n)
    cached = _GL_CACHE.get(key)
    if cached is None:
        x, w = np.polynomial.legendre.leggauss(key)
        cached = (0.5 * (x + 1.0), 0.5 * w)
        _GL_CACHE[key] = cached
    return cached


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}

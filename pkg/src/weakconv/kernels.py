"""The built-in weakly stable kernels as computable descriptors.

Four kinds are supported, each normalized to a single canonical
characteristic function:

* ``stable(alpha)``   cf exp(-|t|**alpha), 0 < alpha <= 2
* ``kendall(alpha)``  cf (1 - |t|**alpha)_+, 0 < alpha <= 1
* ``kingman(s)``      density c_s (1 - x**2)**(s - 1/2) on (-1, 1), s > -1/2
* ``sphere(n)``       the one-dimensional marginal of the uniform law on the
                      unit sphere in R**n; stored as kingman(n/2 - 1)

``gaussian`` is the alias stable(2); its cf is exp(-t**2), i.e. a centered
normal with variance 2.  Rescalings are applied explicitly by the measure
layer, never baked into the kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .batch import SampleBatch, make_rng
from .errors import Unavailable, UnsupportedKernel
from .quadrature import DEFAULT_RTOL, gauss_legendre_01, quad_zero_inf

__all__ = [
    "KernelDescriptor", "stable", "kendall", "kingman", "sphere", "gaussian",
    "parse_kernel", "kernel_cf", "kernel_density", "kernel_tail",
    "kernel_kappa", "kernel_abs_moment", "kernel_sample",
]

_KENDALL_TABLE_SIZE = 4096
_KENDALL_SWITCH = 50.0   # crossover between quadrature and asymptotic tail
_STABLE_SWITCH = 8.0


@dataclass(frozen=True)
class KernelDescriptor:
    """A weakly stable kernel plus its numeric tolerances.

    ``param`` is alpha for stable/kendall and s for kingman; ``sphere_dim``
    records the ambient dimension when constructed through sphere(n).
    Descriptors are immutable; cached tables are built eagerly so instances
    are safe to share across threads.
    """

    kind: str
    param: float
    sphere_dim: int | None = None
    quad_rtol: float = DEFAULT_RTOL
    grid_hint: int = 2048
    _tables: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kind == "stable":
            if not 0.0 < self.param <= 2.0:
                raise ValueError("stable index must lie in (0, 2]")
        elif self.kind == "kendall":
            if not 0.0 < self.param <= 1.0:
                raise ValueError("kendall index must lie in (0, 1]")
        elif self.kind == "kingman":
            if not self.param > -0.5:
                raise ValueError("kingman parameter must exceed -1/2")
        else:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "kendall":
            self._tables["cdf"] = _kendall_cdf_table(self.param)
        if self.kind == "kingman":
            self._tables["jacobi"] = {}

    @property
    def spec_string(self):
        if self.sphere_dim is not None:
            return f"sphere:{self.sphere_dim}"
        if self.kind == "stable" and self.param == 2.0:
            return "gaussian"
        return f"{self.kind}:{self.param:g}"


def stable(alpha, **tol):
    return KernelDescriptor("stable", float(alpha), **tol)


def kendall(alpha, **tol):
    return KernelDescriptor("kendall", float(alpha), **tol)


def kingman(s, **tol):
    return KernelDescriptor("kingman", float(s), **tol)


def sphere(n, **tol):
    n = int(n)
    if n < 2:
        raise ValueError("sphere dimension must be >= 2")
    return KernelDescriptor("kingman", n / 2.0 - 1.0, sphere_dim=n, **tol)


def gaussian(**tol):
    return stable(2.0, **tol)


def parse_kernel(text, **tol):
    """Parse CLI/config kernel strings: "stable:1.0", "sphere:3", "gaussian"."""
    body = text.strip().lower()
    if body == "gaussian":
        return gaussian(**tol)
    name, sep, arg = body.partition(":")
    if not sep:
        raise ValueError(f"kernel spec {text!r} needs a parameter, e.g. 'stable:1.0'")
    try:
        value = float(arg)
    except ValueError as exc:
        raise ValueError(f"bad kernel parameter in {text!r}") from exc
    if name == "stable":
        return stable(value, **tol)
    if name == "kendall":
        return kendall(value, **tol)
    if name == "kingman":
        return kingman(value, **tol)
    if name == "sphere":
        if value != int(value):
            raise ValueError("sphere dimension must be an integer")
        return sphere(int(value), **tol)
    raise ValueError(f"unknown kernel kind {name!r}")


# ---------------------------------------------------------------------------
# Kendall kernel internals
#
# Everything reduces to J(s) = int_0^1 t^(a-1) sin(st) dt.  For s <= 50 it is
# evaluated by Gauss-Legendre after t = u^(1/a) (smooth integrand); beyond,
# gamma_a(s) = int_0^s v^(a-1) sin v dv = Gamma(a) sin(pi a / 2) - R(s) with R
# expanded by repeated integration by parts.
# ---------------------------------------------------------------------------

_GLN = 384


def _kendall_J(s, alpha):
    u, w = gauss_legendre_01(_GLN)
    nodes = u ** (1.0 / alpha)
    return np.sin(np.multiply.outer(s, nodes)) @ w / alpha


def _kendall_gamma_tail(x, alpha, terms=9):
    """R(x) = int_x^inf v^(a-1) sin v dv, asymptotic series."""
    x = np.asarray(x, dtype=float)
    b = alpha - 1.0
    coef = 1.0
    out = np.zeros_like(x)
    cosx, sinx = np.cos(x), np.sin(x)
    for _ in range(terms):
        out += coef * (x ** b * cosx - b * x ** (b - 1.0) * sinx)
        coef *= -b * (b - 1.0)
        b -= 2.0
    return out


def _kendall_gamma_inf(alpha):
    return special.gamma(alpha) * math.sin(math.pi * alpha / 2.0)


def _kendall_tail(s, alpha):
    """mu_alpha([-s, s]^c), vectorized."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    zero = s == 0.0
    small = (s > 0.0) & (s <= _KENDALL_SWITCH)
    big = s > _KENDALL_SWITCH
    if small.any():
        ss = s[small]
        si, _ = special.sici(ss)
        out[small] = 1.0 - (2.0 / math.pi) * (si - _kendall_J(ss, alpha))
    if big.any():
        sl = s[big]
        gam = _kendall_gamma_inf(alpha) - _kendall_gamma_tail(sl, alpha)
        si, _ = special.sici(sl)
        out[big] = (2.0 / math.pi) * (sl ** -alpha * gam + (math.pi / 2.0 - si))
    out[zero] = 1.0
    return np.clip(out, 0.0, 1.0)


def _kendall_density(x, alpha):
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    tiny = x <= 1e-8
    small = (x > 1e-8) & (x <= _KENDALL_SWITCH)
    big = x > _KENDALL_SWITCH
    out[tiny] = alpha / ((1.0 + alpha) * math.pi)
    if small.any():
        xs = x[small]
        out[small] = alpha * _kendall_J(xs, alpha) / (math.pi * xs)
    if big.any():
        xl = x[big]
        gam = _kendall_gamma_inf(alpha) - _kendall_gamma_tail(xl, alpha)
        out[big] = (alpha / math.pi) * xl ** (-1.0 - alpha) * gam
    return np.maximum(out, 0.0)


def _kendall_cdf_table(alpha):
    """Log-spaced table of G(x) = mu_alpha(|X| > x) used by the sampler."""
    c_tail = 2.0 * _kendall_gamma_inf(alpha) / math.pi
    x_max = (c_tail / 1e-12) ** (1.0 / alpha)
    x = np.geomspace(1e-8, x_max, _KENDALL_TABLE_SIZE)
    g = _kendall_tail(x, alpha)
    # enforce strict monotonicity for interpolation
    g = np.minimum.accumulate(g)
    g = np.maximum(g, 1e-300)
    return x, g


# ---------------------------------------------------------------------------
# Kingman kernel internals
# ---------------------------------------------------------------------------

def _kingman_const(s):
    return special.gamma(s + 1.0) / (math.sqrt(math.pi) * special.gamma(s + 0.5))


def _jacobi_rule(k, n):
    rules = k._tables["jacobi"]
    if n not in rules:
        a = k.param - 0.5
        rules[n] = special.roots_jacobi(n, a, a)
    return rules[n]


def _kingman_cf(k, t):
    """Gauss-Jacobi quadrature of c_s * int (1-x^2)^(s-1/2) cos(t x) dx."""
    t = np.abs(np.asarray(t, dtype=float))
    c = _kingman_const(k.param)
    n = 32
    x, w = _jacobi_rule(k, n)
    val = c * (np.cos(np.multiply.outer(t, x)) @ w)
    while n < 4096:
        n *= 2
        x, w = _jacobi_rule(k, n)
        new = c * (np.cos(np.multiply.outer(t, x)) @ w)
        delta = float(np.max(np.abs(new - val))) if new.size else 0.0
        val = new
        if delta <= max(k.quad_rtol * max(float(np.max(np.abs(val), initial=0.0)), 1e-8), 1e-14):
            break
    return val


def _kingman_density(k, x):
    s = k.param
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    with np.errstate(divide="ignore"):
        out[inside] = _kingman_const(s) * (1.0 - x[inside] ** 2) ** (s - 0.5)
    if s == 0.5:
        out[np.abs(x) == 1.0] = _kingman_const(s)
    return out


def _kingman_tail(k, r):
    s = k.param
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = 2.0 * special.betainc(s + 0.5, s + 0.5, (1.0 - r[inside]) / 2.0)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Stable kernel internals
# ---------------------------------------------------------------------------

def _stable_tail_series(s, alpha, rtol):
    """Tail series sum_k (-1)^(k+1)/k! Gamma(a k) sin(k pi a/2) s^(-a k) * 2/pi.

    Convergent for alpha < 1, asymptotic otherwise; truncated at the smallest
    term either way.
    """
    s = np.asarray(s, dtype=float)
    total = np.zeros_like(s)
    prev_term = np.full_like(s, np.inf)
    sign = 1.0
    kfact = 1.0
    for kk in range(1, 60):
        kfact *= kk
        coef = special.gamma(alpha * kk) * math.sin(kk * math.pi * alpha / 2.0) / kfact
        term = sign * coef * s ** (-alpha * kk)
        mag = np.abs(term)
        if np.all(mag >= prev_term):
            break
        grow = mag >= prev_term
        term = np.where(grow, 0.0, term)
        total += term
        prev_term = np.where(grow, prev_term, mag)
        if np.all(prev_term <= rtol * np.abs(total) + 1e-16):
            break
        sign = -sign
    return np.clip((2.0 / math.pi) * total, 0.0, 1.0)


def _stable_tail_quad(s, alpha, rtol):
    """(2/pi) int_0^inf (1 - exp(-t^a)) sin(t s)/t dt for moderate s."""

    def head(t):
        return -np.expm1(-t ** alpha) * np.sin(t * s) / t

    breaks = None
    if s > 4.0:
        breaks = list(np.arange(1, int(s / math.pi) + 1) * math.pi / s)
    head_val, _ = integrate.quad(head, 0.0, 1.0, epsrel=rtol, epsabs=1e-14,
                                 limit=800, points=breaks)
    tail_val, _ = integrate.quad(lambda t: -np.expm1(-t ** alpha) / t,
                                 1.0, np.inf, weight="sin", wvar=s,
                                 epsrel=rtol, epsabs=1e-14, limit=400)
    return min(max((2.0 / math.pi) * (head_val + tail_val), 0.0), 1.0)


def _stable_tail(k, s):
    alpha = k.param
    s = np.asarray(s, dtype=float)
    if alpha == 2.0:
        return special.erfc(s / 2.0)
    out = np.empty_like(s)
    big = s >= _STABLE_SWITCH
    if big.any():
        out[big] = _stable_tail_series(s[big], alpha, k.quad_rtol)
    small = ~big
    for idx in np.argwhere(small).ravel():
        out[idx] = 1.0 if s[idx] == 0.0 else _stable_tail_quad(float(s[idx]), alpha, k.quad_rtol)
    return out


def _stable_density(k, x):
    alpha = k.param
    x = np.abs(np.asarray(x, dtype=float))
    if alpha == 2.0:
        return np.exp(-x ** 2 / 4.0) / (2.0 * math.sqrt(math.pi))
    out = np.empty_like(x)
    for idx, xi in np.ndenumerate(x):
        val, err = integrate.quad(lambda t: np.exp(-t ** alpha), 0.0, np.inf,
                                  weight="cos", wvar=float(xi),
                                  epsrel=k.quad_rtol, epsabs=1e-14, limit=400)
        if not np.isfinite(val) or err > max(100.0 * k.quad_rtol * abs(val), 1e-9):
            raise Unavailable(
                f"stable({alpha}) density inversion did not converge at x={xi}")
        out[idx] = max(val / math.pi, 0.0)
    return out


def _cms_symmetric(alpha, n, rng):
    """Chambers-Mallows-Stuck draw of the symmetric stable law, cf exp(-|t|^a)."""
    if alpha == 2.0:
        return math.sqrt(2.0) * rng.standard_normal(n)
    v = rng.uniform(-math.pi / 2.0, math.pi / 2.0, n)
    w = rng.standard_exponential(n)
    return (np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha))


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _vectorized(fn, x):
    arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(arr).astype(float).ravel()
    out = fn(flat)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def kernel_cf(k, t):
    """Characteristic function of the kernel at t (scalar or array)."""
    def fn(a):
        a = np.abs(a)
        if k.kind == "stable":
            return np.exp(-a ** k.param)
        if k.kind == "kendall":
            return np.maximum(1.0 - a ** k.param, 0.0)
        return _kingman_cf(k, a)
    return _vectorized(fn, t)


def kernel_density(k, x):
    """Density of the kernel at x; raises Unavailable when the stable
    inversion quadrature fails at the configured precision."""
    def fn(a):
        if k.kind == "stable":
            return _stable_density(k, a)
        if k.kind == "kendall":
            return _kendall_density(a, k.param)
        return _kingman_density(k, a)
    return _vectorized(fn, x)


def kernel_tail(k, s):
    """G(s) = mu([-s, s]^c); nonincreasing with G(0) = 1."""
    if np.any(np.asarray(s, dtype=float) < 0):
        raise ValueError("tail argument must be >= 0")
    def fn(a):
        if k.kind == "stable":
            return _stable_tail(k, a)
        if k.kind == "kendall":
            return _kendall_tail(a, k.param)
        return _kingman_tail(k, a)
    return _vectorized(fn, s)


def kernel_kappa(k):
    """Characteristic exponent: moment index of the kernel, in (0, 2]."""
    if k.kind in ("stable", "kendall"):
        return k.param
    return 2.0


def kernel_abs_moment(k, p):
    """int |x|^p mu(dx); math.inf when p >= kappa for the heavy-tailed kinds.

    Finite values are produced by quadrature: Gauss-Jacobi against the
    kingman weight, or for the cf-normalized kinds the moment identity
    E|X|^p = c_p * int_0^inf (1 - cf(t)) t^(-1-p) dt with
    c_p = 2 Gamma(p+1) sin(pi p / 2) / pi, 0 < p < 2.
    """
    p = float(p)
    if p <= 0:
        raise ValueError("moment order must be positive")
    if k.kind == "kingman":
        n = 256
        while True:
            x, w = _jacobi_rule(k, n)
            val = _kingman_const(k.param) * float(np.abs(x) ** p @ w)
            x2, w2 = _jacobi_rule(k, 2 * n)
            val2 = _kingman_const(k.param) * float(np.abs(x2) ** p @ w2)
            if abs(val2 - val) <= k.quad_rtol * abs(val2) or n >= 4096:
                return val2
            n *= 2
    if k.kind == "stable" and k.param == 2.0:
        return 2.0 ** p * special.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)
    if p >= kernel_kappa(k):
        return math.inf
    c_p = 2.0 * special.gamma(p + 1.0) * math.sin(math.pi * p / 2.0) / math.pi
    if k.kind == "stable":
        alpha = k.param
        integral = quad_zero_inf(lambda t: -np.expm1(-t ** alpha) * t ** (-1.0 - p),
                                 rtol=k.quad_rtol)
    else:
        alpha = k.param
        integral = quad_zero_inf(
            lambda t: (1.0 - max(1.0 - t ** alpha, 0.0)) * t ** (-1.0 - p),
            rtol=k.quad_rtol, breakpoints=[1.0])
    return c_p * integral


def kernel_sample(k, n, seed):
    """n i.i.d. draws; deterministic for a given seed."""
    n = int(n)
    if n < 1:
        raise ValueError("need at least one draw")
    rng = make_rng(seed)
    if k.kind == "stable":
        values = _cms_symmetric(k.param, n, rng)
    elif k.kind == "kingman":
        b = rng.beta(0.5, k.param + 0.5, n)
        signs = rng.integers(0, 2, n) * 2 - 1
        values = signs * np.sqrt(b)
    elif k.kind == "kendall":
        x, g = k._tables["cdf"]
        u = rng.uniform(0.0, 1.0, n)
        # |X| has tail G; invert log G on the log-x grid
        logg = np.log(g)[::-1]
        logx = np.log(x)[::-1]
        target = np.log(np.maximum(u, 1e-300))
        mag = np.exp(np.interp(target, logg, logx))
        # below the table the CDF of |X| is linear: G(x) ~ 1 - 2 f(0) x
        near_zero = u >= g[0]
        mag[near_zero] = x[0] * (1.0 - u[near_zero]) / max(1.0 - g[0], 1e-300)
        signs = rng.integers(0, 2, n) * 2 - 1
        values = signs * mag
    else:  # pragma: no cover
        raise UnsupportedKernel(k.kind)
    return SampleBatch(values=values, seed=int(seed))

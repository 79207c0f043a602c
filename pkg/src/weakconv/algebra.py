"""The weak generalized convolution algebra.

lam1 (x)_mu lam2 is the unique radial measure whose mixture cf is the
pointwise product of the operands' mixture cfs.  Each kernel kind gets its
exact strategy:

* stable(alpha): push both measures through s -> s**alpha, convolve
  classically on the power axis, pull back;
* kendall(alpha): multiply Williamson-type transforms and invert;
* kingman/sphere: quantize to atoms and accumulate the closed-form law of
  R = sqrt(a^2 + b^2 + 2 a b X) per atom pair, X the kernel marginal.

On top of the product sit integer and fractional convolution powers, the
compound Poisson map, its truncated-series oracle, the canonical stable
elements with mixture cf exp(-|t|**p), and stable subordination.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special, stats

from ._invert import WilliamsonOptions, williamson_invert
from ._laplace import laplace_invert, merge_close_atoms
from .errors import (InvalidExponents, NotInfinitelyDivisible,
                     TruncationTooShort, UnsupportedExponent,
                     UnsupportedKernel)
from .kernels import kernel_kappa
from .measures import (MixingMeasure, _assemble, dirac, from_density,
                       measure_discretize, measure_mixture, measure_scale,
                       measure_validate, mixture_cf)

__all__ = [
    "invert_mixture", "weak_convolve", "power_int", "power_frac",
    "compound_poisson", "exp_series_oracle", "stable_element",
    "subordinate_stable", "kendall_stable_density", "kendall_stable_cdf",
    "kingman_gaussian_radial_density", "positive_stable_density",
    "positive_stable_cdf",
]

SPHERE_QUANT = 512
_POS_GATE_GRID = None


def _working_tgrid():
    global _POS_GATE_GRID
    if _POS_GATE_GRID is None:
        _POS_GATE_GRID = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 241)])
    return _POS_GATE_GRID


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

def _invert_callable(k, phi, atom_hints=(), resolution=32768):
    """Route a transform callable to the kernel's inversion strategy."""
    if k.kind == "kendall":
        return williamson_invert(k.param, phi, atom_hints=atom_hints,
                                 options=WilliamsonOptions(resolution=resolution))
    if k.kind == "stable":
        alpha = k.param

        def L(u):
            u = np.asarray(u, dtype=float)
            return phi(u ** (1.0 / alpha))

        locs, wts, grid, vals = laplace_invert(L)
        return _pull_from_power_axis(alpha, locs, wts, grid, vals)
    raise UnsupportedKernel(
        f"{k.kind} mixture transforms are not invertible by this operation")


def invert_mixture(k, phi_grid, resolution=32768):
    """Recover the radial mixing measure from a sampled mixture cf.

    phi_grid may be a CharGrid (interpolated monotone-cubically) or a
    vectorized callable.  Only kendall and stable kernels are supported.
    """
    phi = phi_grid if callable(phi_grid) else phi_grid.as_callable()
    return _invert_callable(k, phi, resolution=resolution)


# ---------------------------------------------------------------------------
# power-axis helpers for the stable strategy
# ---------------------------------------------------------------------------

def _push_to_power_axis(lam, alpha):
    locs = lam.atom_locations ** alpha
    wts = lam.atom_weights.copy()
    if lam.has_density:
        grid = lam.grid ** alpha
        with np.errstate(divide="ignore"):
            vals = np.where(grid > 0,
                            lam.values * lam.grid ** (1.0 - alpha) / alpha, 0.0)
        if grid[0] == 0.0 and alpha < 1.0:
            vals[0] = vals[1]
    else:
        grid = np.empty(0)
        vals = np.empty(0)
    return locs, wts, grid, vals


def _pull_from_power_axis(alpha, locs, wts, grid, vals):
    s_locs = locs ** (1.0 / alpha)
    if grid.size:
        s_grid = grid ** (1.0 / alpha)
        with np.errstate(divide="ignore"):
            s_vals = np.where(s_grid > 0, vals * alpha * s_grid ** (alpha - 1.0), 0.0)
        keep = np.concatenate([[True], np.diff(s_grid) > 0])
        s_grid, s_vals = s_grid[keep], s_vals[keep]
        if s_grid.size < 2:
            s_grid, s_vals = np.empty(0), np.empty(0)
    else:
        s_grid, s_vals = np.empty(0), np.empty(0)
    lam = _assemble(s_locs, wts, s_grid, s_vals)
    mass = lam.mass()
    dens = mass - float(lam.atom_weights.sum())
    if lam.has_density and dens > 0:
        target = 1.0 - float(lam.atom_weights.sum())
        lam = MixingMeasure(lam.atom_locations, lam.atom_weights,
                            lam.grid, lam.values * max(target, 0.0) / dens)
    return measure_validate(lam)


def _uniform_resample(grid, vals, lo, hi, n):
    x = np.linspace(lo, hi, n)
    return x, np.interp(x, grid, vals, left=0.0, right=0.0)


def _classical_convolve_power(m1, m2, grid_n=4096):
    """Classical convolution of two measures on [0, inf) given as
    (locs, wts, grid, vals) tuples; exact on atoms."""
    l1, w1, g1, v1 = m1
    l2, w2, g2, v2 = m2
    locs = (l1[:, None] + l2[None, :]).ravel()
    wts = (w1[:, None] * w2[None, :]).ravel()
    pieces_g = []
    pieces_v = []
    # atoms x density: shifted copies
    for locs_a, wts_a, grid_d, vals_d in ((l1, w1, g2, v2), (l2, w2, g1, v1)):
        if grid_d.size == 0:
            continue
        for a, wa in zip(locs_a, wts_a):
            pieces_g.append(grid_d + a)
            pieces_v.append(vals_d * wa)
    # density x density: uniform-grid convolution
    if g1.size and g2.size:
        lo = g1[0] + g2[0]
        hi = g1[-1] + g2[-1]
        n = grid_n
        h = (hi - lo) / (n - 1)
        x1, y1 = _uniform_resample(g1, v1, g1[0], g1[-1],
                                   max(int((g1[-1] - g1[0]) / h) + 2, 8))
        x2, y2 = _uniform_resample(g2, v2, g2[0], g2[-1],
                                   max(int((g2[-1] - g2[0]) / h) + 2, 8))
        hh = x1[1] - x1[0]
        conv = np.convolve(y1, y2) * hh
        xc = x1[0] + x2[0] + hh * np.arange(conv.size)
        pieces_g.append(xc)
        pieces_v.append(conv)
    if pieces_g:
        union = np.unique(np.concatenate(pieces_g))
        total = np.zeros_like(union)
        for g, v in zip(pieces_g, pieces_v):
            total += np.interp(union, g, v, left=0.0, right=0.0)
    else:
        union = np.empty(0)
        total = np.empty(0)
    locs, wts = merge_close_atoms(locs, wts, rel_tol=1e-12)
    return locs, wts, union, total


# ---------------------------------------------------------------------------
# the generalized convolution and its powers
# ---------------------------------------------------------------------------

def _sphere_pair_cdf(s_param, a, b, r):
    """P(|a U1 + b U2| <= r) for unit vectors with marginal kingman(s)."""
    x = (r * r - a * a - b * b) / (2.0 * a * b)
    return special.betainc(s_param + 0.5, s_param + 0.5,
                           np.clip((1.0 + x) / 2.0, 0.0, 1.0))


def _sphere_convolve(k, lam1, lam2, quant=SPHERE_QUANT, grid_n=4096):
    s_param = k.param
    q1 = measure_discretize(lam1, quant) if lam1.has_density else lam1
    q2 = measure_discretize(lam2, quant) if lam2.has_density else lam2
    a = q1.atom_locations
    b = q2.atom_locations
    wa = q1.atom_weights
    wb = q2.atom_weights
    A, B = np.meshgrid(a, b, indexing="ij")
    W = np.outer(wa, wb)
    degenerate = (A == 0.0) | (B == 0.0)
    atom_locs = np.maximum(A, B)[degenerate]
    atom_wts = W[degenerate]
    Af, Bf, Wf = A[~degenerate], B[~degenerate], W[~degenerate]
    if Af.size == 0:
        return _assemble(atom_locs, atom_wts, [], [])
    r_hi = float(np.max(Af + Bf))
    edges = np.linspace(0.0, r_hi, grid_n + 1)
    masses = np.zeros(grid_n)
    chunk = max(1, int(2e6 / (grid_n + 1)))
    for i in range(0, Af.size, chunk):
        Ac = Af[i:i + chunk, None]
        Bc = Bf[i:i + chunk, None]
        Wc = Wf[i:i + chunk]
        cdfs = _sphere_pair_cdf(s_param, Ac, Bc, edges[None, :])
        masses += Wc @ np.diff(cdfs, axis=1)
    from ._invert import _density_from_cell_masses
    values = _density_from_cell_masses(edges, masses)
    lam = _assemble(atom_locs, atom_wts, edges, values)
    dens_target = float(Wf.sum())
    dens_mass = float(np.trapezoid(lam.values, lam.grid)) if lam.has_density else 0.0
    if dens_mass > 0:
        lam = MixingMeasure(lam.atom_locations, lam.atom_weights,
                            lam.grid, lam.values * dens_target / dens_mass)
    return measure_validate(lam)


def weak_convolve(k, lam1, lam2, resolution=32768):
    """lam1 (x)_mu lam2 for the kernel's generalized convolution."""
    if k.kind == "stable":
        alpha = k.param
        m = _classical_convolve_power(_push_to_power_axis(lam1, alpha),
                                      _push_to_power_axis(lam2, alpha))
        return _pull_from_power_axis(alpha, *m)
    if k.kind == "kendall":
        def phi(t):
            return mixture_cf(k, lam1, t) * mixture_cf(k, lam2, t)

        hints = np.concatenate([lam1.atom_locations, lam2.atom_locations])
        return williamson_invert(
            k.param, phi, atom_hints=[h for h in np.unique(hints) if h > 0],
            options=WilliamsonOptions(resolution=resolution))
    return _sphere_convolve(k, lam1, lam2)


def power_int(k, lam, n, resolution=32768):
    """n-fold generalized convolution power; n = 0 gives the point mass at 0."""
    n = int(n)
    if n < 0:
        raise ValueError("power must be >= 0")
    if n == 0:
        return dirac(0.0)
    if n == 1:
        return lam
    if k.kind == "kendall":
        def phi(t):
            return mixture_cf(k, lam, t) ** n

        return williamson_invert(
            k.param, phi,
            atom_hints=[h for h in lam.atom_locations if h > 0],
            options=WilliamsonOptions(resolution=resolution))
    if k.kind == "stable":
        base = _push_to_power_axis(lam, k.param)
        result = None
        sq = base
        m = n
        while m:
            if m & 1:
                result = sq if result is None else _classical_convolve_power(result, sq)
            m >>= 1
            if m:
                sq = _classical_convolve_power(sq, sq)
        return _pull_from_power_axis(k.param, *result)
    # kingman/sphere: pairwise squaring through the pair strategy
    result = None
    sq = lam
    m = n
    while m:
        if m & 1:
            result = sq if result is None else _sphere_convolve(k, result, sq)
        m >>= 1
        if m:
            sq = _sphere_convolve(k, sq, sq)
    return result


def _positivity_gate(k, lam, label):
    phi = mixture_cf(k, lam, _working_tgrid())
    if np.min(phi) <= 0.0:
        raise NotInfinitelyDivisible(
            f"{label}: mixture cf vanishes on the working grid")


def power_frac(k, lam, r, resolution=32768):
    """Fractional convolution power: the measure with mixture cf phi**r."""
    r = float(r)
    if r < 0:
        raise ValueError("fractional power must be >= 0")
    if r == 0.0:
        return dirac(0.0)
    if r == 1.0:
        return lam
    if k.kind == "kendall":
        _positivity_gate(k, lam, "power_frac")

        def phi(t):
            return mixture_cf(k, lam, t) ** r

        return williamson_invert(
            k.param, phi,
            atom_hints=[h for h in lam.atom_locations if h > 0],
            options=WilliamsonOptions(resolution=resolution))
    if k.kind == "stable":
        _positivity_gate(k, lam, "power_frac")
        alpha = k.param

        def L(u):
            u = np.asarray(u, dtype=float)
            return mixture_cf(k, lam, u ** (1.0 / alpha)) ** r

        try:
            locs, wts, grid, vals = laplace_invert(L)
        except Exception as exc:
            raise NotInfinitelyDivisible(str(exc)) from exc
        return _pull_from_power_axis(alpha, locs, wts, grid, vals)
    raise UnsupportedKernel("fractional powers need an invertible transform "
                            "(kendall or stable kernels)")


# ---------------------------------------------------------------------------
# compound Poisson
# ---------------------------------------------------------------------------

def compound_poisson(k, rate, lam, resolution=32768):
    """Exp_{(x)_mu}(rate * lam): mixture cf exp(rate * (phi_lam - 1))."""
    rate = float(rate)
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if rate == 0.0:
        return dirac(0.0)
    if k.kind in ("kendall", "stable"):
        def phi(t):
            return np.exp(rate * (mixture_cf(k, lam, t) - 1.0))

        return _invert_callable(
            k, phi, atom_hints=[h for h in lam.atom_locations if h > 0],
            resolution=resolution)
    # no inversion for compactly supported kernels: truncated series
    return exp_series_oracle(k, rate, lam, _series_order(rate))


def _series_order(rate):
    return int(stats.poisson.isf(1e-13, max(rate, 1e-12))) + 2


def exp_series_oracle(k, rate, lam, order, resolution=32768):
    """Truncated Poisson series of generalized convolution powers.

    Serves as the independent series-route oracle for compound_poisson;
    the truncation must leave less than 1e-12 of Poisson tail mass.
    """
    rate = float(rate)
    order = int(order)
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if rate == 0.0:
        return dirac(0.0)
    tail = float(stats.poisson.sf(order, rate))
    if tail >= 1e-12:
        raise TruncationTooShort(
            f"Poisson tail beyond {order} terms is {tail:.3g} >= 1e-12")
    weights = stats.poisson.pmf(np.arange(order + 1), rate)
    weights = weights / weights.sum()
    if k.kind in ("kendall", "stable"):
        # powers enter through their transforms: the series transform is the
        # truncated exponential sum_k w_k phi**k, inverted once
        def phi(t):
            base = mixture_cf(k, lam, t)
            out = np.zeros_like(base)
            acc = np.ones_like(base)
            for w in weights:
                out += w * acc
                acc = acc * base
            return out

        return _invert_callable(
            k, phi, atom_hints=[h for h in lam.atom_locations if h > 0],
            resolution=resolution)
    # compactly supported kernels: explicit measure-level powers
    powers = [dirac(0.0)]
    cur = dirac(0.0)
    for j in range(1, order + 1):
        cur = lam if j == 1 else _sphere_convolve(k, cur, lam)
        powers.append(cur)
    return _weighted_mixture(powers, weights)


def _weighted_mixture(measures, weights):
    locs = np.concatenate([m.atom_locations for m in measures])
    wts = np.concatenate([w * m.atom_weights for w, m in zip(weights, measures)])
    grids = [m.grid for m in measures if m.has_density]
    if grids:
        union = np.unique(np.concatenate(grids))
        vals = np.zeros_like(union)
        for w, m in zip(weights, measures):
            if m.has_density:
                vals += w * np.interp(union, m.grid, m.values, left=0.0, right=0.0)
    else:
        union, vals = [], []
    return measure_validate(_assemble(locs, wts, union, vals))


# ---------------------------------------------------------------------------
# canonical stable elements and subordination
# ---------------------------------------------------------------------------

def kendall_stable_density(alpha, p, s):
    """Density of the canonical element with kendall(alpha) mixture cf
    exp(-|t|**p), 0 < p <= alpha."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        core = np.exp(-s ** -p)
        out = (p / alpha) * ((alpha - p) * s ** (-p - 1.0)
                             + p * s ** (-2.0 * p - 1.0)) * core
    return np.where(s > 0, out, 0.0)


def kendall_stable_cdf(alpha, p, s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        y = s ** -p
        out = (1.0 + (p / alpha) * y) * np.exp(-y)
    return np.where(s > 0, out, 0.0)


def kingman_gaussian_radial_density(s_param, r):
    """Radial density f(r) = r**(2s+1) exp(-r^2/2) / (2^s Gamma(s+1));
    mixing kingman(s) with it yields the unit-variance Gaussian."""
    r = np.asarray(r, dtype=float)
    ln = ((2.0 * s_param + 1.0) * np.log(np.maximum(r, 1e-300)) - r * r / 2.0
          - s_param * math.log(2.0) - special.gammaln(s_param + 1.0))
    return np.where(r > 0, np.exp(ln), 0.0)


def _kingman_gaussian_radial_cdf(s_param, r):
    r = np.asarray(r, dtype=float)
    return special.gammainc(s_param + 1.0, r * r / 2.0)


def _grid_from_cdf(cdf, lo_start, hi_start, resolution, density=None,
                   tail_tol=1e-11):
    """Log grid covering all but tail_tol of a distribution given by an
    exact CDF callable; node values reproduce the cell masses exactly."""
    lo, hi = lo_start, hi_start
    for _ in range(200):
        if cdf(lo) <= tail_tol or lo < 1e-280:
            break
        lo /= 4.0
    for _ in range(200):
        if 1.0 - cdf(hi) <= tail_tol or hi > 1e280:
            break
        hi *= 4.0
    grid = np.geomspace(lo, hi, resolution)
    masses = np.diff(cdf(grid))
    from ._invert import _density_from_cell_masses
    values = _density_from_cell_masses(grid, masses)
    return from_density(grid, values, renormalize=True)


def stable_element(k, p, resolution=32768):
    """Canonical measure with mixture cf exactly exp(-|t|**p)."""
    p = float(p)
    kap = kernel_kappa(k)
    if not 0.0 < p <= kap:
        raise UnsupportedExponent(
            f"no scale-stable element of index {p} for this kernel (kappa={kap})")
    if k.kind == "kendall":
        alpha = k.param
        return _grid_from_cdf(lambda s: kendall_stable_cdf(alpha, p, s),
                              0.05, 20.0, resolution)
    if k.kind == "stable":
        if p == k.param:
            return dirac(1.0)
        return subordinate_stable(k, dirac(1.0), k.param, p,
                                  resolution=resolution)
    # kingman/sphere, kappa = 2
    lam2 = _grid_from_cdf(lambda r: _kingman_gaussian_radial_cdf(k.param, r / math.sqrt(2.0)),
                          0.05, 20.0, resolution)
    if p == 2.0:
        return lam2
    return subordinate_stable(k, lam2, 2.0, p, resolution=resolution)


def positive_stable_density(r, x):
    """Density of the positive r-stable law with Laplace transform
    exp(-u**r), by the standard single-integral representation."""
    from .quadrature import gauss_legendre_01
    x = np.asarray(x, dtype=float)
    c = r / (1.0 - r)
    u, w = gauss_legendre_01(256)
    phi = u * math.pi
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        logU = (c * (np.log(np.sin(r * phi)) - np.log(np.sin(phi)))
                + np.log(np.sin((1.0 - r) * phi)) - np.log(np.sin(phi)))
        out = np.zeros_like(x)
        pos = x > 0
        xa = x[pos]
        expo = logU[None, :] - np.outer(xa ** -c, np.exp(logU))
        integral = np.exp(np.clip(expo, -745.0, 700.0)) @ w * math.pi
        out[pos] = (c / math.pi) * xa ** (-1.0 - c) * integral
    return out


def positive_stable_cdf(r, x):
    """CDF of the positive r-stable law with Laplace transform exp(-u**r)."""
    from .quadrature import gauss_legendre_01
    x = np.asarray(x, dtype=float)
    c = r / (1.0 - r)
    u, w = gauss_legendre_01(256)
    phi = u * math.pi
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        logU = (c * (np.log(np.sin(r * phi)) - np.log(np.sin(phi)))
                + np.log(np.sin((1.0 - r) * phi)) - np.log(np.sin(phi)))
        out = np.zeros_like(x)
        pos = x > 0
        xa = x[pos]
        expo = -np.outer(xa ** -c, np.exp(logU))
        vals = np.exp(np.clip(expo, -745.0, 0.0))
        out[pos] = (vals @ w)
    return np.clip(out, 0.0, 1.0)


def subordinate_stable(k, lam_p, p, q, n_draws=10_000_000, seed=7,
                       resolution=32768):
    """Law of Theta * S**(1/p): Theta ~ lam_p, S positive (q/p)-stable.

    Exact on atomic lam_p (tabulated positive-stable CDF); Monte Carlo with
    histogram smoothing otherwise.
    """
    p, q = float(p), float(q)
    if not 0.0 < q < p:
        raise InvalidExponents(f"need 0 < q < p, got q={q}, p={p}")
    r = q / p
    if not lam_p.has_density:
        zero = lam_p.atom_locations == 0.0
        w0 = float(lam_p.atom_weights[zero].sum())
        locs = lam_p.atom_locations[~zero]
        wts = lam_p.atom_weights[~zero] / max(1.0 - w0, 1e-300)

        def cdf(x):
            x = np.asarray(x, dtype=float)
            tot = np.zeros_like(x)
            for a, w in zip(locs, wts):
                tot += w * positive_stable_cdf(r, (x / a) ** p)
            return tot

        spread = _grid_from_cdf(cdf, 0.05, 50.0, resolution, tail_tol=1e-9)
        return measure_mixture(w0, dirac(0.0), spread) if w0 > 0 else spread
    # Monte Carlo path
    from .batch import make_rng
    from .measures import measure_quantile
    from .montecarlo import _positive_stable_draws
    rng = make_rng(seed)
    theta = measure_quantile(lam_p, rng.uniform(0.0, 1.0, int(n_draws)))
    s_draws = _positive_stable_draws(r, int(n_draws), rng)
    prod = theta * s_draws ** (1.0 / p)
    prod = prod[prod > 0]
    logx = np.log(prod)
    lo, hi = np.quantile(logx, [1e-6, 1.0 - 1e-6])
    nbins = 2048
    histo, edges = np.histogram(logx, bins=nbins, range=(lo, hi), density=False)
    smooth = np.convolve(histo, np.array([0.25, 0.5, 0.25]), mode="same")
    centers = 0.5 * (edges[:-1] + edges[1:])
    x_nodes = np.exp(centers)
    dens = smooth / prod.size / np.diff(edges) / x_nodes
    return from_density(x_nodes, dens, renormalize=True)

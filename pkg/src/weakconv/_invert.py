"""Numeric inversion of Kendall-type mixture transforms.

For the kendall(alpha) kernel the mixture transform of a radial measure is a
Williamson-type transform: with H(x) = phi(x**(-1/alpha)) the function
P(x) = x * H(x) is a primitive of the CDF of s**alpha, so

    G(x) = d/dx [x * H(x)]

is the CDF of the pushforward under s -> s**alpha.  The inversion below
differentiates P numerically (log-step central differences with Richardson
extrapolation), locates kinks of P (= atoms of the measure) by bisection on
the one-sided slope, and reconstructs the density so that every grid cell
carries exactly the mass the CDF prescribes.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NotAMixture
from .measures import MixingMeasure, _assemble

ATOM_TOL = 1e-6
MONO_TOL = 1e-8


# ---------------------------------------------------------------------------
# differentiation utilities
# ---------------------------------------------------------------------------

def deriv_central_log(P, x, h0=1e-2, levels=4):
    """P'(x) via central differences in log x, Richardson extrapolated.

    Vectorized over x; assumes P smooth on x * [exp(-h0), exp(h0)].
    """
    x = np.asarray(x, dtype=float)
    ests = []
    h = h0
    for _ in range(levels):
        ests.append((P(x * math.exp(h)) - P(x * math.exp(-h))) / (2.0 * h * x))
        h /= 2.0
    tab = list(ests)
    for j in range(1, levels):
        fac = 4.0 ** j
        tab = [(fac * tab[i + 1] - tab[i]) / (fac - 1.0) for i in range(len(tab) - 1)]
    return tab[0]


def deriv_one_sided(P, x0, side, h0, levels=5):
    """One-sided P'(x0) by a 3-point stencil with Neville elimination of
    h^2, h^3, ... error terms."""
    s = 1.0 if side > 0 else -1.0
    ests = []
    h = h0
    p0 = P(x0)
    for _ in range(levels):
        ests.append((-3.0 * p0 + 4.0 * P(x0 + s * h) - P(x0 + 2.0 * s * h))
                    / (2.0 * s * h))
        h /= 2.0
    tab = list(ests)
    for j in range(1, levels):
        fac = 2.0 ** (j + 1)
        tab = [(fac * tab[i + 1] - tab[i]) / (fac - 1.0) for i in range(len(tab) - 1)]
    return float(tab[0])


def locate_kink(P, lo, hi, rel_tol=1e-12, max_iter=80):
    """Bisection for a slope discontinuity of P inside (lo, hi).

    The midpoint is classified by whichever one-sided endpoint slope its own
    local slope resembles, so the kink stays bracketed even when it lands on
    a probe point.
    """
    for _ in range(max_iter):
        w = hi - lo
        if w <= rel_tol * max(abs(lo), abs(hi), 1e-300):
            break
        h = 1e-3 * w
        mid = 0.5 * (lo + hi)
        sl = (P(lo + 3 * h) - P(lo + h)) / (2 * h)
        sr = (P(hi - h) - P(hi - 3 * h)) / (2 * h)
        sm = (P(mid + h) - P(mid - h)) / (2 * h)
        if abs(sm - sl) <= abs(sm - sr):
            lo = mid - h
        else:
            hi = mid + h
    return 0.5 * (lo + hi)


def jump_size(P, x0, window, max_h=None):
    """Slope jump P'(x0+) - P'(x0-) at a kink located to ~1e-12 relative.

    One-sided stencils anchored at x0 itself (P is continuous there);
    max_h bounds the stencil so it stays clear of neighbouring features.
    """
    h0 = 0.05 * max(abs(x0), 1e-12)
    if max_h is not None and max_h > 0:
        h0 = min(h0, max_h)
    right = deriv_one_sided(P, x0, +1, h0)
    left = deriv_one_sided(P, x0, -1, h0)
    return right - left


# ---------------------------------------------------------------------------
# Williamson inversion for the kendall kernel
# ---------------------------------------------------------------------------

class WilliamsonOptions:
    def __init__(self, resolution=32768, tail_tol=1e-12, atom_tol=ATOM_TOL,
                 mono_tol=MONO_TOL, s_lo=1e-6, s_hi=1e6, max_extend=40):
        self.resolution = int(resolution)
        self.tail_tol = float(tail_tol)
        self.atom_tol = float(atom_tol)
        self.mono_tol = float(mono_tol)
        self.s_lo = float(s_lo)
        self.s_hi = float(s_hi)
        self.max_extend = int(max_extend)


def williamson_invert(alpha, phi, atom_hints=(), options=None):
    """Invert a kendall(alpha) mixture transform onto a MixingMeasure.

    phi must be vectorized over t >= 0 and be a valid transform produced by
    a forward path of this library.
    """
    opt = options or WilliamsonOptions()

    def P(u):
        u = np.asarray(u, dtype=float)
        return u * phi(u ** (-1.0 / alpha))

    def cdf_s(s):
        s = np.asarray(s, dtype=float)
        return np.clip(deriv_central_log(P, s ** alpha), 0.0, 1.0)

    # atom at zero: transform limit at large t <-> small u
    s_lo, s_hi = opt.s_lo, opt.s_hi
    w0 = float(np.atleast_1d(phi(10.0 / s_lo))[0])

    # widen the range until the CDF is resolved to tail_tol on both sides
    for _ in range(opt.max_extend):
        if float(cdf_s(np.array([s_lo]))[0]) - w0 <= opt.tail_tol or s_lo <= 1e-200:
            break
        s_lo /= 16.0
        w0 = float(np.atleast_1d(phi(10.0 / s_lo))[0])
    for _ in range(opt.max_extend):
        if 1.0 - float(cdf_s(np.array([s_hi]))[0]) <= opt.tail_tol or s_hi >= 1e200:
            break
        s_hi *= 16.0

    grid = np.geomspace(s_lo, s_hi, opt.resolution)
    u_grid = grid ** alpha

    # locate atoms: explicit hints first, then a numeric scan of CDF jumps
    atoms = []
    taken = []
    hint_list = sorted({float(h) for h in atom_hints if h > 0})
    hint_us = [h ** alpha for h in hint_list]
    for h, u0 in zip(hint_list, hint_us):
        if not (s_lo < h < s_hi):
            continue
        gap = min([abs(u0 - v) for v in hint_us if v != u0] + [u0])
        w = jump_size(P, u0, window=0.05 * u0, max_h=0.25 * gap)
        if w > opt.atom_tol:
            atoms.append((h, w))
            taken.append(u0)

    cdf_nodes = _cdf_avoiding_atoms(P, u_grid, taken)

    # numeric scan for unhinted jumps
    diffs = np.diff(cdf_nodes)
    big = np.argwhere(diffs > opt.atom_tol).ravel()
    found_new = False
    for c0, c1 in _cluster_adjacent(big):
        lo_u, hi_u = u_grid[c0], u_grid[c1 + 1]
        if any(lo_u <= u <= hi_u for u in taken):
            continue
        # a steep density also produces a large per-cell increment; confirm a
        # genuine kink before recording an atom
        u0 = locate_kink(P, lo_u, hi_u)
        gap = min([abs(u0 - v) for v in taken] + [u0, hi_u - lo_u])
        w = jump_size(P, u0, window=hi_u - lo_u, max_h=0.25 * gap)
        if w > opt.atom_tol:
            atoms.append((u0 ** (1.0 / alpha), w))
            taken.append(u0)
            found_new = True
    atoms.sort()
    atom_locs = np.array([a[0] for a in atoms])
    atom_wts = np.array([a[1] for a in atoms])

    # every hint and every detected atom is a potential density breakpoint
    # (supports start there even when the atom weight is zero, e.g. pure
    # Pareto factors).  Insert a node pair at each so the piecewise-linear
    # density can jump across it, and re-evaluate the CDF on the final grid.
    breakpoints = sorted({float(b) for b in list(atom_locs) + hint_list
                          if s_lo < b < s_hi})
    if breakpoints:
        bp = np.array(breakpoints)
        grid = np.union1d(grid, np.concatenate([bp * (1.0 - 1e-12), bp]))
        u_grid = grid ** alpha
        break_us = sorted(set(taken) | {b ** alpha for b in breakpoints})
        cdf_nodes = _cdf_avoiding_atoms(P, u_grid, break_us)
    elif found_new:
        cdf_nodes = _cdf_avoiding_atoms(P, u_grid, taken)
    _check_monotone(cdf_nodes, opt.mono_tol)

    # continuous CDF: subtract the atoms' contribution; a node sitting on an
    # atom carries the left limit, so cells on both sides stay clean
    cont = cdf_nodes - w0
    if atom_locs.size:
        jumped = (grid[:, None] > atom_locs[None, :] * (1.0 + 1e-14)) @ atom_wts
        cont = cont - jumped
    cont = np.maximum.accumulate(np.clip(cont, 0.0, None))

    break_idx = np.searchsorted(grid, breakpoints) if breakpoints else []
    values = _density_from_cell_masses(grid, np.diff(cont), break_idx)

    zero_atoms = [(0.0, w0)] if w0 > opt.atom_tol else []
    lam = _assemble([a for a, _ in zero_atoms] + list(atom_locs),
                    [w for _, w in zero_atoms] + list(atom_wts),
                    grid, values)
    mass = lam.mass()
    if abs(mass - 1.0) > 1e-6:
        raise NotAMixture(f"inverted measure has mass {mass:.6g}")
    # absorb the residual mass defect in the density only, keeping atoms exact
    dens_mass = float(np.trapezoid(lam.values, lam.grid)) if lam.has_density else 0.0
    if dens_mass > 0:
        target = 1.0 - float(lam.atom_weights.sum())
        lam = MixingMeasure(lam.atom_locations, lam.atom_weights,
                            lam.grid, lam.values * (target / dens_mass))
    return lam


def _cdf_avoiding_atoms(P, u_grid, atom_us, h0=1e-2):
    """CDF at the nodes; nodes close to an atom are redone with a shrunken
    step so the difference stencil stays on one branch, and a node sitting
    exactly on an atom takes the left limit."""
    cdf = deriv_central_log(P, u_grid, h0=h0)
    if atom_us:
        logu = np.log(u_grid)
        for ua in atom_us:
            others = [abs(v - ua) for v in atom_us if v != ua]
            safe_h = min([0.02 * ua] + [0.2 * g for g in others])
            near = np.abs(logu - math.log(ua)) < 2.5 * h0
            for idx in np.argwhere(near).ravel():
                gap = abs(logu[idx] - math.log(ua))
                if gap <= 1e-11:
                    cdf[idx] = deriv_one_sided(P, ua, -1, safe_h)
                    continue
                h = min(0.4 * gap, safe_h / ua)
                cdf[idx] = deriv_central_log(P, u_grid[idx:idx + 1], h0=h, levels=3)[0]
    return np.clip(cdf, 0.0, 1.0)


def _check_monotone(cdf, tol):
    drops = np.diff(cdf)
    worst = float(drops.min()) if drops.size else 0.0
    if worst < -tol:
        raise NotAMixture(f"reconstructed CDF decreases by {-worst:.3g}")


def _cluster_adjacent(indices):
    clusters = []
    for i in indices:
        if clusters and i <= clusters[-1][1] + 1:
            clusters[-1][1] = i
        else:
            clusters.append([i, i])
    return [(a, b) for a, b in clusters]


def _density_from_cell_masses(grid, masses, break_idx=()):
    """Node values of a piecewise-linear density whose trapezoid cell masses
    reproduce `masses` exactly.

    Within each contiguous run of positive mass the alternating recursion
    v[j+1] = 2 m_j / w_j - v[j] keeps the CDF exact at every node; each run
    is seeded with its first cell average so the oscillation stays at the
    size of the local interpolation error.  Runs never cross break nodes
    (atom locations), where the density may jump.  Clipping of tiny
    negatives is followed by a single density rescale in the caller.
    """
    widths = np.diff(grid)
    masses = np.maximum(masses, 0.0)
    v = np.zeros(grid.size)
    avg = np.divide(masses, widths, out=np.zeros_like(masses), where=widths > 0)
    floor = masses.max() * 1e-9 if masses.size else 0.0
    breaks = set(int(b) for b in break_idx)
    j = 0
    n = widths.size
    while j < n:
        if masses[j] <= floor:
            j += 1
            continue
        run_end = j + 1
        while run_end < n and masses[run_end] > floor and run_end not in breaks:
            run_end += 1
        # seed at the extrapolated node value, not the cell average, so the
        # alternation error starts at curvature size
        if run_end - j >= 2:
            mid0 = 0.5 * (grid[j] + grid[j + 1])
            mid1 = 0.5 * (grid[j + 1] + grid[j + 2])
            slope = (avg[j + 1] - avg[j]) / (mid1 - mid0)
            v[j] = max(avg[j] - 0.5 * widths[j] * slope, 0.0)
        else:
            v[j] = avg[j]
        run_peak = float(avg[j:run_end].max())
        exact = True
        for i in range(j, run_end):
            if exact and avg[i] < 1e-3 * run_peak:
                # deep in the tail the exact-mass alternation would clip;
                # plain averaged node values drift by O(width^2) only
                exact = False
            if exact:
                nxt = 2.0 * avg[i] - v[i]
                v[i + 1] = nxt if nxt > 0.0 else 0.0
            else:
                v[i] = avg[i] if i == j else 0.5 * (avg[i - 1] + avg[i])
                v[i + 1] = avg[i]
        j = run_end
    return v

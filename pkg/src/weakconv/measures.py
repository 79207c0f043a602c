"""Mixing measures on [0, inf) and their elementary operations.

A MixingMeasure is a finite list of atoms plus a piecewise-linear density on
a strictly increasing grid (zero outside the grid range).  All built-in
kernels are symmetric, so every measure is stored as its radial reduction:
scaling by a negative factor equals scaling by |a|.

The scale-mixture characteristic function

    mixture_cf(k, lam, t) = int kernel_cf(k, t * s) lam(ds)

is evaluated exactly on atoms and in closed form per density cell for the
kendall and stable kernels (incomplete-gamma cells), by composite
Gauss-Legendre for kingman.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .batch import SampleBatch, make_rng
from .errors import InvalidMeasure
from .kernels import kernel_cf

__all__ = [
    "MixingMeasure", "CharGrid", "SampleBatch",
    "dirac", "from_atoms", "from_density",
    "measure_validate", "measure_scale", "measure_mixture", "measure_moment",
    "measure_cdf", "kolmogorov_distance", "mixture_cf", "mixture_cf_grid",
    "measure_discretize", "measure_quantile", "sample_measure",
    "measure_to_json", "measure_from_json", "chargrid_to_csv",
    "chargrid_from_csv",
]

MASS_TOL_POST = 1e-9
MASS_TOL_INGEST = 1e-6
ATOM_JUMP_TOL = 1e-6
DEFAULT_GRID_SIZE = 2048


@dataclass(frozen=True)
class MixingMeasure:
    """Atoms plus a piecewise-linear density, total mass one."""

    atom_locations: np.ndarray
    atom_weights: np.ndarray
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("atom_locations", "atom_weights", "grid", "values"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.atom_locations.size != self.atom_weights.size:
            raise InvalidMeasure("atom locations and weights differ in length")
        if self.grid.size != self.values.size:
            raise InvalidMeasure("grid and density values differ in length")
        if self.grid.size == 1:
            raise InvalidMeasure("density grid needs at least two points")

    # -- basic structure ----------------------------------------------------

    @property
    def has_density(self):
        return self.grid.size > 0

    def mass(self):
        m = float(self.atom_weights.sum())
        if self.has_density:
            m += float(np.trapezoid(self.values, self.grid))
        return m

    def support_upper(self):
        hi = 0.0
        if self.atom_locations.size:
            hi = float(self.atom_locations.max())
        if self.has_density:
            hi = max(hi, float(self.grid[-1]))
        return hi


def _assemble(atom_locations, atom_weights, grid, values):
    """Sort/merge atoms, drop zero weights, freeze arrays."""
    locs = np.asarray(atom_locations, dtype=float).ravel()
    wts = np.asarray(atom_weights, dtype=float).ravel()
    keep = wts > 0.0
    locs, wts = locs[keep], wts[keep]
    if locs.size:
        order = np.argsort(locs, kind="stable")
        locs, wts = locs[order], wts[order]
        # merge duplicates
        uniq, inv = np.unique(locs, return_inverse=True)
        merged = np.zeros_like(uniq)
        np.add.at(merged, inv, wts)
        locs, wts = uniq, merged
    grid = np.asarray(grid, dtype=float).ravel()
    values = np.asarray(values, dtype=float).ravel()
    if grid.size and np.allclose(values, 0.0):
        grid = np.empty(0)
        values = np.empty(0)
    return MixingMeasure(locs, wts, grid, values)


def _check_invariants(lam):
    if lam.atom_locations.size:
        if np.any(lam.atom_locations < 0) or np.any(~np.isfinite(lam.atom_locations)):
            raise InvalidMeasure("atom locations must be finite and >= 0")
        if np.any(lam.atom_weights < 0) or np.any(~np.isfinite(lam.atom_weights)):
            raise InvalidMeasure("atom weights must be finite and >= 0")
    if lam.has_density:
        if np.any(~np.isfinite(lam.grid)) or np.any(lam.grid < 0):
            raise InvalidMeasure("density grid must be finite and >= 0")
        if np.any(np.diff(lam.grid) <= 0):
            raise InvalidMeasure("density grid must be strictly increasing")
        if np.any(lam.values < 0) or np.any(~np.isfinite(lam.values)):
            raise InvalidMeasure("density values must be finite and >= 0")


def _renormalized(lam, tol):
    mass = lam.mass()
    if not math.isfinite(mass) or abs(mass - 1.0) > tol:
        raise InvalidMeasure(f"total mass {mass!r} deviates from 1 beyond {tol}")
    if mass == 1.0:
        return lam
    return MixingMeasure(lam.atom_locations, lam.atom_weights / mass,
                         lam.grid, lam.values / mass)


def dirac(x):
    """Point mass at x >= 0."""
    if x < 0:
        raise InvalidMeasure("support is [0, inf)")
    return _assemble([float(x)], [1.0], [], [])


def from_atoms(pairs):
    """Measure from (location, weight) pairs; total weight renormalized
    within ingestion tolerance."""
    locs = [p[0] for p in pairs]
    wts = [p[1] for p in pairs]
    return measure_validate(_assemble(locs, wts, [], []))


def from_density(grid, values, atoms=(), renormalize=True):
    """Measure from a gridded density (plus optional atoms).

    With renormalize=True the total mass is scaled to one exactly; this is
    the constructor used by operations that discretize analytic densities.
    """
    locs = [p[0] for p in atoms]
    wts = [p[1] for p in atoms]
    lam = _assemble(locs, wts, grid, values)
    _check_invariants(lam)
    mass = lam.mass()
    if not (math.isfinite(mass) and mass > 0):
        raise InvalidMeasure("density must carry positive finite mass")
    if renormalize:
        lam = MixingMeasure(lam.atom_locations, lam.atom_weights / mass,
                            lam.grid, lam.values / mass)
    return lam


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def measure_validate(lam):
    """Assert invariants; renormalize mass within the ingestion tolerance."""
    _check_invariants(lam)
    return _renormalized(lam, MASS_TOL_INGEST)


def measure_scale(lam, a):
    """Law of |a| * Theta; a = 0 collapses to the point mass at zero."""
    a = abs(float(a))
    if not math.isfinite(a):
        raise ValueError("scale must be finite")
    if a == 0.0:
        return dirac(0.0)
    return _assemble(lam.atom_locations * a, lam.atom_weights,
                     lam.grid * a, lam.values / a)


def measure_mixture(p, lam1, lam2):
    """Convex combination p * lam1 + (1 - p) * lam2."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("mixture weight must lie in [0, 1]")
    if p == 1.0:
        return lam1
    if p == 0.0:
        return lam2
    locs = np.concatenate([lam1.atom_locations, lam2.atom_locations])
    wts = np.concatenate([p * lam1.atom_weights, (1.0 - p) * lam2.atom_weights])
    if lam1.has_density or lam2.has_density:
        grid = np.union1d(lam1.grid, lam2.grid)
        vals = (p * _density_at(lam1, grid) + (1.0 - p) * _density_at(lam2, grid))
    else:
        grid, vals = [], []
    return _assemble(locs, wts, grid, vals)


def _density_at(lam, x):
    if not lam.has_density:
        return np.zeros_like(np.asarray(x, dtype=float))
    return np.interp(x, lam.grid, lam.values, left=0.0, right=0.0)


def measure_moment(lam, p):
    """int s^p lam(ds) by atoms plus trapezoid quadrature."""
    if p <= 0:
        raise ValueError("moment order must be positive")
    total = float((lam.atom_locations ** p) @ lam.atom_weights)
    if lam.has_density:
        total += float(np.trapezoid(lam.grid ** p * lam.values, lam.grid))
    return total


def measure_cdf(lam, x):
    """Right-continuous CDF, vectorized."""
    arr = np.asarray(x, dtype=float)
    xs = np.atleast_1d(arr).astype(float)
    out = np.zeros_like(xs)
    if lam.atom_locations.size:
        idx = np.searchsorted(lam.atom_locations, xs, side="right")
        cum = np.concatenate([[0.0], np.cumsum(lam.atom_weights)])
        out += cum[idx]
    if lam.has_density:
        out += _density_cdf(lam.grid, lam.values, xs)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _density_cdf(grid, values, xs):
    cell_mass = 0.5 * (values[1:] + values[:-1]) * np.diff(grid)
    cum = np.concatenate([[0.0], np.cumsum(cell_mass)])
    idx = np.clip(np.searchsorted(grid, xs, side="right") - 1, 0, grid.size - 2)
    x0, x1 = grid[idx], grid[idx + 1]
    v0, v1 = values[idx], values[idx + 1]
    d = np.clip(xs - x0, 0.0, x1 - x0)
    part = v0 * d + 0.5 * (v1 - v0) * d * d / (x1 - x0)
    out = cum[idx] + part
    out[xs < grid[0]] = 0.0
    out[xs >= grid[-1]] = cum[-1]
    return out


def kolmogorov_distance(lam1, lam2):
    """sup |F1 - F2| over the merged grid, atom locations, and their left
    limits."""
    pts = [lam1.grid, lam2.grid, lam1.atom_locations, lam2.atom_locations]
    pts = np.unique(np.concatenate([np.asarray(p, dtype=float) for p in pts]))
    if pts.size == 0:
        pts = np.array([0.0])
    d = float(np.max(np.abs(measure_cdf(lam1, pts) - measure_cdf(lam2, pts))))
    atoms = np.unique(np.concatenate([lam1.atom_locations, lam2.atom_locations]))
    if atoms.size:
        left = np.nextafter(atoms, -np.inf)
        d = max(d, float(np.max(np.abs(measure_cdf(lam1, left) - measure_cdf(lam2, left)))))
    return min(d, 1.0)


# -- scale-mixture characteristic function ----------------------------------

def mixture_cf(k, lam, t):
    """int kernel_cf(k, t * s) lam(ds); real and even for symmetric kernels."""
    arr = np.asarray(t, dtype=float)
    ts = np.abs(np.atleast_1d(arr).astype(float).ravel())
    out = np.zeros_like(ts)
    if lam.atom_locations.size:
        out += kernel_cf(k, np.multiply.outer(ts, lam.atom_locations)) @ lam.atom_weights
    if lam.has_density:
        fn = {"kendall": _density_cf_kendall,
              "stable": _density_cf_stable,
              "kingman": _density_cf_generic}[k.kind]
        out += fn(k, lam.grid, lam.values, ts)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _linear_coeffs(grid, values):
    a, b = grid[:-1], grid[1:]
    v0, v1 = values[:-1], values[1:]
    slope = (v1 - v0) / (b - a)
    intercept = v0 - slope * a
    return a, b, intercept, slope


def _density_cf_kendall(k, grid, values, ts):
    """Exact integral of (1 - (t s)^alpha)_+ against the density.

    With x = 1/t the integral is C(x) - t^alpha * D(x) where C and D are the
    cumulative integrals of rho and s^alpha rho; both are prefix sums of
    closed-form cell antiderivatives, so evaluation is O(log n) per t.
    """
    alpha = k.param
    a, b, A, B = _linear_coeffs(grid, values)
    p1, p2 = alpha + 1.0, alpha + 2.0
    cell_mass = A * (b - a) + 0.5 * B * (b * b - a * a)
    cell_d = A * (b ** p1 - a ** p1) / p1 + B * (b ** p2 - a ** p2) / p2
    cum_mass = np.concatenate([[0.0], np.cumsum(cell_mass)])
    cum_d = np.concatenate([[0.0], np.cumsum(cell_d)])

    out = np.empty_like(ts)
    zero = ts == 0.0
    out[zero] = cum_mass[-1]
    tpos = ts[~zero]
    if tpos.size:
        x = 1.0 / tpos
        idx = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2)
        lo = grid[idx]
        hi = np.clip(x, lo, grid[idx + 1])
        Ai, Bi = A[idx], B[idx]
        part_mass = Ai * (hi - lo) + 0.5 * Bi * (hi * hi - lo * lo)
        part_d = Ai * (hi ** p1 - lo ** p1) / p1 + Bi * (hi ** p2 - lo ** p2) / p2
        cmass = cum_mass[idx] + part_mass
        cd = cum_d[idx] + part_d
        below = x <= grid[0]
        cmass[below] = 0.0
        cd[below] = 0.0
        above = x >= grid[-1]
        cmass[above] = cum_mass[-1]
        cd[above] = cum_d[-1]
        out[~zero] = cmass - tpos ** alpha * cd
    return out


def _density_cf_stable(k, grid, values, ts):
    """Exact per-cell integral of exp(-(t s)^alpha) against the density."""
    alpha = k.param
    a, b, A, B = _linear_coeffs(grid, values)
    g1 = special.gamma(1.0 / alpha)
    g2 = special.gamma(2.0 / alpha)
    out = np.empty_like(ts)
    for i, t in enumerate(ts):
        if t == 0.0:
            out[i] = float(np.trapezoid(values, grid))
            continue
        ya = (t * a) ** alpha
        yb = (t * b) ** alpha
        i0 = g1 / (alpha * t) * (special.gammainc(1.0 / alpha, yb)
                                 - special.gammainc(1.0 / alpha, ya))
        i1 = g2 / (alpha * t * t) * (special.gammainc(2.0 / alpha, yb)
                                     - special.gammainc(2.0 / alpha, ya))
        out[i] = float(np.sum(A * i0 + B * i1))
    return out


def _density_cf_generic(k, grid, values, ts):
    """Composite Gauss-Legendre, cells split to resolve oscillation in t*s."""
    from .quadrature import gauss_legendre_01
    u, w = gauss_legendre_01(8)
    out = np.empty_like(ts)
    for i, t in enumerate(ts):
        if t == 0.0:
            out[i] = float(np.trapezoid(values, grid))
            continue
        widths = np.diff(grid)
        splits = np.minimum(np.ceil(t * widths / 2.0).astype(int) + 1, 64)
        edges = [np.linspace(grid[j], grid[j + 1], splits[j] + 1)
                 for j in range(widths.size)]
        edges = np.unique(np.concatenate(edges))
        lo, hi = edges[:-1], edges[1:]
        nodes = lo[:, None] + np.outer(hi - lo, u)
        dens = _density_at(_DensityView(grid, values), nodes.ravel())
        cf = kernel_cf(k, t * nodes.ravel())
        integrand = (dens * cf).reshape(nodes.shape)
        out[i] = float(np.sum((integrand @ w) * (hi - lo)))
    return out


class _DensityView:
    """Duck-typed carrier so _density_at works on raw arrays."""

    def __init__(self, grid, values):
        self.grid = grid
        self.values = values
        self.has_density = grid.size > 0


@dataclass(frozen=True)
class CharGrid:
    """A mixture cf sampled on a nonnegative t grid (even extension implied)."""

    t: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if t.size != phi.size or t.size < 2:
            raise ValueError("CharGrid needs matching t/phi arrays, length >= 2")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("t grid must start at 0 and increase strictly")
        if abs(phi[0] - 1.0) > 1e-12:
            raise ValueError("phi(0) must equal 1")
        if np.max(np.abs(phi)) > 1.0 + 1e-12:
            raise ValueError("|phi| must stay within 1")
        t.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "phi", phi)

    def as_callable(self):
        """Monotone-cubic interpolant on [0, tmax], clamped beyond."""
        from scipy.interpolate import PchipInterpolator
        interp = PchipInterpolator(self.t, self.phi, extrapolate=False)
        t_hi = self.t[-1]
        phi_hi = self.phi[-1]

        def phi_fn(t):
            t = np.abs(np.asarray(t, dtype=float))
            out = interp(np.minimum(t, t_hi))
            return np.where(t >= t_hi, phi_hi, out)

        return phi_fn


def _thread_count():
    raw = os.environ.get("WEAKCONV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def mixture_cf_grid(k, lam, tmax, points=257):
    """Sample mixture_cf on a uniform grid [0, tmax]; deterministic even when
    evaluation is chunked across threads."""
    t = np.linspace(0.0, float(tmax), int(points))
    workers = _thread_count()
    if workers == 1 or t.size < 64:
        phi = mixture_cf(k, lam, t)
    else:
        chunks = np.array_split(t, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: mixture_cf(k, lam, c), chunks))
        phi = np.concatenate(parts)
    phi = np.clip(phi, -1.0, 1.0)
    phi[0] = 1.0
    return CharGrid(t, phi)


# -- quantiles, sampling, discretization ------------------------------------

def _segments(lam):
    """Measure as sorted segments: atoms are zero-width, cells quadratic."""
    parts = []
    for x, w in zip(lam.atom_locations, lam.atom_weights):
        parts.append((x, x, 0.0, 0.0, w, True))
    if lam.has_density:
        masses = 0.5 * (lam.values[1:] + lam.values[:-1]) * np.diff(lam.grid)
        for j in range(masses.size):
            parts.append((lam.grid[j], lam.grid[j + 1],
                          lam.values[j], lam.values[j + 1], masses[j], False))
    parts.sort(key=lambda s: (s[0], s[1]))
    arr = np.array([p[:5] for p in parts], dtype=float).reshape(-1, 5)
    is_atom = np.array([p[5] for p in parts], dtype=bool)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], is_atom


def measure_quantile(lam, u):
    """Generalized inverse CDF, vectorized over u in [0, 1)."""
    u = np.asarray(u, dtype=float)
    x0, x1, v0, v1, mass, is_atom = _segments(lam)
    if x0.size == 0:
        return np.zeros_like(u)
    cum = np.cumsum(mass)
    start = cum - mass
    flat = np.atleast_1d(u).astype(float).ravel()
    pos = np.minimum(np.searchsorted(cum, flat, side="right"), x0.size - 1)
    frac = np.clip(flat - start[pos], 0.0, mass[pos])
    res = np.where(is_atom[pos], x0[pos],
                   _invert_cells(x0[pos], x1[pos], v0[pos], v1[pos], frac))
    return float(res[0]) if u.ndim == 0 else res.reshape(u.shape)


def _invert_cells(x0, x1, v0, v1, m):
    """Solve v0*d + slope*d^2/2 = m for d within each cell, vectorized."""
    w = np.maximum(x1 - x0, 1e-300)
    slope = (v1 - v0) / w
    linear = np.abs(slope) < 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        d_lin = np.where(v0 > 0, m / np.maximum(v0, 1e-300), 0.0)
        disc = np.maximum(v0 * v0 + 2.0 * slope * m, 0.0)
        d_quad = (np.sqrt(disc) - v0) / np.where(linear, 1.0, slope)
    d = np.where(linear, d_lin, d_quad)
    return x0 + np.clip(d, 0.0, x1 - x0)


def sample_measure(lam, n, seed):
    """n i.i.d. draws from the measure by inverse-CDF sampling."""
    rng = make_rng(seed)
    u = rng.uniform(0.0, 1.0, int(n))
    return SampleBatch(values=measure_quantile(lam, u), seed=int(seed))


def measure_discretize(lam, n_atoms):
    """Quantile quantization to at most n_atoms atoms plus preserved heavy
    atoms (weight > 1/n_atoms)."""
    n_atoms = int(n_atoms)
    if n_atoms < 1:
        raise ValueError("need at least one atom")
    heavy_mask = lam.atom_weights > 1.0 / n_atoms
    heavy = list(zip(lam.atom_locations[heavy_mask], lam.atom_weights[heavy_mask]))
    light = MixingMeasure(lam.atom_locations[~heavy_mask],
                          lam.atom_weights[~heavy_mask], lam.grid, lam.values)
    rest = light.mass()
    if rest <= 1e-15:
        return _assemble([h[0] for h in heavy], [h[1] for h in heavy], [], [])
    # conditional quantile of each mass slice, taken at the slice midpoint
    normalized = MixingMeasure(light.atom_locations, light.atom_weights / rest,
                               light.grid, light.values / rest)
    share = rest / n_atoms
    probs = (np.arange(n_atoms) + 0.5) / n_atoms
    locs = measure_quantile(normalized, probs)
    all_locs = np.concatenate([[h[0] for h in heavy], np.atleast_1d(locs)])
    all_wts = np.concatenate([[h[1] for h in heavy], np.full(n_atoms, share)])
    return _assemble(all_locs, all_wts, [], [])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def measure_to_json(lam):
    doc = {}
    if lam.atom_locations.size:
        doc["atoms"] = [{"x": float(x), "w": float(w)}
                        for x, w in zip(lam.atom_locations, lam.atom_weights)]
    if lam.has_density:
        doc["density"] = {"grid": [float(x) for x in lam.grid],
                          "values": [float(v) for v in lam.values]}
    return doc


def measure_from_json(doc):
    atoms = [(d["x"], d["w"]) for d in doc.get("atoms", [])]
    dens = doc.get("density")
    if dens is None:
        lam = _assemble([a[0] for a in atoms], [a[1] for a in atoms], [], [])
    else:
        lam = _assemble([a[0] for a in atoms], [a[1] for a in atoms],
                        dens["grid"], dens["values"])
    return measure_validate(lam)


def measure_dump(lam, path):
    with open(path, "w") as fh:
        json.dump(measure_to_json(lam), fh)
        fh.write("\n")


def measure_load(path):
    with open(path) as fh:
        return measure_from_json(json.load(fh))


def chargrid_to_csv(grid, path_or_buf):
    close = False
    if isinstance(path_or_buf, (str, os.PathLike)):
        fh = open(path_or_buf, "w", newline="")
        close = True
    else:
        fh = path_or_buf
    try:
        writer = csv.writer(fh)
        writer.writerow(["t", "phi"])
        for t, p in zip(grid.t, grid.phi):
            writer.writerow([f"{t:.17g}", f"{p:.17g}"])
    finally:
        if close:
            fh.close()


def chargrid_from_csv(path_or_buf):
    if isinstance(path_or_buf, (str, os.PathLike)):
        with open(path_or_buf, newline="") as fh:
            text = fh.read()
    else:
        text = path_or_buf.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows[0] != ["t", "phi"]:
        raise ValueError("expected header 't,phi'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    return CharGrid(data[:, 0], data[:, 1])

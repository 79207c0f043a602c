"""Sampling-based oracles: sphere summation, scale mixtures, positive
stable draws, and Kolmogorov-Smirnov comparison.

These paths are deliberately independent of the transform machinery so they
can cross-validate it; every sampler is driven by the counter-based Philox
generator and is reproducible per seed.
"""

from __future__ import annotations

import math

import numpy as np

from .batch import SampleBatch, make_rng
from .kernels import kernel_sample
from .measures import measure_quantile

__all__ = [
    "sample_sphere", "sample_oplus_sphere", "sample_scale_mixture",
    "sample_positive_stable", "ks_statistic",
]


def sample_sphere(n_dim, n_draws, seed):
    """n_draws uniform unit vectors in R**n_dim (normalized Gaussians)."""
    n_dim = int(n_dim)
    if n_dim < 2:
        raise ValueError("sphere dimension must be >= 2")
    rng = make_rng(seed)
    z = rng.standard_normal((int(n_draws), n_dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_oplus_sphere(n_dim, lam1, lam2, n_draws, seed):
    """Draws of || Theta1 U1 + Theta2 U2 ||, the spherical weak summation."""
    n_draws = int(n_draws)
    rng = make_rng(seed)
    theta1 = measure_quantile(lam1, rng.uniform(0.0, 1.0, n_draws))
    theta2 = measure_quantile(lam2, rng.uniform(0.0, 1.0, n_draws))
    u1 = rng.standard_normal((n_draws, int(n_dim)))
    u1 /= np.linalg.norm(u1, axis=1, keepdims=True)
    u2 = rng.standard_normal((n_draws, int(n_dim)))
    u2 /= np.linalg.norm(u2, axis=1, keepdims=True)
    values = np.linalg.norm(theta1[:, None] * u1 + theta2[:, None] * u2, axis=1)
    return SampleBatch(values=values, seed=int(seed))


def sample_scale_mixture(k, lam, n_draws, seed):
    """Draws of X * S with X from the kernel and S from the mixing measure."""
    n_draws = int(n_draws)
    x = kernel_sample(k, n_draws, seed).values
    rng = make_rng(int(seed) + 0x9E3779B9)
    s = measure_quantile(lam, rng.uniform(0.0, 1.0, n_draws))
    return SampleBatch(values=x * s, seed=int(seed))


def _positive_stable_draws(r, n, rng):
    """Positive r-stable draws, Laplace transform exp(-t**r), 0 < r < 1."""
    u = rng.uniform(0.0, math.pi, n)
    w = rng.standard_exponential(n)
    return (np.sin(r * u) / np.sin(u) ** (1.0 / r)
            * (np.sin((1.0 - r) * u) / w) ** ((1.0 - r) / r))


def sample_positive_stable(r, n_draws, seed):
    r = float(r)
    if not 0.0 < r < 1.0:
        raise ValueError("stability index must lie in (0, 1)")
    rng = make_rng(seed)
    return SampleBatch(values=_positive_stable_draws(r, int(n_draws), rng),
                       seed=int(seed))


def ks_statistic(batch, cdf):
    """sup |empirical CDF - cdf| over the sorted sample points."""
    values = np.sort(np.asarray(batch.values if isinstance(batch, SampleBatch)
                                else batch, dtype=float))
    if values.size == 0:
        raise ValueError("empty sample")
    n = values.size
    ref = np.asarray(cdf(values), dtype=float)
    upper = np.arange(1, n + 1) / n - ref
    lower = ref - np.arange(0, n) / n
    return float(max(upper.max(), lower.max(), 0.0))

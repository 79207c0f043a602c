"""Reproducible sample batches.

Every sampler in the library draws from a counter-based Philox generator so
batches are reproducible across platforms and chunk splits; the generator
contract is recorded in ``generator_id``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GENERATOR_ID = "philox-4x64"


def make_rng(seed):
    """Counter-based generator for the given seed."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


@dataclass(frozen=True)
class SampleBatch:
    """i.i.d. draws plus the provenance needed to reproduce them."""

    values: np.ndarray
    seed: int
    generator_id: str = GENERATOR_ID

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

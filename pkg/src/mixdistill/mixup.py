"""Candidate pool of virtual images built by convex combination of image pairs.

Candidates are kept lazy as (pair, lambda) triples; pixels only materialize
inside scoring and query batches, so a pool of ~10^6 virtual images costs a
pair index array rather than dense storage.
"""

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import InputError

# coefficients 0.30 .. 0.70 stepped by 0.04, endpoints included
DEFAULT_GRID_VALUES = tuple(round(0.30 + 0.04 * i, 2) for i in range(11))


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple = DEFAULT_GRID_VALUES

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise InputError("lambda grid cannot be empty")
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise InputError("lambda values must lie in [0, 1]")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InputError("lambda grid must be strictly increasing")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class MixupCandidate:
    pair: tuple  # (i, j) with i < j
    lam: float


@dataclass
class CandidatePool:
    source: Dataset
    pairs: np.ndarray  # (m, 2) int64, canonical i < j, sorted lexicographically
    grid: LambdaGrid
    removed: np.ndarray  # (r, 2) int64

    @property
    def num_candidates(self):
        return len(self.pairs) * len(self.grid)

    def pair_keys(self):
        n = len(self.source)
        return self.pairs[:, 0] * n + self.pairs[:, 1]


def synthesize(x_i, x_j, lam):
    """lam * x_i + (1 - lam) * x_j, pixelwise."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise InputError(f"image shapes differ: {x_i.shape} vs {x_j.shape}")
    if not 0.0 <= lam <= 1.0:
        raise InputError(f"lambda must lie in [0, 1], got {lam}")
    return lam * x_i + (1.0 - lam) * x_j


def _decode_pairs(linear, n):
    """Map linear indices over the upper triangle to canonical (i, j) pairs."""
    rows = np.arange(n, dtype=np.int64)
    offsets = rows * (2 * n - rows - 1) // 2  # start of row i
    i = np.searchsorted(offsets, linear, side="right") - 1
    j = i + 1 + (linear - offsets[i])
    return np.stack([i, j], axis=1)


def build_pool(source, grid=None, pair_cap=None, seed=0):
    """All C(n,2) canonical pairs, or a seeded uniform subset of pair_cap."""
    n = len(source)
    if n < 2:
        raise InputError("pool source must contain at least 2 images")
    grid = grid or LambdaGrid()
    total = n * (n - 1) // 2
    if pair_cap is not None and pair_cap < total:
        rng = np.random.default_rng(seed)
        linear = np.sort(rng.choice(total, size=pair_cap, replace=False))
        pairs = _decode_pairs(linear, n)
    else:
        i, j = np.triu_indices(n, k=1)
        pairs = np.stack([i, j], axis=1).astype(np.int64)
    return CandidatePool(source=source, pairs=pairs, grid=grid,
                         removed=np.empty((0, 2), dtype=np.int64))


def remove_pairs(pool, selected):
    """Return the pool with the selected pairs moved to the removed set.

    Selecting a pair that is not eligible is an orchestrator bug, not a
    recoverable input problem, hence RuntimeError.
    """
    if len(selected) == 0:
        return pool
    n = len(pool.source)
    sel = np.asarray([(p[0], p[1]) for p in selected], dtype=np.int64)
    sel_keys = sel[:, 0] * n + sel[:, 1]
    if len(np.unique(sel_keys)) != len(sel_keys):
        raise RuntimeError("duplicate pairs in selection")
    keys = pool.pair_keys()
    mask = np.isin(keys, sel_keys)
    if mask.sum() != len(sel_keys):
        raise RuntimeError("selection contains pairs not eligible in the pool")
    return CandidatePool(
        source=pool.source,
        pairs=pool.pairs[~mask],
        grid=pool.grid,
        removed=np.concatenate([pool.removed, pool.pairs[mask]]),
    )


def materialize(source, candidates):
    """Pixel stack for a list of MixupCandidate (query/inspection batches)."""
    images = source.images
    if not candidates:
        return np.empty((0,) + images.shape[1:])
    i = np.array([c.pair[0] for c in candidates])
    j = np.array([c.pair[1] for c in candidates])
    lam = np.array([c.lam for c in candidates])[:, None, None, None]
    return lam * images[i] + (1.0 - lam) * images[j]

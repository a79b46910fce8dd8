"""Candidate scoring and query-set selection.

Three selectors:

* ``active_mixup``  — rank pairs by the minimum student confidence over the
  lambda grid and keep the k least-confident pairs, one candidate per pair.
* ``random_search`` — model-independent uniform pair draw at lambda 0.5.
* ``vanilla_al``    — rank individual (pair, lambda) candidates by student
  confidence with no per-pair dedup (baseline that shows why dedup matters).

All tie-breaking is deterministic lexicographic.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InputError
from .mixup import MixupCandidate

SELECTORS = ("active_mixup", "random_search", "vanilla_al")


@dataclass(frozen=True)
class PairScore:
    pair: tuple
    lambda_star: float
    c2: float | None  # None for the model-independent random selector


@dataclass
class SelectionResult:
    chosen: list  # MixupCandidate
    scores: list  # PairScore, parallel to chosen
    selector: str

    def to_json(self):
        return {
            "selector": self.selector,
            "chosen": [
                {"i": int(c.pair[0]), "j": int(c.pair[1]), "lambda": float(c.lam),
                 "score": None if s.c2 is None else float(s.c2)}
                for c, s in zip(self.chosen, self.scores)
            ],
        }


def c1(model, image):
    """Student confidence: max class probability for one image."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != model.spec.input_shape:
        raise InputError(
            f"image shape {image.shape} does not match model input {model.spec.input_shape}")
    probs = nn.softmax(nn.forward(model, image[None]))[0]
    return float(probs.max())


def _score_grid(model, source, pairs, grid, batch_images=4096):
    """c1 for every (pair, lambda) candidate; returns an (m, G) array.

    Pairs are processed in fixed-size chunks and reduced in order, so the
    result is independent of chunking.
    """
    images = source.images
    g = len(grid)
    lam = np.array(grid.values)[None, :, None, None, None]
    chunk = max(1, batch_images // g)
    out = np.empty((len(pairs), g))
    for start in range(0, len(pairs), chunk):
        sub = pairs[start:start + chunk]
        xi = images[sub[:, 0]][:, None]  # (c, 1, H, W, C)
        xj = images[sub[:, 1]][:, None]
        mixed = (lam * xi + (1.0 - lam) * xj).reshape((-1,) + images.shape[1:])
        probs = nn.predict_probs(model, mixed)
        out[start:start + chunk] = probs.max(axis=1).reshape(len(sub), g)
    return out


def c2(model, pool, pair):
    """Pair confidence: min over the grid of c1, with its minimizer lambda*.

    np.argmin keeps the first minimum and the grid is ascending, so ties
    resolve to the smallest lambda.
    """
    pair = (int(pair[0]), int(pair[1]))
    n = len(pool.source)
    if not (0 <= pair[0] < pair[1] < n) or pair[0] * n + pair[1] not in pool.pair_keys():
        raise RuntimeError(f"pair {pair} is not eligible in the pool")
    scores = _score_grid(model, pool.source, np.array([pair]), pool.grid)[0]
    best = int(np.argmin(scores))
    return PairScore(pair=pair, lambda_star=pool.grid.values[best], c2=float(scores[best]))


def select_active(model, pool, k):
    """The k pairs with lowest C2; one candidate x_ij(lambda*) per pair."""
    if k < 1:
        raise InputError("k must be >= 1")
    m = len(pool.pairs)
    if m == 0:
        return SelectionResult(chosen=[], scores=[], selector="active_mixup")
    grid_scores = _score_grid(model, pool.source, pool.pairs, pool.grid)
    best_idx = grid_scores.argmin(axis=1)
    best = grid_scores[np.arange(m), best_idx]
    order = np.lexsort((pool.pairs[:, 1], pool.pairs[:, 0], best))[:min(k, m)]
    chosen, scores = [], []
    for idx in order:
        pair = (int(pool.pairs[idx, 0]), int(pool.pairs[idx, 1]))
        lam = pool.grid.values[best_idx[idx]]
        chosen.append(MixupCandidate(pair=pair, lam=lam))
        scores.append(PairScore(pair=pair, lambda_star=lam, c2=float(best[idx])))
    return SelectionResult(chosen=chosen, scores=scores, selector="active_mixup")


def select_random(pool, k, seed):
    """k distinct pairs uniformly without replacement, each at lambda 0.5."""
    if k < 1:
        raise InputError("k must be >= 1")
    m = len(pool.pairs)
    take = min(k, m)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(m, size=take, replace=False))
    chosen, scores = [], []
    for i in idx:
        pair = (int(pool.pairs[i, 0]), int(pool.pairs[i, 1]))
        chosen.append(MixupCandidate(pair=pair, lam=0.5))
        scores.append(PairScore(pair=pair, lambda_star=0.5, c2=None))
    return SelectionResult(chosen=chosen, scores=scores, selector="random_search")


def select_vanilla(model, pool, k):
    """The k individual candidates with lowest c1; no per-pair dedup."""
    if k < 1:
        raise InputError("k must be >= 1")
    m = len(pool.pairs)
    if m == 0:
        return SelectionResult(chosen=[], scores=[], selector="vanilla_al")
    g = len(pool.grid)
    grid_scores = _score_grid(model, pool.source, pool.pairs, pool.grid)
    flat = grid_scores.ravel()
    i_rep = np.repeat(pool.pairs[:, 0], g)
    j_rep = np.repeat(pool.pairs[:, 1], g)
    lam_idx = np.tile(np.arange(g), m)
    order = np.lexsort((lam_idx, j_rep, i_rep, flat))[:min(k, m * g)]
    chosen, scores = [], []
    for idx in order:
        pair = (int(i_rep[idx]), int(j_rep[idx]))
        lam = pool.grid.values[lam_idx[idx]]
        chosen.append(MixupCandidate(pair=pair, lam=lam))
        scores.append(PairScore(pair=pair, lambda_star=lam, c2=float(flat[idx])))
    return SelectionResult(chosen=chosen, scores=scores, selector="vanilla_al")

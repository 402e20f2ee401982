"""Point-set kernels: farthest point sampling, ball query, grouping, pre-sampling.

Everything here is a pure function of its inputs and runs on plain numpy
arrays; nothing depends on model parameters, so groupings can be computed
once per frame and reused by forward and backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PRESAMPLE_POOL = 2048
FRAME_POINTS = 512


def _sq_dist(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # explicit x, y, z order so results match scalar loops bit for bit
    d = points - ref
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def lexicographic_max(points: np.ndarray) -> int:
    """Index of the lexicographically largest (x, y, z) row; ties go to the lowest index."""
    order = np.lexsort((-np.arange(len(points)), points[:, 2], points[:, 1], points[:, 0]))
    return int(order[-1])


def farthest_point_sample(points: np.ndarray, m: int) -> np.ndarray:
    """Greedy FPS seeded at the lexicographic max so the chosen set ignores input order."""
    points = np.asarray(points)
    n = len(points)
    if not 1 <= m <= n:
        raise ValueError(f"farthest_point_sample: need 1 <= m <= n, got m={m}, n={n}")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = lexicographic_max(points)
    mind = _sq_dist(points, points[chosen[0]])
    for i in range(1, m):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        np.minimum(mind, _sq_dist(points, points[nxt]), out=mind)
    return chosen


def ball_query(centroid, points, radius: float, k_max: int) -> np.ndarray:
    """Up to ``k_max`` indices within ``radius``, nearest first, padded to exactly ``k_max``."""
    idx, _, _ = ball_query_many(np.asarray(centroid)[None], points, radius, k_max)
    return idx[0]


def ball_query_many(centroids: np.ndarray, points: np.ndarray, radius: float, k_max: int):
    """Vectorised :func:`ball_query` for a batch of centroids.

    Returns ``(indices, distances, counts)``; the first two are ``(m, k_max)``
    and ``counts[j]`` is how many leading slots of row ``j`` are distinct. Slots that no
    qualifying point fills repeat the first (nearest) entry; when nothing lies
    inside the ball that entry is the globally nearest point.
    """
    points = np.asarray(points)
    centroids = np.asarray(centroids)
    if len(points) == 0:
        raise ValueError("ball_query: empty point set")
    if radius <= 0 or k_max < 1:
        raise ValueError(f"ball_query: need radius > 0 and k_max >= 1, got {radius}, {k_max}")
    dist = np.sqrt(_sq_dist(points[None, :, :], centroids[:, None, :]))
    m = len(centroids)
    # only in-radius candidates get sorted: by row, then distance, then index
    rows, cols = np.nonzero(dist <= radius)
    order = np.lexsort((cols, dist[rows, cols], rows))
    rows, cols = rows[order], cols[order]
    counts = np.bincount(rows, minlength=m)
    rank = np.arange(len(rows)) - np.repeat(np.cumsum(counts) - counts, counts)
    keep = rank < k_max
    idx = np.empty((m, k_max), dtype=np.intp)
    idx[:] = np.argmin(dist, axis=1)[:, None]  # fallback when nothing is inside
    has = counts > 0
    first = np.full(m, -1, dtype=np.intp)
    first[rows[rank == 0]] = cols[rank == 0]
    idx[has] = first[has, None]
    idx[rows[keep], rank[keep]] = cols[keep]
    counts = np.clip(counts, 1, k_max)
    return idx, np.take_along_axis(dist, idx, axis=1), counts


@dataclass
class LocalRegionGroup:
    centroid: np.ndarray   # (3,)
    coords: np.ndarray     # (k, 3) relative to the centroid
    features: np.ndarray   # (k, c)
    distances: np.ndarray  # (k,)


@dataclass
class LocalRegions:
    """All groups of one set-abstraction stage, stored as stacked arrays."""

    centroid_index: np.ndarray  # (m,)
    centroids: np.ndarray       # (m, 3)
    member_index: np.ndarray    # (m, k)
    relative: np.ndarray        # (m, k, 3)
    distances: np.ndarray       # (m, k)
    counts: np.ndarray          # (m,) distinct members; later slots repeat slot 0
    features: np.ndarray | None = None  # (m, k, c)

    def __len__(self):
        return len(self.centroid_index)

    def __getitem__(self, j) -> LocalRegionGroup:
        k = self.member_index.shape[1]
        feats = self.features[j] if self.features is not None else np.zeros((k, 0))
        return LocalRegionGroup(self.centroids[j], self.relative[j], feats, self.distances[j])

    def local_inputs(self) -> np.ndarray:
        """``(m, k, 4)`` block of relative coordinates followed by distance."""
        return np.concatenate([self.relative, self.distances[..., None]], axis=-1)

    def distinct_slots(self):
        """Flat ``j * k + i`` positions of distinct members and each group's first row."""
        k = self.member_index.shape[1]
        keep = np.arange(k)[None, :] < self.counts[:, None]
        flat = np.flatnonzero(keep.ravel())
        starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        return flat, starts


def group_and_normalize(points, centroid_index, radius, k_max, features=None) -> LocalRegions:
    points = np.asarray(points)
    centroid_index = np.asarray(centroid_index)
    if centroid_index.size and (centroid_index.min() < 0 or centroid_index.max() >= len(points)):
        raise IndexError("group_and_normalize: centroid index out of range")
    centroids = points[centroid_index]
    idx, dist, counts = ball_query_many(centroids, points, radius, k_max)
    relative = points[idx] - centroids[:, None, :]
    feats = None if features is None else np.asarray(features)[idx]
    return LocalRegions(centroid_index, centroids, idx, relative, dist, counts, feats)


def presample(points, rng, pool=PRESAMPLE_POOL, out=FRAME_POINTS) -> np.ndarray:
    """Random draw of ``pool`` points followed by FPS down to ``out``.

    Inputs smaller than ``pool`` keep every point once and fill the remainder
    with random repeats, so a frame that already has ``out`` points survives
    intact.
    """
    points = np.asarray(points)
    n = len(points)
    if n == 0:
        raise ValueError("presample: empty frame")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if n >= pool:
        pick = rng.choice(n, pool, replace=False)
    else:
        pick = np.concatenate([np.arange(n), rng.integers(0, n, pool - n)])
    cand = points[pick]
    return cand[farthest_point_sample(cand, min(out, pool))]


def normalize_sequence(frames):
    """Centre on the sequence-wide centroid and scale by the max absolute coordinate.

    ``frames`` is a ``(T, n, 3)`` array or a list of ``(n_t, 3)`` arrays; the
    same type comes back. One transform is shared by every frame.
    """
    stacked = isinstance(frames, np.ndarray)
    flat = np.concatenate([np.asarray(f).reshape(-1, 3) for f in frames])
    if len(flat) == 0:
        raise ValueError("normalize_sequence: no points")
    centre = flat.mean(axis=0)
    scale = np.abs(flat - centre).max()
    # spreads at the rounding level of the mean are a single point in disguise
    if not scale > 64 * np.finfo(np.float64).eps * np.abs(flat).max():
        scale = 1.0
    if stacked:
        return (frames - centre) / scale
    return [(np.asarray(f) - centre) / scale for f in frames]

"""Set abstraction grouping -- farthest-point sampling and kNN neighbourhoods.

The decoder never sees raw point order. A cloud is first put into canonical
form (lexicographic sort, then normalization), and every selection below
breaks ties by position in that order, so any permutation of the input
produces identical index tensors and therefore identical logits.

Grouping runs in numpy and hands the network constant tensors:
    rel1  (M1, k1, 3)  neighbour - centroid offsets for the first level
    rel2  (M2, k2, 3)  offsets between first-level centroids
    nbr2  (M2, k2)     which first-level centroid each second-level neighbour is
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from point_watermark.block_svd import lex_sort
from point_watermark.errors import ConfigError, TooFewPoints
from point_watermark.geometry_io import as_cloud, normalize


@dataclass
class CloudGrouping:
    """Index and offset tensors for one cloud, ready to batch."""

    rel1: np.ndarray
    rel2: np.ndarray
    nbr2: np.ndarray


def canonical_cloud(cloud: Any) -> np.ndarray:
    """Lexicographically sorted, normalized copy of ``cloud``."""
    pts = as_cloud(cloud)
    return normalize(pts[lex_sort(pts)])[0]


def fps(points: Any, m: int) -> np.ndarray:
    """Greedy farthest-point sampling; returns ``m`` indices into ``points``.

    Starts at the point of largest norm. Ties (start and every later pick)
    go to the lexicographically smallest candidate.
    """
    pts = np.asarray(points, dtype=np.float64)
    if m < 1:
        raise ConfigError(f"centroid count must be >= 1, got {m}")
    if m > len(pts):
        raise TooFewPoints(f"cannot pick {m} centroids from {len(pts)} points")

    order = lex_sort(pts)
    p = pts[order]
    start = int(np.argmax((p ** 2).sum(axis=1)))
    selected = [start]
    dist = ((p - p[start]) ** 2).sum(axis=1)
    dist[start] = -1.0
    for _ in range(m - 1):
        nxt = int(np.argmax(dist))
        selected.append(nxt)
        dist = np.minimum(dist, ((p - p[nxt]) ** 2).sum(axis=1))
        dist[nxt] = -1.0
    return order[np.array(selected)]


def knn_group(points: Any, centroids: Any, k: int) -> np.ndarray:
    """The ``k`` nearest points to each centroid, shape (M, k).

    Equal distances are ordered by lexicographic position of the candidate.
    """
    pts = np.asarray(points, dtype=np.float64)
    ctr = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    if k < 1:
        raise ConfigError(f"neighbour count must be >= 1, got {k}")
    if k > len(pts):
        raise TooFewPoints(f"cannot take {k} neighbours from {len(pts)} points")

    order = lex_sort(pts)
    p = pts[order]
    d2 = ((ctr[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return order[nearest]


def group_cloud(cloud: Any, config: Any) -> CloudGrouping:
    """Two-level grouping of ``cloud`` for a decoder built from ``config``."""
    canon = canonical_cloud(cloud)
    if len(canon) < config.sa1_centroids:
        raise TooFewPoints(
            f"cloud has {len(canon)} points, decoder needs at least {config.sa1_centroids}"
        )

    c1 = fps(canon, config.sa1_centroids)
    pos1 = canon[c1]
    nbr1 = knn_group(canon, pos1, config.sa1_k)
    rel1 = canon[nbr1] - pos1[:, None, :]

    c2 = fps(pos1, config.sa2_centroids)
    pos2 = pos1[c2]
    nbr2 = knn_group(pos1, pos2, config.sa2_k)
    rel2 = pos1[nbr2] - pos2[:, None, :]
    return CloudGrouping(rel1=rel1, rel2=rel2, nbr2=nbr2.astype(np.int64))

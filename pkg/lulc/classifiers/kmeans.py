"""Seeded Lloyd k-means with k-means++ initialisation."""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from lulc.errors import InsufficientDataError, ShapeError
from lulc.seeding import derive_rng

logger = logging.getLogger(__name__)

_CHUNK = 65536


@dataclass(frozen=True, eq=False)
class KMeansModel:
    """
    Fitted centroids plus the training trace.

    objective_history holds J = sum of squared distances to the nearest
    centroid after every assignment step, the last entry being the final one.
    cluster_classes optionally maps cluster id -> class id (see map_clusters).
    """

    centroids: np.ndarray
    max_iters: int = 300
    tol: float = 1e-6
    seed: int = 0
    n_iter: int = 0
    objective_history: Tuple[float, ...] = ()
    labels: Optional[np.ndarray] = field(default=None, repr=False)
    cluster_classes: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _assign(vectors: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid ids (ties -> lowest id) and squared distances."""
    ids = np.empty(vectors.shape[0], dtype=np.int64)
    dist = np.empty(vectors.shape[0], dtype=np.float64)
    for start in range(0, vectors.shape[0], _CHUNK):
        block = vectors[start:start + _CHUNK]
        d2 = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        best = d2.argmin(axis=1)
        ids[start:start + _CHUNK] = best
        dist[start:start + _CHUNK] = d2[np.arange(block.shape[0]), best]
    return ids, dist


def _plusplus(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((vectors - vectors[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        closest = np.minimum(closest, ((vectors - vectors[nxt]) ** 2).sum(axis=1))
    return vectors[chosen].copy()


def kmeans_fit(
    vectors: np.ndarray,
    k: int = 7,
    seed: int = 0,
    max_iters: int = 300,
    tol: float = 1e-6,
) -> KMeansModel:
    """
    Lloyd iterations from a k-means++ start until the largest centroid move
    drops below tol or max_iters is reached.

    A cluster left empty by an assignment step is re-seeded at the point
    farthest from its current centroid, which can only lower the objective.

    Raises:
        InsufficientDataError: fewer vectors than clusters
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ShapeError(f"k-means expects (n, d) vectors, got {vectors.shape}")
    n = vectors.shape[0]
    if k < 1 or n < k:
        raise InsufficientDataError(f"k-means with k={k} needs at least {k} vectors, got {n}")

    centroids = _plusplus(vectors, k, derive_rng(seed, "kmeans/init"))
    history: List[float] = []
    iteration = 0
    for iteration in range(1, max_iters + 1):
        ids, dist = _assign(vectors, centroids)
        history.append(float(dist.sum()))
        updated = centroids.copy()
        counts = np.bincount(ids, minlength=k)
        for j in np.flatnonzero(counts):
            updated[j] = vectors[ids == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            farthest = np.argsort(-dist, kind="stable")[:empty.size]
            updated[empty] = vectors[farthest]
            logger.debug(f"Re-seeded {empty.size} empty clusters at iteration {iteration}")
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if shift < tol:
            break

    ids, dist = _assign(vectors, centroids)
    history.append(float(dist.sum()))
    logger.info(f"k-means k={k} converged after {iteration} iterations, J={history[-1]:.6g}")
    return KMeansModel(
        centroids=centroids,
        max_iters=max_iters,
        tol=tol,
        seed=seed,
        n_iter=iteration,
        objective_history=tuple(history),
        labels=ids,
    )


def kmeans_predict(model: KMeansModel, vectors: np.ndarray) -> np.ndarray:
    """Nearest-centroid cluster ids, ties to the lowest id."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != model.dim:
        raise ShapeError(f"expected (n, {model.dim}) vectors, got {vectors.shape}")
    return _assign(vectors, model.centroids)[0]


def map_clusters(model: KMeansModel, vectors: np.ndarray, labels: np.ndarray, n_classes: int) -> KMeansModel:
    """
    Label every cluster with the majority class of its members.

    Ties go to the lowest class id; a cluster with no labeled members gets
    cluster id mod n_classes.
    """
    clusters = kmeans_predict(model, vectors)
    labels = np.asarray(labels, dtype=np.int64)
    mapping = np.empty(model.k, dtype=np.int64)
    for j in range(model.k):
        members = labels[clusters == j]
        if members.size:
            mapping[j] = int(np.bincount(members, minlength=n_classes).argmax())
        else:
            mapping[j] = j % n_classes
    return replace(model, cluster_classes=mapping)


def kmeans_classes(model: KMeansModel, vectors: np.ndarray) -> np.ndarray:
    """Cluster ids translated through cluster_classes when present."""
    clusters = kmeans_predict(model, vectors)
    if model.cluster_classes is None:
        return clusters
    return model.cluster_classes[clusters]

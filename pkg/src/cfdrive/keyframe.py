"""Key-frame selection: k-means over image embeddings and over ego futures.

Embeddings are ingested from files (no encoder here). The same seeded
k-means backs both the semantic selection (a fraction of the dataset, one
exemplar per cluster) and the dynamics selection (a fixed number of
trajectory clusters).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import Trajectory

DEFAULT_DYNAMICS_CLUSTERS = 200


@dataclass(frozen=True)
class EmbeddingRecord:
    sample_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: tuple[float, ...]


def _plusplus_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    centers = np.empty((k, vectors.shape[1]))
    idx = int(rng.integers(n))
    centers[0] = vectors[idx]
    d2 = np.sum((vectors - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = vectors[idx]
        d2 = np.minimum(d2, np.sum((vectors - centers[j]) ** 2, axis=1))
    return centers


def kmeans(
    vectors: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-4,
) -> KMeansResult:
    """Seeded Lloyd's algorithm with k-means++ initialization.

    Deterministic for a fixed seed. Empty clusters are reseeded to the point
    farthest from its current centroid. Stops when the assignment is a fixed
    point or the relative centroid shift drops below ``tol``.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) array of vectors")
    if not np.isfinite(vectors).all():
        raise ValueError("vectors contain non-finite entries")
    n = vectors.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(vectors, k, rng)
    assignments = np.full(n, -1)
    history: list[float] = []
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        d2 = np.sum((vectors[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), new_assign].sum())
        history.append(inertia)
        if np.array_equal(new_assign, assignments):
            assignments = new_assign
            break
        assignments = new_assign

        new_centroids = centroids.copy()
        for j in range(k):
            members = assignments == j
            if members.any():
                new_centroids[j] = vectors[members].mean(axis=0)
            else:
                farthest = int(np.argmax(d2[np.arange(n), assignments]))
                new_centroids[j] = vectors[farthest]
        shift = math.sqrt(float(np.sum((new_centroids - centroids) ** 2)))
        scale = max(math.sqrt(float(np.sum(centroids**2))), 1e-12)
        centroids = new_centroids
        if shift <= tol * scale:
            # One last assignment against the settled centroids.
            d2 = np.sum((vectors[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
            assignments = np.argmin(d2, axis=1)
            history.append(float(d2[np.arange(n), assignments].sum()))
            break

    return KMeansResult(
        centroids=centroids,
        assignments=assignments,
        inertia=history[-1],
        n_iter=n_iter,
        inertia_history=tuple(history),
    )


def _exemplar_ids(ids: Sequence[str], vectors: np.ndarray, result: KMeansResult) -> list[str]:
    """Per cluster, the member nearest its centroid; ties break to the smallest id."""
    out: list[str] = []
    for j in range(result.centroids.shape[0]):
        members = np.flatnonzero(result.assignments == j)
        if members.size == 0:
            continue
        d = np.linalg.norm(vectors[members] - result.centroids[j], axis=1)
        best = d.min()
        candidates = [ids[int(i)] for i, di in zip(members, d) if di == best]
        out.append(min(candidates))
    return out


def select_semantic(
    records: Sequence[EmbeddingRecord], fraction: float, seed: int = 0
) -> list[str]:
    """Cluster embeddings into ceil(fraction * n) groups; return one exemplar each."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not records:
        raise ValueError("no embedding records")
    dims = {r.vector.shape for r in records}
    if len(dims) != 1:
        raise ValueError(f"embedding dimensions differ: {sorted(dims)}")
    ids = [r.sample_id for r in records]
    vectors = np.stack([np.asarray(r.vector, dtype=float) for r in records])
    k = math.ceil(fraction * len(records))
    result = kmeans(vectors, k, seed=seed)
    return _exemplar_ids(ids, vectors, result)


def select_dynamics(
    trajs: Sequence[tuple[str, Trajectory]],
    k: int = DEFAULT_DYNAMICS_CLUSTERS,
    seed: int = 0,
) -> list[str]:
    """Cluster ego futures (concatenated waypoint features); one exemplar per cluster."""
    if not trajs:
        raise ValueError("no trajectories")
    ids = [sid for sid, _ in trajs]
    feats = [t.features() for _, t in trajs]
    sizes = {f.shape for f in feats}
    if len(sizes) != 1:
        raise ValueError("trajectories must share horizon/period to be clustered together")
    vectors = np.stack(feats)
    result = kmeans(vectors, k, seed=seed)
    return _exemplar_ids(ids, vectors, result)


# --- embeddings file -----------------------------------------------------


def load_embeddings(path) -> list[EmbeddingRecord]:
    """Read an embeddings file: {"dim": D, "records": [{"sample_id", "vector"}]}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    dim = int(doc["dim"])
    records = []
    for i, rec in enumerate(doc["records"]):
        vec = np.asarray(rec["vector"], dtype=np.float32)
        if vec.shape != (dim,):
            raise ValueError(f"records[{i}]: expected dimension {dim}, got {vec.shape}")
        if not np.isfinite(vec).all():
            raise ValueError(f"records[{i}]: non-finite entries")
        records.append(EmbeddingRecord(sample_id=str(rec["sample_id"]), vector=vec))
    return records


def save_embeddings(records: Sequence[EmbeddingRecord], path) -> None:
    if not records:
        raise ValueError("no embedding records")
    dim = int(records[0].vector.shape[0])
    doc = {
        "dim": dim,
        "records": [
            {"sample_id": r.sample_id, "vector": [float(v) for v in r.vector]} for r in records
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")

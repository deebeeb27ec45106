"""Unsupervised organization of positive training samples.

Several clustering rounds run per epoch, each with its own algorithm,
descriptor space and distance; the union of the rounds' clusters is kept
(clusters may overlap across rounds) after filtering on cluster quality:
the round's Dunn index and each cluster's purity.

Positives are what gets clustered. Negatives only enter purity: each
negative joins the cluster of its nearest positive in that round's
descriptor space, and purity is the positive fraction of the grown
cluster. From the second epoch on, a round over evolved descriptors is
available: a sample is described by the binarized outputs of every
classifier learned so far, compared with Jaccard overlap, so the grouping
of the training data improves as the graph grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import DetectionCache, score_concept
from .features import descriptor_values, FeatureSpec

__all__ = [
    "Cluster",
    "ClusterQuality",
    "RoundSpec",
    "ClusterRounds",
    "ClusterFilterError",
    "kmeans",
    "agglomerative",
    "dunn_index",
    "dunn_from_distance",
    "purity",
    "jaccard_similarity",
    "jaccard_distances",
    "evolved_descriptor",
    "cluster_rounds",
]


class ClusterFilterError(ValueError):
    """Every cluster failed the quality thresholds."""


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]  # sample indices, positives only
    space: str
    round_id: int
    dunn: float
    purity: float


@dataclass(frozen=True)
class ClusterQuality:
    min_dunn: float = 0.0
    min_purity: float = 0.8


@dataclass(frozen=True)
class RoundSpec:
    """One clustering round: algorithm x descriptor space x distance."""

    algorithm: str = "kmeans"  # "kmeans" | "agglomerative"
    space: str = "gradient_hist"  # "gradient_hist" | "hue_hist" | "evolved"
    k: int = 2
    cells: int = 2
    bins: int = 9
    linkage: str = "single"
    distance: str = "euclidean"  # "euclidean" | "jaccard"

    def label(self) -> str:
        return f"{self.algorithm}/{self.space}/k{self.k}/{self.distance}"


@dataclass
class ClusterRounds:
    """Union of kept clusters plus per-round bookkeeping for the report."""

    clusters: list[Cluster]
    rounds: list[dict] = field(default_factory=list)

    def has_space(self, space: str) -> bool:
        return any(r["space"] == space for r in self.rounds)


# -- k-means ---------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia_path: list[float]


def _plus_plus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[int(rng.integers(n))]
    if k == 1:
        return centers
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(X: np.ndarray, k: int, seed: int, max_iter: int = 100, tol: float = 1e-9) -> KMeansResult:
    """Lloyd iterations from a k-means++ start; deterministic per seed.

    Ties in assignment go to the lowest center index; an emptied cluster
    keeps its previous center. The recorded inertia path (one value per
    assignment step) is nonincreasing.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be within [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _plus_plus_init(X, k, rng)
    inertia_path: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        inertia_path.append(float(d2[np.arange(n), labels].sum()))
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new_centers[j] = X[mask].mean(axis=0)
        shift = float(np.abs(new_centers - centers).max())
        centers = new_centers
        if shift < tol:
            break
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia_path.append(float(d2[np.arange(n), labels].sum()))
    return KMeansResult(labels=labels, centers=centers, inertia_path=inertia_path)


# -- agglomerative -----------------------------------------------------------


def _pairwise_euclidean(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def agglomerative(
    X: np.ndarray | None,
    k: int,
    linkage: str = "single",
    distance_matrix: np.ndarray | None = None,
) -> np.ndarray:
    """Bottom-up merging to k clusters; returns a label per point.

    Works from points (Euclidean) or a precomputed distance matrix. The
    closest active pair merges each step; distance ties break on the
    smallest pair of active cluster indices, so the result is invariant
    to input permutation up to relabeling.
    """
    if linkage not in ("single", "complete"):
        raise ValueError(f"unknown linkage {linkage!r}")
    if distance_matrix is None:
        if X is None:
            raise ValueError("need points or a distance matrix")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        distance_matrix = _pairwise_euclidean(X)
    D = np.asarray(distance_matrix, dtype=np.float64)
    n = D.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be within [1, {n}], got {k}")
    active: list[list[int]] = [[i] for i in range(n)]
    # cluster-to-cluster linkage distances, updated on merge; row-major
    # argmin over the upper triangle realizes the smallest-pair tie-break
    link = D.copy()
    np.fill_diagonal(link, np.inf)
    combine = np.minimum if linkage == "single" else np.maximum
    while len(active) > k:
        masked = np.where(np.tri(link.shape[0], dtype=bool), np.inf, link)
        flat = int(np.argmin(masked))
        i, j = divmod(flat, link.shape[0])
        active[i] = active[i] + active[j]
        del active[j]
        merged = combine(link[i, :], link[j, :])
        link[i, :] = merged
        link[:, i] = merged
        link[i, i] = np.inf
        link = np.delete(np.delete(link, j, axis=0), j, axis=1)
    labels = np.empty(n, dtype=np.int64)
    for cluster_idx, members in enumerate(active):
        labels[members] = cluster_idx
    return labels


# -- quality measures --------------------------------------------------------


def dunn_from_distance(D: np.ndarray, groups) -> float:
    """Dunn index from a pairwise distance matrix and index groups."""
    groups = [np.asarray(g, dtype=np.int64) for g in groups]
    if len(groups) < 2:
        raise ValueError("dunn index needs at least 2 clusters")
    max_diameter = 0.0
    for g in groups:
        if g.size > 1:
            max_diameter = max(max_diameter, float(D[np.ix_(g, g)].max()))
    min_inter = math.inf
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            min_inter = min(min_inter, float(D[np.ix_(groups[i], groups[j])].min()))
    if max_diameter == 0.0:
        return math.inf
    return min_inter / max_diameter


def dunn_index(groups, distance: str = "euclidean", distance_matrix: np.ndarray | None = None) -> float:
    """Dunn index of point groups: min single-link inter-cluster distance
    over max complete diameter; +inf when every diameter is zero."""
    if distance_matrix is not None:
        return dunn_from_distance(distance_matrix, groups)
    if distance != "euclidean":
        raise ValueError("point-based dunn_index supports euclidean only")
    arrays = [np.atleast_2d(np.asarray(g, dtype=np.float64).reshape(len(g), -1)) for g in groups]
    stacked = np.vstack(arrays)
    D = _pairwise_euclidean(stacked)
    index_groups = []
    offset = 0
    for arr in arrays:
        index_groups.append(np.arange(offset, offset + arr.shape[0]))
        offset += arr.shape[0]
    return dunn_from_distance(D, index_groups)


def purity(members, labels) -> float:
    """Fraction of positive labels among a cluster's members."""
    members = np.asarray(list(members), dtype=np.int64)
    if members.size == 0:
        raise ValueError("purity of an empty cluster is undefined")
    labels = np.asarray(labels)
    return float(np.mean(labels[members] == 1))


def jaccard_similarity(di: np.ndarray, dj: np.ndarray) -> float:
    """Co-firing overlap of two binary vectors: |i and j| / |i or j|.

    Two all-zero vectors compare as identical (similarity 1).
    """
    di = np.asarray(di).astype(bool)
    dj = np.asarray(dj).astype(bool)
    if di.shape != dj.shape:
        raise ValueError(f"length mismatch: {di.shape} vs {dj.shape}")
    union = int(np.logical_or(di, dj).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(di, dj).sum()) / union


def jaccard_distances(B: np.ndarray) -> np.ndarray:
    """Pairwise (1 - jaccard) over rows of a binary matrix."""
    B = np.asarray(B).astype(bool)
    inter = (B[:, None, :] & B[None, :, :]).sum(axis=2).astype(np.float64)
    union = (B[:, None, :] | B[None, :, :]).sum(axis=2).astype(np.float64)
    sim = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 1.0)
    return 1.0 - sim


def evolved_descriptor(concept_ids, graph, image, box=None) -> np.ndarray:
    """Binary vector of classifier outputs: entry k is 1 when classifier k
    scores at least 0.5 on the image."""
    concept_ids = list(concept_ids)
    if not concept_ids:
        raise ValueError("need a nonempty classifier subset")
    cache = DetectionCache()
    out = np.zeros(len(concept_ids), dtype=np.uint8)
    for i, cid in enumerate(concept_ids):
        out[i] = 1 if score_concept(graph, cid, image, box, cache) >= 0.5 else 0
    return out


# -- rounds ------------------------------------------------------------------


def _space_descriptors(samples, indices, spec: RoundSpec, graph) -> np.ndarray:
    if spec.space == "evolved":
        if graph is None or not graph.concepts:
            raise ValueError("evolved descriptor round needs a graph with concepts")
        concept_ids = list(range(len(graph.concepts)))
        rows = [evolved_descriptor(concept_ids, graph, samples[i].image, samples[i].box) for i in indices]
        return np.asarray(rows, dtype=np.float64)
    if spec.space == "gradient_hist":
        feat = FeatureSpec("gradient_hist", cells=spec.cells, bins=spec.bins)
    elif spec.space == "hue_hist":
        feat = FeatureSpec("hue_hist", cells=spec.cells, bins=spec.bins)
    else:
        raise ValueError(f"unknown descriptor space {spec.space!r}")
    rows = [descriptor_values(feat, samples[i].image, samples[i].box) for i in indices]
    return np.asarray(rows, dtype=np.float64)


def _round_groups(spec: RoundSpec, X: np.ndarray, seed: int):
    """Run one round's algorithm; returns groups of local indices plus the
    pairwise distance matrix used for quality measures."""
    if spec.distance == "jaccard":
        D = jaccard_distances(X >= 0.5)
        if spec.algorithm != "agglomerative":
            raise ValueError("jaccard distance requires agglomerative clustering")
        labels = agglomerative(None, min(spec.k, X.shape[0]), spec.linkage, distance_matrix=D)
    elif spec.algorithm == "kmeans":
        labels = kmeans(X, min(spec.k, X.shape[0]), seed).labels
        D = _pairwise_euclidean(X)
    elif spec.algorithm == "agglomerative":
        labels = agglomerative(X, min(spec.k, X.shape[0]), spec.linkage)
        D = _pairwise_euclidean(X)
    else:
        raise ValueError(f"unknown clustering algorithm {spec.algorithm!r}")
    groups = [np.nonzero(labels == j)[0] for j in range(labels.max() + 1)]
    return [g for g in groups if g.size > 0], D


def cluster_rounds(
    samples,
    labels,
    round_specs,
    quality: ClusterQuality | None = None,
    graph=None,
    seed: int = 0,
) -> ClusterRounds:
    """Run every round and keep the union of quality-passing clusters.

    ``labels`` holds +1/-1 per sample; positives are clustered, negatives
    are folded into their nearest cluster for the purity measure only.
    Raises ClusterFilterError when nothing survives the thresholds.
    """
    round_specs = list(round_specs)
    if not round_specs:
        raise ValueError("need at least one clustering round")
    quality = quality if quality is not None else ClusterQuality()
    labels = np.asarray(labels)
    pos_idx = np.nonzero(labels == 1)[0]
    neg_idx = np.nonzero(labels != 1)[0]
    if pos_idx.size == 0:
        raise ValueError("no positive samples to cluster")
    kept: list[Cluster] = []
    rounds_meta: list[dict] = []
    for round_id, spec in enumerate(round_specs):
        X_pos = _space_descriptors(samples, pos_idx, spec, graph)
        groups, D_pos = _round_groups(spec, X_pos, seed + round_id)
        round_dunn = dunn_from_distance(D_pos, groups) if len(groups) >= 2 else math.inf
        # a negative contaminates the cluster of its nearest positive, but
        # only when it falls within that cluster's own span (diameter);
        # far-away negatives say nothing about cluster quality
        assigned_negatives = np.zeros(len(groups), dtype=np.int64)
        if neg_idx.size > 0:
            X_neg = _space_descriptors(samples, neg_idx, spec, graph)
            if spec.distance == "jaccard":
                cross = jaccard_distances(np.vstack([X_neg, X_pos]) >= 0.5)[
                    : X_neg.shape[0], X_neg.shape[0] :
                ]
            else:
                diff = X_neg[:, None, :] - X_pos[None, :, :]
                cross = np.sqrt((diff * diff).sum(axis=2))
            nearest_pos = np.argmin(cross, axis=1)
            local_to_group = np.empty(X_pos.shape[0], dtype=np.int64)
            diameters = np.zeros(len(groups), dtype=np.float64)
            for gi, g in enumerate(groups):
                local_to_group[g] = gi
                if g.size > 1:
                    diameters[gi] = float(D_pos[np.ix_(g, g)].max())
            for ni, npos in enumerate(nearest_pos):
                gi = int(local_to_group[int(npos)])
                if float(cross[ni, int(npos)]) <= diameters[gi]:
                    assigned_negatives[gi] += 1
        kept_in_round = 0
        for gi, g in enumerate(groups):
            cluster_purity = g.size / (g.size + int(assigned_negatives[gi]))
            if round_dunn >= quality.min_dunn and cluster_purity >= quality.min_purity:
                kept.append(
                    Cluster(
                        members=tuple(int(pos_idx[i]) for i in g),
                        space=spec.space,
                        round_id=round_id,
                        dunn=round_dunn,
                        purity=cluster_purity,
                    )
                )
                kept_in_round += 1
        rounds_meta.append(
            {
                "round_id": round_id,
                "label": spec.label(),
                "space": spec.space,
                "clusters": len(groups),
                "kept": kept_in_round,
                "dunn": round_dunn,
            }
        )
    if not kept:
        raise ClusterFilterError(
            f"no cluster passed min_dunn={quality.min_dunn}, min_purity={quality.min_purity}"
        )
    return ClusterRounds(clusters=kept, rounds=rounds_meta)


def export_clusters_csv(result: ClusterRounds, path) -> None:
    """Write (sample_id, round_id, cluster_id) rows."""
    lines = ["sample_id,round_id,cluster_id"]
    for cluster_id, cluster in enumerate(result.clusters):
        for sid in cluster.members:
            lines.append(f"{sid},{cluster.round_id},{cluster_id}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")

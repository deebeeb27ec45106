"""Training: cluster-guided boosting rounds and the epoch loop.

Each epoch learns exactly one new concept node. Boosting rounds pick the
round's target as the positive cluster holding the most sample weight,
fit/evaluate every pool candidate against that cluster and the negatives,
select the candidate with the lowest weighted error on the full training
set, and reweight the samples Adaboost-style. After the rounds, one
logistic model is refit over the selected candidates' pooled outputs so
the weights are adjusted simultaneously; that model becomes the epoch's
composite concept node, and random geometric copies of it are spawned
into the feature pool for later epochs.

Candidates are scored by their own rule: first-stage (spec-backed)
candidates get a fresh per-round logistic over their descriptor at the
candidate's location and scale; learned candidates are scored by pooled
deep detection, with a decision threshold swept to minimize the weighted
error. Sample weights stay normalized to sum 1 after every round, which
keeps the cluster-weight argmax scale-stable and makes the classic
"post-reweight error is 1/2" identity hold exactly.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .clustering import Cluster, ClusterQuality, ClusterRounds, RoundSpec, cluster_rounds
from .engine import (
    DetectionCache,
    _leaf_response,
    deep_detect,
    pooling_locations,
    snap_region,
)
from .features import FeatureSpec
from .graph import (
    ClassifierGraph,
    FeatureNode,
    FeaturePool,
    Geometry,
    GeometrySampler,
    GraphError,
    LocationGrid,
    desk_sampler,
    paper_scale_sampler,
    seed_initial_pool,
    spawn_feature_nodes,
)
from .parallel import ordered_map, resolve_workers

__all__ = [
    "LogisticFit",
    "CandidateScorer",
    "CandidateEvaluator",
    "RoundRecord",
    "ClusterboostResult",
    "TrainState",
    "EpochConfig",
    "TrainConfig",
    "EpochReport",
    "TrainReport",
    "logistic_objective",
    "fit_logistic",
    "adaboost_reweight",
    "evaluate_candidate",
    "clusterboost",
    "run_epoch",
    "train",
    "derive_seed",
]

log = logging.getLogger(__name__)

ERROR_CLAMP = 1e-6

# purposes for per-epoch seed derivation
_SEED_CLUSTER = 0
_SEED_SCAN = 1
_SEED_SPAWN = 2
_SEED_INITIAL = 3
SEED_NEGATIVES = 4


def derive_seed(master: int, *key: int) -> int:
    """Stable derived seed for one (epoch, purpose) slot."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


# -- weighted logistic regression -------------------------------------------


@dataclass
class LogisticFit:
    weights: np.ndarray
    bias: float
    n_iter: int
    converged: bool
    loss_path: list[float]


def logistic_objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, sample_weight, l2: float):
    """Weighted logistic loss with an L2 term on the weights (not the bias).

    ``theta`` is the stacked parameter vector [w..., b]; returns
    (loss, gradient) with the gradient laid out the same way.
    """
    w = theta[:-1]
    b = theta[-1]
    z = X @ w + b
    margins = y * z
    losses = np.logaddexp(0.0, -margins)
    loss = float(np.dot(sample_weight, losses)) + l2 * float(np.dot(w, w))
    # d/dz of log(1 + exp(-y z)) is -y * sigmoid(-y z)
    r = -sample_weight * y * kernels.sigmoid(-margins)
    grad = np.empty(theta.size, dtype=np.float64)
    grad[:-1] = X.T @ r + 2.0 * l2 * w
    grad[-1] = float(r.sum())
    return loss, grad


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
    l2: float = 1e-3,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> LogisticFit:
    """Damped-Newton fit of a weighted logistic model.

    Deterministic: starts at zero, takes Newton steps with backtracking
    (falling back to the gradient direction when the solve is useless),
    and only ever accepts loss-decreasing steps. Stops when the gradient
    max-norm drops below ``tol`` or after ``max_iter`` iterations.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.size:
        raise ValueError("X and y lengths differ")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite training data")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("need at least one sample of each label")
    if sample_weight is None:
        sample_weight = np.full(y.size, 1.0 / y.size)
    else:
        sample_weight = np.asarray(sample_weight, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(sample_weight)) or np.any(sample_weight < 0):
            raise ValueError("sample weights must be finite and nonnegative")
    d = X.shape[1]
    theta = np.zeros(d + 1, dtype=np.float64)
    loss, grad = logistic_objective(theta, X, y, sample_weight, l2)
    loss_path = [loss]
    converged = False
    n_iter = 0
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    for n_iter in range(1, max_iter + 1):
        if float(np.abs(grad).max()) <= tol:
            converged = True
            break
        z = X @ theta[:-1] + theta[-1]
        sig = kernels.sigmoid(z)
        curvature = sample_weight * sig * (1.0 - sig)
        H = Xb.T @ (curvature[:, None] * Xb)
        H[np.arange(d), np.arange(d)] += 2.0 * l2
        H[np.arange(d + 1), np.arange(d + 1)] += 1e-12
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, -grad, rcond=None)[0]
        descent = float(np.dot(grad, step))
        if not np.isfinite(descent) or descent >= 0.0:
            step = -grad
            descent = -float(np.dot(grad, grad))
        t = 1.0
        accepted = False
        for _ in range(60):
            candidate = theta + t * step
            new_loss, new_grad = logistic_objective(candidate, X, y, sample_weight, l2)
            if new_loss <= loss + 1e-4 * t * descent:
                theta, loss, grad = candidate, new_loss, new_grad
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        loss_path.append(loss)
    else:
        n_iter = max_iter
    if float(np.abs(grad).max()) <= tol:
        converged = True
    return LogisticFit(weights=theta[:-1].copy(), bias=float(theta[-1]), n_iter=n_iter,
                       converged=converged, loss_path=loss_path)


# -- candidate scoring -------------------------------------------------------


@dataclass
class CandidateScorer:
    """One pool candidate's fitted scoring rule and its weighted error."""

    feature_id: int
    kind: str  # "leaf" | "learned"
    scores: np.ndarray  # on all training samples
    threshold: float
    error: float  # weighted error on all samples, clamped away from 0/1
    weights: np.ndarray | None = None  # leaf candidates: fitted descriptor model
    bias: float = 0.0

    def predictions(self) -> np.ndarray:
        return np.where(self.scores >= self.threshold, 1, -1)


class CandidateEvaluator:
    """Per-epoch cache of candidate observations on the training set.

    Leaf descriptor matrices and learned-candidate pooled scores do not
    depend on the boosting weights, so they are computed once and reused
    across rounds. For learned candidates the evaluator keeps, per sample,
    the full grid of (concept, scale) responses: every copy of a concept
    then reduces to a max over its own slice of that grid, and copies with
    overlapping search areas share all region evaluations.
    """

    def __init__(self, graph: ClassifierGraph, samples, workers: int | None = None):
        self.graph = graph
        self.samples = list(samples)
        self.workers = resolve_workers(workers)
        self._leaf_matrices: dict[int, np.ndarray] = {}
        self._learned_scores: dict[int, np.ndarray] = {}
        self._sample_caches = [DetectionCache() for _ in self.samples]
        self._grid_scores: dict[tuple, np.ndarray] = {}
        self._grid_index = {point: i for i, point in enumerate(graph.grid.points)}
        self._pool_masks: dict[tuple, np.ndarray] = {}

    def _center_box(self, feature: FeatureNode, sample):
        return snap_region(
            sample.box, feature.geometry.p, feature.geometry.s,
            sample.image.width, sample.image.height,
        )

    def leaf_matrix(self, feature: FeatureNode) -> np.ndarray:
        """Descriptors of a spec-backed candidate, one row per sample.

        Rows whose region leaves the image are zero (matching the
        "absent scores 0" convention of pooled detection).
        """
        cached = self._leaf_matrices.get(feature.id)
        if cached is not None:
            return cached
        spec: FeatureSpec = feature.ref
        out = np.zeros((len(self.samples), spec.length), dtype=np.float64)
        for i, sample in enumerate(self.samples):
            box = self._center_box(feature, sample)
            if box is not None:
                out[i] = _descriptor(spec, sample.image, box)
        self._leaf_matrices[feature.id] = out
        return out

    def _concept_grid(self, i: int, cid: int, scale) -> np.ndarray:
        """Concept scores at every grid location of one sample; NaN where
        the region leaves the image."""
        key = (i, cid, scale)
        cached = self._grid_scores.get(key)
        if cached is not None:
            return cached
        from .engine import _cached_concept

        sample = self.samples[i]
        grid = self.graph.grid
        out = np.full(len(grid.points), np.nan)
        for j, point in enumerate(grid.points):
            box = snap_region(sample.box, point, scale,
                              sample.image.width, sample.image.height)
            if box is not None:
                out[j] = _cached_concept(self.graph, cid, sample.image, box,
                                         self._sample_caches[i])
        self._grid_scores[key] = out
        return out

    def _pooling_mask(self, geometry: Geometry) -> np.ndarray:
        """Grid indices a grid-aligned feature pools over (center first)."""
        key = (geometry.p, geometry.a)
        cached = self._pool_masks.get(key)
        if cached is not None:
            return cached
        indices = [self._grid_index[q] for q in pooling_locations(geometry, self.graph.grid)]
        mask = np.asarray(indices, dtype=np.int64)
        self._pool_masks[key] = mask
        return mask

    def learned_scores(self, feature: FeatureNode) -> np.ndarray:
        cached = self._learned_scores.get(feature.id)
        if cached is not None:
            return cached
        geometry = feature.geometry
        on_grid = geometry.p in self._grid_index
        out = np.empty(len(self.samples), dtype=np.float64)
        if on_grid:
            mask = self._pooling_mask(geometry)
            for i in range(len(self.samples)):
                values = self._concept_grid(i, feature.concept_id, geometry.s)[mask]
                values = values[~np.isnan(values)]
                out[i] = float(values.max()) if values.size else 0.0
        else:
            for i, sample in enumerate(self.samples):
                out[i] = deep_detect(self.graph, feature, sample.image, sample.box,
                                     self._sample_caches[i])
        self._learned_scores[feature.id] = out
        return out

    def pooled_parent_scores(self, feature: FeatureNode, weights, bias) -> np.ndarray:
        """Inference-style pooled scores for a spec-backed parent."""
        spec: FeatureSpec = feature.ref
        out = np.empty(len(self.samples), dtype=np.float64)
        for i, sample in enumerate(self.samples):
            out[i] = pooled_spec_score(
                self.graph, spec, weights, bias, feature.geometry, sample.image, sample.box
            )
        return out


def _descriptor(spec, image, box):
    from .features import descriptor_values

    return descriptor_values(spec, image, box)


def pooled_spec_score(graph, spec, weights, bias, geometry, image, reference_box=None) -> float:
    """Max-pooled logistic response of a descriptor model over a search area."""
    ref_box = reference_box if reference_box is not None else image.full_box
    best = None
    for q in pooling_locations(geometry, graph.grid):
        box = snap_region(ref_box, q, geometry.s, image.width, image.height)
        if box is None:
            continue
        score = _leaf_response(spec, weights, bias, image, box)
        if best is None or score > best:
            best = score
    return 0.0 if best is None else best


def _sweep_threshold(scores: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Threshold minimizing the weighted error of (score >= t); ties pick
    the lower threshold. Candidates are the observed scores plus one
    sentinel above the maximum (the all-negative rule)."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    pos_w = np.where(labels[order] == 1, weights[order], 0.0)
    neg_w = np.where(labels[order] == -1, weights[order], 0.0)
    # err(t) for t = s[i]: positives strictly below + negatives at or above
    pos_below = np.concatenate([[0.0], np.cumsum(pos_w)])
    neg_at_or_above = np.concatenate([np.cumsum(neg_w[::-1])[::-1], [0.0]])
    candidates = np.concatenate([s, [s[-1] + 1.0]])
    errors = pos_below + neg_at_or_above
    # skip repeated scores: only the first occurrence is a distinct rule
    best_idx = 0
    best_err = errors[0]
    for i in range(1, candidates.size):
        if i < s.size and s[i] == s[i - 1]:
            continue
        if errors[i] < best_err:
            best_err = errors[i]
            best_idx = i
    return float(candidates[best_idx])


def evaluate_candidate(
    feature_node: FeatureNode,
    samples,
    labels: np.ndarray,
    weights: np.ndarray,
    target_cluster: Cluster,
    evaluator: CandidateEvaluator | None = None,
    graph: ClassifierGraph | None = None,
    epsilon: float = ERROR_CLAMP,
    fit_l2: float = 1e-6,
    fit_tol: float = 1e-6,
    fit_max_iter: int = 50,
) -> CandidateScorer:
    """Fit/score one candidate against a target cluster and the negatives.

    The rule is trained on the cluster's members plus every negative with
    the current weights (renormalized); the recorded weighted error is
    then measured on all samples. Errors are clamped to
    [epsilon, 1 - epsilon] so the vote weight stays finite.
    """
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    if evaluator is None:
        if graph is None:
            raise ValueError("need an evaluator or a graph")
        evaluator = CandidateEvaluator(graph, samples)
    members = np.asarray(target_cluster.members, dtype=np.int64)
    if members.size == 0:
        raise ValueError("target cluster is empty")
    if np.any(labels[members] != 1):
        raise ValueError("target cluster must contain positives only")
    fit_idx = np.concatenate([members, np.nonzero(labels == -1)[0]])
    fit_idx = np.unique(fit_idx)
    if feature_node.concept_id is None:
        X = evaluator.leaf_matrix(feature_node)
        fit_w = weights[fit_idx]
        total = fit_w.sum()
        fit_w = fit_w / total if total > 0 else np.full(fit_idx.size, 1.0 / fit_idx.size)
        fit = fit_logistic(X[fit_idx], labels[fit_idx], fit_w,
                           l2=fit_l2, tol=fit_tol, max_iter=fit_max_iter)
        scores = kernels.sigmoid(X @ fit.weights + fit.bias)
        threshold = 0.5
        kind = "leaf"
        model_w, model_b = fit.weights, fit.bias
    else:
        scores = evaluator.learned_scores(feature_node)
        threshold = _sweep_threshold(scores[fit_idx], labels[fit_idx], weights[fit_idx])
        kind = "learned"
        model_w, model_b = None, 0.0
    predictions = np.where(scores >= threshold, 1, -1)
    error = float(weights[predictions != labels].sum())
    error = min(max(error, epsilon), 1.0 - epsilon)
    return CandidateScorer(
        feature_id=feature_node.id,
        kind=kind,
        scores=np.asarray(scores, dtype=np.float64),
        threshold=threshold,
        error=error,
        weights=model_w,
        bias=float(model_b),
    )


def adaboost_reweight(weights: np.ndarray, predictions: np.ndarray, labels: np.ndarray,
                      alpha: float) -> np.ndarray:
    """Upweight misclassified samples by exp(alpha), then renormalize."""
    weights = np.asarray(weights, dtype=np.float64)
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if not (weights.size == predictions.size == labels.size):
        raise ValueError("weights, predictions and labels must have equal length")
    out = weights * np.exp(alpha * (predictions != labels))
    return out / out.sum()


# -- clusterboost ------------------------------------------------------------


@dataclass
class RoundRecord:
    round_index: int
    cluster_index: int
    feature_id: int
    origin: str  # pool provenance: "initial" | "spawned"
    kind: str  # "leaf" | "learned"
    error: float
    alpha: float
    threshold: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ClusterboostResult:
    concept_id: int
    rounds: list[RoundRecord]
    training_error: float
    ensemble_error: float
    refit_converged: bool


def clusterboost(
    samples,
    labels,
    clusters,
    pool: FeaturePool,
    graph: ClassifierGraph,
    k_rounds: int,
    seed: int = 0,
    epoch: int = 0,
    candidate_budget: int = 2000,
    epsilon: float = ERROR_CLAMP,
    fit_l2: float = 1e-6,
    refit_l2: float = 1e-3,
    refit_tol: float = 1e-8,
    refit_max_iter: int = 200,
    workers: int | None = None,
    evaluator: CandidateEvaluator | None = None,
) -> ClusterboostResult:
    """Boosting rounds against the heaviest positive cluster, then one
    simultaneous logistic refit; adds the resulting composite node.

    Ties break deterministically everywhere: the heaviest cluster by
    lowest cluster index, the best candidate by lowest feature id. Rounds
    end early when a candidate's error hits the clamp or the ensemble's
    training error reaches zero.
    """
    if not clusters:
        raise ValueError("need at least one positive cluster")
    if len(pool) == 0:
        raise ValueError("feature pool is empty")
    labels = np.asarray(labels)
    n = len(samples)
    weights = np.full(n, 1.0 / n)
    if evaluator is None:
        evaluator = CandidateEvaluator(graph, samples, workers)
    rng = np.random.default_rng(derive_seed(seed, epoch, _SEED_SCAN))
    selected: list[CandidateScorer] = []
    selected_ids: set[int] = set()
    records: list[RoundRecord] = []
    vote = np.zeros(n, dtype=np.float64)
    ensemble_error = 1.0
    for k in range(k_rounds):
        sums = np.array([weights[np.asarray(c.members, dtype=np.int64)].sum() for c in clusters])
        cluster_index = int(np.argmax(sums))
        target = clusters[cluster_index]
        available = [fid for fid in pool.entry_ids if fid not in selected_ids]
        if not available:
            raise GraphError("feature pool exhausted of distinct candidates")
        if len(available) > candidate_budget:
            chosen = rng.choice(len(available), size=candidate_budget, replace=False)
            scan = sorted(available[int(i)] for i in chosen)
        else:
            scan = available

        def _score(fid: int) -> CandidateScorer:
            return evaluate_candidate(
                graph.feature(fid), samples, labels, weights, target,
                evaluator=evaluator, epsilon=epsilon, fit_l2=fit_l2,
            )

        scorers = ordered_map(_score, scan, evaluator.workers)
        best = None
        for scorer in scorers:  # scan is id-ascending, so ties keep the lowest id
            if best is None or scorer.error < best.error:
                best = scorer
        if log.isEnabledFor(logging.DEBUG):
            by_kind: dict[str, CandidateScorer] = {}
            for scorer in scorers:
                held = by_kind.get(scorer.kind)
                if held is None or scorer.error < held.error:
                    by_kind[scorer.kind] = scorer
            log.debug(
                "round %d bests: %s", k,
                ", ".join(f"{kind}={s.error:.4f}@{s.feature_id}" for kind, s in sorted(by_kind.items())),
            )
        alpha = float(np.log((1.0 - best.error) / best.error))
        predictions = best.predictions()
        weights = adaboost_reweight(weights, predictions, labels, alpha)
        selected.append(best)
        selected_ids.add(best.feature_id)
        records.append(
            RoundRecord(
                round_index=k,
                cluster_index=cluster_index,
                feature_id=best.feature_id,
                origin=pool.provenance[best.feature_id].origin,
                kind=best.kind,
                error=best.error,
                alpha=alpha,
                threshold=best.threshold,
            )
        )
        vote = vote + alpha * predictions
        ensemble_error = float(np.mean(np.where(vote > 0, 1, -1) != labels))
        log.debug(
            "round %d: cluster %d, feature %d (%s), err=%.4f, alpha=%.4f, ensemble=%.4f",
            k, cluster_index, best.feature_id, best.kind, best.error, alpha, ensemble_error,
        )
        if best.error <= epsilon or ensemble_error == 0.0:
            break

    parents = tuple(s.feature_id for s in selected)
    parent_classifiers = {}
    design = np.empty((n, len(selected)), dtype=np.float64)
    for idx, scorer in enumerate(selected):
        feature = graph.feature(scorer.feature_id)
        if scorer.kind == "leaf":
            parent_classifiers[idx] = (scorer.weights, scorer.bias)
            design[:, idx] = evaluator.pooled_parent_scores(feature, scorer.weights, scorer.bias)
        else:
            design[:, idx] = scorer.scores
    refit = fit_logistic(design, labels, None, l2=refit_l2, tol=refit_tol, max_iter=refit_max_iter)
    concept_id = graph.add_concept_node(
        kind="composite",
        weights=refit.weights,
        bias=refit.bias,
        parents=parents,
        parent_classifiers=parent_classifiers,
        epoch=epoch,
    )
    final_scores = kernels.sigmoid(design @ refit.weights + refit.bias)
    training_error = float(np.mean(np.where(final_scores >= 0.5, 1, -1) != labels))
    return ClusterboostResult(
        concept_id=concept_id,
        rounds=records,
        training_error=training_error,
        ensemble_error=ensemble_error,
        refit_converged=refit.converged,
    )


# -- configuration -----------------------------------------------------------


@dataclass
class SamplerConfig:
    """Copy-sampler catalogs, either a named preset or explicit lists."""

    preset: str | None = "desk"  # "desk" | "paper" | None for explicit catalogs
    n_copies: int = 200
    locations: list | None = None
    scales: list | None = None
    areas: list | None = None

    def build(self, grid: LocationGrid) -> GeometrySampler:
        if self.preset == "desk":
            base = desk_sampler(grid)
        elif self.preset == "points":
            # first-stage candidates: location x scale only. A point search
            # area keeps the per-round descriptor rule identical to the
            # pooled rule at inference; location tolerance is the job of
            # spawned classifier copies.
            desk = desk_sampler(grid)
            base = GeometrySampler(locations=desk.locations, scales=desk.scales,
                                   areas=((0.0, 0.0),))
        elif self.preset == "paper":
            base = paper_scale_sampler()
        elif self.preset is None:
            base = GeometrySampler(
                locations=tuple(tuple(p) for p in self.locations or ()),
                scales=tuple(tuple(s) for s in self.scales or ()),
                areas=tuple(tuple(a) for a in self.areas or ()),
            )
        else:
            raise ValueError(f"unknown sampler preset {self.preset!r}")
        sampler = GeometrySampler(
            locations=base.locations,
            scales=base.scales,
            areas=base.areas,
            n_copies=self.n_copies,
        )
        sampler.validate()
        return sampler

    def to_dict(self) -> dict:
        out = {"preset": self.preset, "n_copies": self.n_copies}
        if self.preset is None:
            out.update(locations=self.locations, scales=self.scales, areas=self.areas)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerConfig":
        return cls(
            preset=data.get("preset", "desk"),
            n_copies=int(data.get("n_copies", 200)),
            locations=data.get("locations"),
            scales=data.get("scales"),
            areas=data.get("areas"),
        )


def _round_from_dict(data: dict) -> RoundSpec:
    return RoundSpec(
        algorithm=data.get("algorithm", "kmeans"),
        space=data.get("space", "gradient_hist"),
        k=int(data.get("k", 2)),
        cells=int(data.get("cells", 2)),
        bins=int(data.get("bins", 9)),
        linkage=data.get("linkage", "single"),
        distance=data.get("distance", "euclidean"),
    )


def _round_to_dict(spec: RoundSpec) -> dict:
    return {
        "algorithm": spec.algorithm,
        "space": spec.space,
        "k": spec.k,
        "cells": spec.cells,
        "bins": spec.bins,
        "linkage": spec.linkage,
        "distance": spec.distance,
    }


def default_cluster_rounds() -> list[RoundSpec]:
    """Gradient and hue descriptors of the full sample box, Euclidean."""
    return [
        RoundSpec(algorithm="kmeans", space="gradient_hist", k=2, cells=2, bins=9),
        RoundSpec(algorithm="kmeans", space="hue_hist", k=2, cells=2, bins=12),
    ]


@dataclass
class EpochConfig:
    """One epoch of graph growth: who to learn and how hard to search."""

    positive_class: str
    # classes used as negatives next to the mined background crops;
    # None means every other annotated class. Composite epochs usually
    # exclude their own parts: a zoomed-in part crop is not a counter-
    # example for "part present at a location inside the whole".
    negative_classes: list[str] | None = None
    k_rounds: int = 3
    n_copies: int = 200
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    rounds: list[RoundSpec] = field(default_factory=default_cluster_rounds)
    min_dunn: float = 0.0
    min_purity: float = 0.8
    cluster_subset: object = "all"  # "all" or list of kept-cluster indices
    candidate_budget: int = 2000
    epsilon: float = ERROR_CLAMP
    fit_l2: float = 1e-6
    refit_l2: float = 1e-3
    refit_tol: float = 1e-8
    refit_max_iter: int = 200
    add_evolved_round: bool | None = None  # None: automatic from epoch 1 on
    evolved_k: int = 2

    def to_dict(self) -> dict:
        return {
            "positive_class": self.positive_class,
            "negative_classes": self.negative_classes,
            "k_rounds": self.k_rounds,
            "n_copies": self.n_copies,
            "sampler": self.sampler.to_dict(),
            "rounds": [_round_to_dict(r) for r in self.rounds],
            "min_dunn": self.min_dunn,
            "min_purity": self.min_purity,
            "cluster_subset": self.cluster_subset,
            "candidate_budget": self.candidate_budget,
            "epsilon": self.epsilon,
            "fit_l2": self.fit_l2,
            "refit_l2": self.refit_l2,
            "refit_tol": self.refit_tol,
            "refit_max_iter": self.refit_max_iter,
            "add_evolved_round": self.add_evolved_round,
            "evolved_k": self.evolved_k,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpochConfig":
        out = cls(positive_class=data["positive_class"])
        out.negative_classes = data.get("negative_classes", out.negative_classes)
        out.k_rounds = int(data.get("k_rounds", out.k_rounds))
        out.n_copies = int(data.get("n_copies", out.n_copies))
        if "sampler" in data:
            out.sampler = SamplerConfig.from_dict(data["sampler"])
        if "rounds" in data:
            out.rounds = [_round_from_dict(r) for r in data["rounds"]]
        out.min_dunn = float(data.get("min_dunn", out.min_dunn))
        out.min_purity = float(data.get("min_purity", out.min_purity))
        out.cluster_subset = data.get("cluster_subset", out.cluster_subset)
        out.candidate_budget = int(data.get("candidate_budget", out.candidate_budget))
        out.epsilon = float(data.get("epsilon", out.epsilon))
        out.fit_l2 = float(data.get("fit_l2", out.fit_l2))
        out.refit_l2 = float(data.get("refit_l2", out.refit_l2))
        out.refit_tol = float(data.get("refit_tol", out.refit_tol))
        out.refit_max_iter = int(data.get("refit_max_iter", out.refit_max_iter))
        out.add_evolved_round = data.get("add_evolved_round", out.add_evolved_round)
        out.evolved_k = int(data.get("evolved_k", out.evolved_k))
        return out


def default_initial_specs() -> list[FeatureSpec]:
    # single-cell histograms are orientation/color bags: coarse but shift-
    # tolerant; the 2x2 variants add layout at the cost of alignment
    return [
        FeatureSpec("haar", haar_kind="two-rect-horiz"),
        FeatureSpec("haar", haar_kind="two-rect-vert"),
        FeatureSpec("haar", haar_kind="three-rect"),
        FeatureSpec("haar", haar_kind="four-rect"),
        FeatureSpec("gradient_hist", cells=1, bins=9),
        FeatureSpec("gradient_hist", cells=2, bins=9),
        FeatureSpec("hue_hist", cells=1, bins=12),
        FeatureSpec("hue_hist", cells=2, bins=12),
    ]


def _spec_to_dict(spec: FeatureSpec) -> dict:
    out = {"kind": spec.kind}
    if spec.kind == "haar":
        out["haar_kind"] = spec.haar_kind
    else:
        out.update(cells=spec.cells, bins=spec.bins)
    return out


def _spec_from_dict(data: dict) -> FeatureSpec:
    return FeatureSpec(
        kind=data["kind"],
        haar_kind=data.get("haar_kind"),
        cells=int(data.get("cells", 0)),
        bins=int(data.get("bins", 0)),
    )


@dataclass
class TrainConfig:
    """Whole-run configuration; one JSON document mirrors these fields."""

    seed: int = 0
    grid: tuple[int, int] = (5, 5)
    max_parents: int = 8
    margin: float = 0.5
    negatives_total: int = 60
    split: str | None = "train"
    classes: list[str] | None = None
    positive_offsets: list = field(default_factory=lambda: [[0, 0]])
    initial_specs: list[FeatureSpec] = field(default_factory=default_initial_specs)
    initial_sampler: SamplerConfig = field(
        default_factory=lambda: SamplerConfig(preset="points", n_copies=120)
    )
    epochs: list[EpochConfig] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "grid": list(self.grid),
            "max_parents": self.max_parents,
            "margin": self.margin,
            "negatives_total": self.negatives_total,
            "split": self.split,
            "classes": self.classes,
            "positive_offsets": [list(o) for o in self.positive_offsets],
            "initial_specs": [_spec_to_dict(s) for s in self.initial_specs],
            "initial_sampler": self.initial_sampler.to_dict(),
            "epochs": [e.to_dict() for e in self.epochs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        out = cls()
        out.seed = int(data.get("seed", 0))
        out.grid = tuple(data.get("grid", (5, 5)))
        out.max_parents = int(data.get("max_parents", 8))
        out.margin = float(data.get("margin", out.margin))
        out.negatives_total = int(data.get("negatives_total", out.negatives_total))
        out.split = data.get("split", out.split)
        out.classes = data.get("classes", out.classes)
        if "positive_offsets" in data:
            out.positive_offsets = [list(o) for o in data["positive_offsets"]]
        if "initial_specs" in data:
            out.initial_specs = [_spec_from_dict(s) for s in data["initial_specs"]]
        if "initial_sampler" in data:
            out.initial_sampler = SamplerConfig.from_dict(data["initial_sampler"])
        out.epochs = [EpochConfig.from_dict(e) for e in data.get("epochs", [])]
        return out


# -- epochs ------------------------------------------------------------------


@dataclass
class TrainState:
    graph: ClassifierGraph
    pool: FeaturePool
    t: int = 0


@dataclass
class EpochReport:
    epoch: int
    positive_class: str
    concept_id: int
    n_samples: int
    n_positive: int
    training_error: float
    ensemble_error: float
    pool_before: int
    pool_after: int
    duplicate_hits: int
    trace: list[RoundRecord]
    clusters: list[dict]
    rounds_meta: list[dict]
    evolved_round_present: bool
    seconds: float

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["trace"] = [r.to_dict() for r in self.trace]
        return out


@dataclass
class TrainReport:
    epochs: list[EpochReport] = field(default_factory=list)

    def summary_lines(self) -> list[str]:
        lines = []
        for e in self.epochs:
            lines.append(
                f"epoch {e.epoch}: class={e.positive_class} concept={e.concept_id} "
                f"rounds={len(e.trace)} train_err={e.training_error:.4f} "
                f"pool {e.pool_before}->{e.pool_after} ({e.duplicate_hits} dup) "
                f"clusters={len(e.clusters)} evolved={'y' if e.evolved_round_present else 'n'} "
                f"[{e.seconds:.1f}s]"
            )
        return lines

    def to_csv(self) -> str:
        header = (
            "epoch,positive_class,concept_id,n_samples,n_positive,training_error,"
            "ensemble_error,pool_before,pool_after,duplicate_hits,n_clusters,"
            "evolved_round_present,seconds"
        )
        rows = [header]
        for e in self.epochs:
            rows.append(
                f"{e.epoch},{e.positive_class},{e.concept_id},{e.n_samples},{e.n_positive},"
                f"{e.training_error:.6f},{e.ensemble_error:.6f},{e.pool_before},{e.pool_after},"
                f"{e.duplicate_hits},{len(e.clusters)},{int(e.evolved_round_present)},"
                f"{e.seconds:.3f}"
            )
        return "\n".join(rows) + "\n"

    def trace_jsonl(self) -> str:
        import json

        lines = []
        for e in self.epochs:
            for r in e.trace:
                row = r.to_dict()
                row["epoch"] = e.epoch
                row["positive_class"] = e.positive_class
                lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + "\n"


def epoch_labels(samples, positive_class: str) -> np.ndarray:
    """+1 for samples of the positive class, -1 for everything else."""
    return np.asarray(
        [1 if s.class_name == positive_class else -1 for s in samples], dtype=np.int64
    )


def select_epoch_samples(samples, config: EpochConfig) -> list:
    """The epoch's sample set: the positive class, mined background crops,
    and the configured negative classes."""
    if config.negative_classes is None:
        return list(samples)
    allowed = {config.positive_class, *config.negative_classes}
    return [s for s in samples if s.class_name in allowed or s.class_name is None]


def run_epoch(state: TrainState, config: EpochConfig, samples, seed: int | None = None,
              workers: int | None = None) -> tuple[TrainState, EpochReport]:
    """One epoch: cluster, boost, add the node, spawn copies.

    Transactional: works on a copy of the state and returns it; the input
    state is untouched when anything fails.
    """
    started = time.perf_counter()
    working = TrainState(graph=copy.deepcopy(state.graph), pool=copy.deepcopy(state.pool),
                         t=state.t)
    t = working.t
    seed = seed if seed is not None else 0
    samples = select_epoch_samples(samples, config)
    labels_all = epoch_labels(samples, config.positive_class)
    if not np.any(labels_all == 1):
        raise ValueError(f"no samples labeled {config.positive_class!r}")
    if not np.any(labels_all == -1):
        raise ValueError("epoch needs at least one negative sample")

    rounds = list(config.rounds)
    add_evolved = config.add_evolved_round
    if add_evolved is None:
        add_evolved = t >= 1 and len(working.graph.concepts) > 0
    if add_evolved:
        rounds.append(
            RoundSpec(algorithm="agglomerative", space="evolved", k=config.evolved_k,
                      linkage="single", distance="jaccard")
        )
    quality = ClusterQuality(min_dunn=config.min_dunn, min_purity=config.min_purity)
    clustering = cluster_rounds(
        samples, labels_all, rounds, quality, graph=working.graph,
        seed=derive_seed(seed, t, _SEED_CLUSTER),
    )
    clusters = clustering.clusters
    epoch_samples = list(samples)
    epoch_label_arr = labels_all
    if config.cluster_subset != "all":
        chosen = [clusters[int(i)] for i in config.cluster_subset]
        keep_pos = sorted({m for c in chosen for m in c.members})
        keep = keep_pos + [i for i in range(len(samples)) if labels_all[i] == -1]
        remap = {old: new for new, old in enumerate(keep)}
        epoch_samples = [samples[i] for i in keep]
        epoch_label_arr = labels_all[keep]
        clusters = [
            Cluster(
                members=tuple(remap[m] for m in c.members),
                space=c.space, round_id=c.round_id, dunn=c.dunn, purity=c.purity,
            )
            for c in chosen
        ]

    pool_before = len(working.pool)
    result = clusterboost(
        epoch_samples, epoch_label_arr, clusters, working.pool, working.graph,
        k_rounds=config.k_rounds, seed=seed, epoch=t,
        candidate_budget=config.candidate_budget, epsilon=config.epsilon,
        fit_l2=config.fit_l2, refit_l2=config.refit_l2, refit_tol=config.refit_tol,
        refit_max_iter=config.refit_max_iter, workers=workers,
    )
    working.graph.register_class(config.positive_class, result.concept_id)
    sampler = config.sampler.build(working.graph.grid)
    sampler = GeometrySampler(locations=sampler.locations, scales=sampler.scales,
                              areas=sampler.areas, n_copies=config.n_copies)
    spawn_feature_nodes(
        working.graph, working.pool, result.concept_id, sampler,
        derive_seed(seed, t, _SEED_SPAWN), epoch=t,
    )
    pool_after = len(working.pool)
    working.t = t + 1
    report = EpochReport(
        epoch=t,
        positive_class=config.positive_class,
        concept_id=result.concept_id,
        n_samples=len(epoch_samples),
        n_positive=int(np.sum(epoch_label_arr == 1)),
        training_error=result.training_error,
        ensemble_error=result.ensemble_error,
        pool_before=pool_before,
        pool_after=pool_after,
        duplicate_hits=config.n_copies - (pool_after - pool_before),
        trace=result.rounds,
        clusters=[
            {"round_id": c.round_id, "space": c.space, "size": len(c.members),
             "dunn": c.dunn, "purity": c.purity}
            for c in clusters
        ],
        rounds_meta=clustering.rounds,
        evolved_round_present=clustering.has_space("evolved"),
        seconds=time.perf_counter() - started,
    )
    return working, report


@dataclass
class TrainResult:
    state: TrainState
    report: TrainReport
    config: TrainConfig


def initial_state(config: TrainConfig) -> TrainState:
    """Fresh graph plus the first-stage candidate pool."""
    graph = ClassifierGraph(grid=LocationGrid(*config.grid), max_parents=config.max_parents)
    pool = FeaturePool()
    sampler = config.initial_sampler.build(graph.grid)
    seed_initial_pool(graph, pool, config.initial_specs, sampler,
                      derive_seed(config.seed, 0, _SEED_INITIAL))
    return TrainState(graph=graph, pool=pool, t=0)


def train(samples, config: TrainConfig, workers: int | None = None) -> TrainResult:
    """Run the epoch schedule over a loaded sample set."""
    state = initial_state(config)
    report = TrainReport()
    for epoch_config in config.epochs:
        state, epoch_report = run_epoch(state, epoch_config, samples, seed=config.seed,
                                        workers=workers)
        for line in TrainReport(epochs=[epoch_report]).summary_lines():
            log.info("%s", line)
        report.epochs.append(epoch_report)
    return TrainResult(state=state, report=report, config=config)


def concept_scores(graph: ClassifierGraph, concept_id: int, samples) -> np.ndarray:
    """Detection scores of one concept on each sample's reference box."""
    from .engine import score_concept

    out = np.empty(len(samples), dtype=np.float64)
    for i, sample in enumerate(samples):
        out[i] = score_concept(graph, concept_id, sample.image, sample.box)
    return out

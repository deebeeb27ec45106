"""Recursive deep detection with max pooling, memoized or naive.

Evaluating a feature node means scanning its search area: at every
quantized location the referenced classifier is applied to the region the
feature covers there, and the maximum response is returned. Composite
classifiers recurse into their parents, each repositioned relative to the
pooled location, down to the first-stage descriptors.

Regions are snapped to integer pixel boxes at every level, so a
classifier's output is a pure function of (concept, pixel box) given the
image. That makes memoization exact: the cache key is the concept id plus
the quantized location and size, and the memoized evaluator returns
bit-identical scores to the naive recursion while computing every key at
most once. Pooling locations whose region leaves the image are skipped; a
feature whose locations are all skipped scores 0 (reported as a
degenerate-geometry event).

The ``workers`` option of ``response_map`` parallelizes independent boxes
of one bottom-up level; scores do not depend on the worker count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import ceil, floor

import numpy as np

from . import kernels
from .features import FeatureSpec, descriptor_values
from .graph import ClassifierGraph, ConceptNode, FeatureNode, Geometry, GraphError
from .images import Image
from .parallel import ordered_map, resolve_workers

__all__ = [
    "DetectionCache",
    "EvalCounters",
    "ResponseGrid",
    "deep_detect",
    "naive_deep_detect",
    "response_map",
    "score_concept",
    "pooling_locations",
    "snap_region",
]

log = logging.getLogger(__name__)

Box = tuple[int, int, int, int]

# Cache keys are (concept_id, parent_slot, x0, y0, x1, y1). parent_slot is
# NO_SLOT for real concept nodes; for classifiers embedded in a composite
# (spec-backed parents) it is the parent index, scoping the key to that
# composite's own fitted weights.
NO_SLOT = -1


class DetectionCache:
    """Memo table for one detection call tree, with instrumentation."""

    __slots__ = ("scores", "eval_counts", "hits", "misses", "leaf_evaluations", "degenerate_events")

    def __init__(self):
        self.scores: dict[tuple, float] = {}
        self.eval_counts: dict[tuple, int] = {}
        self.hits = 0
        self.misses = 0
        self.leaf_evaluations = 0
        self.degenerate_events = 0

    def max_evaluations_per_key(self) -> int:
        return max(self.eval_counts.values(), default=0)


@dataclass
class EvalCounters:
    """Work counters for the uncached oracle recursion."""

    leaf_evaluations: int = 0
    degenerate_events: int = 0


@dataclass
class ResponseGrid:
    """Scores of one concept over the global location grid at one scale."""

    concept_id: int
    scale: float
    nx: int
    ny: int
    scores: np.ndarray
    boxes: list[Box | None] = field(default_factory=list)


def snap_region(ref_box: Box, location, scale, width: int, height: int) -> Box | None:
    """Pixel box of a feature region centered at a normalized location.

    Boxes get at least 2x2 px (recursion on shrinking scales bottoms out
    there); None means the box does not fit inside the image.
    """
    x0, y0, x1, y1 = ref_box
    bw = x1 - x0
    bh = y1 - y0
    cx = x0 + location[0] * bw
    cy = y0 + location[1] * bh
    rw = scale[0] * bw
    rh = scale[1] * bh
    left = floor(cx - 0.5 * rw)
    right = ceil(cx + 0.5 * rw)
    top = floor(cy - 0.5 * rh)
    bottom = ceil(cy + 0.5 * rh)
    if right - left < 2:
        left = floor(cx - 1.0)
        right = left + 2
    if bottom - top < 2:
        top = floor(cy - 1.0)
        bottom = top + 2
    if left < 0 or top < 0 or right > width or bottom > height:
        return None
    return (left, top, right, bottom)


def pooling_locations(geometry: Geometry, grid) -> list[tuple[float, float]]:
    """Quantized search area: the center plus every grid point it covers.

    The center comes first, then covered grid points in row-major order;
    the order is fixed so evaluation work is reproducible.
    """
    px, py = geometry.p
    ax, ay = geometry.a
    out = [(px, py)]
    if ax > 0.0 or ay > 0.0:
        for gx, gy in grid.points:
            if (gx, gy) != (px, py) and abs(gx - px) <= ax and abs(gy - py) <= ay:
                out.append((gx, gy))
    return out


def _check_reference(image: Image, reference_box: Box | None) -> Box:
    if reference_box is None:
        return image.full_box
    x0, y0, x1, y1 = (int(v) for v in reference_box)
    if not (0 <= x0 < x1 <= image.width and 0 <= y0 < y1 <= image.height):
        raise GraphError(f"reference box {reference_box} outside {image.width}x{image.height} image")
    return (x0, y0, x1, y1)


def _leaf_response(spec: FeatureSpec, weights, bias: float, image: Image, box: Box) -> float:
    return kernels.logit_score(weights, bias, descriptor_values(spec, image, box))


# -- memoized evaluation --------------------------------------------------


def _cached_concept(graph, cid: int, image, box: Box, cache: DetectionCache) -> float:
    key = (cid, NO_SLOT, *box)
    hit = cache.scores.get(key)
    if hit is not None:
        cache.hits += 1
        return hit
    cache.misses += 1
    concept = graph.concepts[cid]
    if concept.kind == "leaf":
        cache.leaf_evaluations += 1
        score = _leaf_response(concept.spec, concept.weights, concept.bias, image, box)
    else:
        x = np.empty(len(concept.parents), dtype=np.float64)
        for idx, fid in enumerate(concept.parents):
            x[idx] = _cached_feature(graph, concept, idx, graph.features[fid], image, box, cache)
        score = kernels.logit_score(concept.weights, concept.bias, x)
    cache.eval_counts[key] = cache.eval_counts.get(key, 0) + 1
    cache.scores[key] = score
    return score


def _cached_embedded(graph, owner: ConceptNode, slot: int, spec, image, box: Box, cache) -> float:
    key = (owner.id, slot, *box)
    hit = cache.scores.get(key)
    if hit is not None:
        cache.hits += 1
        return hit
    cache.misses += 1
    weights, bias = owner.parent_classifiers[slot]
    cache.leaf_evaluations += 1
    score = _leaf_response(spec, weights, bias, image, box)
    cache.eval_counts[key] = cache.eval_counts.get(key, 0) + 1
    cache.scores[key] = score
    return score


def _cached_feature(graph, owner, slot, feature: FeatureNode, image, ref_box: Box, cache) -> float:
    best = None
    cid = feature.concept_id
    for q in pooling_locations(feature.geometry, graph.grid):
        box = snap_region(ref_box, q, feature.geometry.s, image.width, image.height)
        if box is None:
            continue
        if cid is not None:
            score = _cached_concept(graph, cid, image, box, cache)
        else:
            score = _cached_embedded(graph, owner, slot, feature.ref, image, box, cache)
        if best is None or score > best:
            best = score
    if best is None:
        cache.degenerate_events += 1
        log.debug("feature %d: every pooling location left the image", feature.id)
        return 0.0
    return best


def deep_detect(
    graph: ClassifierGraph,
    feature_node: FeatureNode,
    image: Image,
    reference_box: Box | None = None,
    cache: DetectionCache | None = None,
) -> float:
    """Max-pooled recursive detection score of a feature node in [0, 1].

    Memoized: within the call tree every (classifier, region) pair is
    evaluated at most once, shared sub-classifiers and overlapping search
    areas included.
    """
    if feature_node.concept_id is None:
        raise GraphError("deep_detect needs a concept-backed feature node")
    ref_box = _check_reference(image, reference_box)
    if cache is None:
        cache = DetectionCache()
    return _cached_feature(graph, None, NO_SLOT, feature_node, image, ref_box, cache)


# -- literal recursion (test oracle) ---------------------------------------


def _naive_concept(graph, cid: int, image, box: Box, counters: EvalCounters) -> float:
    concept = graph.concepts[cid]
    if concept.kind == "leaf":
        counters.leaf_evaluations += 1
        return _leaf_response(concept.spec, concept.weights, concept.bias, image, box)
    x = np.empty(len(concept.parents), dtype=np.float64)
    for idx, fid in enumerate(concept.parents):
        x[idx] = _naive_feature(graph, concept, idx, graph.features[fid], image, box, counters)
    return kernels.logit_score(concept.weights, concept.bias, x)


def _naive_feature(graph, owner, slot, feature: FeatureNode, image, ref_box: Box, counters) -> float:
    best = None
    cid = feature.concept_id
    for q in pooling_locations(feature.geometry, graph.grid):
        box = snap_region(ref_box, q, feature.geometry.s, image.width, image.height)
        if box is None:
            continue
        if cid is not None:
            score = _naive_concept(graph, cid, image, box, counters)
        else:
            weights, bias = owner.parent_classifiers[slot]
            counters.leaf_evaluations += 1
            score = _leaf_response(feature.ref, weights, bias, image, box)
        if best is None or score > best:
            best = score
    if best is None:
        counters.degenerate_events += 1
        return 0.0
    return best


def naive_deep_detect(
    graph: ClassifierGraph,
    feature_node: FeatureNode,
    image: Image,
    reference_box: Box | None = None,
    counters: EvalCounters | None = None,
) -> float:
    """Uncached literal recursion; same contract as deep_detect."""
    if feature_node.concept_id is None:
        raise GraphError("naive_deep_detect needs a concept-backed feature node")
    ref_box = _check_reference(image, reference_box)
    if counters is None:
        counters = EvalCounters()
    return _naive_feature(graph, None, NO_SLOT, feature_node, image, ref_box, counters)


def score_concept(
    graph: ClassifierGraph,
    concept_id: int,
    image: Image,
    reference_box: Box | None = None,
    cache: DetectionCache | None = None,
) -> float:
    """Evaluate a concept node directly on a reference box (no pooling;
    a concept covers its whole box)."""
    ref_box = _check_reference(image, reference_box)
    if cache is None:
        cache = DetectionCache()
    return _cached_concept(graph, int(concept_id), image, ref_box, cache)


# -- bottom-up response maps -----------------------------------------------


def _plan_keys(graph, cid: int, boxes, image) -> set[tuple]:
    """Every cache key the given concept evaluations will touch."""
    needed: set[tuple] = set()
    stack = [(cid, NO_SLOT, *box) for box in boxes]
    while stack:
        key = stack.pop()
        if key in needed:
            continue
        needed.add(key)
        concept_id, slot = key[0], key[1]
        box = key[2:]
        if slot != NO_SLOT:
            continue  # embedded classifiers have no dependencies
        concept = graph.concepts[concept_id]
        if concept.kind == "leaf":
            continue
        for idx, fid in enumerate(concept.parents):
            feature = graph.features[fid]
            child_cid = feature.concept_id
            for q in pooling_locations(feature.geometry, graph.grid):
                child_box = snap_region(box, q, feature.geometry.s, image.width, image.height)
                if child_box is None:
                    continue
                if child_cid is not None:
                    stack.append((child_cid, NO_SLOT, *child_box))
                else:
                    stack.append((concept_id, idx, *child_box))
    return needed


def _evaluate_key(graph, key, image, cache) -> None:
    cid, slot = key[0], key[1]
    box = key[2:]
    if slot == NO_SLOT:
        _cached_concept(graph, cid, image, box, cache)
    else:
        owner = graph.concepts[cid]
        spec = graph.features[owner.parents[slot]].ref
        _cached_embedded(graph, owner, slot, spec, image, box, cache)


def response_map(
    graph: ClassifierGraph,
    concept_id: int,
    image: Image,
    reference_box: Box | None = None,
    scale: float = 1.0,
    cache: DetectionCache | None = None,
    workers: int | None = None,
) -> ResponseGrid:
    """Evaluate a concept at every global-grid location at one scale.

    Runs bottom-up: all needed (classifier, region) pairs are planned
    first, then evaluated level by level in topological (id) order, each
    level's regions independently. Grid locations whose region leaves the
    image score 0.
    """
    graph.concept(concept_id)
    ref_box = _check_reference(image, reference_box)
    if cache is None:
        cache = DetectionCache()
    grid = graph.grid
    boxes: list[Box | None] = [
        snap_region(ref_box, point, (scale, scale), image.width, image.height)
        for point in grid.points
    ]
    valid = [box for box in boxes if box is not None]
    needed = _plan_keys(graph, int(concept_id), valid, image)
    # embedded-classifier keys (slot >= 0) must run before their owner's own
    # keys; concept-backed dependencies always have smaller ids
    levels: dict[tuple[int, int], list[tuple]] = {}
    for key in needed:
        level = (key[0], 0 if key[1] != NO_SLOT else 1)
        levels.setdefault(level, []).append(key)
    workers = resolve_workers(workers)
    for level in sorted(levels):
        keys = sorted(levels[level])
        ordered_map(lambda key: _evaluate_key(graph, key, image, cache), keys, workers)
    scores = np.zeros(len(boxes), dtype=np.float64)
    for i, box in enumerate(boxes):
        if box is None:
            cache.degenerate_events += 1
            continue
        scores[i] = cache.scores[(int(concept_id), NO_SLOT, *box)]
    return ResponseGrid(
        concept_id=int(concept_id),
        scale=float(scale),
        nx=grid.nx,
        ny=grid.ny,
        scores=scores.reshape(grid.ny, grid.nx),
        boxes=boxes,
    )

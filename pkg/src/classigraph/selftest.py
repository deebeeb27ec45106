"""Built-in verification suite and the random fixtures it runs on.

Every check returns (name, passed, detail); the CLI prints one line per
check and exits nonzero on any failure. The same generators back the
pytest acceptance suite, so the shipped binary can re-verify the core
guarantees in the field: memoized detection matches the literal
recursion, every cached key is evaluated once, the boosting identities
hold, the logistic gradient matches finite differences, clustering
behaves, and persistence round-trips to the last bit.
"""

from __future__ import annotations

import math

import numpy as np

from .boosting import adaboost_reweight, fit_logistic, logistic_objective
from .clustering import dunn_index, jaccard_similarity, kmeans, purity
from .engine import DetectionCache, EvalCounters, deep_detect, naive_deep_detect
from .features import FeatureSpec
from .graph import ClassifierGraph, Geometry, LocationGrid
from .images import Image
from .model_io import load_model, save_model

__all__ = ["random_image", "random_graph", "shared_subgraph_fixture", "run_selftest", "CHECKS"]


def random_image(rng: np.random.Generator, max_size: int = 32, rgb: bool = True) -> Image:
    """Random test image, 8 px to ``max_size`` px per side."""
    w = int(rng.integers(8, max_size + 1))
    h = int(rng.integers(8, max_size + 1))
    if rgb:
        return Image.from_rgb(rng.uniform(0.0, 1.0, size=(h, w, 3)))
    return Image(rng.uniform(0.0, 1.0, size=(h, w)))


def _random_spec(rng: np.random.Generator) -> FeatureSpec:
    roll = int(rng.integers(3))
    if roll == 0:
        kinds = ("two-rect-horiz", "two-rect-vert", "three-rect", "four-rect")
        return FeatureSpec("haar", haar_kind=kinds[int(rng.integers(4))])
    if roll == 1:
        return FeatureSpec("gradient_hist", cells=int(rng.integers(1, 3)), bins=int(rng.integers(4, 10)))
    return FeatureSpec("hue_hist", cells=int(rng.integers(1, 3)), bins=int(rng.integers(6, 13)))


def _random_geometry(rng: np.random.Generator) -> Geometry:
    areas = (0.0, 0.0, 0.15, 0.3, 0.55)
    return Geometry(
        p=(float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9))),
        s=(float(rng.uniform(0.3, 1.0)), float(rng.uniform(0.3, 1.0))),
        a=(float(areas[int(rng.integers(len(areas)))]), float(areas[int(rng.integers(len(areas)))])),
    )


def random_graph(rng: np.random.Generator, max_concepts: int = 6):
    """Random small classifier graph plus a top-level feature to detect.

    Mixes leaf concepts, composites over concept-backed features, and the
    occasional spec-backed parent with an embedded classifier.
    """
    graph = ClassifierGraph(grid=LocationGrid(5, 5))
    n_concepts = int(rng.integers(1, max_concepts + 1))
    n_leaves = max(1, int(rng.integers(1, max(2, n_concepts))))
    feature_ids: list[int] = []
    for _ in range(min(n_leaves, n_concepts)):
        spec = _random_spec(rng)
        cid = graph.add_concept_node(
            kind="leaf",
            spec=spec,
            weights=rng.normal(0.0, 2.0, size=spec.length),
            bias=float(rng.normal(0.0, 0.5)),
        )
        for _ in range(int(rng.integers(1, 3))):
            feature_ids.append(graph.add_feature_node(cid, _random_geometry(rng)))
    while len(graph.concepts) < n_concepts:
        k = int(rng.integers(1, min(3, len(feature_ids)) + 1))
        picked = [feature_ids[int(i)] for i in rng.choice(len(feature_ids), size=k, replace=False)]
        parent_classifiers = {}
        if rng.uniform() < 0.3:
            spec = _random_spec(rng)
            picked.append(graph.add_feature_node(spec, _random_geometry(rng)))
            parent_classifiers[len(picked) - 1] = (
                rng.normal(0.0, 2.0, size=spec.length),
                float(rng.normal(0.0, 0.5)),
            )
        cid = graph.add_concept_node(
            kind="composite",
            weights=rng.normal(0.0, 1.5, size=len(picked)),
            bias=float(rng.normal(0.0, 0.5)),
            parents=picked,
            parent_classifiers=parent_classifiers,
        )
        for _ in range(int(rng.integers(1, 3))):
            feature_ids.append(graph.add_feature_node(cid, _random_geometry(rng)))
    top = graph.feature(
        graph.add_feature_node(len(graph.concepts) - 1, _random_geometry(rng))
    )
    return graph, top


def shared_subgraph_fixture():
    """One leaf shared (with identical geometry) by two mid-level nodes
    under one top node: the memoized evaluator must reuse, the naive
    recursion must repeat."""
    graph = ClassifierGraph(grid=LocationGrid(5, 5))
    spec = FeatureSpec("gradient_hist", cells=2, bins=9)
    rng = np.random.default_rng(99)
    leaf = graph.add_concept_node(
        kind="leaf", spec=spec, weights=rng.normal(size=spec.length), bias=0.1
    )
    shared_geometry = Geometry(p=(0.5, 0.5), s=(0.5, 0.5), a=(0.3, 0.3))
    f_shared = graph.add_feature_node(leaf, shared_geometry)
    mid_a = graph.add_concept_node(kind="composite", weights=[1.4], bias=-0.2, parents=[f_shared])
    mid_b = graph.add_concept_node(kind="composite", weights=[-0.9], bias=0.4, parents=[f_shared])
    f_a = graph.add_feature_node(mid_a, Geometry(p=(0.5, 0.5), s=(1.0, 1.0)))
    f_b = graph.add_feature_node(mid_b, Geometry(p=(0.5, 0.5), s=(1.0, 1.0)))
    top = graph.add_concept_node(
        kind="composite", weights=[0.8, 0.7], bias=0.0, parents=[f_a, f_b]
    )
    top_feature = graph.feature(graph.add_feature_node(top, Geometry(p=(0.5, 0.5), s=(1.0, 1.0))))
    return graph, top_feature


# -- checks -------------------------------------------------------------------


def check_oracle_equivalence(cases: int = 200, seed: int = 2024, tol: float = 1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        graph, top = random_graph(rng)
        image = random_image(rng)
        cache = DetectionCache()
        fast = deep_detect(graph, top, image, cache=cache)
        slow = naive_deep_detect(graph, top, image)
        worst = max(worst, abs(fast - slow))
        if cache.max_evaluations_per_key() > 1:
            return False, "a cache key was evaluated more than once"
    return worst <= tol, f"max |memoized - naive| = {worst:.3e} over {cases} cases"


def check_single_call_savings():
    graph, top = shared_subgraph_fixture()
    rng = np.random.default_rng(5)
    image = random_image(rng, max_size=24)
    cache = DetectionCache()
    counters = EvalCounters()
    fast = deep_detect(graph, top, image, cache=cache)
    slow = naive_deep_detect(graph, top, image, counters=counters)
    if fast != slow:
        return False, f"scores differ: {fast} vs {slow}"
    if cache.max_evaluations_per_key() > 1:
        return False, "a cache key was evaluated more than once"
    saved = counters.leaf_evaluations >= 2 * cache.leaf_evaluations > 0
    return saved, (
        f"leaf evaluations: naive {counters.leaf_evaluations}, memoized {cache.leaf_evaluations}"
    )


def check_boosting_identities(instances: int = 100, seed: int = 7):
    if abs(math.log((1 - 0.5) / 0.5)) != 0.0:
        return False, "alpha(0.5) != 0"
    if abs(math.log((1 - 0.25) / 0.25) - math.log(3.0)) > 1e-12:
        return False, "alpha(0.25) != ln 3"
    rng = np.random.default_rng(seed)
    worst_err = 0.0
    worst_sum = 0.0
    for _ in range(instances):
        n = int(rng.integers(4, 60))
        labels = np.where(rng.uniform(size=n) < 0.5, 1, -1)
        predictions = np.where(rng.uniform(size=n) < 0.5, 1, -1)
        if np.all(predictions == labels):
            predictions[0] = -predictions[0]
        if np.all(predictions != labels):
            predictions[0] = -predictions[0]
        weights = rng.uniform(0.05, 1.0, size=n)
        weights /= weights.sum()
        err = float(weights[predictions != labels].sum())
        alpha = math.log((1 - err) / err)
        new_weights = adaboost_reweight(weights, predictions, labels, alpha)
        worst_sum = max(worst_sum, abs(new_weights.sum() - 1.0))
        new_err = float(new_weights[predictions != labels].sum())
        worst_err = max(worst_err, abs(new_err - 0.5))
    ok = worst_err <= 1e-9 and worst_sum <= 1e-12
    return ok, f"post-reweight error off by {worst_err:.2e}, weight sum off by {worst_sum:.2e}"


def check_logistic_gradient(instances: int = 50, seed: int = 11, h: float = 1e-5, tol: float = 1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(6, 40))
        d = int(rng.integers(1, 8))
        X = rng.normal(size=(n, d))
        y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
        y[0], y[1] = 1.0, -1.0
        w = rng.uniform(0.05, 1.0, size=n)
        w /= w.sum()
        l2 = float(rng.uniform(0.0, 0.2))
        theta = rng.normal(size=d + 1)
        _, grad = logistic_objective(theta, X, y, w, l2)
        fd = np.empty_like(grad)
        for j in range(theta.size):
            up = theta.copy()
            down = theta.copy()
            up[j] += h
            down[j] -= h
            fd[j] = (logistic_objective(up, X, y, w, l2)[0]
                     - logistic_objective(down, X, y, w, l2)[0]) / (2 * h)
        scale = max(1.0, float(np.abs(grad).max()))
        worst = max(worst, float(np.abs(grad - fd).max()) / scale)
    return worst <= tol, f"worst relative gradient error {worst:.2e}"


def check_clustering():
    rng = np.random.default_rng(3)
    blob_a = rng.normal(0.0, 0.1, size=(20, 1))
    blob_b = rng.normal(10.0, 0.1, size=(20, 1))
    X = np.vstack([blob_a, blob_b])
    result = kmeans(X, 2, seed=1)
    diffs = np.diff(result.inertia_path)
    if np.any(diffs > 1e-9):
        return False, "k-means objective increased"
    left = set(np.nonzero(result.labels == result.labels[0])[0])
    if left != set(range(20)) and left != set(range(20, 40)):
        return False, "two-blob recovery failed"
    dunn = dunn_index([np.array([0.0, 0.1]), np.array([1.0, 1.1])])
    if abs(dunn - 9.0) > 1e-12:
        return False, f"dunn fixture gave {dunn}"
    p = purity([0, 1, 2, 3], np.array([1, 1, 1, -1]))
    if p != 0.75:
        return False, f"purity fixture gave {p}"
    fixtures = (
        (np.array([1, 0, 1]), np.array([1, 0, 1]), 1.0),
        (np.array([1, 0, 0]), np.array([0, 1, 1]), 0.0),
        (np.array([1, 0, 1]), np.array([1, 1, 0]), 1.0 / 3.0),
    )
    for di, dj, expected in fixtures:
        if jaccard_similarity(di, dj) != expected:
            return False, "jaccard fixture failed"
    return True, "objective monotone, blobs exact, dunn 9.0, purity and jaccard exact"


def check_persistence_roundtrip(tmp_path=None, images: int = 20, seed: int = 17):
    import tempfile
    import os

    rng = np.random.default_rng(seed)
    graph, top = random_graph(rng, max_concepts=5)
    from .graph import FeaturePool

    pool = FeaturePool()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json") if tmp_path is None else tmp_path
        save_model(graph, pool, path)
        loaded_graph, _, _ = load_model(path)
        top_loaded = loaded_graph.feature(top.id)
        for _ in range(images):
            image = random_image(rng)
            before = deep_detect(graph, top, image)
            after = deep_detect(loaded_graph, top_loaded, image)
            if before != after:
                return False, f"scores differ after round-trip: {before} vs {after}"
    return True, f"0 score difference on {images} random images"


CHECKS = (
    ("oracle-equivalence", check_oracle_equivalence),
    ("single-call-savings", check_single_call_savings),
    ("boosting-identities", check_boosting_identities),
    ("logistic-gradient", check_logistic_gradient),
    ("clustering", check_clustering),
    ("persistence-roundtrip", check_persistence_roundtrip),
)


def run_selftest(fast: bool = False) -> list[tuple[str, bool, str]]:
    results = []
    for name, check in CHECKS:
        if fast and name == "oracle-equivalence":
            passed, detail = check(cases=40)
        else:
            passed, detail = check()
        results.append((name, passed, detail))
    return results

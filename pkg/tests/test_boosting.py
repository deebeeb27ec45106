"""Learner behavior: logistic fitting, candidate scoring, boosting rounds."""

import math

import numpy as np
import pytest

from classigraph.boosting import (
    CandidateEvaluator,
    EpochConfig,
    SamplerConfig,
    TrainConfig,
    adaboost_reweight,
    clusterboost,
    derive_seed,
    epoch_labels,
    evaluate_candidate,
    fit_logistic,
    initial_state,
    logistic_objective,
    run_epoch,
)
from classigraph.clustering import Cluster
from classigraph.features import FeatureSpec
from classigraph.graph import ClassifierGraph, FeaturePool, Geometry, LocationGrid, PoolProvenance
from classigraph.images import Image

GRAD = FeatureSpec("gradient_hist", cells=2, bins=9)


class TestFitLogistic:
    def test_symmetric_data_gives_zero_model(self):
        X = np.array([[1.0, 2.0], [-1.0, -2.0], [1.0, 2.0], [-1.0, -2.0]])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        fit = fit_logistic(X, y, l2=0.1)
        np.testing.assert_allclose(fit.weights, 0.0, atol=1e-8)
        assert fit.bias == pytest.approx(0.0, abs=1e-8)

    def test_separable_1d_positive_weight(self, rng):
        X = np.concatenate([rng.uniform(-2.0, -0.5, 20), rng.uniform(0.5, 2.0, 20)])[:, None]
        y = np.concatenate([-np.ones(20), np.ones(20)])
        fit = fit_logistic(X, y, l2=0.1)
        assert fit.weights[0] > 0.0

    def test_loss_nonincreasing(self, rng):
        for _ in range(10):
            X = rng.normal(size=(30, 4))
            y = np.where(rng.uniform(size=30) < 0.5, 1.0, -1.0)
            y[:2] = [1.0, -1.0]
            w = rng.uniform(0.1, 1.0, size=30)
            w /= w.sum()
            fit = fit_logistic(X, y, w, l2=1e-3)
            assert all(b <= a + 1e-12 for a, b in zip(fit.loss_path, fit.loss_path[1:]))

    def test_gradient_matches_finite_differences(self, rng):
        h = 1e-5
        for _ in range(10):
            n, d = int(rng.integers(5, 25)), int(rng.integers(1, 6))
            X = rng.normal(size=(n, d))
            y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
            y[:2] = [1.0, -1.0]
            w = rng.uniform(0.1, 1.0, size=n)
            w /= w.sum()
            theta = rng.normal(size=d + 1)
            _, grad = logistic_objective(theta, X, y, w, 0.05)
            for j in range(d + 1):
                up, down = theta.copy(), theta.copy()
                up[j] += h
                down[j] -= h
                fd = (logistic_objective(up, X, y, w, 0.05)[0]
                      - logistic_objective(down, X, y, w, 0.05)[0]) / (2 * h)
                assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            fit_logistic(np.ones((3, 1)), np.ones(3))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            fit_logistic(np.array([[np.inf], [0.0]]), np.array([1.0, -1.0]))


class TestAdaboostReweight:
    def test_alpha_zero_keeps_weights(self):
        w = np.array([0.2, 0.3, 0.5])
        out = adaboost_reweight(w, np.array([1, -1, 1]), np.array([-1, 1, -1]), 0.0)
        np.testing.assert_allclose(out, w)

    def test_all_correct_unchanged(self):
        w = np.array([0.25, 0.75])
        labels = np.array([1, -1])
        out = adaboost_reweight(w, labels, labels, 1.3)
        np.testing.assert_allclose(out, w)

    def test_two_sample_hand_value(self):
        w = np.array([0.5, 0.5])
        predictions = np.array([1, 1])
        labels = np.array([-1, 1])
        out = adaboost_reweight(w, predictions, labels, math.log(3.0))
        np.testing.assert_allclose(out, [0.75, 0.25])

    def test_posterror_half_identity(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 40))
            labels = np.where(rng.uniform(size=n) < 0.5, 1, -1)
            predictions = np.where(rng.uniform(size=n) < 0.5, 1, -1)
            if np.all(predictions == labels) or np.all(predictions != labels):
                predictions[0] = -predictions[0]
            weights = rng.uniform(0.05, 1.0, size=n)
            weights /= weights.sum()
            err = float(weights[predictions != labels].sum())
            alpha = math.log((1 - err) / err)
            new = adaboost_reweight(weights, predictions, labels, alpha)
            assert new.sum() == pytest.approx(1.0, abs=1e-12)
            assert float(new[predictions != labels].sum()) == pytest.approx(0.5, abs=1e-9)


def _flat_image(rng, shade=None):
    rgb = rng.uniform(0.0, 1.0, size=(14, 14, 3)) if shade is None else np.full((14, 14, 3), shade)
    return Image.from_rgb(np.clip(rgb, 0.0, 1.0))


class _Sample:
    def __init__(self, image, class_name):
        self.image = image
        self.box = image.full_box
        self.class_name = class_name
        self.label = 1 if class_name else -1
        self.source_id = "t"


def _training_setup(rng, n_pos=10, n_neg=10):
    """Positives carry a bright vertical edge; negatives are flat noise."""
    samples = []
    for _ in range(n_pos):
        rgb = rng.uniform(0.0, 0.2, size=(14, 14, 3))
        rgb[:, 7:, :] = rng.uniform(0.8, 1.0)
        samples.append(_Sample(Image.from_rgb(rgb), "edge"))
    for _ in range(n_neg):
        samples.append(_Sample(_flat_image(rng), None))
    labels = epoch_labels(samples, "edge")
    graph = ClassifierGraph(grid=LocationGrid(5, 5))
    pool = FeaturePool()
    for scale in (0.5, 1.0):
        fid = graph.add_feature_node(GRAD, Geometry((0.5, 0.5), (scale, scale)))
        pool.register(graph.feature(fid), PoolProvenance("initial", 0))
    cluster = Cluster(members=tuple(range(n_pos)), space="gradient_hist",
                      round_id=0, dunn=1.0, purity=1.0)
    return samples, labels, graph, pool, cluster


class TestEvaluateCandidate:
    def test_constant_candidate_error_is_smaller_class_weight(self, rng):
        samples, labels, graph, pool, cluster = _training_setup(rng)
        # constant gray images: descriptor rows are identical, the fitted
        # rule degenerates to a constant decision
        for s in samples:
            s.image = _flat_image(rng, shade=0.5)
        weights = np.full(len(samples), 1.0 / len(samples))
        weights[0] = 0.3
        weights /= weights.sum()
        scorer = evaluate_candidate(graph.feature(0), samples, labels, weights, cluster,
                                    graph=graph)
        pos_w = weights[labels == 1].sum()
        neg_w = weights[labels == -1].sum()
        assert scorer.error == pytest.approx(min(pos_w, neg_w), abs=1e-9)

    def test_oracle_candidate_hits_clamp(self, rng):
        samples, labels, graph, pool, cluster = _training_setup(rng)
        weights = np.full(len(samples), 1.0 / len(samples))
        scorer = evaluate_candidate(graph.feature(1), samples, labels, weights, cluster,
                                    graph=graph)
        assert scorer.error == pytest.approx(1e-6)

    def test_threshold_sweep_matches_exhaustive(self, rng):
        samples, labels, graph, pool, cluster = _training_setup(rng)
        leaf = graph.add_concept_node(kind="leaf", spec=GRAD,
                                      weights=rng.normal(size=36), bias=0.0)
        fid = graph.add_feature_node(leaf, Geometry((0.5, 0.5), (1.0, 1.0)))
        weights = rng.uniform(0.2, 1.0, size=len(samples))
        weights /= weights.sum()
        scorer = evaluate_candidate(graph.feature(fid), samples, labels, weights, cluster,
                                    graph=graph)
        scores = scorer.scores
        best = None
        for t in np.concatenate([np.unique(scores), [scores.max() + 1.0]]):
            err = float(weights[np.where(scores >= t, 1, -1) != labels].sum())
            if best is None or err < best - 1e-15:
                best = err
        swept = float(weights[scorer.predictions() != labels].sum())
        assert swept == pytest.approx(best, abs=1e-12)

    def test_empty_cluster_rejected(self, rng):
        samples, labels, graph, pool, _ = _training_setup(rng)
        empty = Cluster(members=(), space="x", round_id=0, dunn=0.0, purity=1.0)
        with pytest.raises(ValueError):
            evaluate_candidate(graph.feature(0), samples, labels,
                               np.full(len(samples), 1.0 / len(samples)), empty, graph=graph)


class TestClusterboost:
    def test_learns_composite_with_pool_parents(self, rng):
        samples, labels, graph, pool, cluster = _training_setup(rng)
        result = clusterboost(samples, labels, [cluster], pool, graph, k_rounds=2, seed=0)
        concept = graph.concept(result.concept_id)
        assert concept.kind == "composite"
        assert 1 <= len(concept.parents) <= 2
        for fid in concept.parents:
            assert fid in pool
        assert result.training_error <= 0.1
        assert len(result.rounds) == len(concept.parents)

    def test_round_zero_targets_heaviest_cluster(self, rng):
        samples, labels, graph, pool, _ = _training_setup(rng)
        small = Cluster(members=(0, 1, 2), space="g", round_id=0, dunn=1.0, purity=1.0)
        large = Cluster(members=(3, 4, 5, 6, 7), space="g", round_id=0, dunn=1.0, purity=1.0)
        result = clusterboost(samples, labels, [small, large], pool, graph, k_rounds=1, seed=0)
        assert result.rounds[0].cluster_index == 1

    def test_cluster_argmax_scale_invariant(self, rng):
        samples, labels, graph, pool, _ = _training_setup(rng)
        clusters = [
            Cluster(members=(0, 1), space="g", round_id=0, dunn=1.0, purity=1.0),
            Cluster(members=(2, 3, 4), space="g", round_id=0, dunn=1.0, purity=1.0),
        ]
        weights = np.full(len(samples), 1.0 / len(samples))
        sums = [weights[list(c.members)].sum() for c in clusters]
        scaled = [w * 37.5 for w in sums]
        assert int(np.argmax(sums)) == int(np.argmax(scaled))

    def test_selection_trace_reproducible(self, rng):
        records = []
        for _ in range(2):
            r = np.random.default_rng(77)
            samples, labels, graph, pool, cluster = _training_setup(r)
            result = clusterboost(samples, labels, [cluster], pool, graph, k_rounds=2, seed=5)
            records.append([(x.feature_id, x.error, x.alpha) for x in result.rounds])
        assert records[0] == records[1]

    def test_empty_pool_rejected(self, rng):
        samples, labels, graph, _, cluster = _training_setup(rng)
        with pytest.raises(ValueError):
            clusterboost(samples, labels, [cluster], FeaturePool(), graph, k_rounds=1)


def _tiny_corpus(rng):
    samples = []
    for _ in range(8):
        rgb = rng.uniform(0.0, 0.2, size=(14, 14, 3))
        rgb[:, 7:, :] = rng.uniform(0.8, 1.0)
        samples.append(_Sample(Image.from_rgb(rgb), "edge"))
    for _ in range(4):
        rgb = rng.uniform(0.0, 0.2, size=(14, 14, 3))
        rgb[7:, :, :] = rng.uniform(0.8, 1.0)
        samples.append(_Sample(Image.from_rgb(rgb), "band"))
    for _ in range(8):
        samples.append(_Sample(_flat_image(rng), None))
    return samples


def _tiny_epoch(positive="edge"):
    return EpochConfig(
        positive_class=positive,
        k_rounds=2,
        n_copies=30,
        min_purity=0.0,
        candidate_budget=100,
        sampler=SamplerConfig(preset="desk", n_copies=30),
    )


class TestRunEpoch:
    def test_adds_exactly_one_concept(self, rng):
        state = initial_state(TrainConfig(seed=3, initial_sampler=SamplerConfig("points", 40)))
        samples = _tiny_corpus(rng)
        before = len(state.graph.concepts)
        new_state, report = run_epoch(state, _tiny_epoch(), samples, seed=3)
        assert len(new_state.graph.concepts) == before + 1
        assert report.concept_id == before

    def test_pool_growth_matches_duplicate_accounting(self, rng):
        state = initial_state(TrainConfig(seed=3, initial_sampler=SamplerConfig("points", 40)))
        samples = _tiny_corpus(rng)
        new_state, report = run_epoch(state, _tiny_epoch(), samples, seed=3)
        grown = report.pool_after - report.pool_before
        assert grown == _tiny_epoch().n_copies - report.duplicate_hits
        assert len(new_state.pool) == report.pool_after

    def test_transactional_on_failure(self, rng):
        state = initial_state(TrainConfig(seed=3, initial_sampler=SamplerConfig("points", 40)))
        samples = _tiny_corpus(rng)
        config = _tiny_epoch("no-such-class")
        concepts_before = len(state.graph.concepts)
        pool_before = len(state.pool)
        with pytest.raises(ValueError):
            run_epoch(state, config, samples, seed=3)
        assert len(state.graph.concepts) == concepts_before
        assert len(state.pool) == pool_before
        assert state.t == 0

    def test_registers_class_and_advances_epoch(self, rng):
        state = initial_state(TrainConfig(seed=3, initial_sampler=SamplerConfig("points", 40)))
        samples = _tiny_corpus(rng)
        new_state, report = run_epoch(state, _tiny_epoch(), samples, seed=3)
        assert new_state.t == 1
        assert new_state.graph.classes["edge"] == [report.concept_id]


def test_derive_seed_stable_and_distinct():
    assert derive_seed(7, 0, 1) == derive_seed(7, 0, 1)
    assert derive_seed(7, 0, 1) != derive_seed(7, 0, 2)
    assert derive_seed(7, 1, 1) != derive_seed(8, 1, 1)

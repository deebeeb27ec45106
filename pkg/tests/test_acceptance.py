"""Acceptance suite: one test per criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one printed
pass/fail line per criterion. The end-to-end criteria share one training
run over the generated part-whole corpus (session fixture).
"""

import json
import math
import time

import numpy as np
import pytest

from classigraph.boosting import SEED_NEGATIVES, adaboost_reweight, derive_seed, logistic_objective, train
from classigraph.cli import main as cli_main
from classigraph.clustering import dunn_index, jaccard_similarity, kmeans, purity
from classigraph.corpus import generate_synthetic, load_dataset
from classigraph.engine import DetectionCache, EvalCounters, deep_detect, naive_deep_detect
from classigraph.graph import FeaturePool
from classigraph.model_io import load_model, save_model
from classigraph.presets import part_whole_train_config, synthetic_corpus_config
from classigraph.selftest import random_graph, random_image, shared_subgraph_fixture


def _report(criterion: str, detail: str) -> None:
    print(f"\ncriterion {criterion}: PASS - {detail}")


@pytest.fixture(scope="session")
def end_to_end(tmp_path_factory):
    """Generate the corpus and train the three-epoch schedule once."""
    out = tmp_path_factory.mktemp("e2e")
    manifest, _ = generate_synthetic(synthetic_corpus_config(), out)
    config = part_whole_train_config()
    started = time.perf_counter()
    samples = load_dataset(
        manifest, split="train", margin=config.margin,
        negatives_total=config.negatives_total,
        seed=derive_seed(config.seed, 0, SEED_NEGATIVES),
        positive_offsets=[tuple(o) for o in config.positive_offsets],
    )
    result = train(samples, config)
    seconds = time.perf_counter() - started
    return {"manifest": manifest, "result": result, "seconds": seconds, "dir": out}


def _held_out_accuracy(end_to_end, class_name: str, concept_id: int) -> float:
    from classigraph.boosting import concept_scores

    manifest = end_to_end["manifest"]
    graph = end_to_end["result"].state.graph
    positives = [s for s in load_dataset(manifest, classes=[class_name], split="test")
                 if s.label == 1]
    mined = load_dataset(manifest, classes=[class_name], split="test",
                         negatives_total=len(positives), seed=23)
    negatives = [s for s in mined if s.label == -1]
    pos_scores = concept_scores(graph, concept_id, positives)
    neg_scores = concept_scores(graph, concept_id, negatives)
    hits = int(np.sum(pos_scores >= 0.5)) + int(np.sum(neg_scores < 0.5))
    return hits / (len(positives) + len(negatives))


class TestCriterion1OracleEquivalence:
    def test_memoized_matches_naive_on_200_randomized_cases(self):
        rng = np.random.default_rng(2024)
        started = time.perf_counter()
        worst = 0.0
        caches = []
        for _ in range(200):
            graph, top = random_graph(rng, max_concepts=6)
            image = random_image(rng, max_size=32)
            cache = DetectionCache()
            fast = deep_detect(graph, top, image, cache=cache)
            slow = naive_deep_detect(graph, top, image)
            worst = max(worst, abs(fast - slow))
            caches.append(cache)
        elapsed = time.perf_counter() - started
        assert worst <= 1e-12, f"max deviation {worst}"
        assert elapsed < 60.0, f"took {elapsed:.1f}s"
        self.__class__.caches = caches
        _report("1 (oracle equivalence)",
                f"200 cases, max |memoized - naive| = {worst:.2e}, {elapsed:.1f}s")


class TestCriterion2SingleCall:
    def test_every_key_evaluated_at_most_once(self):
        caches = getattr(TestCriterion1OracleEquivalence, "caches", None)
        if caches is None:
            pytest.skip("criterion 1 must run first")
        worst = max(cache.max_evaluations_per_key() for cache in caches)
        assert worst <= 1
        _report("2a (single call)", f"max evaluations per cache key = {worst} over 200 cases")

    def test_shared_subgraph_halves_leaf_evaluations(self):
        rng = np.random.default_rng(5)
        graph, top = shared_subgraph_fixture()
        image = random_image(rng, max_size=24)
        cache = DetectionCache()
        counters = EvalCounters()
        fast = deep_detect(graph, top, image, cache=cache)
        slow = naive_deep_detect(graph, top, image, counters=counters)
        assert fast == slow
        assert cache.leaf_evaluations > 0
        assert counters.leaf_evaluations >= 2 * cache.leaf_evaluations
        _report("2b (shared subgraph)",
                f"naive {counters.leaf_evaluations} vs memoized {cache.leaf_evaluations} leaf evaluations")


class TestCriterion3BoostingIdentities:
    def test_alpha_fixtures(self):
        assert math.log((1 - 0.5) / 0.5) == 0.0
        assert abs(math.log((1 - 0.25) / 0.25) - math.log(3.0)) <= 1e-12
        _report("3a (vote-weight fixtures)", "alpha(0.5) = 0, alpha(0.25) = ln 3")

    def test_post_reweight_error_is_half_on_100_instances(self):
        rng = np.random.default_rng(7)
        worst_half = 0.0
        worst_sum = 0.0
        for _ in range(100):
            n = int(rng.integers(4, 80))
            labels = np.where(rng.uniform(size=n) < 0.5, 1, -1)
            predictions = np.where(rng.uniform(size=n) < 0.5, 1, -1)
            if np.all(predictions == labels) or np.all(predictions != labels):
                predictions[0] = -predictions[0]
            weights = rng.uniform(0.05, 1.0, size=n)
            weights /= weights.sum()
            error = float(weights[predictions != labels].sum())
            alpha = math.log((1 - error) / error)
            reweighted = adaboost_reweight(weights, predictions, labels, alpha)
            worst_sum = max(worst_sum, abs(float(reweighted.sum()) - 1.0))
            worst_half = max(worst_half,
                             abs(float(reweighted[predictions != labels].sum()) - 0.5))
        assert worst_half <= 1e-9
        assert worst_sum <= 1e-12
        _report("3b (post-reweight error = 1/2)",
                f"off by {worst_half:.2e}; weight sums off by {worst_sum:.2e}")


class TestCriterion4GradientCheck:
    def test_analytic_gradient_matches_central_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-5
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(6, 40))
            d = int(rng.integers(1, 8))
            X = rng.normal(size=(n, d))
            y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
            y[0], y[1] = 1.0, -1.0
            weights = rng.uniform(0.05, 1.0, size=n)
            weights /= weights.sum()
            l2 = float(rng.uniform(0.0, 0.2))
            theta = rng.normal(size=d + 1)
            _, grad = logistic_objective(theta, X, y, weights, l2)
            fd = np.empty_like(grad)
            for j in range(theta.size):
                up, down = theta.copy(), theta.copy()
                up[j] += h
                down[j] -= h
                fd[j] = (logistic_objective(up, X, y, weights, l2)[0]
                         - logistic_objective(down, X, y, weights, l2)[0]) / (2 * h)
            scale = max(1.0, float(np.abs(grad).max()))
            worst = max(worst, float(np.abs(grad - fd).max()) / scale)
        assert worst <= 1e-5
        _report("4 (gradient check)", f"worst relative error {worst:.2e} over 50 instances")


class TestCriterion5Clustering:
    def test_kmeans_objective_monotone_every_run(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            X = rng.normal(size=(int(rng.integers(8, 60)), int(rng.integers(1, 5))))
            path = np.asarray(kmeans(X, int(rng.integers(1, 5)), seed=trial).inertia_path)
            assert np.all(np.diff(path) <= 1e-9 * max(1.0, float(path[0])))
        _report("5a (k-means monotone)", "objective nonincreasing on 20 runs")

    def test_two_blob_recovery_exact(self):
        rng = np.random.default_rng(3)
        X = np.vstack([rng.normal(0.0, 0.1, size=(20, 1)), rng.normal(10.0, 0.1, size=(20, 1))])
        labels = kmeans(X, 2, seed=1).labels
        assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1
        assert labels[0] != labels[20]
        _report("5b (two-blob recovery)", "exact blob partition")

    def test_dunn_fixture(self):
        value = dunn_index([np.array([0.0, 0.1]), np.array([1.0, 1.1])])
        assert abs(value - 9.0) <= 1e-12
        _report("5c (dunn fixture)", f"dunn = {value}")

    def test_purity_fixtures_exact(self):
        assert purity([0, 1, 2, 3], np.array([1, 1, 1, -1])) == 0.75
        assert purity([0, 1], np.array([1, 1])) == 1.0
        assert purity([0, 1], np.array([-1, -1])) == 0.0
        _report("5d (purity fixtures)", "0.75 / 1.0 / 0.0 exact")


class TestCriterion6EndToEnd:
    def test_part_detectors_reach_95_percent(self, end_to_end):
        graph = end_to_end["result"].state.graph
        disc_accuracy = _held_out_accuracy(end_to_end, "disc", graph.classes["disc"][0])
        bar_accuracy = _held_out_accuracy(end_to_end, "bar", graph.classes["bar"][0])
        assert disc_accuracy >= 0.95, f"disc held-out accuracy {disc_accuracy:.3f}"
        assert bar_accuracy >= 0.95, f"bar held-out accuracy {bar_accuracy:.3f}"
        _report("6a (first-stage detectors)",
                f"disc {disc_accuracy:.3f}, bar {bar_accuracy:.3f} (both >= 0.95)")

    def test_composite_face_reaches_90_percent(self, end_to_end):
        graph = end_to_end["result"].state.graph
        face_accuracy = _held_out_accuracy(end_to_end, "face", graph.classes["face"][0])
        assert face_accuracy >= 0.90, f"face held-out accuracy {face_accuracy:.3f}"
        _report("6b (composite detector)", f"face {face_accuracy:.3f} (>= 0.90)")

    def test_face_selection_trace_reuses_a_spawned_copy(self, end_to_end):
        report = end_to_end["result"].report
        face_epoch = report.epochs[2]
        spawned = [r for r in face_epoch.trace if r.origin == "spawned"]
        assert len(spawned) >= 1, "no spawned feature-node among the face parents"
        picked = ", ".join(f"feature {r.feature_id} (round {r.round_index})" for r in spawned)
        _report("6c (classifier reuse)", f"face trace includes spawned parents: {picked}")

    def test_training_under_ten_minutes(self, end_to_end):
        assert end_to_end["seconds"] < 600.0
        _report("6d (runtime)", f"training took {end_to_end['seconds']:.1f}s")


class TestCriterion7Determinism:
    def test_identical_seed_and_worker_counts_give_identical_models(self, tmp_path):
        synth_config = {
            "canvas": [72, 72], "seed": 5, "face_train": 8, "face_test": 4,
            "cart_train": 5, "cart_test": 2, "distractor_train": 6, "distractor_test": 4,
            "composite_size": 24, "jitter": 2, "distractor_parts": 2, "verify_probe": False,
        }
        synth_path = tmp_path / "synth.json"
        synth_path.write_text(json.dumps(synth_config))
        data_dir = tmp_path / "data"
        assert cli_main(["synth", "--config", str(synth_path), "--out", str(data_dir)]) == 0
        train_config = {
            "seed": 7, "grid": [5, 5], "negatives_total": 30,
            "initial_sampler": {"preset": "points", "n_copies": 40},
            "epochs": [
                {"positive_class": "disc", "k_rounds": 2, "n_copies": 60, "min_purity": 0.0,
                 "candidate_budget": 120, "sampler": {"preset": "desk", "n_copies": 60}},
                {"positive_class": "face", "k_rounds": 2, "n_copies": 60, "min_purity": 0.0,
                 "candidate_budget": 120, "sampler": {"preset": "desk", "n_copies": 60}},
            ],
        }
        config_path = tmp_path / "train.json"
        config_path.write_text(json.dumps(train_config))
        blobs = []
        for run, workers in ((0, "1"), (1, "1"), (2, "4")):
            out = tmp_path / f"model{run}.json"
            code = cli_main(["train", "--config", str(config_path), "--data",
                             str(data_dir / "manifest.jsonl"), "--out", str(out),
                             "--seed", "7", "--workers", workers])
            assert code == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]
        _report("7 (determinism)",
                f"two runs and workers 1 vs 4 produced identical {len(blobs[0])}-byte models")


class TestCriterion8Persistence:
    def test_round_trip_gives_zero_score_difference(self, end_to_end, tmp_path):
        state = end_to_end["result"].state
        path = tmp_path / "model.json"
        save_model(state.graph, state.pool, path)
        loaded_graph, _, _ = load_model(path)
        rng = np.random.default_rng(17)
        face_concept = state.graph.classes["face"][0]
        worst = 0.0
        for _ in range(20):
            image = random_image(rng, max_size=48)
            from classigraph.engine import score_concept

            before = score_concept(state.graph, face_concept, image)
            after = score_concept(loaded_graph, face_concept, image)
            worst = max(worst, abs(before - after))
        assert worst == 0.0
        _report("8 (persistence)", "round-trip score difference 0 on 20 random images")

    def test_random_graph_round_trips_exactly(self, tmp_path):
        rng = np.random.default_rng(23)
        graph, top = random_graph(rng)
        path = tmp_path / "random.json"
        save_model(graph, FeaturePool(), path)
        loaded, _, _ = load_model(path)
        for _ in range(20):
            image = random_image(rng)
            assert deep_detect(graph, top, image) == deep_detect(loaded, loaded.feature(top.id), image)


class TestCriterion9EvolvingDistance:
    def test_jaccard_fixtures_exact(self):
        assert jaccard_similarity(np.array([1, 0, 1]), np.array([1, 0, 1])) == 1.0
        assert jaccard_similarity(np.array([1, 0, 0]), np.array([0, 1, 1])) == 0.0
        assert jaccard_similarity(np.array([1, 0, 1]), np.array([1, 1, 0])) == 1.0 / 3.0
        _report("9a (jaccard fixtures)", "1, 0, 1/3 exact")

    def test_later_epochs_cluster_with_evolved_descriptors(self, end_to_end):
        report = end_to_end["result"].report
        assert not report.epochs[0].evolved_round_present  # nothing learned yet
        assert report.epochs[1].evolved_round_present
        assert report.epochs[2].evolved_round_present
        spaces = {meta["space"] for meta in report.epochs[2].rounds_meta}
        assert "evolved" in spaces
        _report("9b (evolving distance)",
                "epoch reports show the evolved-descriptor round from the second epoch on")

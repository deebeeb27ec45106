"""Ready-made configurations for the synthetic part-whole workflow.

These are the settings the end-to-end verification runs with: a corpus of
face/cart composites over shared parts, a first-stage epoch per part
class, and a composite epoch that reuses spawned copies of the part
detectors. They also serve as a starting point for custom runs; every
field mirrors the JSON config surface.
"""

from __future__ import annotations

from .boosting import EpochConfig, SamplerConfig, TrainConfig
from .clustering import RoundSpec
from .corpus import SynthConfig
from .graph import LocationGrid

__all__ = ["synthetic_corpus_config", "part_whole_train_config"]


def synthetic_corpus_config(seed: int = 7) -> SynthConfig:
    """The verification corpus: jittered composites, shared part colors,
    sparse distractor scenes, placement that keeps context crops whole."""
    return SynthConfig(
        canvas=(96, 96),
        seed=seed,
        face_train=60,
        face_test=50,
        cart_train=40,
        cart_test=25,
        distractor_train=40,
        distractor_test=50,
        composite_size=30,
        jitter=5,
        distractor_parts=2,
        color_mode="random",
    )


def _cluster_rounds(k: int = 3) -> list[RoundSpec]:
    return [
        RoundSpec(algorithm="kmeans", space="gradient_hist", k=k, cells=2, bins=9),
        RoundSpec(algorithm="kmeans", space="hue_hist", k=k, cells=2, bins=12),
    ]


def part_whole_train_config(seed: int = 11, grid: tuple[int, int] = (9, 9)) -> TrainConfig:
    """Three epochs: disc, bar, then a face built on their spawned copies.

    The spawn catalogs carry search areas matched to the grid stride (one
    and two steps) plus a bar-shaped scale; part epochs train against the
    other parts and mined background, the composite epoch against carts
    and background. Candidate fits in the composite epoch carry a stronger
    ridge: with few positives the per-candidate descriptor fits overfit
    before the reweighting ever reaches the learned copies.
    """
    grid_points = [list(p) for p in LocationGrid(*grid).points]
    spawn = SamplerConfig(
        preset=None,
        n_copies=400,
        locations=grid_points,
        scales=[[0.25, 0.25], [0.5, 0.5], [1.0, 1.0], [0.3, 0.12]],
        areas=[[0.0, 0.0], [0.12, 0.12], [0.25, 0.25], [0.12, 0.25],
               [0.25, 0.12], [0.5, 0.12], [0.5, 0.5]],
    )
    config = TrainConfig(
        seed=seed,
        grid=grid,
        negatives_total=240,
        positive_offsets=[[0, 0], [2, 1], [-2, -2]],
    )
    config.epochs = [
        EpochConfig(
            positive_class="disc",
            negative_classes=["bar", "wedge"],
            k_rounds=6,
            n_copies=400,
            min_purity=0.3,
            rounds=_cluster_rounds(),
            candidate_budget=500,
            sampler=spawn,
        ),
        EpochConfig(
            positive_class="bar",
            negative_classes=["disc", "wedge"],
            k_rounds=6,
            n_copies=400,
            min_purity=0.3,
            rounds=_cluster_rounds(),
            candidate_budget=500,
            sampler=spawn,
        ),
        EpochConfig(
            positive_class="face",
            negative_classes=["cart"],
            k_rounds=8,
            n_copies=400,
            min_purity=0.3,
            rounds=_cluster_rounds(),
            candidate_budget=2000,
            sampler=spawn,
            fit_l2=1e-4,
        ),
    ]
    return config

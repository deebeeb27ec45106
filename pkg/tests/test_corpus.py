"""Manifest ingestion, negative mining, and the synthetic generator."""

import json
import os

import numpy as np
import pytest

from classigraph.corpus import (
    Annotation,
    DataError,
    GenerationError,
    SynthConfig,
    crop_sample,
    generate_synthetic,
    iou,
    load_dataset,
    load_manifest,
    write_manifest,
)
from classigraph.images import Image, load_image, save_ppm


def small_config(**overrides):
    base = dict(
        canvas=(72, 72), seed=5, face_train=6, face_test=4, cart_train=4, cart_test=2,
        distractor_train=5, distractor_test=4, composite_size=24, jitter=2,
        distractor_parts=2, verify_probe=False,
    )
    base.update(overrides)
    return SynthConfig(**base)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    config = small_config()
    manifest, annotations = generate_synthetic(config, out)
    return manifest, annotations, out


class TestManifest:
    def test_round_trip(self, tmp_path):
        annotations = [
            Annotation("a.ppm", "disc", (1, 2, 3, 4), "train"),
            Annotation("b.ppm", "face", (0, 0, 10, 10), "test"),
        ]
        path = tmp_path / "m.jsonl"
        write_manifest(path, annotations)
        assert load_manifest(path) == annotations

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"image": "a.ppm", "class": "x"}\n')
        with pytest.raises(DataError):
            load_manifest(path)

    def test_empty_class_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps({"image": "a.ppm", "class": "", "box": [0, 0, 1, 1]}) + "\n")
        with pytest.raises(DataError):
            load_manifest(path)


class TestCropSample:
    def test_zero_margin_is_the_box(self, rng):
        image = Image(rng.uniform(size=(20, 20)))
        crop, crop_box, clipped = crop_sample(image, (4, 5, 6, 7), 0.0)
        assert crop_box == (4, 5, 10, 12)
        assert (crop.width, crop.height) == (6, 7)
        assert not clipped

    def test_corner_crop_is_clipped_and_flagged(self, rng):
        image = Image(rng.uniform(size=(20, 20)))
        crop, crop_box, clipped = crop_sample(image, (0, 0, 8, 8), 0.5)
        assert clipped
        assert crop_box[0] == 0 and crop_box[1] == 0

    def test_pixel_content_matches_source(self, rng):
        image = Image(rng.uniform(size=(20, 20)))
        crop, crop_box, _ = crop_sample(image, (3, 4, 5, 6), 0.5)
        x0, y0, x1, y1 = crop_box
        np.testing.assert_array_equal(crop.gray, image.gray[y0:y1, x0:x1])

    def test_out_of_bounds_box_rejected(self, rng):
        image = Image(rng.uniform(size=(10, 10)))
        with pytest.raises(DataError):
            crop_sample(image, (8, 8, 5, 5), 0.0)


class TestLoadDataset:
    def test_empty_manifest_empty_samples(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        assert load_dataset(path) == []

    def test_one_box_zero_margin(self, tmp_path, rng):
        save_ppm(tmp_path / "img.ppm", rng.uniform(size=(16, 16, 3)))
        path = tmp_path / "m.jsonl"
        write_manifest(path, [Annotation("img.ppm", "disc", (2, 3, 6, 5))])
        samples = load_dataset(path, margin=0.0)
        assert len(samples) == 1
        assert (samples[0].image.width, samples[0].image.height) == (6, 5)
        assert samples[0].class_name == "disc"
        assert samples[0].label == 1

    def test_sample_count_is_boxes_plus_negatives(self, corpus):
        manifest, annotations, _ = corpus
        boxes = sum(1 for a in annotations if a.class_name == "disc" and a.split == "train")
        samples = load_dataset(manifest, classes=["disc"], split="train",
                               negatives_total=9, seed=4)
        assert len(samples) == boxes + 9

    def test_mined_negatives_respect_iou(self, corpus):
        manifest, annotations, out = corpus
        samples = load_dataset(manifest, classes=["face"], split="train",
                               negatives_total=12, seed=2)
        by_image = {}
        for a in annotations:
            by_image.setdefault(a.image, []).append(a.box)
        for sample in samples:
            if sample.label != -1:
                continue
            name, _ = sample.source_id.split("#")
            scene = load_image(os.path.join(out, name))
            # recover crop box from the stored crop by matching nothing:
            # the loader guarantees the invariant, re-check it by scanning
            w, h = sample.image.width, sample.image.height
            found = False
            for y in range(scene.height - h + 1):
                for x in range(scene.width - w + 1):
                    if np.array_equal(scene.gray[y : y + h, x : x + w], sample.image.gray):
                        assert all(iou((x, y, w, h), b) < 0.2 for b in by_image[name])
                        found = True
                        break
                if found:
                    break
            assert found

    def test_missing_image_errors(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [Annotation("gone.ppm", "disc", (0, 0, 4, 4))])
        with pytest.raises(DataError):
            load_dataset(path)

    def test_positive_offsets_multiply_positives(self, corpus):
        manifest, annotations, _ = corpus
        boxes = sum(1 for a in annotations if a.class_name == "bar" and a.split == "train")
        samples = load_dataset(manifest, classes=["bar"], split="train",
                               positive_offsets=((0, 0), (2, 1), (-2, -1)))
        assert len(samples) == 3 * boxes


class TestGenerator:
    def test_zero_counts_zero_annotations(self, tmp_path):
        config = small_config(face_train=0, face_test=0, cart_train=0, cart_test=0,
                              distractor_train=0, distractor_test=0)
        manifest, annotations = generate_synthetic(config, tmp_path)
        assert annotations == []
        assert load_manifest(manifest) == []

    def test_bytewise_deterministic(self, tmp_path):
        blobs = []
        for run in range(2):
            out = tmp_path / f"run{run}"
            generate_synthetic(small_config(), out)
            blob = {}
            for name in sorted(os.listdir(out)):
                with open(out / name, "rb") as fh:
                    blob[name] = fh.read()
            blobs.append(blob)
        assert blobs[0] == blobs[1]

    def test_part_boxes_inside_composites(self, corpus):
        _, annotations, _ = corpus
        composites = [a for a in annotations if a.class_name in ("face", "cart")]
        for comp in composites:
            cx, cy, cw, ch = comp.box
            parts = [a for a in annotations
                     if a.image == comp.image and a.class_name in ("disc", "bar")]
            inside = [p for p in parts
                      if p.box[0] >= cx and p.box[1] >= cy
                      and p.box[0] + p.box[2] <= cx + cw and p.box[1] + p.box[3] <= cy + ch]
            assert len(inside) >= 3  # two eyes/wheels and one bar

    def test_boxes_inside_canvas(self, corpus):
        _, annotations, _ = corpus
        for a in annotations:
            x, y, w, h = a.box
            assert 0 <= x and 0 <= y and x + w <= 72 and y + h <= 72

    def test_probe_runs_on_default_corpus(self, tmp_path):
        config = small_config(face_train=10, distractor_train=8, verify_probe=True)
        generate_synthetic(config, tmp_path / "probe")  # must not raise

    def test_invalid_config_rejected(self, tmp_path):
        with pytest.raises(GenerationError):
            generate_synthetic(small_config(composite_size=100), tmp_path)
        with pytest.raises(GenerationError):
            generate_synthetic(small_config(face_train=-1), tmp_path)

    def test_config_dict_round_trip(self):
        config = small_config(color_mode="by_part")
        assert SynthConfig.from_dict(config.to_dict()) == config


def test_iou_basics():
    assert iou((0, 0, 4, 4), (0, 0, 4, 4)) == 1.0
    assert iou((0, 0, 4, 4), (4, 4, 4, 4)) == 0.0
    assert iou((0, 0, 4, 4), (2, 0, 4, 4)) == pytest.approx(8 / 24)

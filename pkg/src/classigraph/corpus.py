"""Dataset ingestion and the synthetic part-whole corpus.

Annotations follow the usual detection-challenge shape: per image, a list
of (class name, pixel bounding box) pairs plus a split tag, stored as one
JSON object per line. Loading produces one positive sample per annotated
box of the requested classes, cropped with a context margin so that
later, more contextual classifiers can look around the object, plus
background negatives mined at seeded random boxes that barely overlap any
annotation.

The synthetic generator draws flat-shaded parts (discs, bars, wedges) on
noisy canvases and composes them into two-level objects: a "face" is two
discs above a bar, a "cart" is a bar above two discs. The same part
inventory appears scattered in distractor scenes, so telling composites
apart requires part geometry, not part presence. Boxes are recorded for
composites and for every part. Generation is bytewise deterministic per
seed and self-verifies that each part class is linearly separable from
mined background by a gradient-histogram probe, so first-stage learning
has something to find.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .features import FeatureSpec, descriptor_values
from .images import Image, load_image, save_ppm

__all__ = [
    "Annotation",
    "Sample",
    "SynthConfig",
    "GenerationError",
    "DataError",
    "load_manifest",
    "write_manifest",
    "load_dataset",
    "crop_sample",
    "generate_synthetic",
    "iou",
]


class DataError(ValueError):
    """Malformed manifest, missing file, or out-of-bounds annotation."""


class GenerationError(RuntimeError):
    """The synthetic corpus failed its own sanity checks."""


@dataclass(frozen=True)
class Annotation:
    image: str
    class_name: str
    box: tuple[int, int, int, int]  # (x, y, w, h) pixels
    split: str = "train"


@dataclass(frozen=True)
class Sample:
    """A training crop: its own image, labeled by origin."""

    image: Image
    box: tuple[int, int, int, int]  # reference box within .image (the full crop)
    label: int  # +1 annotated object, -1 mined background
    class_name: str | None
    source_id: str
    clipped: bool = False


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def load_manifest(path) -> list[Annotation]:
    out: list[Annotation] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                box = tuple(int(v) for v in row["box"])
                if len(box) != 4:
                    raise ValueError("box needs 4 entries")
                ann = Annotation(
                    image=str(row["image"]),
                    class_name=str(row["class"]),
                    box=box,
                    split=str(row.get("split", "train")),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed manifest line ({exc})") from exc
            if not ann.class_name:
                raise DataError(f"{path}:{lineno}: empty class name")
            out.append(ann)
    return out


def write_manifest(path, annotations) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(
                json.dumps(
                    {"image": ann.image, "class": ann.class_name,
                     "box": list(ann.box), "split": ann.split},
                    sort_keys=True,
                )
                + "\n"
            )


def crop_sample(image: Image, box, margin: float):
    """Cut a context crop: the box inflated by ``margin`` of its size per
    side, clipped to the image. Returns (crop, crop_box, clipped_flag)."""
    x, y, w, h = (int(v) for v in box)
    if not (0 <= x and 0 <= y and w >= 1 and h >= 1
            and x + w <= image.width and y + h <= image.height):
        raise DataError(f"box {box} outside {image.width}x{image.height} image")
    mx = int(round(margin * w))
    my = int(round(margin * h))
    x0, y0 = x - mx, y - my
    x1, y1 = x + w + mx, y + h + my
    cx0, cy0 = max(0, x0), max(0, y0)
    cx1, cy1 = min(image.width, x1), min(image.height, y1)
    clipped = (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1)
    return image.crop((cx0, cy0, cx1, cy1)), (cx0, cy0, cx1, cy1), clipped


def load_dataset(
    manifest_path,
    classes=None,
    split: str | None = None,
    margin: float = 0.5,
    negatives_total: int = 0,
    seed: int = 0,
    neg_max_iou: float = 0.2,
    positive_offsets=((0, 0),),
) -> list[Sample]:
    """Samples from a manifest: positives per annotated box, negatives mined.

    ``positive_offsets`` lists pixel shifts of the crop window; each
    annotation yields one sample per offset (the default single zero
    offset gives exactly one sample per box). Off-center copies teach the
    classifiers to survive the misalignment that grid-quantized search
    areas introduce at detection time.

    Negative boxes are drawn uniformly (sizes resampled from the positive
    crop sizes) and accepted when their overlap with every annotation of
    the same image stays under ``neg_max_iou``.
    """
    annotations = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    if split is not None:
        annotations = [a for a in annotations if a.split == split]
    wanted = annotations
    if classes is not None:
        keep = set(classes)
        wanted = [a for a in annotations if a.class_name in keep]
    images: dict[str, Image] = {}
    boxes_by_image: dict[str, list] = {}
    for ann in annotations:
        boxes_by_image.setdefault(ann.image, []).append(ann.box)

    def _image(name: str) -> Image:
        if name not in images:
            path = os.path.join(base, name)
            if not os.path.exists(path):
                raise DataError(f"missing image file {path}")
            images[name] = load_image(path)
        return images[name]

    samples: list[Sample] = []
    crop_sizes: list[tuple[int, int]] = []
    for idx, ann in enumerate(wanted):
        image = _image(ann.image)
        x, y, w, h = ann.box
        for oi, (dx, dy) in enumerate(positive_offsets):
            sx = min(max(0, x + int(dx)), image.width - w)
            sy = min(max(0, y + int(dy)), image.height - h)
            crop, crop_box, clipped = crop_sample(image, (sx, sy, w, h), margin)
            if oi == 0:
                crop_sizes.append((crop_box[2] - crop_box[0], crop_box[3] - crop_box[1]))
            suffix = "" if (dx, dy) == (0, 0) else f"+{dx},{dy}"
            samples.append(
                Sample(
                    image=crop,
                    box=crop.full_box,
                    label=1,
                    class_name=ann.class_name,
                    source_id=f"{ann.image}#{idx}{suffix}",
                    clipped=clipped,
                )
            )
    if negatives_total > 0:
        if not wanted:
            raise DataError("cannot mine negatives without any positive annotation")
        rng = np.random.default_rng(seed)
        image_names = sorted(boxes_by_image)
        for j in range(negatives_total):
            placed = False
            for _ in range(500):
                name = image_names[int(rng.integers(len(image_names)))]
                image = _image(name)
                w, h = crop_sizes[int(rng.integers(len(crop_sizes)))]
                w, h = min(w, image.width), min(h, image.height)
                x = int(rng.integers(0, image.width - w + 1))
                y = int(rng.integers(0, image.height - h + 1))
                candidate = (x, y, w, h)
                if all(iou(candidate, b) < neg_max_iou for b in boxes_by_image[name]):
                    crop = image.crop((x, y, x + w, y + h))
                    samples.append(
                        Sample(
                            image=crop,
                            box=crop.full_box,
                            label=-1,
                            class_name=None,
                            source_id=f"{name}#neg{j}",
                        )
                    )
                    placed = True
                    break
            if not placed:
                raise DataError(f"could not place negative {j} under IoU {neg_max_iou}")
    return samples


# -- synthetic part-whole scenes ----------------------------------------------


@dataclass
class SynthConfig:
    """Counts, geometry and jitter for the generated corpus."""

    canvas: tuple[int, int] = (96, 96)
    seed: int = 0
    face_train: int = 30
    face_test: int = 30
    cart_train: int = 20
    cart_test: int = 10
    distractor_train: int = 30
    distractor_test: int = 30
    composite_size: int = 30
    jitter: int = 5
    distractor_parts: int = 2
    # "random": any part may take any palette color, so part identity is
    # carried by shape alone; "by_part" binds one color per part family
    color_mode: str = "random"
    # composites stay this fraction of their size away from the canvas
    # border, so context crops with the matching margin never clip
    placement_margin: float = 0.5
    verify_probe: bool = True

    def to_dict(self) -> dict:
        return {
            "canvas": list(self.canvas),
            "seed": self.seed,
            "face_train": self.face_train,
            "face_test": self.face_test,
            "cart_train": self.cart_train,
            "cart_test": self.cart_test,
            "distractor_train": self.distractor_train,
            "distractor_test": self.distractor_test,
            "composite_size": self.composite_size,
            "jitter": self.jitter,
            "distractor_parts": self.distractor_parts,
            "color_mode": self.color_mode,
            "placement_margin": self.placement_margin,
            "verify_probe": self.verify_probe,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        out = cls()
        for name in (
            "seed", "face_train", "face_test", "cart_train", "cart_test",
            "distractor_train", "distractor_test", "composite_size", "jitter",
            "distractor_parts",
        ):
            if name in data:
                setattr(out, name, int(data[name]))
        if "canvas" in data:
            out.canvas = tuple(int(v) for v in data["canvas"])
        if "color_mode" in data:
            out.color_mode = str(data["color_mode"])
        if "placement_margin" in data:
            out.placement_margin = float(data["placement_margin"])
        if "verify_probe" in data:
            out.verify_probe = bool(data["verify_probe"])
        return out

    def validate(self) -> None:
        counts = (
            self.face_train, self.face_test, self.cart_train, self.cart_test,
            self.distractor_train, self.distractor_test,
        )
        if any(c < 0 for c in counts):
            raise GenerationError("scene counts must be >= 0")
        if self.jitter < 0:
            raise GenerationError("jitter must be >= 0")
        if self.composite_size < 16:
            raise GenerationError("composite_size must be >= 16")
        if self.composite_size > min(self.canvas):
            raise GenerationError("composite does not fit the canvas")
        if self.color_mode not in ("random", "by_part"):
            raise GenerationError(f"unknown color_mode {self.color_mode!r}")


_PART_COLORS = {
    "disc": (0.85, 0.18, 0.15),
    "bar": (0.16, 0.25, 0.85),
    "wedge": (0.15, 0.8, 0.22),
}


def _base_canvas(rng, width, height):
    noise = rng.uniform(-0.05, 0.05, size=(height, width, 1))
    return np.clip(0.28 + noise, 0.0, 1.0).repeat(3, axis=2)


_PALETTE = tuple(sorted(_PART_COLORS))


def _pick_color(rng, name, color_mode):
    if color_mode == "by_part":
        base = np.array(_PART_COLORS[name])
    else:
        base = np.array(_PART_COLORS[_PALETTE[int(rng.integers(len(_PALETTE)))]])
    return np.clip(base + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)


def _part_dims(name: str, size: int) -> tuple[int, int]:
    if name == "disc":
        return (2 * size + 1, 2 * size + 1)
    if name == "bar":
        return (3 * size, max(2, size))
    if name == "wedge":
        return (2 * size + 1, 2 * size)
    raise GenerationError(f"unknown part {name!r}")


def _clamp(v: int, lo: int, hi: int) -> int:
    return max(lo, min(hi, v))


def _place_part(canvas, rng, name, cx, cy, size, bounds, color_mode) -> tuple[int, int, int, int]:
    """Draw one part near (cx, cy), box clamped inside ``bounds``."""
    bw, bh = _part_dims(name, size)
    bx0, by0, bx1, by1 = bounds
    if bw > bx1 - bx0 or bh > by1 - by0:
        raise GenerationError(f"part {name} of size {size} does not fit {bounds}")
    x0 = _clamp(cx - bw // 2, bx0, bx1 - bw)
    y0 = _clamp(cy - bh // 2, by0, by1 - bh)
    color = _pick_color(rng, name, color_mode)
    if name == "disc":
        ys, xs = np.ogrid[: canvas.shape[0], : canvas.shape[1]]
        ccx, ccy = x0 + size, y0 + size
        mask = (xs - ccx) ** 2 + (ys - ccy) ** 2 <= size * size
        canvas[mask] = color
    elif name == "bar":
        canvas[y0 : y0 + bh, x0 : x0 + bw] = color
    else:  # wedge: downward-widening triangle
        apex = x0 + size
        for row in range(bh):
            half = ((row + 1) * size) // bh
            canvas[y0 + row, apex - half : apex + half + 1] = color
    return (x0, y0, bw, bh)


def _composite_slots(kind: str, box) -> list[tuple[str, int, int, int]]:
    """(part, center-x, center-y, size) slots of one composite layout."""
    bx, by, s = box[0], box[1], box[2]
    r = max(2, s // 8)
    u = max(2, s // 10)
    if kind == "face":  # two discs above one bar
        return [
            ("disc", bx + s // 4, by + s // 3, r),
            ("disc", bx + (3 * s) // 4, by + s // 3, r),
            ("bar", bx + s // 2, by + (3 * s) // 4, u),
        ]
    if kind == "cart":  # one bar above two discs
        return [
            ("bar", bx + s // 2, by + s // 4, u),
            ("disc", bx + s // 4, by + (2 * s) // 3, r),
            ("disc", bx + (3 * s) // 4, by + (2 * s) // 3, r),
        ]
    raise GenerationError(f"unknown composite {kind!r}")


_DISTRACTOR_CYCLE = ("disc", "bar", "wedge")


def _scatter_parts(canvas, rng, config, count, occupied, annotations, name, split):
    """Drop loose parts at random free spots; skips a part when no free
    spot shows up (the rng draw sequence stays fixed either way)."""
    width, height = config.canvas
    r = max(2, config.composite_size // 8)
    u = max(2, config.composite_size // 10)
    for i in range(count):
        part = _DISTRACTOR_CYCLE[int(rng.integers(len(_DISTRACTOR_CYCLE)))]
        size = u if part == "bar" else r
        bw, bh = _part_dims(part, size)
        for _ in range(60):
            cx = int(rng.integers(bw // 2, width - bw + bw // 2 + 1))
            cy = int(rng.integers(bh // 2, height - bh + bh // 2 + 1))
            box = (_clamp(cx - bw // 2, 0, width - bw), _clamp(cy - bh // 2, 0, height - bh),
                   bw, bh)
            if all(iou(box, other) <= 0.05 for other in occupied):
                drawn = _place_part(canvas, rng, part, cx, cy, size, (0, 0, width, height),
                                    config.color_mode)
                occupied.append(drawn)
                annotations.append(Annotation(name, part, drawn, split))
                break


def _render_scene(rng, config, kind, name, split):
    width, height = config.canvas
    canvas = _base_canvas(rng, width, height)
    annotations: list[Annotation] = []
    occupied: list[tuple[int, int, int, int]] = []
    if kind in ("face", "cart"):
        s = config.composite_size
        border = int(round(config.placement_margin * s))
        lo_x, hi_x = border, width - s - border
        lo_y, hi_y = border, height - s - border
        if hi_x < lo_x or hi_y < lo_y:
            raise GenerationError("canvas too small for composite plus placement margin")
        bx = int(rng.integers(lo_x, hi_x + 1))
        by = int(rng.integers(lo_y, hi_y + 1))
        composite_box = (bx, by, s, s)
        annotations.append(Annotation(name, kind, composite_box, split))
        occupied.append(composite_box)
        jitter = config.jitter
        for part, cx, cy, size in _composite_slots(kind, composite_box):
            jx = int(rng.integers(-jitter, jitter + 1)) if jitter > 0 else 0
            jy = int(rng.integers(-jitter, jitter + 1)) if jitter > 0 else 0
            part_box = _place_part(canvas, rng, part, cx + jx, cy + jy, size,
                                   (bx, by, bx + s, by + s), config.color_mode)
            annotations.append(Annotation(name, part, part_box, split))
        _scatter_parts(canvas, rng, config, 1, occupied, annotations, name, split)
    else:
        _scatter_parts(canvas, rng, config, config.distractor_parts, occupied,
                       annotations, name, split)
    return canvas, annotations


def _verify_probe(manifest_path, config) -> None:
    """Train a tiny logistic probe per part class; it must reach 100%
    training accuracy on 50 samples, or generation aborts."""
    from .boosting import fit_logistic

    spec = FeatureSpec("gradient_hist", cells=2, bins=9)
    present = {a.class_name for a in load_manifest(manifest_path) if a.split == "train"}
    for ci, cls in enumerate(sorted(present & {"disc", "bar", "wedge"})):
        # near-zero overlap for the probe negatives: this check asks
        # whether parts stand out from background, not from crops that
        # almost contain a part (those are left to boosting)
        samples = load_dataset(
            manifest_path, classes=[cls], split="train", margin=0.5,
            negatives_total=25, seed=config.seed * 7919 + ci, neg_max_iou=0.05,
        )
        positives = [s for s in samples if s.label == 1][:25]
        negatives = [s for s in samples if s.label == -1]
        probe = positives + negatives
        if len(positives) < 2:
            continue
        X = np.vstack([descriptor_values(spec, s.image, s.box) for s in probe])
        y = np.array([s.label for s in probe], dtype=np.float64)
        fit = fit_logistic(X, y, l2=1e-6, tol=1e-10, max_iter=300)
        scores = X @ fit.weights + fit.bias
        accuracy = float(np.mean(np.where(scores >= 0.0, 1, -1) == y))
        if accuracy < 1.0:
            raise GenerationError(
                f"probe for {cls!r} reached {accuracy:.3f} training accuracy; "
                "corpus is not separable enough to train on"
            )


def generate_synthetic(config: SynthConfig, out_dir, seed: int | None = None):
    """Write scene images and a manifest; returns (manifest_path, annotations).

    Deterministic per seed down to the output bytes.
    """
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    os.makedirs(out_dir, exist_ok=True)
    annotations: list[Annotation] = []
    scene_idx = 0
    for split in ("train", "test"):
        schedule = (
            ("face", config.face_train if split == "train" else config.face_test),
            ("cart", config.cart_train if split == "train" else config.cart_test),
            ("distractor", config.distractor_train if split == "train" else config.distractor_test),
        )
        for kind, count in schedule:
            for _ in range(count):
                name = f"{split}_{scene_idx:05d}.ppm"
                canvas, scene_annotations = _render_scene(rng, config, kind, name, split)
                save_ppm(os.path.join(out_dir, name), canvas)
                annotations.extend(scene_annotations)
                scene_idx += 1
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(manifest_path, annotations)
    if config.verify_probe:
        _verify_probe(manifest_path, config)
    return manifest_path, annotations

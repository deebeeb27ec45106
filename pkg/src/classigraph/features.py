"""First-stage feature extraction over image regions.

Three extractor families sit behind one descriptor interface: Haar-like
box-difference responses, gradient-orientation histograms, and color-hue
histograms. Every extractor reduces to summed-area-table lookups, so each
image builds its tables once (cached on the ``Image``) and any region
afterwards costs a handful of gathers.

Descriptor conventions:
  * Haar kinds produce a length-1 descriptor with the raw response.
  * Histogram descriptors are L1-normalized; a region with zero mass
    (constant patch, fully gray patch) yields an all-zero vector.

Regions are half-open pixel boxes (x0, y0, x1, y1), at least 2x2 px.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .images import Image

__all__ = [
    "FeatureSpec",
    "Descriptor",
    "IntegralImage",
    "ExtractorUnavailableError",
    "HAAR_KINDS",
    "integral_image",
    "extract_haar",
    "extract_gradient_histogram",
    "extract_hue_histogram",
    "descriptor_for",
    "descriptor_values",
    "normalized_to_box",
]

# Hue is meaningless near the gray axis; pixels below this saturation are
# excluded from hue histograms.
S_MIN = 0.1

HAAR_KINDS = ("two-rect-horiz", "two-rect-vert", "three-rect", "four-rect")
_HAAR_CODE = {name: code for code, name in enumerate(HAAR_KINDS)}

# Declared extractor families. The last three are recognized names without
# an implementation behind them; requesting one raises.
EXTRACTOR_KINDS = ("haar", "gradient_hist", "hue_hist", "sift", "gabor", "segmentation")
_UNIMPLEMENTED = ("sift", "gabor", "segmentation")


class ExtractorUnavailableError(NotImplementedError):
    """A declared extractor family with no implementation was requested."""


@dataclass(frozen=True)
class FeatureSpec:
    """Parameters of one initial-feature extractor.

    ``haar`` uses ``haar_kind``; the histogram families use ``cells`` (a
    cells x cells grid over the region) and ``bins``.
    """

    kind: str
    haar_kind: str | None = None
    cells: int = 0
    bins: int = 0

    def __post_init__(self):
        if self.kind not in EXTRACTOR_KINDS:
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.kind == "haar":
            if self.haar_kind not in HAAR_KINDS:
                raise ValueError(f"unknown haar kind {self.haar_kind!r}")
        elif self.kind in ("gradient_hist", "hue_hist"):
            if self.cells < 1 or self.bins < 1:
                raise ValueError(f"{self.kind} needs cells >= 1 and bins >= 1")

    @property
    def length(self) -> int:
        """Descriptor length produced by this spec."""
        if self.kind == "haar":
            return 1
        return self.cells * self.cells * self.bins

    def label(self) -> str:
        if self.kind == "haar":
            return f"haar:{self.haar_kind}"
        return f"{self.kind}:{self.cells}x{self.cells}x{self.bins}"


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray
    tag: str
    box: tuple[int, int, int, int]


class IntegralImage:
    """Summed-area table of the intensity plane.

    ``table[y, x]`` holds the sum of all intensities above and to the left
    of pixel (x, y); row and column 0 are zero.
    """

    __slots__ = ("table",)

    def __init__(self, table: np.ndarray):
        self.table = table

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1

    @property
    def height(self) -> int:
        return self.table.shape[0] - 1

    def box_sum(self, box: tuple[int, int, int, int]) -> float:
        x0, y0, x1, y1 = box
        if x1 <= x0 or y1 <= y0:
            return 0.0
        t = self.table
        return float((t[y1, x1] - t[y0, x1]) - (t[y1, x0] - t[y0, x0]))


def _summed_area(values: np.ndarray) -> np.ndarray:
    h, w = values.shape
    table = np.zeros((h + 1, w + 1), dtype=np.float64)
    table[1:, 1:] = np.cumsum(np.cumsum(values, axis=0), axis=1)
    return np.ascontiguousarray(table)


def integral_image(image: Image) -> IntegralImage:
    return IntegralImage(_intensity_table(image))


def _intensity_table(image: Image) -> np.ndarray:
    if image._integral is None:
        image._integral = _summed_area(image.gray)
    return image._integral


def _replicated_gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with border pixels replicated."""
    padded = np.pad(gray, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) * 0.5
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) * 0.5
    return gx, gy


def _gradient_stack(image: Image, bins: int) -> np.ndarray:
    """One summed-area table per unsigned-orientation bin, weighted by magnitude."""
    stack = image._grad_stacks.get(bins)
    if stack is not None:
        return stack
    gx, gy = _replicated_gradients(image.gray)
    mag = np.sqrt(gx * gx + gy * gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    idx = np.minimum((theta * (bins / np.pi)).astype(np.int64), bins - 1)
    stack = np.empty((bins, image.height + 1, image.width + 1), dtype=np.float64)
    for k in range(bins):
        stack[k] = _summed_area(np.where(idx == k, mag, 0.0))
    stack = np.ascontiguousarray(stack)
    image._grad_stacks[bins] = stack
    return stack


def _hue_plane(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hue in [0, 1) plus a validity mask excluding low-saturation pixels."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    delta = maxc - minc
    sat = np.where(maxc > 0.0, delta / np.where(maxc > 0.0, maxc, 1.0), 0.0)
    valid = (sat >= S_MIN) & (delta > 0.0)
    safe = np.where(delta > 0.0, delta, 1.0)
    hue = np.where(
        maxc == r,
        np.mod((g - b) / safe, 6.0),
        np.where(maxc == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    ) / 6.0
    return hue, valid


def _hue_stack(image: Image, bins: int) -> np.ndarray:
    stack = image._hue_stacks.get(bins)
    if stack is not None:
        return stack
    if image.rgb is None:
        raise ValueError("hue histogram requires an RGB image")
    hue, valid = _hue_plane(image.rgb)
    idx = np.minimum((hue * bins).astype(np.int64), bins - 1)
    stack = np.empty((bins, image.height + 1, image.width + 1), dtype=np.float64)
    for k in range(bins):
        stack[k] = _summed_area(np.where(valid & (idx == k), 1.0, 0.0))
    stack = np.ascontiguousarray(stack)
    image._hue_stacks[bins] = stack
    return stack


def _check_box(image: Image, box, min_side: int = 1) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = (int(v) for v in box)
    if not (0 <= x0 and 0 <= y0 and x1 <= image.width and y1 <= image.height):
        raise ValueError(f"region {box} outside {image.width}x{image.height} image")
    if x1 - x0 < min_side or y1 - y0 < min_side:
        raise ValueError(f"region {box} degenerate (need at least {min_side}x{min_side} px)")
    return x0, y0, x1, y1


def extract_haar(integral: IntegralImage, box, kind: str) -> float:
    """Haar-like response over a pixel box; a difference of sub-box means."""
    if kind not in _HAAR_CODE:
        raise ValueError(f"unknown haar kind {kind!r}")
    x0, y0, x1, y1 = (int(v) for v in box)
    if not (0 <= x0 < x1 <= integral.width and 0 <= y0 < y1 <= integral.height):
        raise ValueError(f"region {box} outside {integral.width}x{integral.height} image")
    return float(kernels.haar_response(integral.table, (x0, y0, x1, y1), _HAAR_CODE[kind]))


def extract_gradient_histogram(image: Image, box, cells: int, bins: int) -> Descriptor:
    """Magnitude-weighted unsigned-orientation histogram per cell."""
    box = _check_box(image, box, min_side=2)
    stack = _gradient_stack(image, bins)
    values = kernels.cell_hist(stack, box, cells)
    return Descriptor(values, f"gradient_hist:{cells}x{cells}x{bins}", box)


def extract_hue_histogram(image: Image, box, cells: int, bins: int) -> Descriptor:
    """Hue histogram per cell over sufficiently saturated pixels."""
    box = _check_box(image, box, min_side=2)
    stack = _hue_stack(image, bins)
    values = kernels.cell_hist(stack, box, cells)
    return Descriptor(values, f"hue_hist:{cells}x{cells}x{bins}", box)


def descriptor_values(spec: FeatureSpec, image: Image, box) -> np.ndarray:
    """Raw descriptor vector for a spec; the fast path used by inference."""
    if spec.kind == "haar":
        box = _check_box(image, box, min_side=1)
        table = _intensity_table(image)
        value = kernels.haar_response(table, box, _HAAR_CODE[spec.haar_kind])
        return np.array([value], dtype=np.float64)
    if spec.kind == "gradient_hist":
        box = _check_box(image, box, min_side=2)
        return kernels.cell_hist(_gradient_stack(image, spec.bins), box, spec.cells)
    if spec.kind == "hue_hist":
        box = _check_box(image, box, min_side=2)
        return kernels.cell_hist(_hue_stack(image, spec.bins), box, spec.cells)
    raise ExtractorUnavailableError(f"extractor {spec.kind!r} is declared but not implemented")


def descriptor_batch(spec: FeatureSpec, image: Image, boxes: np.ndarray) -> np.ndarray:
    """Descriptors for many boxes on one image, one row per box."""
    boxes = np.asarray(boxes, dtype=np.int64)
    if spec.kind == "haar":
        table = _intensity_table(image)
        return kernels.haar_many(table, boxes, _HAAR_CODE[spec.haar_kind])[:, None]
    if spec.kind == "gradient_hist":
        return kernels.cell_hist_many(_gradient_stack(image, spec.bins), boxes, spec.cells)
    if spec.kind == "hue_hist":
        return kernels.cell_hist_many(_hue_stack(image, spec.bins), boxes, spec.cells)
    raise ExtractorUnavailableError(f"extractor {spec.kind!r} is declared but not implemented")


def descriptor_for(spec: FeatureSpec, image: Image, box) -> Descriptor:
    """Uniform dispatch over extractor families."""
    values = descriptor_values(spec, image, box)
    return Descriptor(values, spec.label(), tuple(int(v) for v in box))


def normalized_to_box(region: tuple[float, float, float, float], width: int, height: int):
    """Map a normalized (x, y, w, h) region to a pixel box, at least 2x2.

    Uses floor/ceil so the pixel box covers the real-valued region; boxes
    near the border are shifted inward to keep the 2-px minimum.
    """
    rx, ry, rw, rh = region
    x0 = int(np.floor(rx * width))
    x1 = int(np.ceil((rx + rw) * width))
    y0 = int(np.floor(ry * height))
    y1 = int(np.ceil((ry + rh) * height))
    x0, x1 = max(0, x0), min(width, x1)
    y0, y1 = max(0, y0), min(height, y1)
    if x1 - x0 < 2:
        x0 = max(0, min(width - 2, x0))
        x1 = x0 + 2
    if y1 - y0 < 2:
        y0 = max(0, min(height - 2, y0))
        y1 = y0 + 2
    return (x0, y0, x1, y1)

"""Pure-numpy kernels: the fallback backend.

Same call signatures as the compiled extension. Box coordinates are
half-open pixel rectangles (x0, y0, x1, y1) indexing a summed-area table
of shape (H+1, W+1); a stack bundles one table per histogram bin.

The four-corner lookup is evaluated in one fixed grouping,
``(T11 - T01) - (T10 - T00)``, in both backends so that integer-valued
test images give bit-identical sums everywhere.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "fallback"

HAAR_TWO_HORIZ = 0
HAAR_TWO_VERT = 1
HAAR_THREE = 2
HAAR_FOUR = 3


def sigmoid(z):
    """Numerically stable logistic function for scalars or arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def _sigmoid_scalar(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def logit_score(weights: np.ndarray, bias: float, x: np.ndarray) -> float:
    """Logistic output of a linear model, sigma(w.x + b)."""
    return _sigmoid_scalar(float(np.dot(weights, x)) + bias)


def _corner_sums(table: np.ndarray, x0, y0, x1, y1):
    return (table[y1, x1] - table[y0, x1]) - (table[y1, x0] - table[y0, x0])


def box_sums(table: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Summed-area lookups for an (n, 4) int array of boxes."""
    boxes = np.asarray(boxes, dtype=np.int64)
    return _corner_sums(table, boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3])


def _box_mean(table: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> float:
    area = (x1 - x0) * (y1 - y0)
    if area <= 0:
        return 0.0
    return float(_corner_sums(table, x0, y0, x1, y1)) / area


def haar_response(table: np.ndarray, box, kind: int) -> float:
    """Difference of box means for one Haar-like pattern; value in [-1, 1]."""
    x0, y0, x1, y1 = (int(v) for v in box)
    if kind == HAAR_TWO_HORIZ:
        xm = x0 + (x1 - x0) // 2
        return _box_mean(table, x0, y0, xm, y1) - _box_mean(table, xm, y0, x1, y1)
    if kind == HAAR_TWO_VERT:
        ym = y0 + (y1 - y0) // 2
        return _box_mean(table, x0, y0, x1, ym) - _box_mean(table, x0, ym, x1, y1)
    if kind == HAAR_THREE:
        w = x1 - x0
        e1 = x0 + w // 3
        e2 = x0 + (2 * w) // 3
        side = 0.5 * (_box_mean(table, x0, y0, e1, y1) + _box_mean(table, e2, y0, x1, y1))
        return _box_mean(table, e1, y0, e2, y1) - side
    if kind == HAAR_FOUR:
        xm = x0 + (x1 - x0) // 2
        ym = y0 + (y1 - y0) // 2
        diag = 0.5 * (_box_mean(table, x0, y0, xm, ym) + _box_mean(table, xm, ym, x1, y1))
        anti = 0.5 * (_box_mean(table, xm, y0, x1, ym) + _box_mean(table, x0, ym, xm, y1))
        return diag - anti
    raise ValueError(f"unknown haar kind code {kind}")


def haar_many(table: np.ndarray, boxes: np.ndarray, kind: int) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.int64)
    out = np.empty(boxes.shape[0], dtype=np.float64)
    for i in range(boxes.shape[0]):
        out[i] = haar_response(table, boxes[i], kind)
    return out


def cell_hist_many(stack: np.ndarray, boxes: np.ndarray, cells: int) -> np.ndarray:
    """Per-cell histograms over a bin-wise summed-area stack.

    Returns an (n, cells*cells*bins) matrix, each row L1-normalized
    (rows with zero mass stay all-zero). Row layout is cell-major
    (row of cells, then column, then bin).
    """
    boxes = np.asarray(boxes, dtype=np.int64)
    bins = stack.shape[0]
    n = boxes.shape[0]
    width1 = stack.shape[2]
    steps = np.arange(cells + 1, dtype=np.int64)
    xe = boxes[:, 0:1] + ((boxes[:, 2:3] - boxes[:, 0:1]) * steps) // cells
    ye = boxes[:, 1:2] + ((boxes[:, 3:4] - boxes[:, 1:2]) * steps) // cells
    flat = stack.reshape(bins, -1)
    lin = ye[:, :, None] * width1 + xe[:, None, :]
    corners = flat[:, lin]  # (bins, n, cells+1, cells+1)
    sums = (corners[:, :, 1:, 1:] - corners[:, :, :-1, 1:]) - (
        corners[:, :, 1:, :-1] - corners[:, :, :-1, :-1]
    )
    out = np.moveaxis(sums, 0, -1).reshape(n, cells * cells * bins)
    out = np.ascontiguousarray(out)
    # four-corner cancellation can leave -1e-17 where the mass is zero
    np.maximum(out, 0.0, out=out)
    totals = out.sum(axis=1)
    nz = totals > 0.0
    out[nz] /= totals[nz, None]
    return out


def cell_hist(stack: np.ndarray, box, cells: int) -> np.ndarray:
    return cell_hist_many(stack, np.asarray([box], dtype=np.int64), cells)[0]

"""Compare the compiled kernels against the numpy fallback.

Times the hot primitives (batched descriptor extraction, Haar responses,
logistic scoring) and one end-to-end detection workload on both backends,
and cross-checks that they agree numerically.

    python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from classigraph import kernels
from classigraph.engine import deep_detect
from classigraph.features import _gradient_stack, _hue_stack, _intensity_table
from classigraph.images import Image
from classigraph.selftest import random_graph, random_image


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _boxes(rng, width, height, count):
    out = np.empty((count, 4), dtype=np.int64)
    for i in range(count):
        x0 = int(rng.integers(0, width - 4))
        y0 = int(rng.integers(0, height - 4))
        out[i] = (x0, y0, int(rng.integers(x0 + 4, width + 1)),
                  int(rng.integers(y0 + 4, height + 1)))
    return out


def build_workloads(rng):
    image = Image.from_rgb(rng.uniform(size=(64, 64, 3)))
    table = _intensity_table(image)
    grad = _gradient_stack(image, 9)
    hue = _hue_stack(image, 12)
    boxes = _boxes(rng, 64, 64, 5000)
    weights = rng.normal(size=36)
    x = rng.uniform(size=36)

    detect_cases = []
    detect_rng = np.random.default_rng(1)
    for _ in range(20):
        graph, top = random_graph(detect_rng, max_concepts=6)
        detect_cases.append((graph, top, random_image(detect_rng, max_size=32)))

    return {
        "cell_hist gradient 2x2x9, 5000 boxes": lambda: kernels.cell_hist_many(grad, boxes, 2),
        "cell_hist hue 2x2x12, 5000 boxes": lambda: kernels.cell_hist_many(hue, boxes, 2),
        "haar four-rect, 5000 boxes": lambda: kernels.haar_many(table, boxes, kernels.HAAR_FOUR),
        "logit_score x10000": lambda: [kernels.logit_score(weights, 0.1, x) for _ in range(10000)],
        "deep_detect, 20 random graphs": lambda: [deep_detect(g, t, im) for g, t, im in detect_cases],
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    available = kernels.available_backends()
    print(f"available backends: {', '.join(available)}")
    rng = np.random.default_rng(0)
    workloads = build_workloads(rng)

    timings = {}
    results = {}
    for backend in available:
        kernels.set_backend(backend)
        timings[backend] = {}
        results[backend] = {}
        for name, fn in workloads.items():
            results[backend][name] = fn()  # warm caches, keep values for comparison
            timings[backend][name] = _time(fn, args.repeats)

    width = max(len(name) for name in workloads)
    header = f"{'workload'.ljust(width)}  " + "  ".join(f"{b:>10}" for b in available)
    print(header)
    print("-" * len(header) + ("   speedup" if len(available) == 2 else ""))
    for name in workloads:
        row = f"{name.ljust(width)}  "
        row += "  ".join(f"{timings[b][name] * 1e3:8.2f}ms" for b in available)
        if len(available) == 2:
            ratio = timings["fallback"][name] / timings["compiled"][name]
            row += f"   {ratio:6.1f}x"
        print(row)

    if len(available) == 2:
        print()
        for name in workloads:
            a = np.asarray(results["compiled"][name], dtype=np.float64)
            b = np.asarray(results["fallback"][name], dtype=np.float64)
            worst = float(np.max(np.abs(a - b))) if a.size else 0.0
            status = "ok" if worst <= 1e-12 else "DISAGREE"
            print(f"agreement {status}: {name} (max |diff| = {worst:.2e})")

    kernels.set_backend("auto")


if __name__ == "__main__":
    main()

"""Command-line entry points.

Exit codes: 0 success, 2 usage error (argparse), 3 data error (missing or
malformed files, unknown names), 4 invariant violation (a model that
parses but breaks the structural guarantees). Every command is
deterministic given --seed; --workers (or CLASSIGRAPH_WORKERS) changes
only wall-clock time, never output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .boosting import SEED_NEGATIVES, TrainConfig, derive_seed, train
from .corpus import DataError, GenerationError, SynthConfig, generate_synthetic, load_dataset
from .engine import deep_detect, response_map
from .graph import GraphError, validate_graph
from .images import load_image, save_pgm
from .model_io import ModelFormatError, ModelInvariantError, load_model, save_model
from .selftest import run_selftest

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="classigraph",
                                     description="classifier-graph recognition system")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a classifier graph on a manifest")
    p_train.add_argument("--config", required=True, help="training config JSON")
    p_train.add_argument("--data", required=True, help="dataset manifest (JSON lines)")
    p_train.add_argument("--out", required=True, help="output model file")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--workers", type=int, default=None)

    p_detect = sub.add_parser("detect", help="score an image with a trained model")
    p_detect.add_argument("--model", required=True)
    p_detect.add_argument("--image", required=True)
    p_detect.add_argument("--class", dest="class_name", required=True)
    p_detect.add_argument("--all-classifiers", action="store_true",
                          help="print every class's classifiers, not just the requested one")

    p_map = sub.add_parser("map", help="export a concept's response grid as PGM + CSV")
    p_map.add_argument("--model", required=True)
    p_map.add_argument("--image", required=True)
    p_map.add_argument("--concept", type=int, required=True)
    p_map.add_argument("--scale", type=float, default=1.0)
    p_map.add_argument("--out", required=True, help="output base path (.pgm/.csv added)")
    p_map.add_argument("--workers", type=int, default=None)

    p_synth = sub.add_parser("synth", help="generate the synthetic part-whole corpus")
    p_synth.add_argument("--config", required=True, help="corpus config JSON")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--out", required=True, help="output directory")

    p_inspect = sub.add_parser("inspect", help="print model statistics")
    p_inspect.add_argument("--model", required=True)

    p_selftest = sub.add_parser("selftest", help="run the built-in verification suite")
    p_selftest.add_argument("--fast", action="store_true")

    return parser


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc


def _cmd_train(args) -> int:
    config = TrainConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        config.seed = args.seed
    samples = load_dataset(
        args.data,
        classes=config.classes,
        split=config.split,
        margin=config.margin,
        negatives_total=config.negatives_total,
        seed=derive_seed(config.seed, 0, SEED_NEGATIVES),
        positive_offsets=[tuple(o) for o in config.positive_offsets],
    )
    result = train(samples, config, workers=args.workers)
    violations = validate_graph(result.state.graph)
    if violations:
        print(f"trained graph failed validation: {violations[0]}", file=sys.stderr)
        return EXIT_INVARIANT
    save_model(result.state.graph, result.state.pool, args.out,
               seed=config.seed, config=config.to_dict())
    with open(args.out + ".report.csv", "w", encoding="ascii") as fh:
        fh.write(result.report.to_csv())
    with open(args.out + ".trace.jsonl", "w", encoding="ascii") as fh:
        fh.write(result.report.trace_jsonl())
    for line in result.report.summary_lines():
        print(line, file=sys.stderr)
    print(args.out)
    return EXIT_OK


def _cmd_detect(args) -> int:
    graph, _, _ = load_model(args.model)
    image = load_image(args.image)
    if args.all_classifiers:
        wanted = sorted(graph.classes)
    else:
        if args.class_name not in graph.classes:
            raise DataError(f"model has no class {args.class_name!r} "
                            f"(available: {sorted(graph.classes)})")
        wanted = [args.class_name]
    print("class,concept_id,score")
    from .engine import DetectionCache, score_concept

    cache = DetectionCache()
    for name in wanted:
        for cid in graph.classes[name]:
            score = score_concept(graph, cid, image, cache=cache)
            print(f"{name},{cid},{score:.17g}")
    return EXIT_OK


def _cmd_map(args) -> int:
    graph, _, _ = load_model(args.model)
    image = load_image(args.image)
    grid = response_map(graph, args.concept, image, scale=args.scale, workers=args.workers)
    save_pgm(args.out + ".pgm", grid.scores)
    with open(args.out + ".csv", "w", encoding="ascii") as fh:
        fh.write("gy,gx,score\n")
        for gy in range(grid.ny):
            for gx in range(grid.nx):
                fh.write(f"{gy},{gx},{grid.scores[gy, gx]:.17g}\n")
    print(args.out + ".pgm")
    print(args.out + ".csv")
    return EXIT_OK


def _cmd_synth(args) -> int:
    config = SynthConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        config.seed = args.seed
    manifest, annotations = generate_synthetic(config, args.out)
    print(manifest)
    print(f"{len(annotations)} annotations", file=sys.stderr)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    graph, pool, meta = load_model(args.model)
    leaf = sum(1 for c in graph.concepts if c.kind == "leaf")
    composite = len(graph.concepts) - leaf
    edges = sum(len(c.parents) for c in graph.concepts)
    print(f"concepts: {len(graph.concepts)} ({leaf} leaf, {composite} composite)")
    print(f"edges: {edges}")
    print(f"feature nodes: {len(graph.features)}")
    by_origin: dict[str, int] = {}
    by_epoch: dict[int, int] = {}
    for fid in pool.entry_ids:
        prov = pool.provenance[fid]
        by_origin[prov.origin] = by_origin.get(prov.origin, 0) + 1
        by_epoch[prov.epoch] = by_epoch.get(prov.epoch, 0) + 1
    print(f"pool: {len(pool)} entries "
          + " ".join(f"{k}={v}" for k, v in sorted(by_origin.items())))
    for epoch in sorted(by_epoch):
        print(f"  epoch {epoch}: {by_epoch[epoch]} entries")
    for name in sorted(graph.classes):
        print(f"class {name}: concepts {graph.classes[name]}")
    for concept in graph.concepts:
        if concept.kind == "composite":
            origins = ",".join(str(fid) for fid in concept.parents)
            print(f"concept {concept.id} (epoch {concept.epoch_created}): parents [{origins}]")
    if meta.get("seed") is not None:
        print(f"training seed: {meta['seed']}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    results = run_selftest(fast=args.fast)
    failed = 0
    for name, passed, detail in results:
        status = "ok  " if passed else "FAIL"
        print(f"{status} {name}: {detail}")
        failed += 0 if passed else 1
    return EXIT_OK if failed == 0 else 1


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "detect": _cmd_detect,
        "map": _cmd_map,
        "synth": _cmd_synth,
        "inspect": _cmd_inspect,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except (ModelInvariantError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (GraphError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DataError, GenerationError, ModelFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Versioned model persistence with bit-exact round-trips.

Every float is serialized as a 17-significant-digit decimal string, which
parses back to the identical 64-bit value on any platform, so a saved and
reloaded model produces scores that match to the last bit. Documents are
emitted with sorted keys and fixed separators, making the file bytes a
pure function of the model.

Loading validates the rebuilt graph; a file that parses but violates the
structural invariants (say a weight edited to "nan") is rejected as an
invariant error, distinct from a malformed or wrong-version file.
"""

from __future__ import annotations

import json

import numpy as np

from .features import FeatureSpec
from .graph import (
    ClassifierGraph,
    ConceptNode,
    FeatureNode,
    FeaturePool,
    Geometry,
    LocationGrid,
    PoolProvenance,
    validate_graph,
)

__all__ = ["FORMAT_VERSION", "ModelFormatError", "ModelInvariantError", "save_model", "load_model"]

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Unreadable file, malformed document, or unsupported version."""


class ModelInvariantError(ValueError):
    """The document parsed but the rebuilt model violates graph invariants."""


def _enc(value: float) -> str:
    return format(float(value), ".17g")


def _enc_list(values) -> list[str]:
    return [_enc(v) for v in values]


def _dec(value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad float field {value!r}") from exc


def _spec_doc(spec: FeatureSpec) -> dict:
    doc = {"kind": spec.kind}
    if spec.kind == "haar":
        doc["haar_kind"] = spec.haar_kind
    else:
        doc["cells"] = spec.cells
        doc["bins"] = spec.bins
    return doc


def _spec_from(doc: dict) -> FeatureSpec:
    try:
        return FeatureSpec(
            kind=doc["kind"],
            haar_kind=doc.get("haar_kind"),
            cells=int(doc.get("cells", 0)),
            bins=int(doc.get("bins", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad feature spec {doc!r}") from exc


def _geometry_doc(geometry: Geometry) -> dict:
    return {
        "p": _enc_list(geometry.p),
        "s": _enc_list(geometry.s),
        "a": _enc_list(geometry.a),
    }


def _geometry_from(doc: dict) -> Geometry:
    try:
        return Geometry(
            p=tuple(_dec(v) for v in doc["p"]),
            s=tuple(_dec(v) for v in doc["s"]),
            a=tuple(_dec(v) for v in doc["a"]),
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"bad geometry {doc!r}") from exc


def _concept_doc(concept: ConceptNode) -> dict:
    doc = {
        "id": concept.id,
        "kind": concept.kind,
        "epoch": concept.epoch_created,
        "weights": _enc_list(concept.weights),
        "bias": _enc(concept.bias),
    }
    if concept.kind == "leaf":
        doc["spec"] = _spec_doc(concept.spec)
    else:
        doc["parents"] = list(concept.parents)
        doc["parent_classifiers"] = {
            str(idx): {"weights": _enc_list(w), "bias": _enc(b)}
            for idx, (w, b) in sorted(concept.parent_classifiers.items())
        }
    return doc


def _feature_doc(node: FeatureNode) -> dict:
    doc = {"id": node.id, "geometry": _geometry_doc(node.geometry)}
    if isinstance(node.ref, int):
        doc["concept_id"] = node.ref
    else:
        doc["spec"] = _spec_doc(node.ref)
    return doc


def model_document(graph: ClassifierGraph, pool: FeaturePool, seed=None, config=None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "config": config,
        "grid": [graph.grid.nx, graph.grid.ny],
        "max_parents": graph.max_parents,
        "classes": {name: list(ids) for name, ids in sorted(graph.classes.items())},
        "concepts": [_concept_doc(c) for c in graph.concepts],
        "features": [_feature_doc(f) for f in graph.features],
        "pool": {
            "entries": list(pool.entry_ids),
            "provenance": [
                {"id": fid, "origin": pool.provenance[fid].origin,
                 "epoch": pool.provenance[fid].epoch}
                for fid in pool.entry_ids
            ],
        },
    }


def save_model(graph: ClassifierGraph, pool: FeaturePool, path, seed=None, config=None) -> None:
    document = model_document(graph, pool, seed=seed, config=config)
    payload = json.dumps(document, sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(payload)
        fh.write("\n")


def _rebuild(document: dict) -> tuple[ClassifierGraph, FeaturePool, dict]:
    try:
        version = document["format_version"]
    except (TypeError, KeyError) as exc:
        raise ModelFormatError("missing format_version") from exc
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r}")
    try:
        grid = LocationGrid(*(int(v) for v in document["grid"]))
        graph = ClassifierGraph(grid=grid, max_parents=int(document["max_parents"]))
        for pos, doc in enumerate(document["concepts"]):
            if int(doc["id"]) != pos:
                raise ModelFormatError(f"concept ids must be dense, got {doc['id']} at {pos}")
            kind = doc["kind"]
            concept = ConceptNode(
                id=pos,
                kind=kind,
                weights=np.array([_dec(v) for v in doc["weights"]], dtype=np.float64),
                bias=_dec(doc["bias"]),
                epoch_created=int(doc.get("epoch", 0)),
                spec=_spec_from(doc["spec"]) if kind == "leaf" else None,
                parents=tuple(int(p) for p in doc.get("parents", ())),
                parent_classifiers={
                    int(idx): (
                        np.array([_dec(v) for v in sub["weights"]], dtype=np.float64),
                        _dec(sub["bias"]),
                    )
                    for idx, sub in doc.get("parent_classifiers", {}).items()
                },
            )
            graph.concepts.append(concept)
        for pos, doc in enumerate(document["features"]):
            if int(doc["id"]) != pos:
                raise ModelFormatError(f"feature ids must be dense, got {doc['id']} at {pos}")
            ref = int(doc["concept_id"]) if "concept_id" in doc else _spec_from(doc["spec"])
            graph.features.append(FeatureNode(id=pos, ref=ref, geometry=_geometry_from(doc["geometry"])))
        for name, ids in document.get("classes", {}).items():
            graph.classes[name] = [int(v) for v in ids]
        pool = FeaturePool()
        provenance = {int(row["id"]): row for row in document["pool"]["provenance"]}
        for fid in document["pool"]["entries"]:
            fid = int(fid)
            row = provenance.get(fid)
            if row is None:
                raise ModelFormatError(f"pool entry {fid} lacks provenance")
            if not 0 <= fid < len(graph.features):
                raise ModelFormatError(f"pool entry {fid} is not a feature node")
            pool.register(graph.features[fid],
                          PoolProvenance(str(row["origin"]), int(row["epoch"])))
        meta = {"seed": document.get("seed"), "config": document.get("config")}
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document ({exc})") from exc
    return graph, pool, meta


def load_model(path) -> tuple[ClassifierGraph, FeaturePool, dict]:
    """Read a model file; raises ModelFormatError / ModelInvariantError."""
    with open(path, "r", encoding="ascii") as fh:
        try:
            document = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"not a model file: {exc}") from exc
    graph, pool, meta = _rebuild(document)
    violations = validate_graph(graph)
    if violations:
        summary = "; ".join(f"{v.kind} at {v.where}: {v.message}" for v in violations[:5])
        raise ModelInvariantError(f"invariant violation on load: {summary}")
    return graph, pool, meta

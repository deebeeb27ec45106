"""Typed storage for the classifier graph and the candidate feature pool.

The graph holds two node families:

  * concept nodes: the actual classifiers. A leaf concept is a logistic
    model over one initial-feature descriptor; a composite concept is a
    logistic model over the pooled outputs of its parent feature nodes.
  * feature nodes: geometric copies. Each one is only a reference (to a
    concept id, or to an initial-feature spec for first-stage candidates)
    plus a location, a scale and a search area, all normalized to the
    reference box of whatever node uses it.

Concept ids are assigned in creation order and parents must predate their
children, so the concept graph is acyclic by construction. A composite may
cite spec-backed feature nodes directly; the fitted per-candidate weights
for those parents live inside the composite payload (feature nodes never
carry weights), which keeps one training epoch producing exactly one new
concept node.

The pool is the growing catalog of candidate feature nodes. It only grows;
inserts are deduplicated against existing entries by exact reference and
near-equal geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSpec

__all__ = [
    "Geometry",
    "ConceptNode",
    "FeatureNode",
    "FeaturePool",
    "ClassifierGraph",
    "LocationGrid",
    "GeometrySampler",
    "GraphError",
    "Violation",
    "spawn_feature_nodes",
    "find_duplicate",
    "validate_graph",
    "desk_sampler",
    "paper_scale_sampler",
    "default_area_catalog",
]

DUPLICATE_TOL = 1e-6


class GraphError(ValueError):
    """A structural precondition on the graph or pool was violated."""


@dataclass(frozen=True)
class Geometry:
    """Placement of a feature node relative to its reference box.

    ``p`` is the center location in [0, 1]^2, ``s`` the box scale in
    (0, 1]^2, and ``a`` the search-area half-extents (ax, ay) >= 0 around
    ``p``. The search rectangle is clipped to [0, 1]^2 and always contains
    ``p`` itself, so it is never empty.
    """

    p: tuple[float, float]
    s: tuple[float, float]
    a: tuple[float, float] = (0.0, 0.0)

    def validate(self) -> str | None:
        """Return a problem description, or None when well-formed."""
        px, py = self.p
        sx, sy = self.s
        ax, ay = self.a
        values = (px, py, sx, sy, ax, ay)
        if not all(np.isfinite(v) for v in values):
            return "non-finite geometry value"
        if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0):
            return f"location {self.p} outside [0,1]^2"
        if not (0.0 < sx <= 1.0 and 0.0 < sy <= 1.0):
            return f"scale {self.s} outside (0,1]"
        if ax < 0.0 or ay < 0.0:
            return f"negative search half-extents {self.a}"
        return None

    def as_array(self) -> np.ndarray:
        return np.array([*self.p, *self.s, *self.a], dtype=np.float64)


@dataclass
class ConceptNode:
    """A learned classifier node.

    Leaf: ``spec`` plus logistic ``weights``/``bias`` over its descriptor.
    Composite: ordered ``parents`` (feature-node ids) with one logistic
    weight per parent; ``parent_classifiers`` maps the index of each
    spec-backed parent to the (weights, bias) of its fitted per-candidate
    descriptor model.
    """

    id: int
    kind: str  # "leaf" | "composite"
    weights: np.ndarray
    bias: float
    epoch_created: int = 0
    spec: FeatureSpec | None = None
    parents: tuple[int, ...] = ()
    parent_classifiers: dict[int, tuple[np.ndarray, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class FeatureNode:
    """A geometric copy: a reference plus transformation parameters."""

    id: int
    ref: int | FeatureSpec  # concept id, or spec for first-stage candidates
    geometry: Geometry

    @property
    def concept_id(self) -> int | None:
        return self.ref if isinstance(self.ref, int) else None


@dataclass(frozen=True)
class PoolProvenance:
    origin: str  # "initial" | "spawned"
    epoch: int


class FeaturePool:
    """Growing catalog of candidate feature nodes, indexed for dedup."""

    def __init__(self):
        self.entry_ids: list[int] = []
        self.provenance: dict[int, PoolProvenance] = {}
        self._by_ref: dict[object, tuple[list[int], list[np.ndarray]]] = {}
        self._stacked: dict[object, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.entry_ids)

    def __contains__(self, feature_id: int) -> bool:
        return feature_id in self.provenance

    def register(self, node: FeatureNode, provenance: PoolProvenance) -> None:
        if node.id in self.provenance:
            raise GraphError(f"feature {node.id} already in pool")
        self.entry_ids.append(node.id)
        self.provenance[node.id] = provenance
        ids, geoms = self._by_ref.setdefault(node.ref, ([], []))
        ids.append(node.id)
        geoms.append(node.geometry.as_array())
        self._stacked.pop(node.ref, None)

    def _geometry_matrix(self, ref) -> tuple[list[int], np.ndarray] | None:
        bucket = self._by_ref.get(ref)
        if bucket is None:
            return None
        stacked = self._stacked.get(ref)
        if stacked is None or stacked.shape[0] != len(bucket[0]):
            stacked = np.vstack(bucket[1])
            self._stacked[ref] = stacked
        return bucket[0], stacked


def find_duplicate(pool: FeaturePool, candidate: FeatureNode, tol: float = DUPLICATE_TOL):
    """Lowest-id pool entry matching the candidate's reference exactly and
    its geometry within L-infinity distance <= tol; None when absent."""
    if tol < 0.0:
        raise GraphError(f"duplicate tolerance must be >= 0, got {tol}")
    bucket = pool._geometry_matrix(candidate.ref)
    if bucket is None:
        return None
    ids, stacked = bucket
    dist = np.abs(stacked - candidate.geometry.as_array()).max(axis=1)
    hits = np.nonzero(dist <= tol)[0]
    if hits.size == 0:
        return None
    # entries are registered in increasing id order, so the first hit wins
    return ids[int(hits[0])]


class ClassifierGraph:
    """Concept nodes, feature nodes, and the class-name index.

    ``grid`` is the global location grid shared by geometry sampling and
    by search-area quantization at inference time. Mutation is
    single-writer; once an epoch's mutations are done the structures are
    treated as immutable by concurrent readers.
    """

    def __init__(self, grid: "LocationGrid | None" = None, max_parents: int = 8):
        if max_parents < 1:
            raise GraphError("max_parents must be >= 1")
        self.concepts: list[ConceptNode] = []
        self.features: list[FeatureNode] = []
        self.classes: dict[str, list[int]] = {}
        self.grid = grid if grid is not None else LocationGrid(5, 5)
        self.max_parents = max_parents

    # -- nodes ----------------------------------------------------------

    def concept(self, concept_id: int) -> ConceptNode:
        if not 0 <= concept_id < len(self.concepts):
            raise GraphError(f"unknown concept id {concept_id}")
        return self.concepts[concept_id]

    def feature(self, feature_id: int) -> FeatureNode:
        if not 0 <= feature_id < len(self.features):
            raise GraphError(f"unknown feature id {feature_id}")
        return self.features[feature_id]

    def add_concept_node(
        self,
        *,
        kind: str,
        weights,
        bias: float,
        spec: FeatureSpec | None = None,
        parents=(),
        parent_classifiers=None,
        epoch: int = 0,
    ) -> int:
        """Append a concept node; returns its id (max existing id + 1)."""
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(weights)) or not np.isfinite(bias):
            raise GraphError("concept weights and bias must be finite")
        new_id = len(self.concepts)
        parent_classifiers = dict(parent_classifiers or {})
        if kind == "leaf":
            if spec is None:
                raise GraphError("leaf concept needs an initial-feature spec")
            if weights.size != spec.length:
                raise GraphError(
                    f"leaf weights length {weights.size} != descriptor length {spec.length}"
                )
            parents = ()
        elif kind == "composite":
            parents = tuple(int(p) for p in parents)
            if not 1 <= len(parents) <= self.max_parents:
                raise GraphError(
                    f"composite parent count {len(parents)} outside [1, {self.max_parents}]"
                )
            if weights.size != len(parents):
                raise GraphError("composite needs one weight per parent")
            for idx, fid in enumerate(parents):
                node = self.feature(fid)  # raises on unknown id
                cid = node.concept_id
                if cid is not None:
                    if cid >= new_id:
                        raise GraphError(
                            f"parent feature {fid} references concept {cid} >= new id {new_id}"
                        )
                    if idx in parent_classifiers:
                        raise GraphError(f"parent {idx} is concept-backed, no embedded classifier")
                else:
                    embedded = parent_classifiers.get(idx)
                    if embedded is None:
                        raise GraphError(f"spec-backed parent {idx} needs an embedded classifier")
                    w, b = embedded
                    w = np.asarray(w, dtype=np.float64).reshape(-1)
                    if not np.all(np.isfinite(w)) or not np.isfinite(b):
                        raise GraphError("embedded classifier weights must be finite")
                    if w.size != node.ref.length:
                        raise GraphError("embedded classifier length mismatches its spec")
                    parent_classifiers[idx] = (w, float(b))
        else:
            raise GraphError(f"unknown concept kind {kind!r}")
        self.concepts.append(
            ConceptNode(
                id=new_id,
                kind=kind,
                weights=weights,
                bias=float(bias),
                epoch_created=epoch,
                spec=spec,
                parents=tuple(parents),
                parent_classifiers=parent_classifiers,
            )
        )
        return new_id

    def add_feature_node(self, ref, geometry: Geometry) -> int:
        problem = geometry.validate()
        if problem is not None:
            raise GraphError(problem)
        if isinstance(ref, (int, np.integer)):
            ref = int(ref)
            self.concept(ref)  # must exist
        elif not isinstance(ref, FeatureSpec):
            raise GraphError(f"feature reference must be a concept id or spec, got {type(ref)}")
        new_id = len(self.features)
        self.features.append(FeatureNode(id=new_id, ref=ref, geometry=geometry))
        return new_id

    def register_class(self, name: str, concept_id: int) -> None:
        if not name:
            raise GraphError("class name must be nonempty")
        self.concept(concept_id)
        self.classes.setdefault(name, []).append(concept_id)


@dataclass(frozen=True)
class Violation:
    kind: str  # "ordering" | "reference" | "parents" | "weights" | "geometry" | "classes"
    where: str
    message: str


def validate_graph(graph: ClassifierGraph) -> list[Violation]:
    """Structural check of the whole graph; empty list means ok.

    Collects every violation instead of stopping at the first, so a
    hand-built or deserialized graph gets a full report.
    """
    out: list[Violation] = []
    n_concepts = len(graph.concepts)
    n_features = len(graph.features)
    for node in graph.features:
        problem = node.geometry.validate()
        if problem is not None:
            out.append(Violation("geometry", f"feature {node.id}", problem))
        cid = node.concept_id
        if cid is not None and not 0 <= cid < n_concepts:
            out.append(Violation("reference", f"feature {node.id}", f"unknown concept {cid}"))
    for concept in graph.concepts:
        if not np.all(np.isfinite(concept.weights)) or not np.isfinite(concept.bias):
            out.append(Violation("weights", f"concept {concept.id}", "non-finite weights"))
        if concept.kind == "leaf":
            if concept.spec is None:
                out.append(Violation("reference", f"concept {concept.id}", "leaf without spec"))
            elif concept.weights.size != concept.spec.length:
                out.append(
                    Violation("weights", f"concept {concept.id}", "weight/descriptor length mismatch")
                )
            continue
        if not 1 <= len(concept.parents) <= graph.max_parents:
            out.append(
                Violation(
                    "parents",
                    f"concept {concept.id}",
                    f"parent count {len(concept.parents)} outside [1, {graph.max_parents}]",
                )
            )
        if concept.weights.size != len(concept.parents):
            out.append(Violation("weights", f"concept {concept.id}", "one weight per parent required"))
        for idx, fid in enumerate(concept.parents):
            if not 0 <= fid < n_features:
                out.append(Violation("reference", f"concept {concept.id}", f"unknown feature {fid}"))
                continue
            parent = graph.features[fid]
            cid = parent.concept_id
            if cid is None:
                embedded = concept.parent_classifiers.get(idx)
                if embedded is None:
                    out.append(
                        Violation(
                            "reference",
                            f"concept {concept.id}",
                            f"spec-backed parent {idx} lacks an embedded classifier",
                        )
                    )
                elif not np.all(np.isfinite(embedded[0])) or not np.isfinite(embedded[1]):
                    out.append(Violation("weights", f"concept {concept.id}", "non-finite embedded weights"))
                elif np.asarray(embedded[0]).size != parent.ref.length:
                    out.append(
                        Violation("weights", f"concept {concept.id}",
                                  f"embedded classifier length mismatches parent {idx} spec")
                    )
            elif cid >= concept.id:
                out.append(
                    Violation(
                        "ordering",
                        f"concept {concept.id}",
                        f"parent feature {fid} references concept {cid}, not earlier than {concept.id}",
                    )
                )
    for name, ids in graph.classes.items():
        if not name:
            out.append(Violation("classes", repr(name), "empty class name"))
        for cid in ids:
            if not 0 <= cid < n_concepts:
                out.append(Violation("classes", name, f"unknown concept {cid}"))
    return out


# -- geometry sampling ---------------------------------------------------


@dataclass(frozen=True)
class LocationGrid:
    """Cell-center grid over the unit square, row-major order."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise GraphError("grid must have at least one cell per axis")

    @property
    def points(self) -> tuple[tuple[float, float], ...]:
        return tuple(
            ((ix + 0.5) / self.nx, (iy + 0.5) / self.ny)
            for iy in range(self.ny)
            for ix in range(self.nx)
        )


@dataclass(frozen=True)
class GeometrySampler:
    """Finite catalogs of locations, scales and search areas to copy from."""

    locations: tuple[tuple[float, float], ...]
    scales: tuple[tuple[float, float], ...]
    areas: tuple[tuple[float, float], ...]
    n_copies: int = 200

    def validate(self) -> None:
        if self.n_copies < 0:
            raise GraphError("n_copies must be >= 0")
        if self.n_copies > 0 and not (self.locations and self.scales and self.areas):
            raise GraphError("sampler catalogs must be nonempty when n_copies > 0")


def default_area_catalog() -> tuple[tuple[float, float], ...]:
    """Nine search areas: a point, plus squares and full-width strips."""
    areas = [(0.0, 0.0)]
    for h in (0.05, 0.1, 0.25, 0.5):
        areas.append((h, h))
        areas.append((0.5, h))
    return tuple(areas)


def desk_sampler(grid: LocationGrid | None = None, n_copies: int = 200) -> GeometrySampler:
    """Small catalogs sized for tests and desk-scale training runs."""
    grid = grid if grid is not None else LocationGrid(5, 5)
    return GeometrySampler(
        locations=grid.points,
        scales=((0.25, 0.25), (0.5, 0.5), (1.0, 1.0)),
        areas=default_area_catalog(),
        n_copies=n_copies,
    )


def paper_scale_sampler() -> GeometrySampler:
    """Production-scale preset: 100 locations x 5 scales x 100 areas,
    50k copies per concept."""
    extents = tuple(0.05 * i for i in range(1, 11))
    return GeometrySampler(
        locations=LocationGrid(10, 10).points,
        scales=((0.1, 0.1), (0.25, 0.25), (0.4, 0.4), (0.6, 0.6), (1.0, 1.0)),
        areas=tuple((ax, ay) for ax in extents for ay in extents),
        n_copies=50_000,
    )


def sample_geometries(sampler: GeometrySampler, seed: int) -> list[Geometry]:
    """Draw ``n_copies`` geometries uniformly over the catalog product."""
    sampler.validate()
    if sampler.n_copies == 0:
        return []
    rng = np.random.default_rng(seed)
    draws = rng.integers(
        0,
        (len(sampler.locations), len(sampler.scales), len(sampler.areas)),
        size=(sampler.n_copies, 3),
    )
    return [
        Geometry(sampler.locations[int(il)], sampler.scales[int(isc)], sampler.areas[int(ia)])
        for il, isc, ia in draws
    ]


def _insert_candidates(graph, pool, ref, geometries, provenance, tol) -> list[int]:
    """Dedup-insert a batch of same-reference candidates, preserving the
    sequential semantics of one find_duplicate call per candidate."""
    if not geometries:
        return []
    rows = np.array([g.as_array() for g in geometries])
    _, first, inverse = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # process unique rows in first-occurrence order so ids come out exactly
    # as a draw-by-draw loop would assign them
    resolved: dict[int, int] = {}
    for unique_idx in sorted(range(len(first)), key=lambda u: int(first[u])):
        geometry = geometries[int(first[unique_idx])]
        candidate = FeatureNode(id=-1, ref=ref, geometry=geometry)
        existing = find_duplicate(pool, candidate, tol)
        if existing is None:
            existing = graph.add_feature_node(ref, geometry)
            pool.register(graph.feature(existing), provenance)
        resolved[unique_idx] = existing
    return [resolved[int(u)] for u in inverse]


def spawn_feature_nodes(
    graph: ClassifierGraph,
    pool: FeaturePool,
    concept_id: int,
    sampler: GeometrySampler,
    seed: int,
    epoch: int = 0,
    tol: float = DUPLICATE_TOL,
) -> list[int]:
    """Make random geometric copies of a concept and add them to the pool.

    Returns one feature id per draw; draws that hit an existing entry
    return the existing id. Deterministic for a fixed seed.
    """
    graph.concept(concept_id)
    geometries = sample_geometries(sampler, seed)
    provenance = PoolProvenance("spawned", epoch)
    return _insert_candidates(graph, pool, int(concept_id), geometries, provenance, tol)


def seed_initial_pool(
    graph: ClassifierGraph,
    pool: FeaturePool,
    specs,
    sampler: GeometrySampler,
    seed: int,
    tol: float = DUPLICATE_TOL,
) -> list[int]:
    """Populate the first-stage candidate catalog: spec-backed copies."""
    out: list[int] = []
    for offset, spec in enumerate(specs):
        geometries = sample_geometries(sampler, seed + offset)
        out.extend(
            _insert_candidates(graph, pool, spec, geometries, PoolProvenance("initial", 0), tol)
        )
    return out

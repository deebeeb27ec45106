"""classigraph: a growable directed graph of logistic classifier nodes.

Classifiers are learned one per epoch by boosting over a pool of
randomized geometric copies of earlier classifiers and first-stage image
descriptors; detection recurses through the graph with max pooling over
each node's search area, memoized so every (classifier, region) pair is
evaluated once.
"""

from .boosting import (
    EpochConfig,
    TrainConfig,
    TrainState,
    adaboost_reweight,
    clusterboost,
    evaluate_candidate,
    fit_logistic,
    run_epoch,
    train,
)
from .clustering import (
    agglomerative,
    cluster_rounds,
    dunn_index,
    evolved_descriptor,
    jaccard_similarity,
    kmeans,
    purity,
)
from .corpus import Sample, SynthConfig, crop_sample, generate_synthetic, load_dataset
from .engine import (
    DetectionCache,
    ResponseGrid,
    deep_detect,
    naive_deep_detect,
    response_map,
    score_concept,
)
from .features import Descriptor, FeatureSpec, descriptor_for, integral_image
from .graph import (
    ClassifierGraph,
    FeatureNode,
    FeaturePool,
    Geometry,
    GeometrySampler,
    LocationGrid,
    desk_sampler,
    find_duplicate,
    paper_scale_sampler,
    spawn_feature_nodes,
    validate_graph,
)
from .images import Image, load_image
from .kernels import backend_name
from .model_io import load_model, save_model

__version__ = "0.1.0"

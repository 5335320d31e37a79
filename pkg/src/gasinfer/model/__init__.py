"""GNN layers in five-stage form, model bundles and the fused local forward."""

from gasinfer.model.aggregate import (
    AggregateError,
    AggregateState,
    Gathered,
    aggregate_finalize,
    aggregate_merge,
)
from gasinfer.model.bundle import (
    ModelBundle,
    ModelFormatError,
    PredictionHead,
    load_model,
    predict,
    save_model,
    seeded_random_model,
)
from gasinfer.model.fused import KHopNeighborhood, NeighborhoodError, Prediction, fused_forward
from gasinfer.model.layers import (
    GatLayer,
    GcnLayer,
    GnnLayer,
    NodeState,
    SageLayer,
    apply_edge,
    apply_node,
    init_embedding,
)
from gasinfer.model.stages import LayerSignature, Stage, stage

__all__ = [
    "AggregateError",
    "AggregateState",
    "GatLayer",
    "Gathered",
    "GcnLayer",
    "GnnLayer",
    "KHopNeighborhood",
    "LayerSignature",
    "ModelBundle",
    "ModelFormatError",
    "NeighborhoodError",
    "NodeState",
    "Prediction",
    "PredictionHead",
    "SageLayer",
    "Stage",
    "aggregate_finalize",
    "aggregate_merge",
    "apply_edge",
    "apply_node",
    "fused_forward",
    "init_embedding",
    "load_model",
    "predict",
    "save_model",
    "seeded_random_model",
    "stage",
]

"""Model bundles: layers plus prediction head, JSON model files and seeded init."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from gasinfer.core.logging import get_logger
from gasinfer.core.models import Algorithm, Strategy
from gasinfer.model.layers import LAYER_TYPES, GnnLayer, NodeState
from gasinfer.model.stages import LayerSignature
from gasinfer.nn.linalg import FLOAT, ActivationKind, DenseMatrix, DenseVector, matvec
from gasinfer.nn.rng import SplitMix64

logger = get_logger(__name__)

FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """A model file is corrupt, of another version, or internally inconsistent."""

    pass


@dataclass(frozen=True)
class PredictionHead:
    """logits = W_out h + b_out."""

    w_out: DenseMatrix
    b_out: DenseVector


@dataclass(frozen=True)
class ModelBundle:
    """An ordered stack of K layers and a prediction head."""

    algorithm: Algorithm
    feature_dim: int
    num_classes: int
    layers: tuple[GnnLayer, ...]
    head: PredictionHead
    version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        if not self.layers:
            raise ModelFormatError("a model needs at least one layer")
        if self.layers[0].input_dim != self.feature_dim:
            raise ModelFormatError(
                f"first layer input dim {self.layers[0].input_dim} != feature dim "
                f"{self.feature_dim}"
            )
        for i, (lower, upper) in enumerate(zip(self.layers, self.layers[1:], strict=False)):
            if lower.output_dim != upper.input_dim:
                raise ModelFormatError(
                    f"layer {i} output dim {lower.output_dim} != layer {i + 1} input dim "
                    f"{upper.input_dim}"
                )
        if self.head.w_out.shape != (self.num_classes, self.layers[-1].output_dim):
            raise ModelFormatError(f"head shape {self.head.w_out.shape} does not fit the model")
        if self.head.b_out.shape != (self.num_classes,):
            raise ModelFormatError(
                f"head bias shape {self.head.b_out.shape} != ({self.num_classes},)"
            )

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def with_strategies(self, strategies: frozenset[Strategy]) -> "ModelBundle":
        """A copy whose layer signatures enable exactly the eligible ``strategies``."""
        layers = tuple(
            type(layer)(
                layer.input_dim,
                layer.output_dim,
                layer.params,
                layer.activation_kind,
                layer.signature.with_strategies(strategies),
                layer.options,
            )
            for layer in self.layers
        )
        return ModelBundle(
            self.algorithm, self.feature_dim, self.num_classes, layers, self.head, self.version
        )

    def same_as(self, other: "ModelBundle") -> bool:
        """Bitwise equality of every parameter, signature and option."""
        if (
            self.algorithm is not other.algorithm
            or self.feature_dim != other.feature_dim
            or self.num_classes != other.num_classes
            or self.depth != other.depth
        ):
            return False
        for mine, theirs in zip(self.layers, other.layers, strict=True):
            if (
                mine.signature != theirs.signature
                or mine.activation_kind is not theirs.activation_kind
                or mine.options != theirs.options
                or mine.params.keys() != theirs.params.keys()
            ):
                return False
            for name, value in mine.params.items():
                if value.tobytes() != theirs.params[name].tobytes():
                    return False
        return (
            self.head.w_out.tobytes() == other.head.w_out.tobytes()
            and self.head.b_out.tobytes() == other.head.b_out.tobytes()
        )


def predict(head: PredictionHead, state: NodeState) -> tuple[DenseVector, int]:
    """Logits and argmax class (ties go to the lowest index)."""
    logits = (matvec(head.w_out, state.embedding) + head.b_out).astype(FLOAT)
    return logits, int(np.argmax(logits))


# ============================================================================
# Model file schema
# ============================================================================


class LayerFile(BaseModel):
    """One layer in a model file."""

    input_dim: int = Field(ge=1)
    output_dim: int = Field(ge=1)
    activation: ActivationKind
    weights: dict[str, list[float] | list[list[float]]]
    options: dict[str, Any] = Field(default_factory=dict)
    signature: LayerSignature


class HeadFile(BaseModel):
    """Prediction head in a model file."""

    W_out: list[list[float]]  # noqa: N815
    b_out: list[float]


class ModelFile(BaseModel):
    """Versioned JSON model document."""

    version: int
    algorithm: Algorithm
    feature_dim: int = Field(ge=1)
    num_classes: int = Field(ge=1)
    layers: list[LayerFile]
    head: HeadFile


def _to_lists(value: np.ndarray) -> Any:
    return value.astype(FLOAT).tolist()


def to_model_file(model: ModelBundle) -> ModelFile:
    return ModelFile(
        version=model.version,
        algorithm=model.algorithm,
        feature_dim=model.feature_dim,
        num_classes=model.num_classes,
        layers=[
            LayerFile(
                input_dim=layer.input_dim,
                output_dim=layer.output_dim,
                activation=layer.activation_kind,
                weights={name: _to_lists(value) for name, value in layer.params.items()},
                options=layer.options,
                signature=layer.signature,
            )
            for layer in model.layers
        ],
        head=HeadFile(W_out=_to_lists(model.head.w_out), b_out=_to_lists(model.head.b_out)),
    )


def from_model_file(document: ModelFile) -> ModelBundle:
    """Rebuild a bundle, checking every shape against the signatures."""
    if document.version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {document.version} (expected {FORMAT_VERSION})"
        )
    layer_type = LAYER_TYPES[document.algorithm]
    try:
        layers = tuple(
            layer_type(
                entry.input_dim,
                entry.output_dim,
                {name: np.array(value, dtype=FLOAT) for name, value in entry.weights.items()},
                entry.activation,
                entry.signature,
                entry.options,
            )
            for entry in document.layers
        )
        head = PredictionHead(
            w_out=np.array(document.head.W_out, dtype=FLOAT).reshape(
                document.num_classes, -1
            ),
            b_out=np.array(document.head.b_out, dtype=FLOAT),
        )
        return ModelBundle(
            document.algorithm, document.feature_dim, document.num_classes, layers, head
        )
    except ModelFormatError:
        raise
    except ValueError as e:
        raise ModelFormatError(f"inconsistent model: {e}") from e


def save_model(model: ModelBundle, path: Path) -> None:
    """Write a model (parameters and per-layer signatures) as JSON."""
    document = to_model_file(model)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(document.model_dump_json(indent=1), encoding="utf-8")
    except OSError as e:
        raise ModelFormatError(f"cannot write model file {path}: {e}") from e
    logger.info("model_saved", path=str(path), algorithm=model.algorithm.value, depth=model.depth)


def load_model(path: Path) -> ModelBundle:
    """
    Load a model file.

    Raises:
        ModelFormatError: If the file is unreadable, corrupt, of another version or
            has inconsistent shapes.
    """
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ModelFormatError(f"cannot read model file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"corrupt model file {path}: {e}") from e

    if isinstance(raw, dict) and raw.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {raw.get('version')} (expected {FORMAT_VERSION})"
        )
    try:
        document = ModelFile.model_validate(raw)
    except ValidationError as e:
        raise ModelFormatError(f"invalid model file {path}: {e}") from e

    model = from_model_file(document)
    logger.info("model_loaded", path=str(path), algorithm=model.algorithm.value, depth=model.depth)
    return model


def seeded_random_model(
    algorithm: Algorithm,
    feature_dim: int,
    hidden_dim: int,
    num_layers: int,
    num_classes: int,
    seed: int,
    strategies: frozenset[Strategy] | None = None,
    options: dict[str, Any] | None = None,
) -> ModelBundle:
    """
    Build a model with Glorot-uniform parameters from a SplitMix64 stream.

    Every parameter of a layer is drawn from uniform(-s, s) with
    s = sqrt(6 / (fan_in + fan_out)) of that layer. Hidden layers use the family's
    activation, the last layer identity.

    Args:
        algorithm: Layer family.
        feature_dim: Raw feature dimension (input of layer 1).
        hidden_dim: Output dimension of every layer.
        num_layers: K.
        num_classes: Head output size.
        seed: Stream seed.
        strategies: Strategy switches recorded in the signatures; None keeps each
            layer's defaults.
        options: Layer options (e.g. GAT ``self_attention``).
    """
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if min(feature_dim, hidden_dim, num_classes) < 1:
        raise ValueError("dimensions must be positive")

    rng = SplitMix64(seed)
    layer_type = LAYER_TYPES[algorithm]
    layers: list[GnnLayer] = []
    input_dim = feature_dim
    for k in range(num_layers):
        last = k == num_layers - 1
        shapes = layer_type.param_shapes(input_dim, hidden_dim)
        params = {
            name: rng.glorot(hidden_dim, input_dim).reshape(shape)
            if len(shape) == 2
            else _draw_vector(rng, shape[0], input_dim, hidden_dim)
            for name, shape in shapes.items()
        }
        layer = layer_type(
            input_dim,
            hidden_dim,
            params,
            ActivationKind.IDENTITY if last else layer_type.hidden_activation,
            options=options,
        )
        if strategies is not None:
            layer = layer_type(
                input_dim,
                hidden_dim,
                layer.params,
                layer.activation_kind,
                layer.signature.with_strategies(strategies),
                layer.options,
            )
        layers.append(layer)
        input_dim = hidden_dim

    head = PredictionHead(
        w_out=rng.glorot(num_classes, hidden_dim),
        b_out=_draw_vector(rng, num_classes, hidden_dim, num_classes),
    )
    model = ModelBundle(algorithm, feature_dim, num_classes, tuple(layers), head)
    logger.info(
        "seeded_model_created",
        algorithm=algorithm.value,
        depth=num_layers,
        feature_dim=feature_dim,
        hidden_dim=hidden_dim,
        seed=seed,
    )
    return model


def _draw_vector(rng: SplitMix64, size: int, fan_in: int, fan_out: int) -> DenseVector:
    scale = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-scale, scale, size)

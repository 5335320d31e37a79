"""Dense float32 linear algebra and activations with a fixed evaluation order.

Products accumulate one input column at a time, so every output element is summed
strictly left to right. A node's result is therefore the same whether it is computed
alone or as one row of a batch.
"""

from enum import Enum

import numpy as np
import numpy.typing as npt

DenseVector = npt.NDArray[np.float32]
DenseMatrix = npt.NDArray[np.float32]

FLOAT = np.float32


class DimensionError(ValueError):
    """Operand shapes do not match."""

    pass


class ActivationKind(str, Enum):
    """Elementwise activations used by built-in layers."""

    IDENTITY = "identity"
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    ELU = "elu"


def as_vector(values: npt.ArrayLike) -> DenseVector:
    """Coerce to a finite 1-d float32 vector."""
    vector = np.asarray(values, dtype=FLOAT)
    if vector.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise ValueError("vector has non-finite values")
    return vector


def as_matrix(values: npt.ArrayLike) -> DenseMatrix:
    """Coerce to a finite 2-d float32 matrix."""
    matrix = np.asarray(values, dtype=FLOAT)
    if matrix.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix has non-finite values")
    return matrix


def matvec(m: DenseMatrix, v: DenseVector) -> DenseVector:
    """Return ``m @ v`` accumulated left to right per output row."""
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec of {m.shape} with vector of dim {v.shape[0]}")
    out = np.zeros(m.shape[0], dtype=FLOAT)
    for j in range(m.shape[1]):
        out += m[:, j] * v[j]
    return out


def dot(a: DenseVector, b: DenseVector) -> np.float32:
    """Left-to-right inner product."""
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"dot of dims {a.shape[0]} and {b.shape[0]}")
    if a.shape[0] == 0:
        return FLOAT(0.0)
    return np.cumsum(a * b, dtype=FLOAT)[-1]


def activation(
    kind: ActivationKind, v: npt.NDArray[np.float32], slope: float = 0.2
) -> npt.NDArray[np.float32]:
    """Apply an elementwise activation (works on vectors and on row batches)."""
    if kind is ActivationKind.IDENTITY:
        return v.astype(FLOAT, copy=True)
    if kind is ActivationKind.RELU:
        return np.maximum(v, FLOAT(0.0)).astype(FLOAT)
    if kind is ActivationKind.LEAKY_RELU:
        if not 0.0 < slope < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
        return np.where(v >= 0, v, FLOAT(slope) * v).astype(FLOAT)
    if kind is ActivationKind.ELU:
        negative = np.minimum(v, FLOAT(0.0))
        return np.where(v >= 0, v, np.expm1(negative)).astype(FLOAT)
    raise ValueError(f"unknown activation: {kind}")


def softmax(scores: DenseVector) -> DenseVector:
    """Max-subtracted softmax; the normalizer is summed in input order."""
    if scores.shape[0] < 1:
        raise DimensionError("softmax of an empty vector")
    shifted = scores.astype(FLOAT) - np.max(scores).astype(FLOAT)
    weights = np.exp(shifted).astype(FLOAT)
    total = np.cumsum(weights, dtype=FLOAT)[-1]
    return (weights / total).astype(FLOAT)

#!/usr/bin/env python3
"""
O(3)-covariant values and scalarization.

Vectors and tensors carry one Dimension for all components. Invariant scalars are
built from pairwise inner products (the Gram matrix); equivariant vector outputs
are sums of input vectors weighted by invariant coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from core.dimensions import Dimension, Quantity, dim_mul
from core.errors import MixedDimsError, SymmetryLabError

logger = logging.getLogger(__name__)

D = 3
ORTHO_TOL = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise SymmetryLabError(f"Components must be finite, got {arr.tolist()}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Vec3:
    """Three components sharing one Dimension."""

    components: np.ndarray
    dim: Dimension = field(default_factory=Dimension.dimensionless)

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen_array(self.components, (D,)))

    def dot(self, other: "Vec3") -> Quantity:
        return Quantity(float(self.components @ other.components), dim_mul(self.dim, other.dim))

    def norm(self) -> Quantity:
        return Quantity(float(np.linalg.norm(self.components)), self.dim)

    def __add__(self, other: "Vec3") -> "Vec3":
        if self.dim != other.dim:
            raise MixedDimsError(f"Cannot add vectors of {self.dim} and {other.dim}")
        return Vec3(self.components + other.components, self.dim)

    def __sub__(self, other: "Vec3") -> "Vec3":
        if self.dim != other.dim:
            raise MixedDimsError(f"Cannot subtract vectors of {other.dim} from {self.dim}")
        return Vec3(self.components - other.components, self.dim)

    def scaled(self, factor: float) -> "Vec3":
        return Vec3(self.components * factor, self.dim)


@dataclass(frozen=True, eq=False)
class Tensor3:
    """3x3 components sharing one Dimension."""

    components: np.ndarray
    dim: Dimension = field(default_factory=Dimension.dimensionless)

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen_array(self.components, (D, D)))


@dataclass(frozen=True, eq=False)
class Orthogonal3:
    """Element of O(3) in its standard matrix representation."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen_array(self.matrix, (D, D))
        if np.max(np.abs(m.T @ m - np.eye(D))) > ORTHO_TOL:
            raise SymmetryLabError("Matrix is not orthogonal within tolerance")
        if abs(abs(np.linalg.det(m)) - 1.0) > ORTHO_TOL:
            raise SymmetryLabError("Orthogonal matrix must have determinant +-1")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Orthogonal3":
        return cls(np.eye(D))

    @classmethod
    def rotation(cls, axis: Sequence[float], angle: float) -> "Orthogonal3":
        """Right-handed rotation by ``angle`` radians about ``axis`` (Rodrigues)."""
        k = np.asarray(axis, dtype=float)
        k = k / np.linalg.norm(k)
        kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        m = np.eye(D) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)
        return cls(m)

    @classmethod
    def reflection(cls, normal: Sequence[float]) -> "Orthogonal3":
        """Mirror through the plane with the given normal."""
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(np.eye(D) - 2.0 * np.outer(n, n))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    def compose(self, other: "Orthogonal3") -> "Orthogonal3":
        """self after other (matrix product self @ other)."""
        return Orthogonal3(self.matrix @ other.matrix)

    def inverse(self) -> "Orthogonal3":
        return Orthogonal3(self.matrix.T)


Value = Union[Quantity, Vec3, Tensor3]


@dataclass(frozen=True, eq=False)
class GeomFeature:
    """A named scalar, vector or tensor."""

    name: str
    value: Value

    def __post_init__(self):
        if not isinstance(self.value, (Quantity, Vec3, Tensor3)):
            raise SymmetryLabError(f"Feature {self.name!r} must hold a Quantity, Vec3 or Tensor3")

    @property
    def kind(self) -> str:
        if isinstance(self.value, Quantity):
            return "scalar"
        if isinstance(self.value, Vec3):
            return "vector3"
        return "tensor3"


def apply_to_vectors(matrix: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Rotate an array of vectors stored along its last axis."""
    return np.asarray(vectors, dtype=float) @ np.asarray(matrix, dtype=float).T


def apply_to_tensors(matrix: np.ndarray, tensors: np.ndarray) -> np.ndarray:
    """R T R^T over an array of tensors stored along its last two axes."""
    m = np.asarray(matrix, dtype=float)
    return m @ np.asarray(tensors, dtype=float) @ m.T


def rotate_feature(f: GeomFeature, R: Orthogonal3) -> GeomFeature:
    """Scalars unchanged, vectors R v, tensors R T R^T; Dimensions unchanged."""
    value = f.value
    if isinstance(value, Quantity):
        return f
    if isinstance(value, Vec3):
        return GeomFeature(f.name, Vec3(R.matrix @ value.components, value.dim))
    return GeomFeature(f.name, Tensor3(apply_to_tensors(R.matrix, value.components), value.dim))


# -------------------------------
# SCALARIZATION
# -------------------------------


def gram_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise inner products of vectors stacked along axis -2 (batched)."""
    v = np.asarray(vectors, dtype=float)
    return v @ np.swapaxes(v, -1, -2)


def gram_invariants(vectors: Sequence[Vec3]) -> List[List[Quantity]]:
    """Symmetric matrix of v_i . v_j with Dimension dim_i * dim_j."""
    if not vectors:
        raise SymmetryLabError("gram_invariants needs at least one vector")
    values = gram_matrix(np.stack([v.components for v in vectors]))
    n = len(vectors)
    return [
        [Quantity(values[i, j], dim_mul(vectors[i].dim, vectors[j].dim)) for j in range(n)]
        for i in range(n)
    ]


def equivariant_combination(coeffs: Sequence[float], vectors: Sequence[Vec3]) -> Vec3:
    """sum_j c_j v_j; all vectors must share one Dimension."""
    if len(coeffs) != len(vectors):
        raise SymmetryLabError(
            f"equivariant_combination needs one coefficient per vector ({len(coeffs)} vs {len(vectors)})"
        )
    if not vectors:
        raise SymmetryLabError("equivariant_combination needs at least one vector")
    dim = vectors[0].dim
    for v in vectors[1:]:
        if v.dim != dim:
            raise MixedDimsError(f"Summands carry different Dimensions: {dim} and {v.dim}")
    stacked = np.stack([v.components for v in vectors])
    return Vec3(np.asarray(coeffs, dtype=float) @ stacked, dim)


def _jacobi_eigenvalues(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(a**2) - np.sum(np.diag(a) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.diag(a).copy()


def spectral_norm_array(t: np.ndarray) -> float:
    """Largest singular value of a 3x3 array."""
    t = np.asarray(t, dtype=float)
    eigenvalues = _jacobi_eigenvalues(t.T @ t)
    return math.sqrt(max(float(np.max(eigenvalues)), 0.0))


def spectral_norm(t: Tensor3) -> Quantity:
    """Largest singular value, Dimension preserved."""
    return Quantity(spectral_norm_array(t.components), t.dim)


# -------------------------------
# SAMPLING
# -------------------------------


def haar_orthogonal(seed: int, proper_only: bool = False) -> Orthogonal3:
    """Uniform element of O(3) (or SO(3)) via QR of a Gaussian matrix with sign fix."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((D, D)))
    q = q * np.sign(np.diag(r))
    if proper_only and np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Orthogonal3(q)


def axial_orthogonal(axis: Sequence[float], seed: int, proper_only: bool = False) -> Orthogonal3:
    """Uniform element of the O(2) fixing ``axis``: a rotation about it, optionally mirrored."""
    rng = np.random.default_rng(seed)
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    rot = Orthogonal3.rotation(k, rng.uniform(0.0, 2.0 * math.pi))
    if proper_only or rng.random() < 0.5:
        return rot
    helper = np.eye(D)[int(np.argmin(np.abs(k)))]
    n = np.cross(k, helper)
    n = Orthogonal3.rotation(k, rng.uniform(0.0, 2.0 * math.pi)).matrix @ (n / np.linalg.norm(n))
    return rot.compose(Orthogonal3.reflection(n))


def vec(components: Sequence[float], dim: Optional[Dimension] = None) -> Vec3:
    """Shorthand constructor."""
    return Vec3(np.asarray(components, dtype=float), dim or Dimension.dimensionless())

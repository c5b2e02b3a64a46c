"""Character articulation: deformation parts, part centers, LBS, and
analytic per-part rigid registration.

A character is articulated by K soft vertex groups ("deformation parts"),
each moved by its own rigid transform about the part's weighted center.
There is no kinematic chain; parts are independent.  The convention for a
transform is ``T(x) = R x + t`` applied to the center-relative offset, so
the pose-neutral transform of part k is ``(I, C_k)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

#: Parts whose total skinning coverage falls below this are degenerate:
#: they get zero centers and rest-preserving transforms and are excluded
#: from fitting and losses.
COVERAGE_EPS = 1e-8


class ArticulationError(ValueError):
    """Dimension mismatch or invalid skinning data."""


def validate_skinning(w: np.ndarray, n_vertices: int | None = None, tol: float = 1e-6) -> np.ndarray:
    """Check the partition-of-unity contract on an (N, K) weight matrix."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ArticulationError(f"skinning weights must be 2-D, got shape {w.shape}")
    if n_vertices is not None and w.shape[0] != n_vertices:
        raise ArticulationError(
            f"skinning rows ({w.shape[0]}) do not match vertex count ({n_vertices})"
        )
    if w.min() < -tol or w.max() > 1.0 + tol:
        raise ArticulationError("skinning weights outside [0, 1]")
    sums = w.sum(axis=1)
    if np.abs(sums - 1.0).max() > tol:
        raise ArticulationError("skinning rows do not sum to 1")
    return w


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: orthonormal rotation (det +1) plus translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64)).reshape(3)
        if r.shape != (3, 3):
            raise ArticulationError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise ArticulationError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ArticulationError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, center=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rest-preserving transform about a part center: (I, C)."""
        return cls(rotation=np.eye(3), translation=np.asarray(center, dtype=np.float64))

    def apply(self, points: np.ndarray, center: np.ndarray) -> np.ndarray:
        """R (p - C) + t for each point p."""
        return (points - center) @ self.rotation.T + self.translation

    def flat(self) -> np.ndarray:
        """12-vector: row-major rotation then translation."""
        return np.concatenate([self.rotation.ravel(), self.translation])

    @classmethod
    def from_flat(cls, values: np.ndarray) -> "RigidTransform":
        values = np.asarray(values, dtype=np.float64).reshape(12)
        return cls(rotation=values[:9].reshape(3, 3), translation=values[9:])


@dataclass(frozen=True)
class PartCenters:
    """Weighted part centers with per-part coverage (column sums of W)."""

    centers: np.ndarray  # (K, 3)
    coverage: np.ndarray  # (K,)

    @property
    def degenerate(self) -> np.ndarray:
        return self.coverage < COVERAGE_EPS


def part_centers(rest: Mesh, w: np.ndarray) -> PartCenters:
    """Skinning-weighted mean vertex position per part.

    Degenerate parts (coverage below COVERAGE_EPS) get the zero center.
    """
    w = validate_skinning(w, rest.n_vertices)
    coverage = w.sum(axis=0)
    centers = np.zeros((w.shape[1], 3))
    ok = coverage >= COVERAGE_EPS
    centers[ok] = (w.T[ok] @ rest.vertices) / coverage[ok, None]
    return PartCenters(centers=centers, coverage=coverage)


def lbs_deform(rest: Mesh, w: np.ndarray, transforms: list[RigidTransform],
               centers: PartCenters | None = None) -> Mesh:
    """Linear blend skinning: V_i = sum_k w_ik [R_k (Vbar_i - C_k) + t_k]."""
    w = validate_skinning(w, rest.n_vertices)
    if len(transforms) != w.shape[1]:
        raise ArticulationError(
            f"{len(transforms)} transforms for {w.shape[1]} parts"
        )
    if centers is None:
        centers = part_centers(rest, w)
    out = np.zeros_like(rest.vertices)
    for k, tf in enumerate(transforms):
        out += w[:, k, None] * tf.apply(rest.vertices, centers.centers[k])
    return rest.with_vertices(out)


def hard_assignment(w: np.ndarray) -> np.ndarray:
    """Per-vertex part label: smallest index attaining the row maximum."""
    w = validate_skinning(w)
    return np.argmax(w, axis=1)


def _kabsch(rest_pts: np.ndarray, posed_pts: np.ndarray, weights: np.ndarray,
            center: np.ndarray) -> RigidTransform:
    """Weighted least-squares rigid fit min sum w ||R(p - C) + t - q||^2.

    Weighted cross-covariance + SVD with det-correction.  Rank-deficient
    point sets fall through the SVD naturally: fully ambiguous axes come
    out as identity.
    """
    wsum = weights.sum()
    mu_rest = weights @ rest_pts / wsum
    mu_posed = weights @ posed_pts / wsum
    h = (weights[:, None] * (posed_pts - mu_posed)).T @ (rest_pts - mu_rest)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0.0:
        d = 1.0
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    t = mu_posed - r @ (mu_rest - center)
    return RigidTransform(rotation=r, translation=t)


def estimate_part_transforms(rest: Mesh, posed: Mesh, w: np.ndarray,
                             centers: PartCenters | None = None) -> list[RigidTransform]:
    """Per-part weighted rigid registration between rest and posed vertices.

    Degenerate parts get the rest-preserving transform (I, C_k).
    """
    w = validate_skinning(w, rest.n_vertices)
    if posed.n_vertices != rest.n_vertices:
        raise ArticulationError("rest and posed vertex counts differ")
    if centers is None:
        centers = part_centers(rest, w)
    out = []
    for k in range(w.shape[1]):
        if centers.coverage[k] < COVERAGE_EPS:
            out.append(RigidTransform.identity(centers.centers[k]))
        else:
            out.append(_kabsch(rest.vertices, posed.vertices, w[:, k],
                               centers.centers[k]))
    return out


def hard_part_transforms(rest: Mesh, posed: Mesh, labels: np.ndarray,
                         centers: PartCenters, min_vertices: int = 3) -> list[RigidTransform | None]:
    """Unweighted per-part Kabsch on argmax-assigned vertex groups.

    Parts with fewer than ``min_vertices`` assigned vertices yield None;
    the transform-regression loss skips them.
    """
    out: list[RigidTransform | None] = []
    for k in range(centers.centers.shape[0]):
        mask = labels == k
        if mask.sum() < min_vertices:
            out.append(None)
            continue
        ones = np.ones(int(mask.sum()))
        out.append(_kabsch(rest.vertices[mask], posed.vertices[mask], ones,
                           centers.centers[k]))
    return out


def save_skinning(w: np.ndarray, path) -> None:
    """Text format: line 1 ``N K``; then N lines of K floats."""
    w = validate_skinning(w)
    with open(path, "w") as fh:
        fh.write(f"{w.shape[0]} {w.shape[1]}\n")
        for row in w:
            fh.write(" ".join(f"{x:.10g}" for x in row) + "\n")


def load_skinning(path) -> np.ndarray:
    with open(path, "r") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ArticulationError(f"{path}: bad skinning header")
        n, k = int(header[0]), int(header[1])
        w = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if w.shape != (n, k):
        raise ArticulationError(f"{path}: expected {(n, k)} weights, got {w.shape}")
    return validate_skinning(w)


def save_transforms(transforms: list[RigidTransform], path) -> None:
    """Text format: K lines of 12 floats (row-major rotation, translation)."""
    with open(path, "w") as fh:
        for tf in transforms:
            fh.write(" ".join(f"{x:.17g}" for x in tf.flat()) + "\n")


def load_transforms(path) -> list[RigidTransform]:
    data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if data.shape[1] != 12:
        raise ArticulationError(f"{path}: expected 12 values per line")
    return [RigidTransform.from_flat(row) for row in data]

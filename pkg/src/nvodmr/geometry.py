"""Diamond crystal frame, NV orientation axes and field projections.

All fields are in millitesla, expressed in the crystal frame
(x || [100], y || [010], z || [001]). Angles at the API boundary are in
degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

AXIS_LABELS = ("kappa", "chi", "phi", "lambda")

# rows: kappa, chi, phi, lambda; scaled by 1/sqrt(3)
_AXIS_SIGNS = np.array(
    [
        [1, 1, 1],
        [-1, -1, 1],
        [-1, 1, -1],
        [1, -1, -1],
    ],
    dtype=int,
)

PROJECTION_MATRIX = _AXIS_SIGNS / np.sqrt(3.0)
PROJECTION_MATRIX.setflags(write=False)


class InconsistentProjectionsError(ValueError):
    """Four projections whose sum is not zero cannot come from any field."""


@dataclass(frozen=True)
class FieldVector:
    bx: float
    by: float
    bz: float

    def __post_init__(self):
        for name in ("bx", "by", "bz"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"field component {name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, arr) -> "FieldVector":
        bx, by, bz = np.asarray(arr, dtype=float).reshape(3)
        return cls(bx, by, bz)

    def as_array(self) -> np.ndarray:
        return np.array([self.bx, self.by, self.bz])

    @property
    def magnitude(self) -> float:
        return math.hypot(self.bx, self.by, self.bz)

    def __neg__(self) -> "FieldVector":
        return FieldVector(-self.bx, -self.by, -self.bz)


@dataclass(frozen=True)
class SphericalField:
    """Field given by magnitude (mT), polar angle theta and azimuth phi (degrees)."""

    magnitude: float
    theta: float
    phi: float

    def __post_init__(self):
        if not self.magnitude >= 0:
            raise ValueError(f"magnitude must be >= 0, got {self.magnitude}")
        if not 0.0 <= self.theta <= 180.0:
            raise ValueError(f"theta must lie in [0, 180] degrees, got {self.theta}")
        if not 0.0 <= self.phi < 360.0:
            raise ValueError(f"phi must lie in [0, 360) degrees, got {self.phi}")


@dataclass(frozen=True)
class NvAxis:
    label: str
    unit_vector: tuple

    def as_array(self) -> np.ndarray:
        return np.array(self.unit_vector)


@dataclass(frozen=True)
class ProjectionSet:
    """Signed field projections onto the four NV axes, in mT."""

    b_kappa: float
    b_chi: float
    b_phi: float
    b_lambda: float

    @classmethod
    def from_array(cls, arr) -> "ProjectionSet":
        values = np.asarray(arr, dtype=float).reshape(4)
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([self.b_kappa, self.b_chi, self.b_phi, self.b_lambda])

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.as_array())

    @property
    def total(self) -> float:
        return float(self.as_array().sum())


@dataclass(frozen=True, eq=False)
class SymmetryOperation:
    """Signed permutation matrix acting on crystal-frame vectors."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=int).reshape(3, 3)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def determinant(self) -> int:
        return int(round(np.linalg.det(self.matrix)))

    def apply(self, b):
        if isinstance(b, FieldVector):
            return FieldVector.from_array(self.matrix @ b.as_array())
        return np.asarray(b, dtype=float) @ self.matrix.T

    def compose(self, other: "SymmetryOperation") -> "SymmetryOperation":
        """Return the operation ``self`` applied after ``other``."""
        return SymmetryOperation(self.matrix @ other.matrix)

    def _key(self):
        return tuple(self.matrix.ravel().tolist())

    def __eq__(self, other):
        if not isinstance(other, SymmetryOperation):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


def nv_axes() -> list[NvAxis]:
    """The four NV orientation axes in fixed order (kappa, chi, phi, lambda)."""
    return [
        NvAxis(label, tuple(float(c) for c in row))
        for label, row in zip(AXIS_LABELS, PROJECTION_MATRIX)
    ]


def spherical_to_cartesian(s: SphericalField) -> FieldVector:
    theta = np.deg2rad(s.theta)
    phi = np.deg2rad(s.phi)
    return FieldVector(
        s.magnitude * np.sin(theta) * np.cos(phi),
        s.magnitude * np.sin(theta) * np.sin(phi),
        s.magnitude * np.cos(theta),
    )


def spherical_grid(magnitude, theta_deg, phi_deg) -> np.ndarray:
    """Cartesian fields for every (theta, phi) pair, shape ``(n_theta, n_phi, 3)``."""
    theta = np.deg2rad(np.asarray(theta_deg, dtype=float))[:, None]
    phi = np.deg2rad(np.asarray(phi_deg, dtype=float))[None, :]
    sin_t = np.sin(theta)
    return magnitude * np.stack(
        np.broadcast_arrays(sin_t * np.cos(phi), sin_t * np.sin(phi), np.cos(theta)),
        axis=-1,
    )


def project_array(fields) -> np.ndarray:
    """Vectorised projection: ``(..., 3)`` fields to ``(..., 4)`` projections."""
    return np.asarray(fields, dtype=float) @ PROJECTION_MATRIX.T


def project_field(b: FieldVector) -> ProjectionSet:
    return ProjectionSet.from_array(PROJECTION_MATRIX @ b.as_array())


def sum_zero_tolerance(projections, abs_floor=1e-9, rel=1e-9) -> float:
    p = np.asarray(projections, dtype=float)
    return max(abs_floor, rel * float(np.max(np.abs(p))))


def reconstruct_field(p: ProjectionSet, tol: float | None = None) -> FieldVector:
    """Invert :func:`project_field` using the left inverse ``(3/4) T^T``.

    ``tol`` bounds the allowed ``|sum(B_i)|``; by default
    ``max(1e-9, 1e-9 * max|B_i|)``.
    """
    values = p.as_array() if isinstance(p, ProjectionSet) else np.asarray(p, dtype=float)
    if tol is None:
        tol = sum_zero_tolerance(values)
    total = float(values.sum())
    if abs(total) > tol:
        raise InconsistentProjectionsError(
            f"projections sum to {total:.6g} mT (tolerance {tol:.3g}); "
            "no single field produces them"
        )
    return FieldVector.from_array(0.75 * PROJECTION_MATRIX.T @ values)


def gram_matrix_exact() -> list[list[Fraction]]:
    """``T^T T`` in exact rational arithmetic (the 1/sqrt(3) factor squared is 1/3)."""
    signs = _AXIS_SIGNS.tolist()
    return [
        [
            Fraction(sum(row[i] * row[j] for row in signs), 3)
            for j in range(3)
        ]
        for i in range(3)
    ]


def _generators() -> list[np.ndarray]:
    gens = []
    # coordinate transpositions
    for i, j in ((0, 1), (1, 2), (0, 2)):
        m = np.eye(3, dtype=int)
        m[[i, j]] = m[[j, i]]
        gens.append(m)
    # single-axis sign flips
    for i in range(3):
        m = np.eye(3, dtype=int)
        m[i, i] = -1
        gens.append(m)
    return gens


def preserves_axis_lines(matrix) -> bool:
    """True if ``matrix`` maps the set of NV axis lines {+-e_i} onto itself."""
    lines = {tuple(row) for row in _AXIS_SIGNS.tolist()}
    lines |= {tuple(-c for c in row) for row in lines}
    m = np.asarray(matrix, dtype=int)
    return {tuple((m @ np.array(row)).tolist()) for row in lines} == lines


def symmetry_group() -> list[SymmetryOperation]:
    """The 48 crystal-frame operations that permute the NV axis lines.

    Built by closing the generator set under composition.
    """
    gens = _generators()
    seen = {tuple(np.eye(3, dtype=int).ravel())}
    frontier = [np.eye(3, dtype=int)]
    while frontier:
        nxt = []
        for m in frontier:
            for g in gens:
                prod = g @ m
                key = tuple(prod.ravel())
                if key not in seen:
                    seen.add(key)
                    nxt.append(prod)
        frontier = nxt
    ops = [SymmetryOperation(np.array(k).reshape(3, 3)) for k in sorted(seen)]
    return [op for op in ops if preserves_axis_lines(op.matrix)]


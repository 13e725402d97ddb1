"""Ground-state spin-1 Hamiltonian of the four NV orientation classes.

Two routes to the eight transition frequencies are provided:

* :func:`first_order_transitions` keeps only the field component along each
  NV axis, giving ``f = D +- gamma * B_i``;
* :func:`exact_transitions` diagonalises the full ``3 x 3`` Hamiltonian
  ``D Sz^2 + gamma B.S`` in each NV frame with a closed-form eigen solver.

Frequencies are in MHz, fields in mT.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import AXIS_LABELS, PROJECTION_MATRIX, FieldVector, ProjectionSet


@dataclass(frozen=True)
class HamiltonianParams:
    d_zfs: float = 2870.0
    gamma: float = 28.0

    def __post_init__(self):
        if not self.d_zfs > 0:
            raise ValueError(f"d_zfs must be positive, got {self.d_zfs}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True, eq=False)
class SpinOperators:
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray


@lru_cache(maxsize=None)
def spin_operators() -> SpinOperators:
    """Spin-1 matrices in the ``|+1>, |0>, |-1>`` basis."""
    s = 1.0 / np.sqrt(2.0)
    sx = s * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
    sy = s * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    for m in (sx, sy, sz):
        m.setflags(write=False)
    return SpinOperators(sx, sy, sz)


@dataclass(frozen=True)
class TransitionPair:
    axis: str
    f_minus: float
    f_plus: float

    def __post_init__(self):
        if self.f_minus > self.f_plus:
            raise ValueError("f_minus must not exceed f_plus")


@dataclass(frozen=True)
class TransitionTable:
    pairs: tuple

    def __post_init__(self):
        pairs = tuple(self.pairs)
        if [p.axis for p in pairs] != list(AXIS_LABELS):
            raise ValueError(f"expected one pair per axis in order {AXIS_LABELS}")
        object.__setattr__(self, "pairs", pairs)

    def frequencies(self) -> np.ndarray:
        """All eight resonance frequencies, sorted ascending."""
        return np.sort([f for p in self.pairs for f in (p.f_minus, p.f_plus)])

    def pair(self, axis: str) -> TransitionPair:
        return self.pairs[AXIS_LABELS.index(axis)]

    def to_dict(self) -> dict:
        return {p.axis: {"f_minus": p.f_minus, "f_plus": p.f_plus} for p in self.pairs}


def zeeman_splitting(t: TransitionPair) -> float:
    return t.f_plus - t.f_minus


def first_order_frequencies(projections, h: HamiltonianParams = HamiltonianParams()) -> np.ndarray:
    """Vectorised first-order model: ``(..., 4)`` projections to ``(..., 8)`` frequencies.

    The last axis holds ``f_minus`` then ``f_plus`` for each NV class in
    axis order. Frequencies are not globally sorted.
    """
    shift = h.gamma * np.abs(np.asarray(projections, dtype=float))
    return np.concatenate([h.d_zfs - shift, h.d_zfs + shift], axis=-1)


def first_order_transitions(p: ProjectionSet, h: HamiltonianParams = HamiltonianParams()) -> TransitionTable:
    shift = h.gamma * np.abs(p.as_array())
    return TransitionTable(
        tuple(
            TransitionPair(label, float(h.d_zfs - s), float(h.d_zfs + s))
            for label, s in zip(AXIS_LABELS, shift)
        )
    )


@lru_cache(maxsize=None)
def local_frames() -> np.ndarray:
    """Rotation matrices (rows x', y', z') taking crystal vectors into each NV frame.

    x' is the part of [100] orthogonal to the NV axis ([010] if that vanishes).
    """
    frames = []
    for axis in PROJECTION_MATRIX:
        for ref in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
            x = ref - axis * (ref @ axis)
            norm = np.linalg.norm(x)
            if norm > 1e-8:
                break
        x = x / norm
        y = np.cross(axis, x)
        frames.append(np.vstack([x, y, axis]))
    out = np.array(frames)
    out.setflags(write=False)
    return out


def nv_hamiltonian(b_local, h: HamiltonianParams = HamiltonianParams()) -> np.ndarray:
    """``D Sz^2 + gamma B.S`` for a field given in the NV local frame."""
    ops = spin_operators()
    bx, by, bz = np.asarray(b_local, dtype=float)
    return h.d_zfs * (ops.sz @ ops.sz) + h.gamma * (bx * ops.sx + by * ops.sy + bz * ops.sz)


def _cubic_eigvalsh3(a: np.ndarray) -> np.ndarray:
    q = float(np.trace(a).real) / 3.0
    shifted = a - q * np.eye(3)
    p = np.sqrt(float(np.sum(np.abs(shifted) ** 2)) / 6.0)
    if p == 0.0:
        return np.full(3, q)
    c = shifted / p
    det = (
        c[0, 0] * (c[1, 1] * c[2, 2] - c[1, 2] * c[2, 1])
        - c[0, 1] * (c[1, 0] * c[2, 2] - c[1, 2] * c[2, 0])
        + c[0, 2] * (c[1, 0] * c[2, 1] - c[1, 1] * c[2, 0])
    )
    r = min(1.0, max(-1.0, det.real / 2.0))
    angle = np.arccos(r) / 3.0
    top = q + 2.0 * p * np.cos(angle)
    bottom = q + 2.0 * p * np.cos(angle + 2.0 * np.pi / 3.0)
    return np.array([bottom, 3.0 * q - top - bottom, top])


def _null_vector(m: np.ndarray) -> np.ndarray:
    # rank-2 matrix: any two independent rows are orthogonal (bilinearly) to the kernel
    candidates = [np.cross(m[0], m[1]), np.cross(m[0], m[2]), np.cross(m[1], m[2])]
    best = max(candidates, key=lambda v: np.linalg.norm(v))
    return best / np.linalg.norm(best)


def hermitian_eigvalsh3(a) -> np.ndarray:
    """Eigenvalues of a ``3 x 3`` Hermitian matrix in ascending order.

    The characteristic cubic is solved in closed (trigonometric) form. Its
    roots lose accuracy when two eigenvalues nearly coincide, so only the
    most isolated root is kept: its eigenvector is deflated out and the
    remaining ``2 x 2`` block is solved exactly.
    """
    a = np.asarray(a, dtype=complex)
    rough = _cubic_eigvalsh3(a)
    if rough[2] - rough[0] == 0.0:
        return rough
    # keep the extreme eigenvalue with the wider gap to its neighbour
    idx = 0 if rough[1] - rough[0] >= rough[2] - rough[1] else 2
    u = _null_vector(a - rough[idx] * np.eye(3))
    isolated = float((u.conj() @ a @ u).real)

    k = int(np.argmin(np.abs(u)))
    v = -u.conj()[k] * u
    v[k] += 1.0
    v /= np.linalg.norm(v)
    w = np.cross(u, v).conj()
    w /= np.linalg.norm(w)
    basis = np.column_stack([v, w])
    block = basis.conj().T @ a @ basis
    mean = 0.5 * float((block[0, 0] + block[1, 1]).real)
    radius = float(np.hypot(0.5 * (block[0, 0] - block[1, 1]).real, abs(block[0, 1])))
    return np.sort([isolated, mean - radius, mean + radius])


def exact_transitions(
    b: FieldVector,
    h: HamiltonianParams = HamiltonianParams(),
    max_field_mt: float = 100.0,
) -> TransitionTable:
    """Transition frequencies from full diagonalisation of each NV Hamiltonian.

    Levels are sorted and the two transitions are taken from the lowest
    level, which is the ``m_s = 0``-like state for ``|b| < max_field_mt``.
    """
    if b.magnitude >= max_field_mt:
        raise ValueError(
            f"|B| = {b.magnitude:g} mT is outside the low-field model range (< {max_field_mt:g} mT)"
        )
    pairs = []
    for label, frame in zip(AXIS_LABELS, local_frames()):
        energies = hermitian_eigvalsh3(nv_hamiltonian(frame @ b.as_array(), h))
        pairs.append(
            TransitionPair(
                label,
                float(energies[1] - energies[0]),
                float(energies[2] - energies[0]),
            )
        )
    return TransitionTable(tuple(pairs))

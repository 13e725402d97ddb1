import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvodmr.geometry import (
    AXIS_LABELS,
    PROJECTION_MATRIX,
    FieldVector,
    InconsistentProjectionsError,
    ProjectionSet,
    SphericalField,
    SymmetryOperation,
    gram_matrix_exact,
    nv_axes,
    preserves_axis_lines,
    project_array,
    project_field,
    reconstruct_field,
    spherical_grid,
    spherical_to_cartesian,
    symmetry_group,
)

import oracles

components = st.floats(min_value=-4.0, max_value=4.0, allow_nan=False)
fields = st.builds(FieldVector, components, components, components)
MAGIC_THETA = math.degrees(math.acos(1 / math.sqrt(3)))


def test_axes_match_hand_written_table():
    np.testing.assert_allclose(PROJECTION_MATRIX, oracles.AXES, atol=1e-15)
    assert [a.label for a in nv_axes()] == list(AXIS_LABELS)
    for a in nv_axes():
        assert np.linalg.norm(a.as_array()) == pytest.approx(1.0, abs=1e-15)


def test_projection_matrix_is_read_only():
    with pytest.raises(ValueError):
        PROJECTION_MATRIX[0, 0] = 0.0


def test_gram_matrix_is_four_thirds_identity():
    g = gram_matrix_exact()
    assert g == [[Fraction(4, 3) if i == j else Fraction(0) for j in range(3)] for i in range(3)]


@pytest.mark.parametrize(
    "bad", [(math.nan, 0, 0), (0, math.inf, 0), (0, 0, -math.inf)]
)
def test_field_vector_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        FieldVector(*bad)


@pytest.mark.parametrize(
    "kwargs",
    [dict(magnitude=-1, theta=0, phi=0), dict(magnitude=1, theta=181, phi=0), dict(magnitude=1, theta=0, phi=-1)],
)
def test_spherical_field_range_checks(kwargs):
    with pytest.raises(ValueError):
        SphericalField(**kwargs)


def test_spherical_to_cartesian_body_diagonal():
    b = spherical_to_cartesian(SphericalField(3.0, MAGIC_THETA, 45.0))
    np.testing.assert_allclose(b.as_array(), np.full(3, 3 / math.sqrt(3)), rtol=1e-12)


def test_spherical_to_cartesian_pole():
    b = spherical_to_cartesian(SphericalField(2.0, 0.0, 123.0))
    np.testing.assert_allclose(b.as_array(), [0, 0, 2.0], atol=1e-15)


def test_spherical_grid_matches_scalar_conversion():
    theta, phi = np.array([0.0, 30.0, 90.0]), np.array([0.0, 45.0, 200.0, 359.0])
    grid = spherical_grid(3.0, theta, phi)
    assert grid.shape == (3, 4, 3)
    for i, t in enumerate(theta):
        for j, p in enumerate(phi):
            expected = spherical_to_cartesian(SphericalField(3.0, t, p)).as_array()
            np.testing.assert_allclose(grid[i, j], expected, atol=1e-15)


def test_project_field_along_z():
    b = 3.0
    p = project_field(FieldVector(0, 0, b)).as_array()
    np.testing.assert_allclose(p, [b, b, -b, -b] / np.sqrt(3), rtol=1e-15)


def test_project_field_along_kappa_gives_4b_pattern():
    p = project_field(FieldVector(1, 1, 1)).as_array()
    np.testing.assert_allclose(p, [math.sqrt(3), -1 / math.sqrt(3), -1 / math.sqrt(3), -1 / math.sqrt(3)], rtol=1e-14)


def test_reconstruct_z_field():
    b = 2.5
    p = ProjectionSet(b / math.sqrt(3), b / math.sqrt(3), -b / math.sqrt(3), -b / math.sqrt(3))
    np.testing.assert_allclose(reconstruct_field(p).as_array(), [0, 0, b], atol=1e-15)


def test_reconstruct_rejects_inconsistent_projections():
    with pytest.raises(InconsistentProjectionsError):
        reconstruct_field(ProjectionSet(1, 1, 1, 1))


def test_reconstruct_tolerance_is_configurable():
    p = ProjectionSet(1.0, -1.0, 0.5, -0.499)
    with pytest.raises(InconsistentProjectionsError):
        reconstruct_field(p)
    b = reconstruct_field(p, tol=0.01)
    # left inverse drops the residual sum
    np.testing.assert_allclose(b.as_array(), 0.75 * PROJECTION_MATRIX.T @ p.as_array())


def test_reconstruct_near_zero_field_uses_absolute_floor():
    p = ProjectionSet(1e-12, -1e-12, 5e-13, -5e-13 + 5e-10)
    b = reconstruct_field(p)
    np.testing.assert_allclose(b.as_array(), 0.75 * PROJECTION_MATRIX.T @ p.as_array())


@given(fields)
def test_projections_sum_to_zero(b):
    p = project_field(b)
    assert abs(p.total) <= 1e-12 * max(b.magnitude, 1e-300) + 1e-300


@given(fields)
def test_reconstruct_inverts_project(b):
    back = reconstruct_field(project_field(b)).as_array()
    assert np.max(np.abs(back - b.as_array())) <= 1e-12 * max(b.magnitude, 1.0)


def test_projection_algebra_on_many_fields(rng):
    b = oracles.random_fields(rng, 10_000, 4.0)
    p = project_array(b)
    mags = np.linalg.norm(b, axis=1)
    assert np.all(np.abs(p.sum(axis=1)) <= 1e-12 * mags)
    back = 0.75 * p @ PROJECTION_MATRIX
    assert np.all(np.linalg.norm(back - b, axis=1) <= 1e-12 * mags)


def test_symmetry_group_matches_brute_force():
    brute = {
        tuple(m.ravel()) for m in oracles.signed_permutation_matrices()
        if oracles.maps_axis_lines_to_themselves(m)
    }
    group = {tuple(g.matrix.ravel()) for g in symmetry_group()}
    assert len(group) == 48
    assert group == brute


def test_symmetry_group_closed_and_contains_identity_and_inversion():
    group = set(symmetry_group())
    assert SymmetryOperation(np.eye(3)) in group
    assert SymmetryOperation(-np.eye(3)) in group
    for g in group:
        for h in group:
            assert g.compose(h) in group
    assert sorted(g.determinant for g in group) == [-1] * 24 + [1] * 24


def test_preserves_axis_lines_rejects_non_symmetry():
    rot = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]])
    assert preserves_axis_lines(rot)
    shear = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]])
    assert not preserves_axis_lines(shear)


def test_symmetry_preserves_projection_magnitudes(rng):
    b = oracles.random_fields(rng, 1000, 4.0)
    ref = np.sort(np.abs(project_array(b)), axis=1)
    for g in symmetry_group():
        moved = np.sort(np.abs(project_array(g.apply(b))), axis=1)
        np.testing.assert_allclose(moved, ref, atol=1e-12)


def test_symmetry_apply_on_field_vector():
    g = SymmetryOperation(np.diag([-1, 1, 1]))
    assert g.apply(FieldVector(1, 2, 3)) == FieldVector(-1, 2, 3)


def test_field_vector_helpers():
    b = FieldVector.from_array([3, 4, 0])
    assert b.magnitude == 5.0
    assert -b == FieldVector(-3, -4, 0)

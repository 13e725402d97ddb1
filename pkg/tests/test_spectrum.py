import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvodmr.geometry import FieldVector, ProjectionSet, project_array, project_field, symmetry_group
from nvodmr.hamiltonian import first_order_transitions
from nvodmr.spectrum import (
    CASE_LABELS,
    FrequencyGrid,
    LineshapeParams,
    NoiseModel,
    classify_case,
    cluster_dips,
    count_dips,
    count_dips_array,
    dip_count_heatmap,
    lorentzian,
    nominal_dip_count,
    resonance_lines,
    synthesize_spectrum,
)

import oracles

D, GAMMA = 2870.0, 28.0
S3 = math.sqrt(3)


def table(b):
    return first_order_transitions(project_field(FieldVector(*b)))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(contrast=0.0),
        dict(contrast=1.0),
        dict(fwhm_mhz=0),
        dict(baseline=-1),
        dict(intrinsic_splitting_mhz=-0.1),
    ],
)
def test_lineshape_validation(kwargs):
    with pytest.raises(ValueError):
        LineshapeParams(**kwargs)


def test_grid_and_noise_validation():
    with pytest.raises(ValueError):
        FrequencyGrid(3000, 2900, 10)
    with pytest.raises(ValueError):
        FrequencyGrid(2800, 2900, 1)
    with pytest.raises(ValueError):
        NoiseModel(sigma=-1)
    assert FrequencyGrid().step_mhz == pytest.approx(0.2)


def test_lorentzian_half_maximum():
    assert lorentzian(2870.0, 2870.0, 12.0) == 1.0
    assert lorentzian(2876.0, 2870.0, 12.0) == pytest.approx(0.5)


def test_spectrum_matches_direct_formula():
    lp = LineshapeParams(contrast=0.02, fwhm_mhz=9.0, baseline=1.3)
    t = table((0.7, -1.1, 2.0))
    s = synthesize_spectrum(t, lp)
    expected = np.full_like(s.frequencies, lp.baseline)
    for fk in t.frequencies():
        expected -= lp.baseline * lp.contrast / (1 + (2 * (s.frequencies - fk) / lp.fwhm_mhz) ** 2)
    np.testing.assert_allclose(s.values, expected, rtol=1e-14)
    assert len(s) == 1701


def test_zero_field_single_dip_of_eight_resonances():
    lp = LineshapeParams(contrast=0.01)
    s = synthesize_spectrum(table((0, 0, 0)), lp)
    i = np.argmin(s.values)
    assert s.frequencies[i] == pytest.approx(D)
    assert 1 - s.values[i] == pytest.approx(8 * lp.contrast, rel=1e-12)


def test_case2_spectrum_has_two_dips():
    s = synthesize_spectrum(table((0, 0, 3)))
    interior = (s.values[1:-1] < s.values[:-2]) & (s.values[1:-1] < s.values[2:])
    minima = s.frequencies[1:-1][interior]
    np.testing.assert_allclose(minima, [D - 48.5, D + 48.5], atol=0.11)


def test_isolated_dip_depth():
    # kappa axis: projection 3.46 mT, others far away (>=10 linewidths)
    lp = LineshapeParams(contrast=0.01, fwhm_mhz=2.0)
    b = 6.0 * oracles.AXES[0]
    s = synthesize_spectrum(table(b), lp, FrequencyGrid(2600, 3140, 54001))
    f_low = D - GAMMA * 6.0
    i = np.argmin(np.abs(s.frequencies - f_low))
    assert s.values[i] == pytest.approx(lp.baseline * (1 - lp.contrast), rel=0.01)


def test_noise_is_seeded_and_deterministic():
    t = table((1, 2, 3))
    a = synthesize_spectrum(t, noise=NoiseModel(0.001, seed=7))
    b = synthesize_spectrum(t, noise=NoiseModel(0.001, seed=7))
    c = synthesize_spectrum(t, noise=NoiseModel(0.001, seed=8))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_grid_too_narrow_flag():
    t = table((0, 0, 3))
    assert not synthesize_spectrum(t).grid_too_narrow
    assert synthesize_spectrum(t, g=FrequencyGrid(2850, 2900, 51)).grid_too_narrow


def test_meta_records_settings():
    s = synthesize_spectrum(table((0, 0, 1)), meta={"field": FieldVector(0, 0, 1)})
    assert s.meta["field"] == FieldVector(0, 0, 1)
    assert isinstance(s.meta["lineshape"], LineshapeParams)


def test_intrinsic_splitting_at_zero_field():
    lp = LineshapeParams(intrinsic_splitting_mhz=10.0)
    centers, depths = resonance_lines(table((0, 0, 0)), lp)
    assert sorted(set(centers.tolist())) == [2865.0, 2875.0]
    assert depths.sum() == pytest.approx(8 * lp.contrast)


def test_intrinsic_splitting_skips_resolved_pairs():
    lp = LineshapeParams(intrinsic_splitting_mhz=10.0)
    centers, _ = resonance_lines(table((0, 0, 3)), lp)
    assert len(centers) == 8


@pytest.mark.parametrize(
    "freqs, threshold, n",
    [
        ([2870, 2870, 2870], 12, 1),
        ([2821.5] * 4 + [2918.5] * 4, 12, 2),
        ([2860, 2871, 2882], 12, 1),
        ([2860, 2871, 2883], 12, 2),
        ([2900, 2800], 12, 2),
    ],
)
def test_cluster_dips(freqs, threshold, n):
    clusters = cluster_dips(freqs, threshold)
    assert len(clusters) == n
    centers = [c.center for c in clusters]
    assert centers == sorted(centers)
    assert sum(len(c.members) for c in clusters) == len(freqs)


def test_cluster_dips_requires_input():
    with pytest.raises(ValueError):
        cluster_dips([])


@given(st.lists(st.floats(2700, 3040), min_size=1, max_size=8), st.floats(0.5, 30))
def test_clusters_are_separated_by_threshold(freqs, threshold):
    clusters = cluster_dips(freqs, threshold)
    for a, b in zip(clusters[:-1], clusters[1:]):
        assert b.members[0] - a.members[-1] >= threshold - 1e-9
    for c in clusters:
        assert all(y - x < threshold for x, y in zip(c.members[:-1], c.members[1:]))


@pytest.mark.parametrize(
    "b, expected",
    [
        ((0, 0, 3), 2),
        ((3 / math.sqrt(2), 3 / math.sqrt(2), 0), 3),
        ((S3, S3, S3), 4),
    ],
)
def test_count_dips_examples(b, expected):
    assert count_dips(FieldVector(*b)) == expected


@pytest.mark.parametrize(
    "p, case",
    [
        ((0, 0, 0, 0), "1"),
        ((1 / S3, 1 / S3, -1 / S3, -1 / S3), "2"),
        ((math.sqrt(2 / 3), -math.sqrt(2 / 3), 0, 0), "3"),
        ((1.0, -1.0, 0.4, -0.4), "4a"),
        ((S3, -1 / S3, -1 / S3, -1 / S3), "4b"),
        ((math.sqrt(8 / 9), 0, -0.5 * math.sqrt(8 / 9), -0.5 * math.sqrt(8 / 9)), "5"),
        ((1.0, 0.5, -0.5, -1.0), "4a"),
        ((1.2, -0.3, -0.3, -0.6), "6"),
        ((1.0, -0.3, -0.7, 0.0), "7"),
        ((1.0, -0.2, -0.5, -0.3), "8"),
    ],
)
def test_classify_case(p, case):
    assert classify_case(ProjectionSet(*p)) == case


def test_case_labels_and_nominal_counts():
    assert [nominal_dip_count(c) for c in CASE_LABELS] == [1, 2, 3, 4, 4, 5, 6, 7, 8]


def brute_force_groups(p, tol):
    """Nominal dip count from distinct |B_i| values, written independently."""
    shifts = GAMMA * np.abs(p)
    distinct = []
    for s in sorted(shifts):
        if not distinct or s - distinct[-1] > tol:
            distinct.append(s)
    nonzero = [s for s in distinct if s > tol]
    return 2 * len(nonzero) + (1 if any(s <= tol for s in shifts) else 0)


def test_classification_agrees_with_count_when_resolved(rng):
    checked = 0
    for b in oracles.random_fields(rng, 3000, 4.0):
        p = ProjectionSet.from_array(project_array(b))
        f = np.sort(np.unique(np.round(np.concatenate([D - GAMMA * p.magnitudes(), D + GAMMA * p.magnitudes()]), 9)))
        if np.all(np.diff(f) > 12.0):
            checked += 1
            assert nominal_dip_count(classify_case(p)) == count_dips(FieldVector(*b))
        assert nominal_dip_count(classify_case(p)) == min(brute_force_groups(p.as_array(), 1e-6), 8)
    assert checked > 100


def test_heatmap_default_grid_and_values():
    m = dip_count_heatmap()
    assert m.counts.shape == (181, 360)
    assert np.all(m.counts[0] == 2)
    assert np.all((m.counts >= 1) & (m.counts <= 8))
    assert (m.counts == 8).any()
    assert m.metadata()["count_histogram"]["8"] == int((m.counts == 8).sum())


def test_heatmap_closed_phi_axis():
    m = dip_count_heatmap(include_phi_endpoint=True)
    assert m.counts.shape == (181, 361)
    assert np.array_equal(m.counts[:, 0], m.counts[:, -1])


def test_heatmap_rejects_bad_steps():
    with pytest.raises(ValueError):
        dip_count_heatmap(theta_step=0)
    with pytest.raises(ValueError):
        dip_count_heatmap(magnitude_mt=-1)


def test_heatmap_cells_match_scalar_count():
    m = dip_count_heatmap(theta_step=15, phi_step=20)
    for i, t in enumerate(m.theta_axis):
        for j, p in enumerate(m.phi_axis):
            th, ph = math.radians(t), math.radians(p)
            b = FieldVector(3 * math.sin(th) * math.cos(ph), 3 * math.sin(th) * math.sin(ph), 3 * math.cos(th))
            assert m.counts[i, j] == count_dips(b)


def test_heatmap_invariant_under_symmetry_group(rng):
    m = dip_count_heatmap(theta_step=1, phi_step=1)
    dirs = oracles.random_unit_vectors(rng, 500) * 3.0
    ref = count_dips_array(project_array(dirs))
    for g in symmetry_group():
        assert np.array_equal(count_dips_array(project_array(g.apply(dirs))), ref)
    # grid cells pulled back through a 90 degree rotation about z
    assert np.array_equal(m.counts, np.roll(m.counts, -90, axis=1))


def test_single_dip_when_all_shifts_below_half_threshold(rng):
    for b in oracles.random_fields(rng, 2000, 0.5):
        if GAMMA * np.max(np.abs(project_array(b))) < 6.0:
            assert count_dips(FieldVector(*b)) == 1


def test_single_dip_can_chain_beyond_half_threshold():
    p = np.array([0.3, 0.1, -0.1, -0.3])
    assert abs(p.sum()) < 1e-15
    assert GAMMA * np.max(np.abs(p)) > 6.0
    assert count_dips_array(p) == 1

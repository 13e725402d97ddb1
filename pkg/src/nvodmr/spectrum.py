"""Forward CW-ODMR model: synthetic spectra, dip counting and case taxonomy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import FieldVector, ProjectionSet, project_array, spherical_grid
from .hamiltonian import HamiltonianParams, TransitionTable, first_order_frequencies

DEFAULT_MERGE_THRESHOLD_MHZ = 12.0

# Gaps within this distance of the threshold count as resolved, so that
# rounding in symmetry-equivalent directions cannot flip a dip count.
_GAP_EPS_MHZ = 1e-9


@dataclass(frozen=True)
class LineshapeParams:
    contrast: float = 0.01
    fwhm_mhz: float = 12.0
    baseline: float = 1.0
    intrinsic_splitting_mhz: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.contrast < 1.0:
            raise ValueError(f"contrast must lie in (0, 1), got {self.contrast}")
        if not self.fwhm_mhz > 0:
            raise ValueError(f"fwhm_mhz must be positive, got {self.fwhm_mhz}")
        if not self.baseline > 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")
        if not self.intrinsic_splitting_mhz >= 0:
            raise ValueError("intrinsic_splitting_mhz must be >= 0")


@dataclass(frozen=True)
class FrequencyGrid:
    start_mhz: float = 2700.0
    stop_mhz: float = 3040.0
    n_points: int = 1701

    def __post_init__(self):
        if not self.start_mhz < self.stop_mhz:
            raise ValueError("grid start must be below stop")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"n_points must be an integer >= 2, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))

    def values(self) -> np.ndarray:
        return np.linspace(self.start_mhz, self.stop_mhz, self.n_points)

    @property
    def step_mhz(self) -> float:
        return (self.stop_mhz - self.start_mhz) / (self.n_points - 1)


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(eq=False)
class SyntheticSpectrum:
    """Normalised PL trace sampled on ``frequencies`` (MHz).

    ``meta`` carries the generating field, lineshape and noise settings for
    simulated data and is empty for ingested measurements.
    """

    frequencies: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    grid_too_narrow: bool = False

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.frequencies.ndim != 1 or self.frequencies.shape != self.values.shape:
            raise ValueError("frequencies and values must be 1-D arrays of equal length")

    def __len__(self):
        return len(self.frequencies)


@dataclass(frozen=True)
class DipCountMap:
    theta_axis: np.ndarray
    phi_axis: np.ndarray
    counts: np.ndarray
    field_magnitude_mt: float
    merge_threshold_mhz: float

    def metadata(self) -> dict:
        return {
            "field_magnitude_mt": self.field_magnitude_mt,
            "merge_threshold_mhz": self.merge_threshold_mhz,
            "theta_deg": [float(self.theta_axis[0]), float(self.theta_axis[-1]), len(self.theta_axis)],
            "phi_deg": [float(self.phi_axis[0]), float(self.phi_axis[-1]), len(self.phi_axis)],
            "count_histogram": {
                str(k): int(np.sum(self.counts == k)) for k in range(1, 9)
            },
        }


def resonance_lines(t: TransitionTable, lp: LineshapeParams) -> tuple[np.ndarray, np.ndarray]:
    """Centres and fractional depths of the individual Lorentzian lines.

    Pairs whose Zeeman splitting is below the intrinsic splitting have each
    resonance split into two half-depth lines at ``+- intrinsic/2``.
    """
    centers, depths = [], []
    half = 0.5 * lp.intrinsic_splitting_mhz
    for pair in t.pairs:
        split = half > 0 and pair.f_plus - pair.f_minus < lp.intrinsic_splitting_mhz
        for f in (pair.f_minus, pair.f_plus):
            if split:
                centers += [f - half, f + half]
                depths += [0.5 * lp.contrast, 0.5 * lp.contrast]
            else:
                centers.append(f)
                depths.append(lp.contrast)
    return np.array(centers), np.array(depths)


def lorentzian(f, center, fwhm):
    """Unit-height Lorentzian profile."""
    x = 2.0 * (np.asarray(f, dtype=float) - center) / fwhm
    return 1.0 / (1.0 + x * x)


def synthesize_spectrum(
    t: TransitionTable,
    lp: LineshapeParams = LineshapeParams(),
    g: FrequencyGrid = FrequencyGrid(),
    noise: NoiseModel | None = None,
    meta: dict | None = None,
) -> SyntheticSpectrum:
    freqs = g.values()
    centers, depths = resonance_lines(t, lp)
    dip = np.zeros_like(freqs)
    for c, d in zip(centers, depths):
        dip += d * lorentzian(freqs, c, lp.fwhm_mhz)
    values = lp.baseline * (1.0 - dip)
    if noise is not None and noise.sigma > 0:
        rng = np.random.default_rng(noise.seed)
        values = values + rng.normal(0.0, noise.sigma, size=values.shape)

    all_f = t.frequencies()
    too_narrow = bool(all_f.min() < g.start_mhz or all_f.max() > g.stop_mhz)
    info = dict(meta or {})
    info.setdefault("lineshape", lp)
    info.setdefault("grid", g)
    if noise is not None:
        info.setdefault("noise", noise)
    return SyntheticSpectrum(freqs, values, info, grid_too_narrow=too_narrow)


@dataclass(frozen=True)
class DipCluster:
    members: tuple
    center: float


def cluster_dips(frequencies, merge_threshold_mhz: float = DEFAULT_MERGE_THRESHOLD_MHZ) -> list[DipCluster]:
    """Single-linkage grouping of resonances closer than the threshold.

    Chains are allowed: 2860, 2871 and 2883 form one cluster at 12 MHz.
    """
    f = np.sort(np.asarray(frequencies, dtype=float).ravel())
    if f.size == 0:
        raise ValueError("cluster_dips needs at least one frequency")
    clusters, current = [], [f[0]]
    for prev, cur in zip(f[:-1], f[1:]):
        if cur - prev < merge_threshold_mhz - _GAP_EPS_MHZ:
            current.append(cur)
        else:
            clusters.append(current)
            current = [cur]
    clusters.append(current)
    return [DipCluster(tuple(float(x) for x in c), float(np.mean(c))) for c in clusters]


def count_dips_array(
    projections,
    h: HamiltonianParams = HamiltonianParams(),
    merge_threshold_mhz: float = DEFAULT_MERGE_THRESHOLD_MHZ,
) -> np.ndarray:
    """Vectorised dip count for ``(..., 4)`` projection arrays."""
    freqs = np.sort(first_order_frequencies(projections, h), axis=-1)
    gaps = np.diff(freqs, axis=-1)
    return 1 + np.sum(gaps >= merge_threshold_mhz - _GAP_EPS_MHZ, axis=-1)


def count_dips(
    b: FieldVector,
    h: HamiltonianParams = HamiltonianParams(),
    merge_threshold_mhz: float = DEFAULT_MERGE_THRESHOLD_MHZ,
) -> int:
    return int(count_dips_array(project_array(b.as_array()), h, merge_threshold_mhz))


def _angle_axis(stop: float, step: float, closed: bool) -> np.ndarray:
    n = stop / step
    n_int = int(round(n))
    if abs(n - n_int) < 1e-9:
        return np.arange(n_int + (1 if closed else 0)) * step
    return np.arange(0.0, stop + (step * 1e-9 if closed else -step * 1e-9), step)


def dip_count_heatmap(
    magnitude_mt: float = 3.0,
    theta_step: float = 1.0,
    phi_step: float = 1.0,
    merge_threshold_mhz: float = DEFAULT_MERGE_THRESHOLD_MHZ,
    h: HamiltonianParams = HamiltonianParams(),
    include_phi_endpoint: bool = False,
) -> DipCountMap:
    """Observable dip count over theta in [0, 180] and phi in [0, 360).

    With ``include_phi_endpoint`` the phi axis also carries 360 as a
    duplicate of 0, which is convenient for plotting closed maps.
    """
    if not theta_step > 0 or not phi_step > 0:
        raise ValueError("angle steps must be positive")
    if not magnitude_mt >= 0:
        raise ValueError("field magnitude must be >= 0")
    theta = _angle_axis(180.0, theta_step, closed=True)
    phi = _angle_axis(360.0, phi_step, closed=include_phi_endpoint)
    fields = spherical_grid(magnitude_mt, theta, phi)
    counts = count_dips_array(project_array(fields), h, merge_threshold_mhz).astype(int)
    return DipCountMap(theta, phi, counts, float(magnitude_mt), float(merge_threshold_mhz))


CASE_LABELS = ("1", "2", "3", "4a", "4b", "5", "6", "7", "8")


def nominal_dip_count(case: str) -> int:
    return int(case[0])


def _group_sizes(values: np.ndarray, tol: float) -> list[int]:
    values = np.sort(values)
    sizes = [1]
    for prev, cur in zip(values[:-1], values[1:]):
        if cur - prev <= tol:
            sizes[-1] += 1
        else:
            sizes.append(1)
    return sorted(sizes, reverse=True)


def classify_case(
    p: ProjectionSet,
    tol_mhz: float = 1e-6,
    h: HamiltonianParams = HamiltonianParams(),
) -> str:
    """Assign the projection pattern to one of the dip-count cases.

    Magnitudes are compared as Zeeman shifts ``gamma |B_i|``: values within
    ``tol_mhz`` are equal and shifts below ``tol_mhz`` count as zero.
    Returns one of ``CASE_LABELS``.
    """
    shifts = h.gamma * p.magnitudes()
    zero = shifts <= tol_mhz
    n_zero = int(zero.sum())
    nonzero = shifts[~zero]
    if nonzero.size == 0:
        return "1"
    groups = _group_sizes(nonzero, tol_mhz)
    dips = 2 * len(groups) + (1 if n_zero else 0)
    if dips == 4:
        return "4b" if groups == [3, 1] else "4a"
    return str(min(dips, 8))

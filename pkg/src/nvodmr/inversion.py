"""Recover every crystal-frame field consistent with an observed dip pattern.

The dip centres only fix the four projection magnitudes ``|B_i|`` (up to
which class sits in which dip), so inversion enumerates all assignments of
magnitudes to NV axes and all sign patterns that satisfy the sum-zero
constraint, then maps each survivor back to a field.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_spectrum_arrays
from .fitting import FitConfig, PeakGuess, SingularFitError, detect_peaks, fit_shared_then_free
from .geometry import (
    AXIS_LABELS,
    PROJECTION_MATRIX,
    FieldVector,
    ProjectionSet,
    project_field,
    sum_zero_tolerance,
)
from .hamiltonian import HamiltonianParams, first_order_transitions
from .spectrum import (
    DEFAULT_MERGE_THRESHOLD_MHZ,
    SyntheticSpectrum,
    classify_case,
    cluster_dips,
)

DEFAULT_SIGN_TOL_MT = 0.01
DEFAULT_DEDUP_TOL_MT = 1e-6


class UnpairableDipsError(ValueError):
    """Dips cannot be arranged into pairs symmetric about the zero-field splitting."""


class EmptyCandidateSetError(ValueError):
    """No sign pattern of the magnitudes satisfies the sum-zero constraint."""


@dataclass(frozen=True)
class DipFrequencies:
    centers_mhz: tuple
    uncertainties_mhz: tuple | None = None

    def __post_init__(self):
        centers = np.asarray(self.centers_mhz, dtype=float).ravel()
        if not 1 <= centers.size <= 8:
            raise ValueError(f"expected 1 to 8 dip centres, got {centers.size}")
        order = np.argsort(centers, kind="stable")
        object.__setattr__(self, "centers_mhz", tuple(float(c) for c in centers[order]))
        if self.uncertainties_mhz is not None:
            unc = np.asarray(self.uncertainties_mhz, dtype=float).ravel()
            if unc.shape != centers.shape:
                raise ValueError("one uncertainty per dip centre is required")
            object.__setattr__(self, "uncertainties_mhz", tuple(float(u) for u in unc[order]))


@dataclass(frozen=True)
class MagnitudeMultiset:
    magnitudes_mt: tuple
    uncertainties_mt: tuple | None = None

    def __post_init__(self):
        mags = np.asarray(self.magnitudes_mt, dtype=float).ravel()
        if mags.size != 4 or np.any(mags < 0):
            raise ValueError("a magnitude multiset holds exactly four values >= 0")
        order = np.argsort(-mags, kind="stable")
        object.__setattr__(self, "magnitudes_mt", tuple(float(m) for m in mags[order]))
        if self.uncertainties_mt is not None:
            unc = np.asarray(self.uncertainties_mt, dtype=float).ravel()
            object.__setattr__(self, "uncertainties_mt", tuple(float(u) for u in unc[order]))

    def sum_tolerance(self, floor: float = DEFAULT_SIGN_TOL_MT) -> float:
        """Three times the propagated uncertainty of ``sum(+-B_i)``, at least ``floor``.

        Unknown uncertainties give ``floor``. All-zero uncertainties mark exact
        input and give a round-off tolerance instead.
        """
        if self.uncertainties_mt is None:
            return floor
        if not any(self.uncertainties_mt):
            return sum_zero_tolerance(self.magnitudes_mt)
        return max(floor, 3.0 * float(np.sqrt(np.sum(np.square(self.uncertainties_mt)))))


@dataclass(frozen=True)
class CandidateField:
    field: FieldVector
    assignment: dict
    residual: float

    def to_dict(self) -> dict:
        return {
            "bx": self.field.bx,
            "by": self.field.by,
            "bz": self.field.bz,
            "projections": dict(self.assignment),
            "residual": self.residual,
        }


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple
    case_labels: tuple = ()

    @property
    def degeneracy(self) -> int:
        return len(self.candidates)

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def fields(self) -> np.ndarray:
        return np.array([c.field.as_array() for c in self.candidates]).reshape(-1, 3)

    def count_up_to_sign(self, tol: float = DEFAULT_DEDUP_TOL_MT) -> int:
        """Number of candidates when ``b`` and ``-b`` are counted once."""
        remaining = list(self.fields())
        count = 0
        while remaining:
            b = remaining.pop(0)
            count += 1
            for i, other in enumerate(remaining):
                if np.max(np.abs(other + b)) <= tol:
                    remaining.pop(i)
                    break
        return count

    def closest(self, b: FieldVector) -> tuple[float, float]:
        """(relative magnitude error, angle in degrees) of the candidate nearest ``b``."""
        target = b.as_array()
        best = min(self.fields(), key=lambda c: np.linalg.norm(c - target))
        return _relative_error(best, target), _angle_deg(best, target)

    def contains(self, b: FieldVector, rel_tol: float, angle_tol_deg: float) -> bool:
        """True if some candidate matches ``b`` in magnitude and direction."""
        target = b.as_array()
        return any(
            _relative_error(c, target) <= rel_tol and _angle_deg(c, target) <= angle_tol_deg
            for c in self.fields()
        )

    def to_dict(self) -> dict:
        return {
            "degeneracy": self.degeneracy,
            "degeneracy_up_to_sign": self.count_up_to_sign(),
            "case": self.case_labels[0] if len(self.case_labels) == 1 else list(self.case_labels),
            "candidates": [c.to_dict() for c in self.candidates],
        }


def _relative_error(candidate: np.ndarray, target: np.ndarray) -> float:
    norm = float(np.linalg.norm(target))
    diff = abs(float(np.linalg.norm(candidate)) - norm)
    return diff / norm if norm > 0 else diff


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    if not np.any(a) or not np.any(b):
        return 0.0 if not np.any(a) and not np.any(b) else 180.0
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), float(a @ b))))


def _pair_magnitude(lo: float, hi: float, lo_err: float, hi_err: float, h: HamiltonianParams):
    return (hi - lo) / (2.0 * h.gamma), float(np.hypot(lo_err, hi_err)) / (2.0 * h.gamma)


def _feasible(values, tol: float) -> bool:
    values = np.asarray(values, dtype=float)
    for signs in itertools.product((1.0, -1.0), repeat=len(values)):
        if abs(float(np.dot(signs, values))) <= tol:
            return True
    return False


def dips_to_magnitudes(
    d: DipFrequencies,
    h: HamiltonianParams = HamiltonianParams(),
    merge_threshold_mhz: float = DEFAULT_MERGE_THRESHOLD_MHZ,
    pair_tol_mhz: float | None = None,
    sign_tol_floor_mt: float = DEFAULT_SIGN_TOL_MT,
) -> list[MagnitudeMultiset]:
    """Turn dip centres into the projection-magnitude multisets they allow.

    Eight centres fix every multiplicity and yield a single multiset. With
    fewer, an odd count means the middle dip sits at ``D`` (zero projection)
    and every way of spreading the four NV classes over the observed
    magnitudes is returned, provided some sign pattern satisfies the
    sum-zero constraint.
    """
    if pair_tol_mhz is None:
        pair_tol_mhz = 0.5 * merge_threshold_mhz
    centers = np.array(d.centers_mhz)
    errs = np.zeros_like(centers) if d.uncertainties_mhz is None else np.array(d.uncertainties_mhz)
    n = centers.size

    if n % 2:
        mid = n // 2
        if abs(centers[mid] - h.d_zfs) > max(0.5 * merge_threshold_mhz, pair_tol_mhz):
            raise UnpairableDipsError(
                f"central dip at {centers[mid]:.3f} MHz is not at the zero-field splitting {h.d_zfs:g} MHz"
            )
    half = n // 2
    mags, mag_errs = [], []
    for k in range(half):
        lo, hi = centers[k], centers[n - 1 - k]
        if abs(0.5 * (lo + hi) - h.d_zfs) > pair_tol_mhz:
            raise UnpairableDipsError(
                f"dips at {lo:.3f} and {hi:.3f} MHz are not symmetric about {h.d_zfs:g} MHz"
            )
        m, e = _pair_magnitude(lo, hi, errs[k], errs[n - 1 - k], h)
        mags.append(m)
        mag_errs.append(e)

    if n == 8:
        return [MagnitudeMultiset(tuple(mags), tuple(mag_errs))]

    distinct = list(zip(mags, mag_errs))
    if n % 2:
        mid_err = errs[n // 2] / h.gamma
        distinct.append((0.0, float(mid_err)))
    if len(distinct) > 4:
        raise UnpairableDipsError(f"{len(distinct)} distinct magnitudes cannot fit four NV classes")

    out = []
    for extra in itertools.combinations_with_replacement(range(len(distinct)), 4 - len(distinct)):
        chosen = [distinct[i] for i in range(len(distinct))] + [distinct[i] for i in extra]
        multiset = MagnitudeMultiset(
            tuple(m for m, _ in chosen), tuple(e for _, e in chosen)
        )
        if _feasible(multiset.magnitudes_mt, multiset.sum_tolerance(sign_tol_floor_mt)):
            out.append(multiset)
    if not out:
        raise UnpairableDipsError("no multiplicity assignment satisfies the sum-zero constraint")
    return out


_PERMUTATIONS = np.array(list(itertools.permutations(range(4))))
_SIGNS = np.array(list(itertools.product((1.0, -1.0), repeat=4)))


def _dedup(fields: np.ndarray, tol: float) -> np.ndarray:
    """Indices of rows with no earlier row within ``tol`` (max-norm)."""
    dist = np.max(np.abs(fields[:, None, :] - fields[None, :, :]), axis=-1)
    return np.flatnonzero(~np.tril(dist <= tol, k=-1).any(axis=1))


def _canonical_order(fields: np.ndarray) -> np.ndarray:
    return np.lexsort((-fields[:, 2], -fields[:, 1], -fields[:, 0]))


def enumerate_candidates(
    m: MagnitudeMultiset,
    tol: float | None = None,
    dedup_tol: float = DEFAULT_DEDUP_TOL_MT,
) -> CandidateSet:
    """All distinct fields whose projection magnitudes form ``m``.

    Every ordering of the magnitudes over the four axes is combined with every
    sign pattern; patterns with ``|sum| <= tol`` are reconstructed into
    fields. ``tol`` defaults to :meth:`MagnitudeMultiset.sum_tolerance`.
    """
    if tol is None:
        tol = m.sum_tolerance()
    values = np.array(m.magnitudes_mt)
    orders = np.unique(values[_PERMUTATIONS], axis=0)
    signed = (orders[:, None, :] * _SIGNS[None, :, :]).reshape(-1, 4)
    residuals = np.abs(signed.sum(axis=1))
    signed, residuals = signed[residuals <= tol], residuals[residuals <= tol]
    if signed.size == 0:
        raise EmptyCandidateSetError(
            f"magnitudes {m.magnitudes_mt} admit no sign pattern summing to zero (tol {tol:g} mT)"
        )
    # left inverse of the projection map; drops any residual sum
    fields = 0.75 * signed @ PROJECTION_MATRIX
    keep = _dedup(fields, dedup_tol)
    keep = keep[_canonical_order(fields[keep])]
    candidates = tuple(
        CandidateField(FieldVector(*f), dict(zip(AXIS_LABELS, p)), r)
        for f, p, r in zip(fields[keep].tolist(), signed[keep].tolist(), residuals[keep].tolist())
    )
    # label at the same resolution used to tell candidates apart
    h = HamiltonianParams()
    labels = (classify_case(ProjectionSet.from_array(signed[keep[0]]), dedup_tol * h.gamma, h),)
    return CandidateSet(candidates, labels)


def merge_candidate_sets(sets, dedup_tol: float = DEFAULT_DEDUP_TOL_MT) -> CandidateSet:
    pool = [c for s in sets for c in s.candidates]
    if not pool:
        raise EmptyCandidateSetError("no candidates to merge")
    fields = np.array([c.field.as_array() for c in pool])
    keep = _dedup(fields, dedup_tol)
    candidates = tuple(pool[i] for i in keep[_canonical_order(fields[keep])])
    labels = []
    for s in sets:
        for label in s.case_labels:
            if label not in labels:
                labels.append(label)
    return CandidateSet(tuple(candidates), tuple(labels))


def invert_dips(
    d: DipFrequencies,
    h: HamiltonianParams = HamiltonianParams(),
    merge_threshold_mhz: float = DEFAULT_MERGE_THRESHOLD_MHZ,
    tol: float | None = None,
    dedup_tol: float = DEFAULT_DEDUP_TOL_MT,
) -> CandidateSet:
    """Union of candidate sets over every multiplicity completion of ``d``."""
    sets = []
    for m in dips_to_magnitudes(d, h, merge_threshold_mhz):
        try:
            sets.append(enumerate_candidates(m, tol=tol, dedup_tol=dedup_tol))
        except EmptyCandidateSetError:
            continue
    if not sets:
        raise EmptyCandidateSetError("no completion of the dip pattern yields a field")
    if len(sets) == 1:
        return sets[0]
    return merge_candidate_sets(sets, dedup_tol)


def forward_dips(
    b: FieldVector,
    h: HamiltonianParams = HamiltonianParams(),
    merge_threshold_mhz: float | None = None,
) -> DipFrequencies:
    """Dip pattern produced by ``b``.

    ``merge_threshold_mhz=None`` keeps all eight resonances with their
    multiplicities and marks them exact (zero uncertainty); otherwise
    resonances are merged into observable dips of unknown precision.
    """
    freqs = first_order_transitions(project_field(b), h).frequencies()
    if merge_threshold_mhz is None:
        return DipFrequencies(tuple(freqs), (0.0,) * len(freqs))
    return DipFrequencies(tuple(c.center for c in cluster_dips(freqs, merge_threshold_mhz)))


def degeneracy_count(
    b: FieldVector,
    h: HamiltonianParams = HamiltonianParams(),
    merge_threshold_mhz: float | None = None,
) -> int:
    """Number of fields sharing ``b``'s dip pattern (exact positions by default)."""
    threshold = DEFAULT_MERGE_THRESHOLD_MHZ if merge_threshold_mhz is None else merge_threshold_mhz
    return invert_dips(forward_dips(b, h, merge_threshold_mhz), h, threshold).degeneracy


def invert_spectrum(
    s: SyntheticSpectrum,
    h: HamiltonianParams = HamiltonianParams(),
    merge_threshold_mhz: float = DEFAULT_MERGE_THRESHOLD_MHZ,
    prominence: float | None = None,
    min_separation_mhz: float = 4.0,
    smoothing_mhz: float = 2.0,
    fit_config: FitConfig = FitConfig(),
    tol: float | None = None,
) -> CandidateSet:
    """Detect and fit dips in ``s``, then invert the fitted centres.

    At most the eight most prominent dips are kept. Raises the detection,
    fitting and pairing errors of the stages it composes.
    """
    return FieldInverter(
        d_zfs=h.d_zfs,
        gamma=h.gamma,
        merge_threshold_mhz=merge_threshold_mhz,
        prominence=prominence,
        min_separation_mhz=min_separation_mhz,
        smoothing_mhz=smoothing_mhz,
        fit_config=fit_config,
        tol=tol,
    ).fit(s.frequencies, s.values).candidates_


def _bic(result, n_points: int) -> float:
    rss = n_points * result.residual_rms**2
    k = 1 + 3 * len(result.peaks)
    return n_points * np.log(max(rss, 1e-300) / n_points) + k * np.log(n_points)


def _as_guesses(peaks) -> list[PeakGuess]:
    return [PeakGuess(p.center_mhz, p.depth, p.fwhm_mhz) for p in peaks]


def _split(peaks, targets) -> list[PeakGuess]:
    out = _as_guesses(p for p in peaks if p not in targets)
    for p in targets:
        for sign in (-1.0, 1.0):
            out.append(PeakGuess(p.center_mhz + sign * p.fwhm_mhz / 4, p.depth / 2, p.fwhm_mhz / 2))
    return sorted(out, key=lambda g: g.center_mhz)


def _split_widest(result, h: HamiltonianParams) -> list[PeakGuess]:
    peaks = list(result.peaks)
    return _split(peaks, [max(peaks, key=lambda p: p.fwhm_mhz)])


def _split_widest_pair(result, h: HamiltonianParams) -> list[PeakGuess]:
    """Split the widest line and its mirror image about D together."""
    peaks = list(result.peaks)
    widest = max(peaks, key=lambda p: p.fwhm_mhz)
    mirror = min(peaks, key=lambda p: abs(p.center_mhz - (2 * h.d_zfs - widest.center_mhz)))
    if mirror is widest or abs(mirror.center_mhz - widest.center_mhz) <= widest.fwhm_mhz / 2:
        return _split(peaks, [widest])
    return _split(peaks, [widest, mirror])


def _add_missing_mirrors(result, h: HamiltonianParams) -> list[PeakGuess]:
    """Add a line at ``2D - c`` for every line whose mirror partner is absent."""
    peaks = list(result.peaks)
    tol = 0.5 * min(p.fwhm_mhz for p in peaks)
    centers = np.array([p.center_mhz for p in peaks])
    out = _as_guesses(peaks)
    for p in peaks:
        mirror = 2 * h.d_zfs - p.center_mhz
        if np.min(np.abs(centers - mirror)) > tol:
            out.append(PeakGuess(mirror, p.depth, p.fwhm_mhz))
    return sorted(out, key=lambda g: g.center_mhz)


def fit_resolving_doublets(
    s: SyntheticSpectrum,
    guesses,
    config: FitConfig = FitConfig(),
    h: HamiltonianParams = HamiltonianParams(),
    max_peaks: int = 8,
):
    """Fit dips, adding hidden lines while the BIC improves.

    Lines closer than about one width merge in the smoothed trace and are
    detected as a single broad dip. Each round tries splitting the widest
    line (alone or with its partner across ``D``) and restoring absent
    mirror partners, and keeps the best refit. A fit already at round-off level
    is returned unchanged.
    """
    best = fit_shared_then_free(s, guesses, config)
    n_points = len(s)
    if best.residual_rms <= 1e-9 * float(np.ptp(s.values)):
        return best
    while len(best.peaks) < max_peaks:
        trials = []
        for move in (_add_missing_mirrors, _split_widest_pair, _split_widest):
            trial_guesses = move(best, h)
            if len(best.peaks) < len(trial_guesses) <= max_peaks:
                try:
                    trials.append(fit_shared_then_free(s, trial_guesses, config))
                except SingularFitError:
                    pass
        if not trials:
            break
        trial = min(trials, key=lambda r: _bic(r, n_points))
        if _bic(trial, n_points) >= _bic(best, n_points):
            break
        best = trial
    return best


class FieldInverter(BaseEstimator):
    """Spectrum-to-field inversion as an estimator.

    ``fit(X, y)`` takes frequencies in MHz and the PL signal, and sets
    ``fit_result_``, ``dips_``, ``candidates_``, ``degeneracy_`` and
    ``case_labels_``.
    """

    def __init__(
        self,
        d_zfs=2870.0,
        gamma=28.0,
        merge_threshold_mhz=DEFAULT_MERGE_THRESHOLD_MHZ,
        prominence=None,
        min_separation_mhz=4.0,
        smoothing_mhz=2.0,
        fit_config=None,
        tol=None,
    ):
        self.d_zfs = d_zfs
        self.gamma = gamma
        self.merge_threshold_mhz = merge_threshold_mhz
        self.prominence = prominence
        self.min_separation_mhz = min_separation_mhz
        self.smoothing_mhz = smoothing_mhz
        self.fit_config = fit_config
        self.tol = tol

    def fit(self, X, y):
        f, values = check_spectrum_arrays(X, y, min_points=16)
        spectrum = SyntheticSpectrum(f, values)
        h = HamiltonianParams(self.d_zfs, self.gamma)
        guesses = detect_peaks(
            spectrum,
            prominence=self.prominence,
            min_separation_mhz=self.min_separation_mhz,
            smoothing_mhz=self.smoothing_mhz,
        )
        guesses = sorted(guesses, key=lambda g: -g.prominence)[:8]
        guesses.sort(key=lambda g: g.center_mhz)
        self.fit_result_ = fit_resolving_doublets(spectrum, guesses, self.fit_config or FitConfig(), h)
        peaks = self.fit_result_.peaks
        self.dips_ = DipFrequencies(
            tuple(p.center_mhz for p in peaks),
            tuple(p.center_stderr for p in peaks),
        )
        self.candidates_ = invert_dips(self.dips_, h, self.merge_threshold_mhz, tol=self.tol)
        self.degeneracy_ = self.candidates_.degeneracy
        self.case_labels_ = self.candidates_.case_labels
        self.n_features_in_ = 1
        return self

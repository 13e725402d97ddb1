"""Dip detection and multi-Lorentzian least-squares fitting.

The fit model is ``baseline - sum_k depth_k * L(f; center_k, fwhm_k)`` with
``L`` a unit-height Lorentzian. Minimisation uses Levenberg-Marquardt with an
analytic Jacobian on internally rescaled parameters (log-widths keep the
line widths positive).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_spectrum_arrays
from .spectrum import SyntheticSpectrum, lorentzian


class NoPeaksFoundError(ValueError):
    """No dip in the spectrum exceeds the detection prominence."""


class SingularFitError(np.linalg.LinAlgError):
    """Normal equations are rank deficient, e.g. two peaks collapsed onto each other."""


@dataclass(frozen=True)
class PeakGuess:
    center_mhz: float
    depth: float
    fwhm_mhz: float
    prominence: float = 0.0


@dataclass(frozen=True)
class LorentzianPeak:
    center_mhz: float
    fwhm_mhz: float
    depth: float
    center_stderr: float = 0.0
    fwhm_stderr: float = 0.0
    depth_stderr: float = 0.0

    def __post_init__(self):
        if not self.fwhm_mhz > 0:
            raise ValueError("fwhm_mhz must be positive")


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    initial_damping: float = 1e-3
    damping_increase: float = 10.0
    damping_decrease: float = 10.0
    shared_width: bool = False

    def __post_init__(self):
        for name in (
            "max_iterations",
            "gradient_tolerance",
            "step_tolerance",
            "initial_damping",
            "damping_increase",
            "damping_decrease",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FitResult:
    peaks: list
    baseline: float
    residual_rms: float
    converged: bool
    iterations: int
    baseline_stderr: float = 0.0
    cost_history: list = field(default_factory=list, repr=False)

    def params(self) -> np.ndarray:
        return pack_params(self.baseline, self.peaks)

    def to_dict(self) -> dict:
        return {
            "peaks": [
                {
                    "center_mhz": p.center_mhz,
                    "fwhm_mhz": p.fwhm_mhz,
                    "depth": p.depth,
                    "center_stderr": p.center_stderr,
                    "fwhm_stderr": p.fwhm_stderr,
                    "depth_stderr": p.depth_stderr,
                }
                for p in self.peaks
            ],
            "baseline": self.baseline,
            "baseline_stderr": self.baseline_stderr,
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "iterations": self.iterations,
        }


def pack_params(baseline, peaks) -> np.ndarray:
    """``[baseline, c1, w1, d1, c2, w2, d2, ...]``."""
    out = [float(baseline)]
    for p in peaks:
        out += [p.center_mhz, p.fwhm_mhz, p.depth]
    return np.array(out)


def multi_lorentzian(params, frequencies) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    f = np.asarray(frequencies, dtype=float)
    out = np.full_like(f, params[0])
    for c, w, d in params[1:].reshape(-1, 3):
        out -= d * lorentzian(f, c, w)
    return out


def model_jacobian(params, frequencies) -> np.ndarray:
    """Analytic partial derivatives, shape ``(n_points, n_params)``."""
    params = np.asarray(params, dtype=float)
    f = np.asarray(frequencies, dtype=float)
    jac = np.empty((f.size, params.size))
    jac[:, 0] = 1.0
    for k, (c, w, d) in enumerate(params[1:].reshape(-1, 3)):
        x = 2.0 * (f - c) / w
        denom = 1.0 + x * x
        lor = 1.0 / denom
        dl_dx = -2.0 * x * lor * lor
        col = 1 + 3 * k
        jac[:, col] = -d * dl_dx * (-2.0 / w)
        jac[:, col + 1] = -d * dl_dx * (-x / w)
        jac[:, col + 2] = -lor
    return jac


def _noise_sigma(values: np.ndarray) -> float:
    diffs = np.diff(values)
    mad = np.median(np.abs(diffs - np.median(diffs)))
    return float(1.4826 * mad / np.sqrt(2.0))


def detect_peaks(
    s: SyntheticSpectrum,
    prominence: float | None = None,
    min_separation_mhz: float = 4.0,
    smoothing_mhz: float = 2.0,
) -> list[PeakGuess]:
    """Locate dips as local minima of a moving-average smoothed trace.

    With ``prominence=None`` the threshold is the larger of eight times the
    smoothed noise level and 5% of the deepest dip. Every guess starts from
    the median half-depth width of the detected dips.
    """
    f, y = check_spectrum_arrays(s.frequencies, s.values, min_points=16)
    step = float(np.median(np.diff(f)))
    window = max(1, int(round(smoothing_mhz / step)))
    smooth = uniform_filter1d(y, size=window, mode="nearest") if window > 1 else y
    level = float(np.median(smooth))
    if prominence is None:
        noise = _noise_sigma(y) / np.sqrt(window)
        # a noise bump's prominence is peak-to-valley, routinely ~6 sigma
        prominence = max(8.0 * noise, 0.05 * (level - float(smooth.min())))
    if not prominence > 0:
        raise NoPeaksFoundError("spectrum is flat; no dips to detect")
    distance = max(1, int(round(min_separation_mhz / step)))
    idx, props = find_peaks(-smooth, prominence=prominence, distance=distance)
    if idx.size == 0:
        raise NoPeaksFoundError(f"no dip exceeds prominence {prominence:.3g}")
    widths = np.array([_half_depth_width(f, smooth, i, level) for i in idx])
    # overlapping neighbours inflate individual estimates; start every dip
    # from the typical width instead
    width = max(float(np.median(widths)), 2.0 * step)
    return [
        PeakGuess(
            center_mhz=float(f[i]),
            depth=float(max(level - smooth[i], props["prominences"][j])),
            fwhm_mhz=width,
            prominence=float(props["prominences"][j]),
        )
        for j, i in enumerate(idx)
    ]


def _half_depth_width(f: np.ndarray, y: np.ndarray, i: int, level: float) -> float:
    """Twice the distance from dip ``i`` to its nearer half-depth crossing."""
    half = y[i] + 0.5 * (level - y[i])
    above = np.flatnonzero(y >= half)
    left, right = above[above < i], above[above > i]
    dists = []
    if left.size:
        dists.append(f[i] - f[left[-1]])
    if right.size:
        dists.append(f[right[0]] - f[i])
    if not dists:
        return float(np.ptp(f))
    return 2.0 * float(min(dists))


class _Scaling:
    """Maps physical parameters to the dimensionless vector seen by the solver."""

    def __init__(self, frequencies, values, n_peaks, shared_width):
        self.f0 = float(frequencies.min())
        self.span = float(np.ptp(frequencies)) or 1.0
        self.amp = float(np.ptp(values)) or 1.0
        self.n_peaks = n_peaks
        self.shared_width = shared_width

    def to_internal(self, params):
        z = [params[0] / self.amp]
        triples = params[1:].reshape(-1, 3)
        for c, w, d in triples:
            z.append((c - self.f0) / self.span)
            if not self.shared_width:
                z.append(np.log(w))
            z.append(d / self.amp)
        if self.shared_width:
            z.append(np.mean(np.log(triples[:, 1])))
        return np.array(z)

    def to_physical(self, z):
        with np.errstate(over="ignore"):
            return self._to_physical(z)

    def _to_physical(self, z):
        out = [z[0] * self.amp]
        stride = 2 if self.shared_width else 3
        for k in range(self.n_peaks):
            base = 1 + stride * k
            c = self.f0 + z[base] * self.span
            if self.shared_width:
                w = np.exp(z[-1])
                d = z[base + 1] * self.amp
            else:
                w = np.exp(z[base + 1])
                d = z[base + 2] * self.amp
            out += [c, w, d]
        return np.array(out)

    def plausible(self, params) -> bool:
        """Reject steps that throw lines far outside the sampled window."""
        triples = params[1:].reshape(-1, 3)
        return bool(
            np.all(np.isfinite(params))
            and np.all(triples[:, 1] < 0.5 * self.span)
            and np.all(np.abs(triples[:, 0] - self.f0 - 0.5 * self.span) < 0.6 * self.span)
        )

    def physical_stderr(self, params, stderr_z):
        """Propagate internal standard errors to ``[baseline, c, w, d, ...]``."""
        out = [stderr_z[0] * self.amp]
        stride = 2 if self.shared_width else 3
        for k in range(self.n_peaks):
            base = 1 + stride * k
            w = params[2 + 3 * k]
            if self.shared_width:
                out += [stderr_z[base] * self.span, stderr_z[-1] * w, stderr_z[base + 1] * self.amp]
            else:
                out += [stderr_z[base] * self.span, stderr_z[base + 1] * w, stderr_z[base + 2] * self.amp]
        return np.array(out)

    def chain(self, params, jac):
        """Jacobian with respect to the internal parameters."""
        cols = [jac[:, 0] * self.amp]
        shared = np.zeros(jac.shape[0])
        for k in range(self.n_peaks):
            col = 1 + 3 * k
            w = params[col + 1]
            cols.append(jac[:, col] * self.span)
            if self.shared_width:
                shared += jac[:, col + 1] * w
            else:
                cols.append(jac[:, col + 1] * w)
            cols.append(jac[:, col + 2] * self.amp)
        if self.shared_width:
            cols.append(shared)
        return np.column_stack(cols)


def fit_multi_lorentzian(
    s: SyntheticSpectrum,
    guesses,
    config: FitConfig = FitConfig(),
    baseline: float | None = None,
) -> FitResult:
    """Levenberg-Marquardt fit of ``len(guesses)`` Lorentzian dips plus a constant.

    Raises :class:`SingularFitError` when the solution has a rank-deficient
    Jacobian. Running out of iterations is not an error; the result carries
    ``converged=False``.
    """
    f, y = check_spectrum_arrays(s.frequencies, s.values)
    guesses = list(guesses)
    if not guesses:
        raise ValueError("at least one peak guess is required")
    if f.size <= 3 * len(guesses) + 1:
        raise ValueError(
            f"{f.size} points cannot constrain {3 * len(guesses) + 1} parameters"
        )
    b0 = float(np.median(y)) if baseline is None else float(baseline)
    p0 = pack_params(b0, [
        LorentzianPeak(g.center_mhz, g.fwhm_mhz, g.depth) for g in guesses
    ])
    scale = _Scaling(f, y, len(guesses), config.shared_width)
    z = scale.to_internal(p0)

    params = scale.to_physical(z)
    resid = y - multi_lorentzian(params, f)
    cost = 0.5 * float(resid @ resid)
    history = [cost]
    damping = config.initial_damping
    converged = False
    iterations = 0
    while iterations < config.max_iterations:
        iterations += 1
        jz = scale.chain(params, model_jacobian(params, f))
        grad = jz.T @ resid
        col_norms = np.linalg.norm(jz, axis=0)
        res_norm = np.sqrt(2.0 * cost)
        if res_norm == 0.0 or np.max(np.abs(grad) / (col_norms * res_norm + 1e-300)) <= config.gradient_tolerance:
            converged = True
            break
        normal = jz.T @ jz
        diag = np.maximum(np.diag(normal), 1e-12 * np.max(np.diag(normal)))
        accepted = False
        while True:
            cost_new = np.inf
            try:
                step = np.linalg.solve(normal + damping * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                z_new = z + step
                p_new = scale.to_physical(z_new)
                if scale.plausible(p_new):
                    r_new = y - multi_lorentzian(p_new, f)
                    cost_new = 0.5 * float(r_new @ r_new)
            if cost_new < cost:
                accepted = True
                break
            damping *= config.damping_increase
            if damping > 1e16:
                break
        if not accepted:
            # no representable step lowers the objective: numerical minimum
            converged = True
            break
        small_step = np.linalg.norm(step) <= config.step_tolerance * (np.linalg.norm(z) + config.step_tolerance)
        z, params, resid, cost = z_new, p_new, r_new, cost_new
        history.append(cost)
        damping = max(damping / config.damping_decrease, 1e-15)
        if small_step:
            converged = True
            break

    jz = scale.chain(params, model_jacobian(params, f))
    sv = np.linalg.svd(jz, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise SingularFitError(
            "normal equations are singular; peaks may have collapsed onto each other"
        )
    dof = max(f.size - jz.shape[1], 1)
    cov_z = (2.0 * cost / dof) * np.linalg.inv(jz.T @ jz)
    stderr = scale.physical_stderr(params, np.sqrt(np.clip(np.diag(cov_z), 0.0, None)))

    peaks = []
    for k, (c, w, d) in enumerate(params[1:].reshape(-1, 3)):
        e = stderr[1 + 3 * k: 4 + 3 * k]
        peaks.append(LorentzianPeak(float(c), float(w), float(d), float(e[0]), float(e[1]), float(e[2])))
    peaks.sort(key=lambda p: p.center_mhz)
    return FitResult(
        peaks=peaks,
        baseline=float(params[0]),
        residual_rms=float(np.sqrt(2.0 * cost / f.size)),
        converged=converged,
        iterations=iterations,
        baseline_stderr=float(stderr[0]),
        cost_history=history,
    )


def fit_shared_then_free(
    s: SyntheticSpectrum, guesses, config: FitConfig = FitConfig()
) -> FitResult:
    """Fit with one common width first, then release the widths.

    The common-width stage keeps neighbouring lines from trading places; it is
    skipped when ``config`` already asks for a shared width or fails outright.
    """
    if config.shared_width:
        return fit_multi_lorentzian(s, guesses, config)
    try:
        first = fit_multi_lorentzian(s, guesses, replace(config, shared_width=True))
    except SingularFitError:
        return fit_multi_lorentzian(s, guesses, config)
    seeds = [PeakGuess(p.center_mhz, p.depth, p.fwhm_mhz) for p in first.peaks]
    return fit_multi_lorentzian(s, seeds, config, baseline=first.baseline)


def select_guesses(guesses: list[PeakGuess], n_peaks: int) -> list[PeakGuess]:
    """Trim or extend detected dips to exactly ``n_peaks`` starting guesses.

    Surplus dips are dropped by prominence; missing ones are made by
    splitting the broadest guess in two.
    """
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    out = sorted(guesses, key=lambda g: -g.prominence)[:n_peaks]
    while len(out) < n_peaks:
        widest = max(out, key=lambda g: g.fwhm_mhz)
        out.remove(widest)
        offset = widest.fwhm_mhz / 4.0
        for sign in (-1.0, 1.0):
            out.append(
                PeakGuess(
                    widest.center_mhz + sign * offset,
                    widest.depth,
                    widest.fwhm_mhz / 2.0,
                    widest.prominence / 2.0,
                )
            )
    return sorted(out, key=lambda g: g.center_mhz)


class LorentzianDipFitter(RegressorMixin, BaseEstimator):
    """Estimator wrapper: detect dips, then fit them jointly.

    ``fit(X, y)`` takes frequencies (MHz) as ``X`` (1-D or a single column)
    and the PL signal as ``y``. ``predict`` evaluates the fitted model.

    Parameters
    ----------
    n_peaks : int or None
        Number of Lorentzians; ``None`` uses every detected dip.
    prominence, min_separation_mhz, smoothing_mhz
        Passed to :func:`detect_peaks`.
    max_iterations, gradient_tolerance, step_tolerance, initial_damping, shared_width
        Passed to :class:`FitConfig`.
    """

    def __init__(
        self,
        n_peaks=None,
        prominence=None,
        min_separation_mhz=4.0,
        smoothing_mhz=2.0,
        max_iterations=200,
        gradient_tolerance=1e-10,
        step_tolerance=1e-12,
        initial_damping=1e-3,
        shared_width=False,
    ):
        self.n_peaks = n_peaks
        self.prominence = prominence
        self.min_separation_mhz = min_separation_mhz
        self.smoothing_mhz = smoothing_mhz
        self.max_iterations = max_iterations
        self.gradient_tolerance = gradient_tolerance
        self.step_tolerance = step_tolerance
        self.initial_damping = initial_damping
        self.shared_width = shared_width

    def _config(self) -> FitConfig:
        return FitConfig(
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
            step_tolerance=self.step_tolerance,
            initial_damping=self.initial_damping,
            shared_width=self.shared_width,
        )

    def fit(self, X, y):
        f, values = check_spectrum_arrays(X, y, min_points=16)
        spectrum = SyntheticSpectrum(f, values)
        guesses = detect_peaks(
            spectrum,
            prominence=self.prominence,
            min_separation_mhz=self.min_separation_mhz,
            smoothing_mhz=self.smoothing_mhz,
        )
        if self.n_peaks is not None:
            guesses = select_guesses(guesses, int(self.n_peaks))
        self.guesses_ = guesses
        self.result_ = fit_multi_lorentzian(spectrum, guesses, self._config())
        self.peaks_ = self.result_.peaks
        self.baseline_ = self.result_.baseline
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        f, _ = check_spectrum_arrays(X, None)
        return multi_lorentzian(self.result_.params(), f)

"""``odmr`` command line: simulate, heatmap, fit, invert, classify.

Exit codes: 0 success, 2 usage, 3 I/O, 4 computation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as odmr_io
from .fitting import (
    LorentzianDipFitter,
    NoPeaksFoundError,
    SingularFitError,
)
from .geometry import (
    FieldVector,
    InconsistentProjectionsError,
    ProjectionSet,
    SphericalField,
    project_field,
    reconstruct_field,
    spherical_to_cartesian,
)
from .hamiltonian import HamiltonianParams, exact_transitions, first_order_transitions
from .inversion import DipFrequencies, FieldInverter, invert_dips
from .spectrum import (
    FrequencyGrid,
    LineshapeParams,
    NoiseModel,
    classify_case,
    count_dips,
    dip_count_heatmap,
    nominal_dip_count,
    synthesize_spectrum,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_COMPUTE = 0, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Every setting a command depends on, echoed into its outputs."""

    d_zfs: float = 2870.0
    gamma: float = 28.0
    contrast: float = 0.01
    fwhm_mhz: float = 12.0
    baseline: float = 1.0
    intrinsic_splitting_mhz: float = 0.0
    start_mhz: float = 2700.0
    stop_mhz: float = 3040.0
    n_points: int = 1701
    noise_sigma: float = 0.0
    seed: int | None = None
    merge_threshold_mhz: float = 12.0
    model: str = "first-order"
    outputs: dict = field(default_factory=dict)

    def hamiltonian(self) -> HamiltonianParams:
        return HamiltonianParams(self.d_zfs, self.gamma)

    def lineshape(self) -> LineshapeParams:
        return LineshapeParams(self.contrast, self.fwhm_mhz, self.baseline, self.intrinsic_splitting_mhz)

    def grid(self) -> FrequencyGrid:
        return FrequencyGrid(self.start_mhz, self.stop_mhz, self.n_points)

    def noise(self) -> NoiseModel | None:
        if self.noise_sigma == 0 and self.seed is None:
            return None
        return NoiseModel(self.noise_sigma, self.seed)


_CONFIG_FLAGS = {
    "d_zfs": ("--d-zfs", float, "zero-field splitting, MHz"),
    "gamma": ("--gamma", float, "gyromagnetic ratio, MHz/mT"),
    "contrast": ("--contrast", float, "fractional dip depth per resonance"),
    "fwhm_mhz": ("--fwhm", float, "Lorentzian FWHM, MHz"),
    "baseline": ("--baseline", float, "off-resonance PL level"),
    "intrinsic_splitting_mhz": ("--intrinsic-splitting", float, "zero-field dip splitting, MHz"),
    "start_mhz": ("--start", float, "grid start, MHz"),
    "stop_mhz": ("--stop", float, "grid stop, MHz"),
    "n_points": ("--n-points", int, "number of grid points"),
    "noise_sigma": ("--noise", float, "Gaussian noise standard deviation"),
    "seed": ("--seed", int, "RNG seed"),
    "merge_threshold_mhz": ("--threshold", float, "dip merge threshold, MHz"),
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for name, value in data.items():
            if name in _CONFIG_FLAGS and value is not None:
                typ = _CONFIG_FLAGS[name][1]
                if isinstance(value, bool) or not isinstance(value, (int, float)) or (
                    typ is int and not float(value).is_integer()
                ):
                    raise UsageError(f"config key {name!r} must be a number, got {value!r}")
                data[name] = typ(value)
        cfg = dataclasses.replace(cfg, **data)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "model", None):
        cfg.model = args.model
    return cfg


def _field_from_args(args, allow_projections=False) -> FieldVector:
    cart = [args.bx, args.by, args.bz]
    sph = [getattr(args, "bmag", None), getattr(args, "theta", None), getattr(args, "phi", None)]
    proj = getattr(args, "projections", None) if allow_projections else None
    given = [any(v is not None for v in cart), any(v is not None for v in sph), proj is not None]
    if sum(given) != 1:
        raise UsageError("give the field in exactly one form: --bx/--by/--bz, --bmag/--theta/--phi"
                         + (" or --projections" if allow_projections else ""))
    if given[0]:
        if any(v is None for v in cart):
            raise UsageError("--bx, --by and --bz must all be given")
        return FieldVector(*cart)
    if given[1]:
        if any(v is None for v in sph):
            raise UsageError("--bmag, --theta and --phi must all be given")
        try:
            return spherical_to_cartesian(SphericalField(*sph))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    try:
        return reconstruct_field(ProjectionSet(*proj))
    except InconsistentProjectionsError as exc:
        raise UsageError(str(exc)) from exc


def _transitions_payload(b: FieldVector, cfg: RunConfig) -> dict:
    h = cfg.hamiltonian()
    p = project_field(b)
    case = classify_case(p, h=h)
    return {
        "field_mt": {"bx": b.bx, "by": b.by, "bz": b.bz, "magnitude": b.magnitude},
        "projections_mt": dict(zip(("kappa", "chi", "phi", "lambda"), p.as_array().tolist())),
        "case": case,
        "nominal_dip_count": nominal_dip_count(case),
        "observable_dip_count": count_dips(b, h, cfg.merge_threshold_mhz),
        "first_order_transitions_mhz": first_order_transitions(p, h).to_dict(),
        "exact_transitions_mhz": exact_transitions(b, h).to_dict(),
    }


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    b = _field_from_args(args)
    h = cfg.hamiltonian()
    table = exact_transitions(b, h) if cfg.model == "exact" else first_order_transitions(project_field(b), h)
    spectrum = synthesize_spectrum(table, cfg.lineshape(), cfg.grid(), cfg.noise())
    out = Path(args.out)
    meta = Path(args.transitions_out) if args.transitions_out else out.with_suffix(".json")
    cfg.outputs = {"spectrum": str(out), "transitions": str(meta)}
    payload = _transitions_payload(b, cfg)
    payload["grid_too_narrow"] = spectrum.grid_too_narrow
    odmr_io.write_spectrum_csv(out, spectrum)
    odmr_io.write_json(meta, odmr_io.envelope(cfg, payload))
    return EXIT_OK


def cmd_heatmap(args) -> int:
    cfg = resolve_config(args)
    theta_step = args.theta_step if args.theta_step is not None else args.step
    phi_step = args.phi_step if args.phi_step is not None else args.step
    if not (theta_step > 0 and phi_step > 0 and args.bmag >= 0):
        raise UsageError("angle steps must be positive and --bmag non-negative")
    m = dip_count_heatmap(args.bmag, theta_step, phi_step, cfg.merge_threshold_mhz, cfg.hamiltonian())
    out = Path(args.out)
    meta = Path(args.meta) if args.meta else out.with_suffix(".json")
    cfg.outputs = {"csv": str(out), "meta": str(meta), "svg": args.svg}
    result = m.metadata() | {"theta_step_deg": theta_step, "phi_step_deg": phi_step}
    odmr_io.atomic_write_text(out, odmr_io.heatmap_csv_text(m))
    odmr_io.write_json(meta, odmr_io.envelope(cfg, result))
    if args.svg:
        odmr_io.atomic_write_text(args.svg, odmr_io.heatmap_svg(m))
    return EXIT_OK


def _emit(args, doc) -> None:
    if getattr(args, "out", None):
        odmr_io.write_json(args.out, doc)
    else:
        sys.stdout.write(odmr_io.dumps_json(doc))


def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    spectrum = odmr_io.read_spectrum_csv(args.spectrum)
    try:
        n_peaks = None if args.n_peaks in (None, "auto") else int(args.n_peaks)
    except ValueError:
        raise UsageError(f"--n-peaks must be an integer or 'auto', got {args.n_peaks!r}") from None
    cfg.outputs = {"fit": args.out}
    fitter = LorentzianDipFitter(n_peaks=n_peaks).fit(spectrum.frequencies, spectrum.values)
    doc = odmr_io.envelope(
        dataclasses.asdict(cfg) | {"input": args.spectrum, "n_peaks": args.n_peaks},
        fitter.result_.to_dict(),
    )
    _emit(args, doc)
    return EXIT_OK


def cmd_invert(args) -> int:
    cfg = resolve_config(args)
    h = cfg.hamiltonian()
    if (args.spectrum is None) == (args.dips is None):
        raise UsageError("give exactly one of --spectrum or --dips")
    cfg.outputs = {"candidates": args.out}
    extra = {}
    if args.dips is not None:
        dips = DipFrequencies(tuple(args.dips))
        candidates = invert_dips(dips, h, cfg.merge_threshold_mhz)
        source = {"dips_mhz": list(dips.centers_mhz)}
    else:
        spectrum = odmr_io.read_spectrum_csv(args.spectrum)
        inverter = FieldInverter(d_zfs=h.d_zfs, gamma=h.gamma,
                                 merge_threshold_mhz=cfg.merge_threshold_mhz)
        inverter.fit(spectrum.frequencies, spectrum.values)
        candidates = inverter.candidates_
        source = {"spectrum": args.spectrum}
        extra["fit"] = inverter.fit_result_.to_dict()
        extra["dips_mhz"] = list(inverter.dips_.centers_mhz)
    result = candidates.to_dict() | extra
    _emit(args, odmr_io.envelope(dataclasses.asdict(cfg) | source, result))
    return EXIT_OK


def cmd_classify(args) -> int:
    cfg = resolve_config(args)
    b = _field_from_args(args, allow_projections=True)
    doc = odmr_io.envelope(cfg, _transitions_payload(b, cfg))
    sys.stdout.write(odmr_io.dumps_json(doc))
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, names=tuple(_CONFIG_FLAGS)) -> None:
    p.add_argument("--config", help="JSON file of RunConfig values; flags override it")
    for name in names:
        flag, typ, helptext = _CONFIG_FLAGS[name]
        p.add_argument(flag, dest=name, type=typ, default=None, help=helptext)


def _add_field(p: argparse.ArgumentParser, spherical=True) -> None:
    for name in ("bx", "by", "bz"):
        p.add_argument(f"--{name}", type=float, help=f"{name} in mT (crystal frame)")
    if spherical:
        p.add_argument("--bmag", type=float, help="|B| in mT")
        p.add_argument("--theta", type=float, help="polar angle, degrees")
        p.add_argument("--phi", type=float, help="azimuthal angle, degrees")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odmr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesise a spectrum for one field")
    _add_field(p)
    _add_common(p)
    p.add_argument("--model", choices=("first-order", "exact"), default=None,
                   help="transition model used for the spectrum (default first-order)")
    p.add_argument("--out", default="spectrum.csv")
    p.add_argument("--transitions-out", default=None, help="default: --out with .json suffix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("heatmap", help="dip count over field orientations")
    _add_common(p, ("d_zfs", "gamma", "merge_threshold_mhz"))
    p.add_argument("--bmag", type=float, default=3.0)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--theta-step", type=float, default=None)
    p.add_argument("--phi-step", type=float, default=None)
    p.add_argument("--out", default="heatmap.csv")
    p.add_argument("--meta", default=None, help="default: --out with .json suffix")
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("fit", help="fit Lorentzian dips in a spectrum CSV")
    p.add_argument("spectrum")
    p.add_argument("--n-peaks", default="auto")
    p.add_argument("--out", default=None, help="default: stdout")
    _add_common(p, ())
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("invert", help="candidate fields for a spectrum or dip list")
    p.add_argument("--spectrum", default=None)
    p.add_argument("--dips", type=float, nargs="+", default=None, help="dip centres, MHz")
    p.add_argument("--out", default=None, help="default: stdout")
    _add_common(p, ("d_zfs", "gamma", "merge_threshold_mhz"))
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("classify", help="case label and dip count for a field")
    _add_field(p, spherical=False)
    p.add_argument("--projections", type=float, nargs=4, default=None,
                   metavar=("B_KAPPA", "B_CHI", "B_PHI", "B_LAMBDA"))
    _add_common(p, ("d_zfs", "gamma", "merge_threshold_mhz"))
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"odmr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, odmr_io.SpectrumFormatError) as exc:
        print(f"odmr {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NoPeaksFoundError, SingularFitError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"odmr {args.command}: {exc}", file=sys.stderr)
        if args.command == "invert":
            sys.stdout.write(odmr_io.dumps_json(
                {"schema_version": odmr_io.SCHEMA_VERSION,
                 "error": {"type": type(exc).__name__, "message": str(exc)}}
            ))
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())

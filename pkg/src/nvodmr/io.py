"""File formats: spectrum CSV, heat-map CSV/SVG and the JSON result envelope."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .spectrum import DipCountMap, SyntheticSpectrum

SCHEMA_VERSION = 1
SPECTRUM_HEADER = ("frequency_mhz", "signal")


class SpectrumFormatError(ValueError):
    """A spectrum CSV does not follow the two-column ``frequency_mhz,signal`` layout."""


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def envelope(config, result) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": to_jsonable(config),
        "result": to_jsonable(result),
    }


def dumps_json(obj) -> str:
    # json emits the shortest repr that round-trips each float exactly
    return json.dumps(to_jsonable(obj), indent=2, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def spectrum_csv_text(s: SyntheticSpectrum) -> str:
    lines = [",".join(SPECTRUM_HEADER)]
    lines += [f"{fmt(f)},{fmt(v)}" for f, v in zip(s.frequencies, s.values)]
    return "\n".join(lines) + "\n"


def write_spectrum_csv(path, s: SyntheticSpectrum) -> None:
    atomic_write_text(path, spectrum_csv_text(s))


def parse_spectrum_csv(text: str, source: str = "<string>") -> SyntheticSpectrum:
    rows = csv.reader(io.StringIO(text))
    freqs, values = [], []
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if lineno == 1:
            if tuple(cell.strip() for cell in row) != SPECTRUM_HEADER:
                raise SpectrumFormatError(
                    f"{source}:1: expected header 'frequency_mhz,signal', got {','.join(row)!r}"
                )
            continue
        if len(row) != 2:
            raise SpectrumFormatError(f"{source}:{lineno}: expected 2 columns, got {len(row)}")
        try:
            freqs.append(float(row[0]))
            values.append(float(row[1]))
        except ValueError as exc:
            raise SpectrumFormatError(f"{source}:{lineno}: {exc}") from None
    if not freqs:
        raise SpectrumFormatError(f"{source}: no data rows")
    return SyntheticSpectrum(np.array(freqs), np.array(values))


def read_spectrum_csv(path) -> SyntheticSpectrum:
    path = Path(path)
    return parse_spectrum_csv(path.read_text(), str(path))


def heatmap_csv_text(m: DipCountMap) -> str:
    lines = ["theta_deg\\phi_deg," + ",".join(fmt(p) for p in m.phi_axis)]
    for theta, row in zip(m.theta_axis, m.counts):
        lines.append(fmt(theta) + "," + ",".join(str(int(c)) for c in row))
    return "\n".join(lines) + "\n"


def parse_heatmap_csv(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`heatmap_csv_text`: ``(theta, phi, counts)``."""
    rows = [line.split(",") for line in text.strip().splitlines()]
    phi = np.array([float(x) for x in rows[0][1:]])
    theta = np.array([float(r[0]) for r in rows[1:]])
    counts = np.array([[int(x) for x in r[1:]] for r in rows[1:]])
    return theta, phi, counts


# one colour per dip count 1..8
PALETTE = (
    "#440154", "#46327e", "#365c8d", "#277f8e",
    "#1fa187", "#4ac16d", "#a0da39", "#fde725",
)


def heatmap_svg(m: DipCountMap, cell: float = 2.0) -> str:
    """Discrete-colour SVG of the dip-count map with a legend.

    Runs of equal count along each theta row are drawn as one rectangle.
    """
    n_theta, n_phi = m.counts.shape
    margin, legend_w = 50.0, 110.0
    width = margin + n_phi * cell + legend_w
    height = margin + n_theta * cell + 40.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'font-family="sans-serif" font-size="12">',
        f'<text x="{margin}" y="20">Observable ODMR dips, |B| = {m.field_magnitude_mt:g} mT, '
        f'merge threshold {m.merge_threshold_mhz:g} MHz</text>',
    ]
    for i, row in enumerate(m.counts):
        y = margin + i * cell
        start = 0
        for j in range(1, n_phi + 1):
            if j == n_phi or row[j] != row[start]:
                x = margin + start * cell
                out.append(
                    f'<rect x="{x:.1f}" y="{y:.1f}" width="{(j - start) * cell:.1f}" '
                    f'height="{cell:.1f}" fill="{PALETTE[int(row[start]) - 1]}"/>'
                )
                start = j
    out.append(
        f'<text x="{margin + n_phi * cell / 2:.0f}" y="{margin + n_theta * cell + 25:.0f}" '
        f'text-anchor="middle">phi (deg), 0 to {m.phi_axis[-1]:g}</text>'
    )
    out.append(
        f'<text x="15" y="{margin + n_theta * cell / 2:.0f}" '
        f'transform="rotate(-90 15 {margin + n_theta * cell / 2:.0f})" text-anchor="middle">'
        f'theta (deg), 0 to {m.theta_axis[-1]:g}</text>'
    )
    lx = margin + n_phi * cell + 20
    for k in range(8):
        ly = margin + k * 22
        out.append(f'<rect x="{lx:.0f}" y="{ly:.0f}" width="16" height="16" fill="{PALETTE[k]}"/>')
        out.append(f'<text x="{lx + 22:.0f}" y="{ly + 13:.0f}">{k + 1} dip{"s" if k else ""}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

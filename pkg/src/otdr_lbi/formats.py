"""On-disk formats: text profiles, JSON ground truth, event lists and reports, plot CSVs.

Profile files are line oriented::

    # otdr-profile v1
    # sample_spacing_m: 1.0
    # n_samples: 4
    # units: dB
    # ground_truth: fiber.truth.json
    -0.0002
    -0.0004
    ...

Header lines start with ``#`` and hold ``key: value`` pairs; the first one
must be the format tag. ``ground_truth`` is optional and relative to the
profile's directory.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lbi_core import EventList
from .simulator import FiberSpec

PROFILE_TAG = "# otdr-profile v1"
TRUTH_FORMAT = "otdr-truth/1"
EVENTLIST_FORMAT = "otdr-eventlist/1"
REPORT_FORMAT = "otdr-report/1"


class FormatError(ValueError):
    """The file was read but does not follow the expected layout."""


class NonFiniteProfileError(ValueError):
    """A profile sample is NaN or infinite."""


@dataclass
class ProfileFile:
    samples: np.ndarray
    sample_spacing_m: float = 1.0
    units: str = "dB"
    ground_truth: str | None = None

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)


def write_profile(path, profile: ProfileFile) -> None:
    lines = [
        PROFILE_TAG,
        f"# sample_spacing_m: {profile.sample_spacing_m!r}",
        f"# n_samples: {profile.n_samples}",
        f"# units: {profile.units}",
    ]
    if profile.ground_truth:
        lines.append(f"# ground_truth: {profile.ground_truth}")
    lines.extend(repr(float(v)) for v in profile.samples)
    Path(path).write_text("\n".join(lines) + "\n")


def read_profile(path) -> ProfileFile:
    """Parse a profile file.

    Raises ``OSError`` if it cannot be read, :class:`FormatError` on layout
    problems and :class:`NonFiniteProfileError` on NaN/inf samples.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != PROFILE_TAG:
        raise FormatError(f"{path}: first line must be '{PROFILE_TAG}'")
    header: dict[str, str] = {}
    values: list[float] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if values:
                raise FormatError(f"{path}:{lineno}: header line after samples")
            key, sep, value = line[1:].partition(":")
            if not sep:
                raise FormatError(f"{path}:{lineno}: header lines must be 'key: value'")
            header[key.strip()] = value.strip()
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: not a number: {line!r}") from None

    for key in ("sample_spacing_m", "n_samples"):
        if key not in header:
            raise FormatError(f"{path}: missing header field '{key}'")
    try:
        spacing = float(header["sample_spacing_m"])
        declared = int(header["n_samples"])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header value: {exc}") from None
    if not (math.isfinite(spacing) and spacing > 0):
        raise FormatError(f"{path}: sample_spacing_m must be positive")
    units = header.get("units", "dB")
    if units != "dB":
        raise FormatError(f"{path}: units must be dB, got {units!r}")
    if declared != len(values):
        raise FormatError(f"{path}: header says {declared} samples, found {len(values)}")
    if len(values) < 2:
        raise FormatError(f"{path}: a profile needs at least 2 samples")
    samples = np.array(values)
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise NonFiniteProfileError(f"{path}: non-finite sample at line(s) {(bad[:5] + 1).tolist()}")
    return ProfileFile(samples, spacing, units, header.get("ground_truth"))


def _dump(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")


def truth_dict(spec: FiberSpec, sigma: float, **extra) -> dict:
    return {
        "format": TRUTH_FORMAT,
        "n_samples": spec.n_samples,
        "sample_spacing_m": spec.sample_spacing_m,
        "attenuation_db_per_km": spec.attenuation_db_per_km,
        "sigma": sigma,
        "events": [
            {"position_index": pos, "position_m": pos * spec.sample_spacing_m, "loss_db": loss}
            for pos, loss in spec.events
        ],
        **extra,
    }


def write_truth(path, spec: FiberSpec, sigma: float, **extra) -> None:
    _dump(path, truth_dict(spec, sigma, **extra))


def _load_json(path, fmt: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != fmt:
        raise FormatError(f"{path}: expected format '{fmt}'")
    return payload


def read_truth(path) -> tuple[FiberSpec, float, dict]:
    """Return ``(fiber, sigma, raw_payload)``."""
    payload = _load_json(path, TRUTH_FORMAT)
    try:
        spec = FiberSpec(
            n_samples=int(payload["n_samples"]),
            sample_spacing_m=float(payload["sample_spacing_m"]),
            attenuation_db_per_km=float(payload["attenuation_db_per_km"]),
            events=tuple((int(e["position_index"]), float(e["loss_db"])) for e in payload["events"]),
        )
        sigma = float(payload["sigma"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad ground truth: {exc}") from None
    return spec, sigma, payload


def eventlist_dict(events: EventList, solver: dict, n_samples: int) -> dict:
    return {
        "format": EVENTLIST_FORMAT,
        "n_samples": n_samples,
        "sample_spacing_m": events.sample_spacing_m,
        "slope_db_per_km": events.slope_db_per_km,
        "slope_db_per_sample": events.slope_db_per_sample,
        "offset_db": events.offset_db,
        "events": [
            {"position_index": e.position_index, "position_m": e.position_m, "loss_db": e.loss_db}
            for e in events.events
        ],
        "solver": solver,
    }


def write_eventlist(path, events: EventList, solver: dict, n_samples: int) -> None:
    _dump(path, eventlist_dict(events, solver, n_samples))


def read_eventlist(path) -> dict:
    payload = _load_json(path, EVENTLIST_FORMAT)
    pos = [e["position_index"] for e in payload.get("events", [])]
    if any(b <= a for a, b in zip(pos, pos[1:])):
        raise FormatError(f"{path}: event positions must be strictly ascending")
    return payload


def write_report(path, report_dict: dict) -> None:
    _dump(path, report_dict)


def write_plot_data(out_dir, summaries) -> list[Path]:
    """Write plot-data CSVs from benchmark group summaries; returns the paths."""
    out_dir = Path(out_dir)
    paths = [out_dir / "error_vs_length.csv", out_dir / "time_vs_length.csv", out_dir / "fp_histogram.csv"]
    with paths[0].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector", "length", "profiles", "mean_squared_error"])
        for s in summaries:
            w.writerow([s.detector, s.length, s.profiles, s.mean_squared_error])
    with paths[1].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector", "length", "profiles", "mean_seconds"])
        for s in summaries:
            w.writerow([s.detector, s.length, s.profiles, f"{s.mean_seconds:.6f}"])
    with paths[2].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector", "length", "bin_start", "bin_end", "count"])
        for s in summaries:
            edges = s.histogram.edges()
            for k, count in enumerate(s.histogram.counts):
                w.writerow([s.detector, s.length, edges[k], edges[k + 1], count])
    return paths

"""Offline analysis of run CSVs: per-channel Welch PSDs, per-run ANPSDs,
cross-run mean with confidence intervals, dominant peaks, and the
peak-normalized comparison between test types."""

from __future__ import annotations

import csv
import json
import os
import re
import sys
from dataclasses import dataclass, field

import numpy as np

from .core import VibedaqError
from .spectra import (
    Spectrum,
    WelchParams,
    anpsd,
    find_peaks,
    mean_ci,
    npsd,
    peak_normalize,
    remove_mean,
    welch_psd,
)


class SchemaError(VibedaqError):
    """A run file does not match the expected schema; names the offending line."""


MISSING_FLAG_FRACTION = 0.01


@dataclass
class RunFile:
    path: str
    run_id: int
    test_type: str
    fs_hz: float
    range_g: float
    start_utc: str
    channels: dict[str, np.ndarray]
    missing_fraction: dict[str, float]


_META_RE = re.compile(
    r"^# run_id=(\d+),test_type=(TVT|AVT),fs_hz=([0-9.]+),range_g=([0-9.]+),start_utc=(\S+)$"
)


def read_run_csv(path: str) -> RunFile:
    with open(path, encoding="utf-8", newline="") as fh:
        line1 = fh.readline().rstrip("\n")
        if line1 != "# vibedaq-run v1":
            raise SchemaError(f"{path}:1: not a vibedaq run file (got {line1!r})")
        line2 = fh.readline().rstrip("\n")
        meta = _META_RE.match(line2)
        if meta is None:
            raise SchemaError(f"{path}:2: malformed metadata line")
        header = fh.readline().rstrip("\n").split(",")
        if header[:1] != ["seq"] or (len(header) - 1) % 4 != 0:
            raise SchemaError(f"{path}:3: malformed column row")
        sensors = []
        for i in range(1, len(header), 4):
            t_col = header[i]
            m = re.match(r"^t_(\d+_\d+)_us$", t_col)
            if m is None:
                raise SchemaError(f"{path}:3: unexpected column {t_col!r}")
            label = m.group(1)
            expected = [f"{label}_{axis}_g" for axis in "xyz"]
            if header[i + 1 : i + 4] != expected:
                raise SchemaError(f"{path}:3: columns for sensor {label} out of order")
            sensors.append(label)

        per_channel: dict[str, list[float]] = {
            f"{label}_{axis}": [] for label in sensors for axis in "xyz"
        }
        missing: dict[str, int] = {ch: 0 for ch in per_channel}
        rows = 0
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=4):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows += 1
            for s_idx, label in enumerate(sensors):
                base = 1 + s_idx * 4
                for a_idx, axis in enumerate("xyz"):
                    cell = row[base + 1 + a_idx]
                    ch = f"{label}_{axis}"
                    if cell == "":
                        missing[ch] += 1
                    else:
                        try:
                            per_channel[ch].append(float(cell))
                        except ValueError:
                            raise SchemaError(f"{path}:{lineno}: bad numeric field {cell!r}") from None

    return RunFile(
        path=path,
        run_id=int(meta.group(1)),
        test_type=meta.group(2),
        fs_hz=float(meta.group(3)),
        range_g=float(meta.group(4)),
        start_utc=meta.group(5),
        channels={ch: np.asarray(vals) for ch, vals in per_channel.items()},
        missing_fraction={ch: (missing[ch] / rows if rows else 0.0) for ch in per_channel},
    )


@dataclass
class AnalysisParams:
    welch: WelchParams = field(default_factory=WelchParams)
    peaks_k: int = 5
    min_prominence_ratio: float = 5.0
    confidence: float = 0.95


@dataclass
class AnalysisResult:
    out_dir: str
    n_runs: int
    mean: Spectrum
    ci_lower: np.ndarray | None
    ci_upper: np.ndarray | None
    per_run: list[Spectrum]
    peaks: list
    flagged_channels: dict[str, list[str]]
    warnings: list[str]


def run_anpsd(run: RunFile, params: AnalysisParams) -> tuple[Spectrum, list[str]]:
    """Channel PSDs -> NPSDs -> the run's ANPSD; returns flagged channels too."""
    flagged = [
        ch for ch, frac in sorted(run.missing_fraction.items()) if frac > MISSING_FLAG_FRACTION
    ]
    npsds = []
    for ch in sorted(run.channels):
        series = run.channels[ch]
        if len(series) < params.welch.nperseg:
            raise VibedaqError(
                f"{run.path}: channel {ch} has {len(series)} samples, "
                f"fewer than nperseg={params.welch.nperseg}"
            )
        spectrum = welch_psd(remove_mean(series), run.fs_hz, params.welch)
        npsds.append(npsd(spectrum))
    return anpsd(npsds), flagged


def _write_spectrum_csv(path: str, header: list[str], columns: list) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join("" if v is None else "%.10g" % v for v in row) + "\n")


def analyze_runs(paths: list[str], params: AnalysisParams, out_dir: str) -> AnalysisResult:
    """Analyze one or more run files of a single test type into spectra CSVs."""
    if not paths:
        raise VibedaqError("no run files given")
    runs = [read_run_csv(p) for p in paths]
    fs = runs[0].fs_hz
    for run in runs[1:]:
        if run.fs_hz != fs:
            raise VibedaqError(f"{run.path}: sampling rate {run.fs_hz} differs from {fs}")

    os.makedirs(out_dir, exist_ok=True)
    warnings: list[str] = []
    flagged: dict[str, list[str]] = {}
    per_run: list[Spectrum] = []
    for i, run in enumerate(runs, start=1):
        spectrum, run_flags = run_anpsd(run, params)
        per_run.append(spectrum)
        if run_flags:
            flagged[run.path] = run_flags
            warnings.append(f"{run.path}: channels over 1% missing: {', '.join(run_flags)}")
        _write_spectrum_csv(
            os.path.join(out_dir, f"run_{i:02d}_anpsd.csv"),
            ["freq_hz", "anpsd"],
            [spectrum.freqs_hz, spectrum.values],
        )

    if len(per_run) >= 2:
        res = mean_ci(per_run, level=params.confidence)
        mean, lo, hi = res.mean, res.ci_lower, res.ci_upper
    else:
        mean, lo, hi = per_run[0], None, None
        warnings.append("single run: confidence interval undefined, emitting ANPSD only")

    _write_spectrum_csv(
        os.path.join(out_dir, "anpsd.csv"),
        ["freq_hz", "anpsd", "ci_lower", "ci_upper"],
        [
            mean.freqs_hz,
            mean.values,
            lo if lo is not None else [None] * len(mean.values),
            hi if hi is not None else [None] * len(mean.values),
        ],
    )

    peak_set = find_peaks(mean, k=params.peaks_k, min_prominence_ratio=params.min_prominence_ratio)
    with open(os.path.join(out_dir, "peaks.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("f_hz,value,prominence\n")
        for p in peak_set.peaks:
            fh.write("%.10g,%.10g,%.10g\n" % (p.f_hz, p.value, p.prominence))

    with open(os.path.join(out_dir, "analysis.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "format": "vibedaq-analysis v1",
                "runs": [r.path for r in runs],
                "n_runs": len(runs),
                "fs_hz": fs,
                "nperseg": params.welch.nperseg,
                "overlap_fraction": params.welch.overlap_fraction,
                "confidence": params.confidence,
                "flagged_channels": flagged,
                "warnings": warnings,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return AnalysisResult(
        out_dir=out_dir,
        n_runs=len(runs),
        mean=mean,
        ci_lower=lo,
        ci_upper=hi,
        per_run=per_run,
        peaks=peak_set.peaks,
        flagged_channels=flagged,
        warnings=warnings,
    )


def read_anpsd_csv(path: str) -> tuple[Spectrum, np.ndarray | None, np.ndarray | None]:
    freqs, values, lo, hi = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "freq_hz,anpsd,ci_lower,ci_upper":
            raise SchemaError(f"{path}:1: not an analysis spectrum file")
        for line in fh:
            f, v, l, h = line.rstrip("\n").split(",")
            freqs.append(float(f))
            values.append(float(v))
            lo.append(float(l) if l else np.nan)
            hi.append(float(h) if h else np.nan)
    spectrum = Spectrum(freqs_hz=np.asarray(freqs), values=np.asarray(values))
    lo_arr = np.asarray(lo)
    hi_arr = np.asarray(hi)
    if np.isnan(lo_arr).all():
        return spectrum, None, None
    return spectrum, lo_arr, hi_arr


@dataclass
class ComparisonResult:
    out_path: str
    deltas_path: str
    peak_deltas_hz: list[float]
    bin_width_hz: float


def compare_analyses(
    tvt_dir: str,
    avt_dir: str,
    out_dir: str,
    band: tuple[float, float] = (0.0, 10.0),
    params: AnalysisParams | None = None,
) -> ComparisonResult:
    """Peak-normalize both mean ANPSDs over the band and tabulate the shift of
    the first two in-band peaks."""
    params = params or AnalysisParams()
    tvt, tvt_lo, tvt_hi = read_anpsd_csv(os.path.join(tvt_dir, "anpsd.csv"))
    avt, avt_lo, avt_hi = read_anpsd_csv(os.path.join(avt_dir, "anpsd.csv"))
    if not tvt.same_grid(avt):
        raise VibedaqError("analyses use different frequency grids; re-run with equal nperseg/fs")

    f_lo, f_hi = band
    mask = (tvt.freqs_hz >= f_lo) & (tvt.freqs_hz <= f_hi)
    tvt_scale = float(np.max(tvt.values[mask]))
    avt_scale = float(np.max(avt.values[mask]))
    if tvt_scale <= 0 or avt_scale <= 0:
        raise VibedaqError("in-band maximum is zero; cannot peak-normalize")
    tvt_norm = peak_normalize(tvt, f_lo, f_hi)
    avt_norm = peak_normalize(avt, f_lo, f_hi)

    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "comparison.csv")

    def scaled(bounds, scale):
        if bounds is None:
            return [None] * len(tvt.values)
        return bounds / scale

    _write_spectrum_csv(
        out_path,
        ["freq_hz", "tvt_norm", "avt_norm", "tvt_ci_lo", "tvt_ci_hi", "avt_ci_lo", "avt_ci_hi"],
        [
            tvt.freqs_hz,
            tvt_norm.values,
            avt_norm.values,
            scaled(tvt_lo, tvt_scale),
            scaled(tvt_hi, tvt_scale),
            scaled(avt_lo, avt_scale),
            scaled(avt_hi, avt_scale),
        ],
    )

    def first_two_in_band(spectrum):
        peaks = find_peaks(spectrum, k=16, min_prominence_ratio=params.min_prominence_ratio)
        in_band = [p for p in peaks.peaks if f_lo <= p.f_hz <= f_hi]
        top2 = sorted(in_band, key=lambda p: -p.value)[:2]
        return sorted(p.f_hz for p in top2)

    tvt_two = first_two_in_band(tvt_norm)
    avt_two = first_two_in_band(avt_norm)
    deltas = [abs(a - b) for a, b in zip(tvt_two, avt_two)]

    deltas_path = os.path.join(out_dir, "peak_deltas.csv")
    df = float(tvt.freqs_hz[1] - tvt.freqs_hz[0])
    with open(deltas_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank,tvt_f_hz,avt_f_hz,delta_hz,delta_bins\n")
        for i, (tf, af) in enumerate(zip(tvt_two, avt_two), start=1):
            fh.write("%d,%.10g,%.10g,%.10g,%.10g\n" % (i, tf, af, abs(tf - af), abs(tf - af) / df))

    return ComparisonResult(
        out_path=out_path,
        deltas_path=deltas_path,
        peak_deltas_hz=deltas,
        bin_width_hz=df,
    )

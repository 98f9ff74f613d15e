"""Frequency-domain pipeline: bias removal, Welch PSD, NPSD/ANPSD, confidence
intervals across repeated runs, peak normalization and dominant-peak picking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .core import VibedaqError


class SpectraError(VibedaqError):
    pass


@dataclass(frozen=True)
class WelchParams:
    nperseg: int = 2048
    overlap_fraction: float = 0.5

    def __post_init__(self):
        if self.nperseg < 2 or self.nperseg % 2 != 0:
            raise ValueError(f"nperseg must be even and >= 2, got {self.nperseg}")
        if not (0.0 <= self.overlap_fraction < 1.0):
            raise ValueError(f"overlap_fraction must be in [0,1), got {self.overlap_fraction}")

    @property
    def step(self) -> int:
        return max(1, round(self.nperseg * (1.0 - self.overlap_fraction)))


@dataclass
class Spectrum:
    """One-sided spectrum on the grid k*fs/nperseg, k = 0..nperseg/2."""

    freqs_hz: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.freqs_hz = np.asarray(self.freqs_hz, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.freqs_hz.shape != self.values.shape:
            raise ValueError("freqs_hz and values must have matching shapes")

    @property
    def df(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0])

    def same_grid(self, other: "Spectrum") -> bool:
        return np.array_equal(self.freqs_hz, other.freqs_hz)


@dataclass
class AnpsdResult:
    mean: Spectrum
    per_run: list[Spectrum]
    ci_lower: np.ndarray | None
    ci_upper: np.ndarray | None
    confidence: float


@dataclass(frozen=True)
class Peak:
    f_hz: float
    value: float
    prominence: float


@dataclass
class PeakSet:
    peaks: list[Peak] = field(default_factory=list)

    def frequencies(self) -> list[float]:
        return [p.f_hz for p in self.peaks]


def remove_mean(x) -> np.ndarray:
    """Compensate a constant sensor-offset bias by subtracting the series mean."""
    x = np.asarray(x, dtype=float)
    if x.size < 1:
        raise SpectraError("remove_mean requires at least one sample")
    return x - x.mean()


def hamming(n: int) -> np.ndarray:
    """Symmetric Hamming window: w[k] = 0.54 - 0.46*cos(2*pi*k/(N-1))."""
    if n < 2:
        raise SpectraError(f"hamming window needs N >= 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def segment_count(n_samples: int, params: WelchParams) -> int:
    """How many full segments Welch averaging will use for a given length."""
    if n_samples < params.nperseg:
        return 0
    return (n_samples - params.nperseg) // params.step + 1


def welch_psd(x, fs: float, params: WelchParams | None = None) -> Spectrum:
    """Welch PSD estimate in units of x^2/Hz.

    Segments start every nperseg*(1-overlap) samples; a trailing partial
    segment is discarded. Each segment is Hamming-windowed and transformed,
    and the one-sided density is

        P[k] = (2 / (fs * sum(w^2))) * mean_over_segments |X_seg[k]|^2

    with the factor 2 omitted at DC and Nyquist. The caller is expected to
    have removed any constant bias first (see remove_mean).
    """
    params = params or WelchParams()
    x = np.asarray(x, dtype=float)
    n = params.nperseg
    if len(x) < n:
        raise SpectraError(f"signal length {len(x)} shorter than nperseg {n}")
    step = params.step
    n_segments = (len(x) - n) // step + 1
    w = hamming(n)
    win_power = float(np.sum(w * w))

    acc = np.zeros(n // 2 + 1)
    for s in range(n_segments):
        seg = x[s * step : s * step + n]
        spec = np.fft.rfft(seg * w)
        acc += np.abs(spec) ** 2
    psd = (2.0 / (fs * win_power)) * (acc / n_segments)
    psd[0] /= 2.0
    psd[-1] /= 2.0  # nperseg is even, so the last bin is Nyquist

    freqs = np.arange(n // 2 + 1) * (fs / n)
    return Spectrum(freqs_hz=freqs, values=psd)


def npsd(p: Spectrum) -> Spectrum:
    """Normalize a PSD to unit bin-sum, making shapes comparable across channels."""
    total = float(np.sum(p.values))
    if total <= 0.0:
        raise SpectraError("cannot normalize an all-zero spectrum")
    return Spectrum(freqs_hz=p.freqs_hz, values=p.values / total)


def anpsd(npsds: list[Spectrum]) -> Spectrum:
    """Per-bin arithmetic mean of normalized spectra from multiple channels."""
    if not npsds:
        raise SpectraError("anpsd requires at least one spectrum")
    first = npsds[0]
    for s in npsds[1:]:
        if not first.same_grid(s):
            raise SpectraError("anpsd inputs must share one frequency grid")
    stacked = np.stack([s.values for s in npsds])
    return Spectrum(freqs_hz=first.freqs_hz, values=stacked.mean(axis=0))


def t_quantile(p: float, df: int) -> float:
    """Student-t inverse CDF by bisection on the regularized incomplete beta."""
    if df < 1:
        raise SpectraError(f"t quantile needs df >= 1, got {df}")
    if not (0.0 < p < 1.0):
        raise SpectraError(f"quantile probability must be in (0,1), got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, df)

    def cdf(t):
        # F(t) = 1 - 0.5 * I_x(df/2, 1/2) with x = df/(df + t^2), valid for t >= 0
        x = df / (df + t * t)
        return 1.0 - 0.5 * betainc(df / 2.0, 0.5, x)

    lo, hi = 0.0, 1.0
    while cdf(hi) < p:
        hi *= 2.0
        if hi > 1e12:
            raise SpectraError("t quantile bisection failed to bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mean_ci(anpsds_across_runs: list[Spectrum], level: float = 0.95) -> AnpsdResult:
    """Per-bin mean with a Student-t confidence interval across repeated runs."""
    n = len(anpsds_across_runs)
    if n < 2:
        raise SpectraError("insufficient runs: confidence interval needs n >= 2")
    first = anpsds_across_runs[0]
    for s in anpsds_across_runs[1:]:
        if not first.same_grid(s):
            raise SpectraError("mean_ci inputs must share one frequency grid")
    stacked = np.stack([s.values for s in anpsds_across_runs])
    m = stacked.mean(axis=0)
    s_dev = stacked.std(axis=0, ddof=1)
    t = t_quantile(1.0 - (1.0 - level) / 2.0, n - 1)
    half = t * s_dev / np.sqrt(n)
    return AnpsdResult(
        mean=Spectrum(freqs_hz=first.freqs_hz, values=m),
        per_run=list(anpsds_across_runs),
        ci_lower=m - half,
        ci_upper=m + half,
        confidence=level,
    )


def peak_normalize(s: Spectrum, f_lo: float, f_hi: float) -> Spectrum:
    """Scale a spectrum so its maximum inside [f_lo, f_hi] equals one."""
    mask = (s.freqs_hz >= f_lo) & (s.freqs_hz <= f_hi)
    if not mask.any():
        raise SpectraError(f"band [{f_lo},{f_hi}] Hz does not intersect the grid")
    peak = float(np.max(s.values[mask]))
    if peak <= 0.0:
        raise SpectraError("in-band maximum is zero; cannot peak-normalize")
    return Spectrum(freqs_hz=s.freqs_hz, values=s.values / peak)


def _local_maxima(values: np.ndarray) -> list[int]:
    """Indices of strict local maxima; a flat plateau reports its left edge."""
    out = []
    n = len(values)
    i = 1
    while i < n - 1:
        if values[i] > values[i - 1]:
            j = i
            while j < n - 1 and values[j + 1] == values[i]:
                j += 1
            if j < n - 1 and values[i] > values[j + 1]:
                out.append(i)
            i = j + 1
        else:
            i += 1
    return out


def _prominence(values: np.ndarray, idx: int) -> float:
    """Height of a peak above the higher of its two surrounding bases."""
    peak = values[idx]
    left_min = peak
    for i in range(idx - 1, -1, -1):
        if values[i] > peak:
            break
        left_min = min(left_min, values[i])
    right_min = peak
    for i in range(idx + 1, len(values)):
        if values[i] > peak:
            break
        right_min = min(right_min, values[i])
    return float(peak - max(left_min, right_min))


def find_peaks(s: Spectrum, k: int = 5, min_prominence_ratio: float = 5.0) -> PeakSet:
    """Top-k dominant peaks by value.

    Candidates are local maxima whose prominence reaches
    min_prominence_ratio * median(values); selected peaks keep a minimum
    spacing of 3 bins, larger values winning. Fewer than k peaks may be
    returned. Equal-valued adjacent maxima resolve to the lower frequency.
    """
    if k < 1:
        raise SpectraError(f"k must be >= 1, got {k}")
    values = s.values
    floor = float(np.median(values)) * min_prominence_ratio
    candidates = []
    for idx in _local_maxima(values):
        prom = _prominence(values, idx)
        if prom >= floor:
            candidates.append((idx, prom))

    # larger values first; ties resolve toward lower frequency
    candidates.sort(key=lambda c: (-values[c[0]], c[0]))
    chosen: list[tuple[int, float]] = []
    for idx, prom in candidates:
        if len(chosen) >= k:
            break
        if all(abs(idx - j) >= 3 for j, _ in chosen):
            chosen.append((idx, prom))

    peaks = [
        Peak(f_hz=float(s.freqs_hz[i]), value=float(values[i]), prominence=prom)
        for i, prom in chosen
    ]
    peaks.sort(key=lambda p: (-p.value, p.f_hz))
    return PeakSet(peaks=peaks)

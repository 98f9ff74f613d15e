import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vibedaq.spectra import (
    SpectraError,
    Spectrum,
    WelchParams,
    anpsd,
    find_peaks,
    hamming,
    mean_ci,
    npsd,
    peak_normalize,
    remove_mean,
    segment_count,
    t_quantile,
    welch_psd,
)

from .oracles import T_TABLE_975, brute_force_dft_bin, direct_periodogram

FS = 208.0


def make_spectrum(values, df=1.0):
    values = np.asarray(values, dtype=float)
    return Spectrum(freqs_hz=np.arange(len(values)) * df, values=values)


class TestRemoveMean:
    def test_constant_series_goes_to_zero(self):
        out = remove_mean([1.0, 1.0, 1.0, 1.0])
        assert np.array_equal(out, np.zeros(4))

    def test_zero_mean_input_unchanged(self):
        x = np.array([1.0, -1.0, 2.0, -2.0])
        assert np.allclose(remove_mean(x), x, atol=1e-15)

    def test_sine_plus_offset_recovered(self):
        t = np.arange(2048) / FS
        sine = np.sin(2 * np.pi * 5.0 * t)
        out = remove_mean(sine + 1.0)
        assert abs(out.mean()) < 1e-12
        assert np.allclose(out, sine - sine.mean(), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(SpectraError):
            remove_mean([])


class TestHamming:
    def test_endpoint_value(self):
        assert hamming(16)[0] == pytest.approx(0.08, abs=1e-15)

    def test_odd_length_center_is_one(self):
        n = 33
        w = hamming(n)
        assert w[(n - 1) // 2] == pytest.approx(1.0, abs=1e-15)

    def test_symmetry(self):
        w = hamming(64)
        assert np.allclose(w, w[::-1], atol=1e-15)

    def test_too_short_rejected(self):
        with pytest.raises(SpectraError):
            hamming(1)


class TestWelch:
    def test_sine_argmax_and_parseval(self):
        t = np.arange(int(60 * FS)) / FS
        x = np.sin(2 * np.pi * 5.0 * t)
        spec = welch_psd(remove_mean(x), FS, WelchParams(nperseg=2048))
        peak_bin = int(np.argmax(spec.values))
        assert abs(spec.freqs_hz[peak_bin] - 5.0) <= spec.df
        total = float(np.sum(spec.values) * spec.df)
        assert total == pytest.approx(0.5, rel=0.01)

    def test_sine_argmax_matches_direct_periodogram_oracle(self):
        t = np.arange(int(60 * FS)) / FS
        x = np.sin(2 * np.pi * 5.0 * t)
        of, op = direct_periodogram(x - x.mean(), FS)
        oracle_f = of[int(np.argmax(op))]
        spec = welch_psd(remove_mean(x), FS, WelchParams(nperseg=2048))
        welch_f = spec.freqs_hz[int(np.argmax(spec.values))]
        assert abs(welch_f - oracle_f) <= spec.df

    def test_white_noise_level(self):
        rng = np.random.default_rng(7)
        sigma = 0.1
        x = rng.normal(0.0, sigma, size=int(120 * FS))
        spec = welch_psd(remove_mean(x), FS, WelchParams(nperseg=2048))
        expected = sigma**2 / (FS / 2.0)
        assert expected == pytest.approx(9.615e-5, rel=1e-3)  # analytic flat level
        assert float(spec.values.mean()) == pytest.approx(expected, rel=0.05)

    def test_segment_count_example(self):
        assert segment_count(12480, WelchParams(nperseg=2048, overlap_fraction=0.5)) == 11

    def test_short_signal_rejected(self):
        with pytest.raises(SpectraError):
            welch_psd(np.zeros(100), FS, WelchParams(nperseg=2048))

    def test_parseval_on_broadband_signal(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=int(90 * FS))
        x = remove_mean(x)
        spec = welch_psd(x, FS, WelchParams(nperseg=1024))
        assert float(np.sum(spec.values) * spec.df) == pytest.approx(float(np.var(x)), rel=0.02)

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(3)
        x = remove_mean(rng.normal(size=4096))
        base = welch_psd(x, FS, WelchParams(nperseg=512))
        scaled = welch_psd(3.0 * x, FS, WelchParams(nperseg=512))
        assert np.allclose(scaled.values, 9.0 * base.values, rtol=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        spec = welch_psd(rng.normal(size=4096), FS, WelchParams(nperseg=256))
        assert (spec.values >= 0).all()

    def test_fft_backend_against_definition(self):
        # anchor np.fft itself against the DFT definition on a small case
        rng = np.random.default_rng(2)
        x = rng.normal(size=64)
        full = np.fft.rfft(x)
        for k in (0, 1, 7, 32):
            assert full[k] == pytest.approx(brute_force_dft_bin(x, k), abs=1e-9)


class TestNpsd:
    def test_unit_sum(self):
        rng = np.random.default_rng(0)
        s = make_spectrum(rng.uniform(0.1, 5.0, size=200))
        out = npsd(s)
        assert float(np.sum(out.values)) == pytest.approx(1.0, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        vals = rng.uniform(0.0, 2.0, size=128)
        a = npsd(make_spectrum(vals))
        b = npsd(make_spectrum(100.0 * vals))
        assert np.allclose(a.values, b.values, rtol=1e-12)

    def test_single_nonzero_bin(self):
        vals = np.zeros(50)
        vals[17] = 3.5
        out = npsd(make_spectrum(vals))
        assert out.values[17] == pytest.approx(1.0)
        assert float(np.sum(out.values)) == pytest.approx(1.0)

    def test_all_zero_rejected(self):
        with pytest.raises(SpectraError):
            npsd(make_spectrum(np.zeros(10)))

    @given(st.lists(st.floats(min_value=1e-12, max_value=1e9), min_size=2, max_size=64))
    @settings(max_examples=50)
    def test_unit_sum_property(self, values):
        out = npsd(make_spectrum(values))
        assert float(np.sum(out.values)) == pytest.approx(1.0, abs=1e-9)


class TestAnpsd:
    def test_single_channel_identity(self):
        s = npsd(make_spectrum(np.arange(1.0, 65.0)))
        out = anpsd([s])
        assert np.array_equal(out.values, s.values)

    def test_identical_channels(self):
        s = npsd(make_spectrum(np.arange(1.0, 33.0)))
        out = anpsd([s] * 7)
        assert np.allclose(out.values, s.values, rtol=1e-15)

    def test_mean_of_unit_sum_vectors(self):
        rng = np.random.default_rng(4)
        spectra = [npsd(make_spectrum(rng.uniform(0.01, 1.0, size=100))) for _ in range(18)]
        out = anpsd(spectra)
        assert float(np.sum(out.values)) == pytest.approx(1.0, abs=1e-9)

    def test_mismatched_grids_rejected(self):
        a = make_spectrum(np.ones(10), df=1.0)
        b = make_spectrum(np.ones(10), df=2.0)
        with pytest.raises(SpectraError):
            anpsd([a, b])

    def test_empty_rejected(self):
        with pytest.raises(SpectraError):
            anpsd([])


class TestTQuantile:
    @pytest.mark.parametrize("df,expected", sorted(T_TABLE_975.items()))
    def test_against_tabulated_values(self, df, expected):
        assert t_quantile(0.975, df) == pytest.approx(expected, rel=1e-3)

    def test_median_is_zero(self):
        assert t_quantile(0.5, 10) == 0.0

    def test_antisymmetry(self):
        assert t_quantile(0.025, 5) == pytest.approx(-t_quantile(0.975, 5), rel=1e-12)


class TestMeanCi:
    def test_identical_runs_zero_width(self):
        s = npsd(make_spectrum(np.arange(1.0, 21.0)))
        res = mean_ci([s, s, s])
        assert np.allclose(res.ci_lower, res.mean.values, atol=1e-15)
        assert np.allclose(res.ci_upper, res.mean.values, atol=1e-15)

    def test_n2_uses_tabulated_quantile(self):
        a = make_spectrum(np.array([1.0, 2.0, 3.0]))
        b = make_spectrum(np.array([3.0, 4.0, 1.0]))
        res = mean_ci([a, b])
        stacked = np.stack([a.values, b.values])
        m = stacked.mean(axis=0)
        s = stacked.std(axis=0, ddof=1)
        expected_half = T_TABLE_975[1] * s / np.sqrt(2)
        assert np.allclose(res.ci_upper - m, expected_half, rtol=1e-3)
        assert np.allclose(m - res.ci_lower, expected_half, rtol=1e-3)

    def test_n6_uses_tabulated_quantile(self):
        rng = np.random.default_rng(9)
        runs = [make_spectrum(rng.uniform(0.5, 1.5, size=40)) for _ in range(6)]
        res = mean_ci(runs)
        stacked = np.stack([r.values for r in runs])
        m = stacked.mean(axis=0)
        s = stacked.std(axis=0, ddof=1)
        expected_half = T_TABLE_975[5] * s / np.sqrt(6)
        assert np.allclose(res.ci_upper - m, expected_half, rtol=1e-3)

    def test_mean_always_inside_bounds(self):
        rng = np.random.default_rng(12)
        runs = [make_spectrum(rng.uniform(0.0, 2.0, size=64)) for _ in range(4)]
        res = mean_ci(runs)
        assert (res.ci_lower <= res.mean.values + 1e-15).all()
        assert (res.mean.values <= res.ci_upper + 1e-15).all()

    def test_single_run_rejected(self):
        with pytest.raises(SpectraError, match="insufficient runs"):
            mean_ci([make_spectrum(np.ones(8))])


class TestPeakNormalize:
    def test_in_band_max_is_one(self):
        rng = np.random.default_rng(6)
        s = make_spectrum(rng.uniform(0.1, 4.0, size=300), df=0.1)
        out = peak_normalize(s, 0.0, 10.0)
        band = (out.freqs_hz >= 0.0) & (out.freqs_hz <= 10.0)
        assert float(np.max(out.values[band])) == pytest.approx(1.0, rel=1e-15)
        assert np.sum(out.values[band] == 1.0) == 1

    def test_idempotent_when_peak_is_one(self):
        vals = np.array([0.2, 1.0, 0.3, 5.0])
        s = make_spectrum(vals, df=10.0)  # only first two bins inside [0,10]
        out = peak_normalize(s, 0.0, 10.0)
        assert np.array_equal(out.values, vals)

    def test_argmax_invariance(self):
        rng = np.random.default_rng(8)
        s = make_spectrum(rng.uniform(0.0, 1.0, size=128), df=0.5)
        out = peak_normalize(s, 0.0, 20.0)
        assert int(np.argmax(out.values)) == int(np.argmax(s.values))

    def test_zero_in_band_rejected(self):
        s = make_spectrum(np.concatenate([np.zeros(5), np.ones(5)]), df=1.0)
        with pytest.raises(SpectraError):
            peak_normalize(s, 0.0, 4.0)

    def test_disjoint_band_rejected(self):
        s = make_spectrum(np.ones(10), df=1.0)
        with pytest.raises(SpectraError):
            peak_normalize(s, 100.0, 200.0)


class TestFindPeaks:
    def test_monotone_spectrum_has_no_peaks(self):
        s = make_spectrum(np.linspace(0.0, 1.0, 50))
        assert find_peaks(s, k=5).peaks == []

    def test_equal_adjacent_maxima_reports_lower_frequency(self):
        vals = np.array([0.0, 0.1, 5.0, 5.0, 0.1, 0.0])
        s = make_spectrum(vals)
        ps = find_peaks(s, k=1, min_prominence_ratio=1.0)
        assert len(ps.peaks) == 1
        assert ps.peaks[0].f_hz == 2.0

    def test_plateau_shoulder_not_a_peak(self):
        vals = np.array([0.0, 3.0, 3.0, 5.0, 0.0])
        s = make_spectrum(vals)
        ps = find_peaks(s, k=3, min_prominence_ratio=0.0)
        assert [p.f_hz for p in ps.peaks] == [3.0]

    def test_known_peaks_found_sorted_by_value(self):
        vals = np.full(100, 0.01)
        for idx, height in [(10, 5.0), (30, 9.0), (60, 2.0)]:
            vals[idx] = height
        ps = find_peaks(make_spectrum(vals), k=5)
        assert [p.f_hz for p in ps.peaks] == [30.0, 10.0, 60.0]
        assert all(ps.peaks[i].value >= ps.peaks[i + 1].value for i in range(len(ps.peaks) - 1))

    def test_min_separation_three_bins(self):
        vals = np.full(50, 0.01)
        vals[20] = 10.0
        vals[22] = 8.0  # within 3 bins of the larger peak
        vals[40] = 5.0
        ps = find_peaks(make_spectrum(vals), k=5)
        assert [p.f_hz for p in ps.peaks] == [20.0, 40.0]

    def test_prominence_filter(self):
        vals = np.full(60, 1.0)
        vals[10] = 1.05  # tiny bump under the prominence floor
        vals[30] = 50.0
        ps = find_peaks(make_spectrum(vals), k=5, min_prominence_ratio=5.0)
        assert [p.f_hz for p in ps.peaks] == [30.0]

    def test_may_return_fewer_than_k(self):
        vals = np.full(30, 0.1)
        vals[15] = 4.0
        assert len(find_peaks(make_spectrum(vals), k=5).peaks) == 1

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vibedaq.core import (
    SUPPORTED_ODR_HZ,
    SUPPORTED_RANGE_G,
    AcquisitionConfig,
    ChannelId,
    TestType,
    channel_label,
    g_to_raw,
    parse_channel_label,
    raw_to_g,
    sensor_label,
    validate_config,
)


def cfg(**overrides):
    base = dict(run_id=1, test_type=TestType.TVT, odr_hz=208, range_g=2, duration_s=60)
    base.update(overrides)
    return AcquisitionConfig(**base)


class TestValidateConfig:
    def test_reference_tvt_config_is_valid(self):
        assert validate_config(cfg()) == []

    def test_unsupported_rate(self):
        assert validate_config(cfg(odr_hz=200)) == ["odr_hz unsupported"]

    def test_unsupported_range(self):
        assert validate_config(cfg(range_g=3)) == ["range_g unsupported"]

    def test_zero_duration(self):
        assert validate_config(cfg(duration_s=0)) == ["duration_s must be >= 1"]

    def test_multiple_violations_all_reported(self):
        out = validate_config(cfg(odr_hz=1000, range_g=5, duration_s=0))
        assert len(out) == 3

    @given(
        odr=st.sampled_from(SUPPORTED_ODR_HZ),
        rng=st.sampled_from(SUPPORTED_RANGE_G),
        duration=st.integers(min_value=1, max_value=10**6),
        test_type=st.sampled_from(list(TestType)),
    )
    def test_accepts_exactly_the_supported_cross_product(self, odr, rng, duration, test_type):
        assert validate_config(cfg(odr_hz=odr, range_g=rng, duration_s=duration, test_type=test_type)) == []

    @given(odr=st.floats(min_value=1, max_value=2000))
    def test_rejects_rates_outside_the_set(self, odr):
        violations = validate_config(cfg(odr_hz=odr))
        assert (violations == []) == (odr in SUPPORTED_ODR_HZ)

    def test_expected_samples(self):
        assert cfg().expected_samples() == 12480
        assert cfg(odr_hz=12.5, duration_s=60).expected_samples() == 750


class TestChannelLabel:
    def test_mux0_slave1_x(self):
        assert channel_label(ChannelId(1, 0, "x")) == "0_1_x"

    def test_mux2_slave2_z(self):
        assert channel_label(ChannelId(2, 2, "z")) == "2_2_z"

    def test_sensor_label(self):
        assert sensor_label(1, 0) == "0_1"

    @given(
        slave=st.integers(min_value=1, max_value=255),
        mux=st.integers(min_value=0, max_value=7),
        axis=st.sampled_from(["x", "y", "z"]),
    )
    def test_round_trip(self, slave, mux, axis):
        ch = ChannelId(slave, mux, axis)
        assert parse_channel_label(channel_label(ch)) == ch

    def test_labels_injective_over_bench_layout(self):
        ids = [
            ChannelId(s, m, a)
            for s in (1, 2)
            for m in (0, 1, 2)
            for a in ("x", "y", "z")
        ]
        labels = {channel_label(c) for c in ids}
        assert len(labels) == len(ids) == 18

    def test_invalid_fields_rejected(self):
        with pytest.raises(ValueError):
            ChannelId(0, 0, "x")
        with pytest.raises(ValueError):
            ChannelId(1, 8, "x")
        with pytest.raises(ValueError):
            ChannelId(1, 0, "w")

    def test_malformed_label_rejected(self):
        with pytest.raises(ValueError):
            parse_channel_label("0-1-x")


class TestRawToG:
    def test_positive_full_scale(self):
        assert raw_to_g(32767, 2) == pytest.approx(1.99994, abs=1e-5)

    def test_zero(self):
        assert raw_to_g(0, 16) == 0.0

    def test_negative_full_scale(self):
        assert raw_to_g(-32768, 4) == -4.0

    @given(raw=st.integers(min_value=0, max_value=32767), rng=st.sampled_from(SUPPORTED_RANGE_G))
    def test_odd_symmetry(self, raw, rng):
        assert raw_to_g(-raw, rng) == -raw_to_g(raw, rng)

    @given(raw=st.integers(min_value=-32768, max_value=32767), rng=st.sampled_from(SUPPORTED_RANGE_G))
    def test_quantize_round_trips_within_half_lsb(self, raw, rng):
        back, clipped = g_to_raw(raw_to_g(raw, rng), rng)
        assert back == raw
        assert not clipped

    def test_quantize_clips_and_reports(self):
        raw, clipped = g_to_raw(2.5, 2)
        assert raw == 32767 and clipped
        raw, clipped = g_to_raw(-2.5, 2)
        assert raw == -32768 and clipped

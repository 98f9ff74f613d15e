import numpy as np
import pytest

from vibedaq.sensorbus import (
    AVT_SCENARIO,
    CTRL1_XL,
    IMU_ADDR,
    OUTX_L_XL,
    TVT_SCENARIO,
    WHO_AM_I,
    BusContentionError,
    ImuDevice,
    ModalScenario,
    ModeSpec,
    NackError,
    RegisterError,
    Resonator,
    ScenarioEngine,
    ScenarioError,
    VirtualBus,
    build_slave_bus,
    ctrl1_code,
    load_scenario,
    mux_select,
    read_burst,
    resolve_scenario,
    select_channel,
)
from vibedaq.spectra import WelchParams, remove_mean, welch_psd

from .oracles import biquad_response

FS = 208.0


def single_device_bus():
    bus = VirtualBus()
    dev = ImuDevice()
    bus.attach(0, dev)
    return bus, dev


class TestMux:
    def test_select_one_channel_reads_who_am_i(self):
        bus, _ = single_device_bus()
        mux_select(bus, 0b00000001)
        assert read_burst(bus, IMU_ADDR, WHO_AM_I, 1) == b"\x6a"

    def test_no_channel_selected_is_contention(self):
        bus, _ = single_device_bus()
        mux_select(bus, 0b00000000)
        with pytest.raises(BusContentionError):
            read_burst(bus, IMU_ADDR, WHO_AM_I, 1)

    def test_two_channels_selected_is_contention(self):
        bus, _ = single_device_bus()
        mux_select(bus, 0b00000011)
        with pytest.raises(BusContentionError):
            read_burst(bus, IMU_ADDR, WHO_AM_I, 1)

    def test_empty_channel_not_acknowledged(self):
        bus, _ = single_device_bus()
        mux_select(bus, 0b00000010)
        with pytest.raises(NackError):
            read_burst(bus, IMU_ADDR, WHO_AM_I, 1)

    def test_isolation_between_channels(self):
        bus = VirtualBus()
        dev_a, dev_b = ImuDevice(), ImuDevice()
        bus.attach(0, dev_a)
        bus.attach(3, dev_b)
        dev_a.latch_raw(111, 0, 0)
        dev_b.latch_raw(-222, 0, 0)
        select_channel(bus, 0)
        a_bytes = read_burst(bus, IMU_ADDR, OUTX_L_XL, 2)
        select_channel(bus, 3)
        b_bytes = read_burst(bus, IMU_ADDR, OUTX_L_XL, 2)
        assert int.from_bytes(a_bytes, "little", signed=True) == 111
        assert int.from_bytes(b_bytes, "little", signed=True) == -222


class TestImuDevice:
    def test_burst_little_endian_twos_complement(self):
        bus, dev = single_device_bus()
        dev.latch_raw(100, -200, 16384)
        select_channel(bus, 0)
        burst = read_burst(bus, IMU_ADDR, OUTX_L_XL, 6)
        assert burst == bytes([0x64, 0x00, 0x38, 0xFF, 0x00, 0x40])

    def test_unmapped_register_rejected(self):
        bus, _ = single_device_bus()
        select_channel(bus, 0)
        with pytest.raises(RegisterError):
            read_burst(bus, IMU_ADDR, 0xFE, 1)

    def test_burst_is_atomic_across_latches(self):
        bus, dev = single_device_bus()
        select_channel(bus, 0)
        dev.latch_raw(1, 2, 3)
        first = read_burst(bus, IMU_ADDR, OUTX_L_XL, 6)
        dev.latch_raw(10, 20, 30)
        second = read_burst(bus, IMU_ADDR, OUTX_L_XL, 6)

        def decode(b):
            return tuple(int.from_bytes(b[i : i + 2], "little", signed=True) for i in (0, 2, 4))

        assert decode(first) == (1, 2, 3)
        assert decode(second) == (10, 20, 30)

    def test_ctrl1_code_layout(self):
        assert ctrl1_code(208, 2) == 0x50  # ODR 208 Hz -> 0x5, FS +/-2 g -> 0b00
        assert ctrl1_code(104, 4) == 0x48
        assert ctrl1_code(12.5, 16) == 0x14

    def test_range_follows_ctrl1(self):
        dev = ImuDevice()
        dev.write_reg(CTRL1_XL, ctrl1_code(208, 8))
        assert dev.range_g == 8

    def test_saturation_counted(self):
        dev = ImuDevice()
        dev.write_reg(CTRL1_XL, ctrl1_code(208, 2))
        dev.latch_g(5.0, 0.0, 0.0)
        assert dev.saturation_count == 1
        assert dev._last_raw[0] == 32767


class TestResonator:
    def test_unit_dc_gain(self):
        res = Resonator(3.2, 0.02, FS)
        y = 0.0
        for _ in range(200_000):
            y = res.step(1.0)
        assert y == pytest.approx(1.0, abs=1e-6)

    def test_zero_input_zero_output(self):
        res = Resonator(5.0, 0.05, FS)
        assert all(res.step(0.0) == 0.0 for _ in range(100))

    def test_white_noise_psd_peak_matches_frequency_response_oracle(self):
        import random

        res = Resonator(3.2, 0.02, FS)
        rng = random.Random(1234)
        y = np.array([res.step(rng.gauss(0.0, 1.0)) for _ in range(int(240 * FS))])
        spec = welch_psd(remove_mean(y), FS, WelchParams(nperseg=2048))
        empirical_peak = spec.freqs_hz[int(np.argmax(spec.values))]
        assert abs(empirical_peak - 3.2) <= 0.2

        fine = np.linspace(0.1, FS / 2 - 0.1, 20000)
        oracle = biquad_response(res.b, res.a, fine, FS)
        oracle_peak = fine[int(np.argmax(oracle))]
        assert abs(oracle_peak - 3.2) <= 0.05
        assert abs(empirical_peak - oracle_peak) <= 0.2

    def test_prewarp_keeps_high_mode_on_target(self):
        res = Resonator(31.0, 0.05, FS)
        fine = np.linspace(0.1, FS / 2 - 0.1, 40000)
        oracle = biquad_response(res.b, res.a, fine, FS)
        assert abs(fine[int(np.argmax(oracle))] - 31.0) <= 0.12

    def test_zero_input_decay_below_1e9_of_start(self):
        res = Resonator(3.2, 0.02, FS)
        res.step(1.0)  # impulse, then free decay
        start = max(abs(res.step(0.0)) for _ in range(300))
        assert start > 0
        for _ in range(200):
            window_max = max(abs(res.step(0.0)) for _ in range(300))
            if window_max < 1e-9 * start:
                return
        pytest.fail("zero-input response did not decay below 1e-9 of its start")

    def test_impulse_response_energy_finite(self):
        res = Resonator(7.5, 0.025, FS)
        energy = res.step(1.0) ** 2
        for _ in range(100_000):
            energy += res.step(0.0) ** 2
        assert np.isfinite(energy)
        # the tail contributes nothing once the response has died out
        tail = sum(res.step(0.0) ** 2 for _ in range(1000))
        assert tail < 1e-18 * energy

    def test_unstable_parameters_rejected(self):
        with pytest.raises(ScenarioError):
            Resonator(3.2, 0.0, FS)
        with pytest.raises(ScenarioError):
            Resonator(3.2, -0.1, FS)
        with pytest.raises(ScenarioError):
            Resonator(150.0, 0.05, FS)  # above Nyquist


class TestScenarioEngine:
    def test_gravity_only_case(self):
        scenario = ModalScenario(
            modes=(ModeSpec(3.2, 0.02, 0.0),),
            excitation_rms=0.0,
            noise_floor_rms=0.0,
        )
        bus, engine = build_slave_bus([0], scenario, FS, range_g=2, seed=0)
        engine.tick()
        select_channel(bus, 0)
        burst = read_burst(bus, IMU_ADDR, OUTX_L_XL, 6)
        x, y, z = (int.from_bytes(burst[i : i + 2], "little", signed=True) for i in (0, 2, 4))
        assert (x, y) == (0, 0)
        assert z == 16384  # +1 g at +/-2 g full scale

    def test_avt_variance_strictly_below_tvt(self):
        def run_variance(scenario):
            bus, engine = build_slave_bus([0], scenario, FS, range_g=2, seed=42)
            dev = bus._channels[0][IMU_ADDR]
            samples = []
            for _ in range(4000):
                engine.tick()
                samples.append(dev._last_raw)
            arr = np.asarray(samples, dtype=float)
            return arr.var(axis=0).sum()

        assert run_variance(AVT_SCENARIO) < run_variance(TVT_SCENARIO)

    def test_equal_gain_sensors_share_mode_content(self):
        scenario = ModalScenario(
            modes=(ModeSpec(3.2, 0.02, 0.5),),
            excitation_rms=0.1,
            noise_floor_rms=0.0,
        )
        bus, engine = build_slave_bus([0, 1], scenario, FS, range_g=2, seed=3)
        dev_a = bus._channels[0][IMU_ADDR]
        dev_b = bus._channels[1][IMU_ADDR]
        for _ in range(500):
            engine.tick()
            assert dev_a._last_raw == dev_b._last_raw

    def test_default_tvt_mode_structure(self):
        assert len(TVT_SCENARIO.modes) == 5
        below_10 = [m for m in TVT_SCENARIO.modes if m.f_hz < 10.0]
        assert len(below_10) == 2

    def test_invalid_mode_frequency_rejected(self):
        scenario = ModalScenario(
            modes=(ModeSpec(150.0, 0.02, 1.0),), excitation_rms=0.1, noise_floor_rms=0.0
        )
        with pytest.raises(ScenarioError):
            ScenarioEngine(scenario, FS)


class TestScenarioFiles:
    def test_round_trip_file(self, tmp_path):
        path = tmp_path / "custom.cfg"
        path.write_text(
            "# custom bench scenario\n"
            "excitation_rms=0.05\n"
            "noise_floor_rms=0.001\n"
            "gravity_bias_g=1.0\n"
            "axis_gains=0.5,0.5,1.0\n"
            "sensor_gain=1,0.8\n"
            "mode=2.0,0.01,1.0\n"
            "mode=6.5,0.02,0.4\n"
        )
        sc = load_scenario(str(path))
        assert sc.excitation_rms == 0.05
        assert len(sc.modes) == 2
        assert sc.modes[1] == ModeSpec(6.5, 0.02, 0.4)
        assert sc.sensor_gain(1) == 0.8
        assert sc.sensor_gain(0) == 1.0
        assert sc.axis_gains == (0.5, 0.5, 1.0)

    def test_missing_modes_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("excitation_rms=0.1\n")
        with pytest.raises(ScenarioError):
            load_scenario(str(path))

    def test_malformed_line_reports_location(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("excitation_rms=0.1\nmode=3.0;0.02;1\n")
        with pytest.raises(ScenarioError, match="bad.cfg:2"):
            load_scenario(str(path))

    def test_resolve_presets(self):
        assert resolve_scenario("tvt") is TVT_SCENARIO
        assert resolve_scenario("AVT") is AVT_SCENARIO

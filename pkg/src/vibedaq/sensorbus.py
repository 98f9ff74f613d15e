"""Register-level virtual I2C bus: an 8-channel multiplexer in front of IMU
devices whose output registers are fed by a structural vibration scenario.

The register map mirrors a 6-DoF MEMS IMU accelerometer bank: WHO_AM_I at
0x0F answering 0x6A, CTRL1_XL at 0x10 (ODR and full-scale code), and six
little-endian output registers OUTX_L_XL..OUTZ_H_XL at 0x28..0x2D.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from .core import VibedaqError, g_to_raw

WHO_AM_I = 0x0F
WHO_AM_I_VALUE = 0x6A
CTRL1_XL = 0x10
OUTX_L_XL = 0x28
OUTZ_H_XL = 0x2D

IMU_ADDR = 0x6A  # fixed device address; identical per channel, hence the mux
MUX_ADDR = 0x70

_ODR_CODES = {12.5: 0x1, 26.0: 0x2, 52.0: 0x3, 104.0: 0x4, 208.0: 0x5, 416.0: 0x6, 833.0: 0x7}
_FS_CODES = {2: 0b00, 16: 0b01, 4: 0b10, 8: 0b11}
_FS_FROM_CODE = {v: k for k, v in _FS_CODES.items()}


class BusError(VibedaqError):
    pass


class BusContentionError(BusError):
    """Zero or multiple mux channels enabled while addressing a device."""


class NackError(BusError):
    """No device acknowledged at the addressed location."""


class RegisterError(BusError):
    """Access to an address outside the device register map."""


def ctrl1_code(odr_hz: float, range_g: int) -> int:
    """CTRL1_XL byte: ODR in bits [7:4], accelerometer full scale in [3:2]."""
    try:
        return (_ODR_CODES[float(odr_hz)] << 4) | (_FS_CODES[range_g] << 2)
    except KeyError as exc:
        raise BusError(f"unsupported CTRL1_XL setting: odr={odr_hz}, range={range_g}") from exc


class ImuDevice:
    """One simulated IMU on a mux channel. Output registers always hold the
    most recent latched sample; a burst read returns a consistent snapshot."""

    def __init__(self):
        self._regs = {WHO_AM_I: WHO_AM_I_VALUE, CTRL1_XL: 0x00}
        self.saturation_count = 0
        self.latch_raw(0, 0, 0)

    @property
    def range_g(self) -> int:
        return _FS_FROM_CODE[(self._regs[CTRL1_XL] >> 2) & 0b11]

    def write_reg(self, reg: int, value: int) -> None:
        if reg != CTRL1_XL:
            raise RegisterError(f"register 0x{reg:02x} is not writable")
        self._regs[CTRL1_XL] = value & 0xFF

    def latch_raw(self, x: int, y: int, z: int) -> None:
        """Replace all six output registers atomically with one sample."""
        for base, value in ((OUTX_L_XL, x), (OUTX_L_XL + 2, y), (OUTX_L_XL + 4, z)):
            enc = value & 0xFFFF
            self._regs[base] = enc & 0xFF
            self._regs[base + 1] = enc >> 8
        self._last_raw = (x, y, z)

    def latch_g(self, gx: float, gy: float, gz: float) -> None:
        """Clip to the configured range, quantize, and latch; clipping counts
        toward the saturation counter."""
        raws = []
        for value in (gx, gy, gz):
            raw, clipped = g_to_raw(value, self.range_g)
            if clipped:
                self.saturation_count += 1
            raws.append(raw)
        self.latch_raw(*raws)

    def read(self, start_reg: int, n: int) -> bytes:
        out = bytearray()
        for reg in range(start_reg, start_reg + n):
            if reg not in self._regs:
                raise RegisterError(f"register 0x{reg:02x} is unmapped")
            out.append(self._regs[reg])
        return bytes(out)


class VirtualBus:
    """An I2C segment with one multiplexer and up to eight downstream devices."""

    def __init__(self, mux_addr: int = MUX_ADDR):
        self.mux_addr = mux_addr
        self._control_byte = 0x00
        self._channels: dict[int, dict[int, ImuDevice]] = {}

    def attach(self, channel: int, device: ImuDevice, addr: int = IMU_ADDR) -> None:
        if not (0 <= channel <= 7):
            raise BusError(f"mux channel must be in [0,7], got {channel}")
        self._channels.setdefault(channel, {})[addr] = device

    def detach(self, channel: int, addr: int = IMU_ADDR) -> None:
        self._channels.get(channel, {}).pop(addr, None)

    @property
    def control_byte(self) -> int:
        return self._control_byte

    def write(self, addr: int, data: bytes) -> None:
        if addr == self.mux_addr:
            if len(data) != 1:
                raise BusError("mux control write takes exactly one byte")
            self._control_byte = data[0]
            return
        self._device(addr).write_reg(data[0], data[1])

    def read(self, addr: int, start_reg: int, n: int) -> bytes:
        if addr == self.mux_addr:
            return bytes([self._control_byte])
        return self._device(addr).read(start_reg, n)

    def _device(self, addr: int) -> ImuDevice:
        ctrl = self._control_byte
        if ctrl == 0 or (ctrl & (ctrl - 1)) != 0:
            raise BusContentionError(
                f"mux control byte 0b{ctrl:08b} must enable exactly one channel"
            )
        channel = ctrl.bit_length() - 1
        device = self._channels.get(channel, {}).get(addr)
        if device is None:
            raise NackError(f"no device at 0x{addr:02x} on mux channel {channel}")
        return device


def mux_select(bus: VirtualBus, control_byte: int) -> None:
    """Write the multiplexer control byte; one set bit enables one channel."""
    bus.write(bus.mux_addr, bytes([control_byte & 0xFF]))


def select_channel(bus: VirtualBus, channel: int) -> None:
    mux_select(bus, 1 << channel)


def read_burst(bus: VirtualBus, device_addr: int, start_reg: int, n: int) -> bytes:
    """Read n consecutive registers in one transaction (no tearing between bytes)."""
    return bus.read(device_addr, start_reg, n)


# --- modal vibration scenario ----------------------------------------------


@dataclass(frozen=True)
class ModeSpec:
    """One structural mode: natural frequency, damping ratio, and the
    acceleration produced per unit excitation."""

    f_hz: float
    zeta: float
    gain: float


@dataclass(frozen=True)
class ModalScenario:
    modes: tuple[ModeSpec, ...]
    excitation_rms: float
    noise_floor_rms: float
    gravity_bias_g: float = 1.0
    axis_gains: tuple[float, float, float] = (0.6, 0.8, 1.0)
    sensor_gains: dict[int, float] = field(default_factory=dict)  # per mux channel

    def validate(self, fs: float) -> None:
        for m in self.modes:
            if not (0.0 < m.zeta < 1.0):
                raise ScenarioError(f"damping ratio must be in (0,1), got {m.zeta}")
            if not (0.0 < m.f_hz < fs / 2.0):
                raise ScenarioError(f"mode at {m.f_hz} Hz violates f < fs/2 = {fs / 2}")
        if self.excitation_rms < 0 or self.noise_floor_rms < 0:
            raise ScenarioError("rms levels must be nonnegative")

    def sensor_gain(self, mux_channel: int) -> float:
        return self.sensor_gains.get(mux_channel, 1.0)


class ScenarioError(VibedaqError):
    pass


# Mode gains fall off with frequency so low-frequency energy dominates; rms
# levels keep the summed response well inside a +/-2 g range under gravity.
# Damping is light (Q 25..83) so resonance tops stay narrow enough for
# bin-accurate peak picking at the 0.1 Hz analysis resolution.
_DEFAULT_MODES = (
    ModeSpec(3.2, 0.02, 0.50),
    ModeSpec(7.5, 0.015, 0.26),
    ModeSpec(16.0, 0.01, 0.145),
    ModeSpec(24.0, 0.008, 0.09),
    ModeSpec(31.0, 0.006, 0.052),
)

TVT_SCENARIO = ModalScenario(modes=_DEFAULT_MODES, excitation_rms=0.2, noise_floor_rms=0.002)
AVT_SCENARIO = ModalScenario(modes=_DEFAULT_MODES, excitation_rms=0.005, noise_floor_rms=0.002)

PRESETS = {"tvt": TVT_SCENARIO, "avt": AVT_SCENARIO}


class Resonator:
    """Second-order section y'' + 2*zeta*wn*y' + wn^2*y = wn^2*u discretized by
    the bilinear transform, prewarped so the resonance lands at f_n on the
    digital grid. DC gain is exactly one."""

    def __init__(self, f_n: float, zeta: float, fs: float):
        if zeta <= 0.0 or zeta >= 1.0:
            raise ScenarioError(f"unstable resonator: zeta={zeta}")
        if not (0.0 < f_n < fs / 2.0):
            raise ScenarioError(f"resonator frequency {f_n} must satisfy 0 < f < fs/2")
        k = 2.0 * fs
        wn = k * math.tan(math.pi * f_n / fs)  # prewarp
        a0 = k * k + 2.0 * zeta * wn * k + wn * wn
        self.b = (wn * wn / a0, 2.0 * wn * wn / a0, wn * wn / a0)
        self.a = ((2.0 * wn * wn - 2.0 * k * k) / a0, (k * k - 2.0 * zeta * wn * k + wn * wn) / a0)
        self._u1 = self._u2 = 0.0
        self._y1 = self._y2 = 0.0

    def step(self, u: float) -> float:
        y = (
            self.b[0] * u
            + self.b[1] * self._u1
            + self.b[2] * self._u2
            - self.a[0] * self._y1
            - self.a[1] * self._y2
        )
        self._u2, self._u1 = self._u1, u
        self._y2, self._y1 = self._y1, y
        return y

    @property
    def state(self) -> tuple[float, float, float, float]:
        return (self._u1, self._u2, self._y1, self._y2)


class ScenarioEngine:
    """Drives one slave's IMU devices from a shared excitation stream.

    Every tick draws one excitation value, advances each mode's resonator
    once, and latches a fresh sample into every attached device, so all
    sensors on the bus observe the same tick coherently.
    """

    def __init__(self, scenario: ModalScenario, fs: float, seed: int = 0):
        scenario.validate(fs)
        self.scenario = scenario
        self.fs = fs
        self._rng = random.Random(seed)
        self._resonators = [Resonator(m.f_hz, m.zeta, fs) for m in scenario.modes]
        self._devices: dict[int, ImuDevice] = {}
        self.tick_count = 0

    def bind(self, mux_channel: int, device: ImuDevice) -> None:
        self._devices[mux_channel] = device

    def tick(self) -> None:
        sc = self.scenario
        u = self._rng.gauss(0.0, sc.excitation_rms)
        modal = 0.0
        for mode, res in zip(sc.modes, self._resonators):
            modal += mode.gain * res.step(u)
        ax, ay, az = sc.axis_gains
        for mux_channel in sorted(self._devices):
            dev = self._devices[mux_channel]
            s_gain = sc.sensor_gain(mux_channel)
            noise = [self._rng.gauss(0.0, sc.noise_floor_rms) for _ in range(3)]
            dev.latch_g(
                ax * s_gain * modal + noise[0],
                ay * s_gain * modal + noise[1],
                az * s_gain * modal + noise[2] + sc.gravity_bias_g,
            )
        self.tick_count += 1


def build_slave_bus(
    sensor_channels: list[int], scenario: ModalScenario, fs: float, range_g: int, seed: int = 0
) -> tuple[VirtualBus, ScenarioEngine]:
    """Assemble a bus with one IMU per listed mux channel, bound to a scenario."""
    bus = VirtualBus()
    engine = ScenarioEngine(scenario, fs, seed=seed)
    code = ctrl1_code(fs, range_g)
    for channel in sensor_channels:
        dev = ImuDevice()
        dev.write_reg(CTRL1_XL, code)
        bus.attach(channel, dev)
        engine.bind(channel, dev)
    return bus, engine


def load_scenario(path: str) -> ModalScenario:
    """Parse a plain-text key=value scenario file.

    Recognized keys: excitation_rms, noise_floor_rms, gravity_bias_g,
    axis_gains=<ax>,<ay>,<az>, sensor_gain=<mux>,<multiplier>, and one
    mode=<f_hz>,<zeta>,<gain> line per mode. '#' starts a comment.
    """
    modes: list[ModeSpec] = []
    values: dict[str, float] = {}
    axis_gains = (0.6, 0.8, 1.0)
    sensor_gains: dict[int, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ScenarioError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            parts = [p.strip() for p in raw.split(",")]
            try:
                if key == "mode":
                    f_hz, zeta, gain = (float(p) for p in parts)
                    modes.append(ModeSpec(f_hz, zeta, gain))
                elif key == "axis_gains":
                    ax, ay, az = (float(p) for p in parts)
                    axis_gains = (ax, ay, az)
                elif key == "sensor_gain":
                    mux, mult = parts
                    sensor_gains[int(mux)] = float(mult)
                elif key in ("excitation_rms", "noise_floor_rms", "gravity_bias_g"):
                    (value,) = parts
                    values[key] = float(value)
                else:
                    raise ScenarioError(f"{path}:{lineno}: unknown key {key!r}")
            except (ValueError, TypeError) as exc:
                raise ScenarioError(f"{path}:{lineno}: {exc}") from exc
    if not modes:
        raise ScenarioError(f"{path}: scenario defines no modes")
    if "excitation_rms" not in values:
        raise ScenarioError(f"{path}: excitation_rms is required")
    return ModalScenario(
        modes=tuple(modes),
        excitation_rms=values["excitation_rms"],
        noise_floor_rms=values.get("noise_floor_rms", 0.0),
        gravity_bias_g=values.get("gravity_bias_g", 1.0),
        axis_gains=axis_gains,
        sensor_gains=sensor_gains,
    )


def resolve_scenario(name_or_path: str) -> ModalScenario:
    """Look up a named preset or load a scenario file."""
    preset = PRESETS.get(name_or_path.lower())
    if preset is not None:
        return preset
    return load_scenario(name_or_path)


def scaled_scenario(scenario: ModalScenario, excitation_rms: float) -> ModalScenario:
    return replace(scenario, excitation_rms=excitation_rms)

"""Shared domain types: acquisition settings, channel identity, sample records."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

SUPPORTED_ODR_HZ = (12.5, 26.0, 52.0, 104.0, 208.0, 416.0, 833.0)
SUPPORTED_RANGE_G = (2, 4, 8, 16)

FULL_SCALE_COUNTS = 32768  # two's-complement 16-bit full scale

AXES = ("x", "y", "z")


class TestType(Enum):
    __test__ = False  # not a pytest class, despite the name

    TVT = "TVT"
    AVT = "AVT"


class VibedaqError(Exception):
    """Base class for runtime errors raised by this package."""


@dataclass(frozen=True)
class AcquisitionConfig:
    """Run-wide settings broadcast by the master to every slave."""

    run_id: int
    test_type: TestType
    odr_hz: float
    range_g: int
    duration_s: int
    scheduled_start_us: int = 0  # master-epoch microseconds, 0 = immediate

    def expected_samples(self) -> int:
        return round(self.odr_hz * self.duration_s)


def validate_config(cfg: AcquisitionConfig) -> list[str]:
    """Return every violated constraint; an empty list means the config is valid."""
    violations = []
    if not (0 <= cfg.run_id < 2**32):
        violations.append("run_id out of u32 range")
    if not isinstance(cfg.test_type, TestType):
        violations.append("test_type unsupported")
    if float(cfg.odr_hz) not in SUPPORTED_ODR_HZ:
        violations.append("odr_hz unsupported")
    if cfg.range_g not in SUPPORTED_RANGE_G:
        violations.append("range_g unsupported")
    if cfg.duration_s < 1:
        violations.append("duration_s must be >= 1")
    if cfg.scheduled_start_us < 0:
        violations.append("scheduled_start_us must be >= 0")
    return violations


@dataclass(frozen=True, order=True)
class ChannelId:
    """One measurement channel: a sensor (slave, mux channel) plus an axis."""

    slave_id: int
    mux_channel: int
    axis: str

    def __post_init__(self):
        if not (1 <= self.slave_id <= 255):
            raise ValueError(f"slave_id must be in [1,255], got {self.slave_id}")
        if not (0 <= self.mux_channel <= 7):
            raise ValueError(f"mux_channel must be in [0,7], got {self.mux_channel}")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")


def channel_label(ch: ChannelId) -> str:
    """Render a channel as "<mux>_<slave>_<axis>", e.g. mux 0 on slave 1, x -> "0_1_x"."""
    return f"{ch.mux_channel}_{ch.slave_id}_{ch.axis}"


def sensor_label(slave_id: int, mux_channel: int) -> str:
    """Sensor-level label without the axis, e.g. "0_1"."""
    return f"{mux_channel}_{slave_id}"


_LABEL_RE = re.compile(r"^(\d+)_(\d+)_([xyz])$")


def parse_channel_label(label: str) -> ChannelId:
    """Inverse of channel_label; raises ValueError on malformed labels."""
    m = _LABEL_RE.match(label)
    if m is None:
        raise ValueError(f"malformed channel label {label!r}")
    return ChannelId(slave_id=int(m.group(2)), mux_channel=int(m.group(1)), axis=m.group(3))


def raw_to_g(raw: int, range_g: float) -> float:
    """Convert a signed 16-bit register count to acceleration in g."""
    return raw * range_g / FULL_SCALE_COUNTS


def g_to_raw(value_g: float, range_g: float) -> tuple[int, bool]:
    """Quantize an acceleration to a signed 16-bit count.

    Values beyond full scale clip to the rails; the second return element
    reports whether clipping occurred.
    """
    raw = round(value_g * FULL_SCALE_COUNTS / range_g)
    if raw > 32767:
        return 32767, True
    if raw < -32768:
        return -32768, True
    return raw, False


@dataclass(frozen=True)
class SampleRecord:
    """One timestamped tri-axial reading from a single sensor."""

    seq: int
    t_local_us: int
    raw: tuple[int, int, int]


@dataclass(frozen=True)
class SensorPosition:
    """Physical mounting location of a sensor on the test structure."""

    slave_id: int
    mux_channel: int
    x_cm: float
    y_cm: float


# Default bench layout: three sensors per wing-mounted slave, symmetric spanwise.
DEFAULT_SENSOR_POSITIONS = (
    SensorPosition(1, 0, -8.6, 8.6),
    SensorPosition(1, 1, -8.6, 52.6),
    SensorPosition(1, 2, -8.6, 97.6),
    SensorPosition(2, 0, -8.6, -8.6),
    SensorPosition(2, 1, -8.6, -39.2),
    SensorPosition(2, 2, -8.6, -96.6),
)

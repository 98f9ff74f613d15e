"""vibedaq: distributed low-cost acceleration DAQ with a virtual sensor bus and spectral post-processing."""

__version__ = "0.1.0"

from .core import (
    AcquisitionConfig,
    ChannelId,
    SampleRecord,
    SensorPosition,
    TestType,
    VibedaqError,
    channel_label,
    parse_channel_label,
    raw_to_g,
    validate_config,
)

__all__ = [
    "AcquisitionConfig",
    "ChannelId",
    "SampleRecord",
    "SensorPosition",
    "TestType",
    "VibedaqError",
    "channel_label",
    "parse_channel_label",
    "raw_to_g",
    "validate_config",
    "__version__",
]

"""Simulated wearable vitals monitor and its cloud telemetry service."""

from .signal import (
    CalibrationRecord,
    FilterSpec,
    NoPulseError,
    PeakTrain,
    PpgWaveform,
    apply_bandpass,
    apply_scale,
    calibrate_scale,
    detect_peaks,
    estimate_bpm,
    read_waveform_csv,
    run_pipeline,
    synthesize_ppg,
    write_waveform_csv,
)
from .sensors import AlarmState, Ds18b20Model, PulseAdcModel, TemperatureReading
from .device import (
    BodyModel,
    Device,
    DeviceConfig,
    DeviceMode,
    DeviceState,
    HttpTransport,
    UplinkResult,
    UplinkStatus,
    VirtualClock,
    VitalsReading,
    drain_buffer,
    enqueue,
    load_outage_schedule,
)

__version__ = "0.1.0"

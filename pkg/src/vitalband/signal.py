"""PPG waveform synthesis, band-pass filtering, beat detection and calibration.

The processing chain mirrors the wearable's firmware: the raw photodetector
voltage (a large DC level plus a small pulsatile AC component and noise) is
band-passed by cascaded first-order high-pass and low-pass sections, beats are
picked off the filtered trace with an adaptive midpoint threshold, and the
beat frequency is converted to beats per minute. An empirically derived
scaling factor maps uncalibrated raw pulse metrics onto reference BPM.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from statistics import fmean
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_SAMPLE_RATE_HZ = 50.0
DEFAULT_HP_CUTOFF_HZ = 0.8
DEFAULT_LP_CUTOFF_HZ = 3.5
DEFAULT_STAGES_PER_SIDE = 2
DEFAULT_REFRACTORY_MS = 250.0
DEFAULT_WARMUP_S = 2.0
THRESHOLD_WINDOW_S = 3.0

# Synthetic pulse shape: fundamental plus a second harmonic that sharpens the
# systolic upstroke. The harmonic ratio is kept small enough that the clean
# waveform has exactly one local maximum per beat, even after the band-pass
# boosts the harmonic relative to a near-cutoff fundamental.
PULSE_AMPLITUDE_V = 0.25
PULSE_HARMONIC_RATIO = 0.2

DEFAULT_START_TIME = datetime(2020, 1, 1, tzinfo=timezone.utc)


class NoPulseError(Exception):
    """Raised when a peak train is too short to define a pulse rate."""


@dataclass(frozen=True, eq=False)
class PpgWaveform:
    """A uniformly sampled voltage trace.

    samples are volts, sample_rate_hz is the uniform rate, start_time anchors
    sample 0 in UTC.
    """

    samples: np.ndarray
    sample_rate_hz: float
    start_time: datetime = DEFAULT_START_TIME

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not (self.sample_rate_hz > 0):
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples must all be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def times(self) -> np.ndarray:
        """Sample times in seconds from the start of the capture."""
        return np.arange(self.samples.size, dtype=np.float64) / self.sample_rate_hz


@dataclass(frozen=True)
class FilterSpec:
    """Cutoffs and per-side stage count of the high-pass/low-pass cascade."""

    hp_cutoff_hz: float = DEFAULT_HP_CUTOFF_HZ
    lp_cutoff_hz: float = DEFAULT_LP_CUTOFF_HZ
    stages_per_side: int = DEFAULT_STAGES_PER_SIDE

    def __post_init__(self):
        if not (0 < self.hp_cutoff_hz < self.lp_cutoff_hz):
            raise ValueError(
                f"cutoffs must satisfy 0 < hp < lp, got {self.hp_cutoff_hz}, {self.lp_cutoff_hz}"
            )
        if self.stages_per_side < 1:
            raise ValueError("stages_per_side must be >= 1")

    def validate_for(self, sample_rate_hz: float) -> None:
        nyquist = sample_rate_hz / 2.0
        if self.lp_cutoff_hz >= nyquist:
            raise ValueError(
                f"lp_cutoff_hz {self.lp_cutoff_hz} must be below the Nyquist rate {nyquist}"
            )


@dataclass(frozen=True, eq=False)
class PeakTrain:
    """Detected beat times, in seconds from the start of the waveform."""

    peak_times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.peak_times, dtype=np.float64)
        if times.ndim != 1:
            raise ValueError("peak_times must be one-dimensional")
        if times.size:
            if not np.all(np.isfinite(times)) or times[0] < 0:
                raise ValueError("peak times must be finite and non-negative")
            if np.any(np.diff(times) <= 0):
                raise ValueError("peak times must be strictly increasing")
        object.__setattr__(self, "peak_times", times)

    def __len__(self) -> int:
        return self.peak_times.size


@dataclass(frozen=True)
class CalibrationRecord:
    """Device/reference means and the raw-metric-to-BPM scaling factor."""

    device_mean: float
    reference_mean: float
    scaling_factor: float

    def __post_init__(self):
        if not (self.reference_mean > 0):
            raise ValueError("reference_mean must be positive")
        expected = self.device_mean / self.reference_mean
        if not math.isclose(self.scaling_factor, expected, rel_tol=1e-6):
            raise ValueError(
                f"scaling_factor {self.scaling_factor} does not match "
                f"device_mean/reference_mean = {expected}"
            )

    @classmethod
    def from_means(cls, device_mean: float, reference_mean: float) -> "CalibrationRecord":
        if not (reference_mean > 0):
            raise ValueError("reference_mean must be positive")
        return cls(device_mean, reference_mean, device_mean / reference_mean)

    @classmethod
    def identity(cls) -> "CalibrationRecord":
        return cls(1.0, 1.0, 1.0)


def synthesize_ppg(
    bpm: float,
    duration_s: float,
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
    dc_offset_v: float = 0.0,
    noise_rms_v: float = 0.0,
    drift_v_per_s: float = 0.0,
    seed: int = 0,
) -> PpgWaveform:
    """Deterministic synthetic pulse waveform standing in for the optical sensor.

    The AC part is a sharpened periodic pulse at bpm/60 Hz; dc_offset_v,
    drift_v_per_s and seeded Gaussian noise model the detector's DC level,
    baseline wander and wideband noise. Identical arguments (seed included)
    produce bit-identical samples.
    """
    if not (30.0 <= bpm <= 240.0):
        raise ValueError(f"bpm must be within [30, 240], got {bpm}")
    if not (duration_s > 0):
        raise ValueError("duration_s must be positive")
    beat_hz = bpm / 60.0
    if not (sample_rate_hz >= 4.0 * beat_hz):
        raise ValueError(
            f"sample_rate_hz {sample_rate_hz} too low for {bpm} BPM (need >= {4.0 * beat_hz})"
        )
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n, dtype=np.float64) / sample_rate_hz
    theta = 2.0 * math.pi * beat_hz * t
    ac = PULSE_AMPLITUDE_V * (np.sin(theta) - PULSE_HARMONIC_RATIO * np.cos(2.0 * theta))
    samples = dc_offset_v + drift_v_per_s * t + ac
    if noise_rms_v > 0:
        rng = np.random.default_rng(seed)
        samples = samples + rng.normal(0.0, noise_rms_v, n)
    return PpgWaveform(samples, sample_rate_hz)


def _highpass_once(x: np.ndarray, cutoff_hz: float, sample_rate_hz: float) -> np.ndarray:
    # Bilinear-transform first-order high-pass. State is pre-charged with the
    # first sample, so a constant input settles to zero with no step transient
    # and any DC offset cancels in the input differences.
    k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
    a = (1.0 - k) / (1.0 + k)
    g = 1.0 / (1.0 + k)
    y = np.empty_like(x)
    prev_x = x[0]
    prev_y = 0.0
    for i in range(x.size):
        xi = x[i]
        prev_y = g * (xi - prev_x) + a * prev_y
        y[i] = prev_y
        prev_x = xi
    return y


def _lowpass_once(x: np.ndarray, cutoff_hz: float, sample_rate_hz: float) -> np.ndarray:
    # Bilinear-transform first-order low-pass, pre-charged to unity DC gain
    # from the first sample.
    k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
    a = (1.0 - k) / (1.0 + k)
    b = k / (1.0 + k)
    y = np.empty_like(x)
    prev_x = x[0]
    prev_y = x[0]
    for i in range(x.size):
        xi = x[i]
        prev_y = b * (xi + prev_x) + a * prev_y
        y[i] = prev_y
        prev_x = xi
    return y


def apply_bandpass(w: PpgWaveform, spec: FilterSpec | None = None) -> PpgWaveform:
    """Run the waveform through the cascaded high-pass then low-pass sections.

    Output has the same length and rate; the DC level is removed and content
    well above lp_cutoff_hz is attenuated.
    """
    spec = spec or FilterSpec()
    spec.validate_for(w.sample_rate_hz)
    if w.samples.size == 0:
        return PpgWaveform(w.samples.copy(), w.sample_rate_hz, w.start_time)
    y = w.samples
    for _ in range(spec.stages_per_side):
        y = _highpass_once(y, spec.hp_cutoff_hz, w.sample_rate_hz)
    for _ in range(spec.stages_per_side):
        y = _lowpass_once(y, spec.lp_cutoff_hz, w.sample_rate_hz)
    return PpgWaveform(y, w.sample_rate_hz, w.start_time)


def detect_peaks(
    w: PpgWaveform,
    refractory_ms: float = DEFAULT_REFRACTORY_MS,
    *,
    min_time_s: float = 0.0,
    threshold_window_s: float = THRESHOLD_WINDOW_S,
) -> PeakTrain:
    """Find beat peaks: local maxima above an adaptive midpoint threshold.

    The threshold at each sample is (min + max) / 2 over a centred sliding
    window, so it tracks residual baseline and scales with the signal. Peaks
    closer than refractory_ms to an accepted peak are dropped, scanning left
    to right. Samples before min_time_s are ignored entirely (filter warm-up).
    """
    if not (refractory_ms > 0):
        raise ValueError("refractory_ms must be positive")
    fs = w.sample_rate_hz
    start = int(math.ceil(min_time_s * fs - 1e-9)) if min_time_s > 0 else 0
    x = w.samples[start:]
    if x.size < 3:
        return PeakTrain(np.empty(0))
    half = max(1, int(round(threshold_window_s * fs / 2.0)))
    padded = np.pad(x, half, mode="edge")
    windows = sliding_window_view(padded, 2 * half + 1)
    threshold = 0.5 * (windows.min(axis=1) + windows.max(axis=1))
    interior = x[1:-1]
    is_peak = (
        (interior > threshold[1:-1]) & (interior > x[:-2]) & (interior >= x[2:])
    )
    candidates = np.flatnonzero(is_peak) + 1
    min_gap = refractory_ms / 1000.0 * fs
    kept: list[int] = []
    for idx in candidates:
        if not kept or idx - kept[-1] >= min_gap - 1e-9:
            kept.append(int(idx))
    times = (start + np.asarray(kept, dtype=np.float64)) / fs
    return PeakTrain(times)


def run_pipeline(
    w: PpgWaveform,
    spec: FilterSpec | None = None,
    refractory_ms: float = DEFAULT_REFRACTORY_MS,
    warmup_s: float = DEFAULT_WARMUP_S,
) -> PeakTrain:
    """Band-pass then detect beats, discarding the filter warm-up window."""
    return detect_peaks(apply_bandpass(w, spec), refractory_ms, min_time_s=warmup_s)


def estimate_bpm(peaks: PeakTrain) -> float:
    """Pulse rate as 60 * F, with F the reciprocal of the mean beat interval."""
    if len(peaks) < 2:
        raise NoPulseError("need at least two beats to estimate a pulse rate")
    span = float(peaks.peak_times[-1] - peaks.peak_times[0])
    return 60.0 * (len(peaks) - 1) / span


def calibrate_scale(
    device_readings: Sequence[float], reference_readings: Sequence[float]
) -> CalibrationRecord:
    """Scaling factor from simultaneous device and reference readings.

    The factor is the ratio of the arithmetic means, mapping the device's raw
    pulse metric onto the reference BPM scale.
    """
    if len(device_readings) == 0 or len(reference_readings) == 0:
        raise ValueError("device and reference readings must be non-empty")
    device_mean = fmean(device_readings)
    reference_mean = fmean(reference_readings)
    if not (reference_mean > 0):
        raise ValueError(f"reference mean must be positive, got {reference_mean}")
    return CalibrationRecord.from_means(device_mean, reference_mean)


def apply_scale(raw_metric: float, record: CalibrationRecord) -> float:
    """Convert a raw pulse metric to BPM by dividing by the scaling factor."""
    if not (record.scaling_factor > 0):
        raise ValueError(f"scaling_factor must be positive, got {record.scaling_factor}")
    return raw_metric / record.scaling_factor


def write_waveform_csv(w: PpgWaveform, path) -> None:
    """Write the waveform as `t_s,volts` rows (UTF-8, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("t_s,volts\n")
        for t, v in zip(w.times(), w.samples):
            f.write(f"{float(t)!r},{float(v)!r}\n")


def read_waveform_csv(path) -> PpgWaveform:
    """Load a `t_s,volts` capture; raises ValueError with the offending line number."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: line 1: missing 't_s,volts' header") from None
        if header != ["t_s", "volts"]:
            raise ValueError(f"{path}: line 1: expected header 't_s,volts', got {','.join(header)}")
        times: list[float] = []
        volts: list[float] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: line {lineno}: expected two columns, got {len(row)}")
            try:
                t = float(row[0])
                v = float(row[1])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric value") from None
            if times and t <= times[-1]:
                raise ValueError(f"{path}: line {lineno}: timestamps must be strictly increasing")
            times.append(t)
            volts.append(v)
    if len(times) < 2:
        raise ValueError(f"{path}: need at least two samples to infer the sample rate")
    sample_rate = (len(times) - 1) / (times[-1] - times[0])
    return PpgWaveform(np.asarray(volts), sample_rate)

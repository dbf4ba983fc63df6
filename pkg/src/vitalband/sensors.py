"""Behavioral models of the wearable's sensors.

Ds18b20Model reproduces the digital thermometer's observable contract: the
-55..125 degC range, 9..12-bit resolution grid, the 1/16 degC two-byte
register encoding, programmable alarm trip points and the +/-0.5 degC
accuracy band. PulseAdcModel is the microcontroller's ADC front end that
digitizes the analog pulse sensor voltage.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field

import numpy as np

TEMP_MIN_C = -55.0
TEMP_MAX_C = 125.0

# Accuracy is +/-0.5 degC inside [-10, 85] degC; outside we assume a 4x wider
# band (the datasheet-style spec gives no figure there).
FINE_BAND_LOW_C = -10.0
FINE_BAND_HIGH_C = 85.0
COARSE_BAND_FACTOR = 4.0

# 12-bit conversions take 750 ms of device time, halving per bit dropped.
BASE_CONVERSION_TIME_S = 0.75


class AlarmState(enum.Enum):
    NONE = "none"
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class TemperatureReading:
    """One conversion result: fixed-point register value plus decoded celsius."""

    raw16: int
    celsius: float
    alarm: AlarmState

    @property
    def register(self) -> int:
        """The value as it sits in the sensor's 2-byte two's-complement register."""
        return self.raw16 & 0xFFFF


@dataclass
class Ds18b20Model:
    """Digital thermometer model; one instance per simulated sensor.

    Holds a seeded generator for the measurement error, so an instance must
    stay on one thread; distinct instances are independent.
    """

    resolution_bits: int = 12
    th_c: float = 38.0
    tl_c: float = 35.0
    accuracy_band_c: float = 0.5
    noise_seed: int = 0
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        if not (9 <= self.resolution_bits <= 12):
            raise ValueError(f"resolution_bits must be in [9, 12], got {self.resolution_bits}")
        if not (self.tl_c < self.th_c):
            raise ValueError("tl_c must be below th_c")
        if self.accuracy_band_c < 0:
            raise ValueError("accuracy_band_c must be non-negative")
        self._rng = random.Random(self.noise_seed)

    @property
    def step_c(self) -> float:
        """Temperature grid step at the configured resolution."""
        return (1 << (12 - self.resolution_bits)) / 16.0

    @property
    def conversion_time_s(self) -> float:
        return BASE_CONVERSION_TIME_S / (1 << (12 - self.resolution_bits))

    def check_alarm(self, celsius: float) -> AlarmState:
        if celsius > self.th_c:
            return AlarmState.HIGH
        if celsius < self.tl_c:
            return AlarmState.LOW
        return AlarmState.NONE

    def convert_t(self, true_temp_c: float) -> TemperatureReading:
        """One measurement plus A-to-D conversion into the fixed-point register.

        Out-of-range inputs clamp (a worn sensor saturates, it does not
        crash). A seeded uniform error inside the accuracy band is applied,
        then the value is truncated toward zero on the 1/16 degC grid and the
        low bits below the configured resolution are zeroed, exactly as the
        register stores it.
        """
        if not math.isfinite(true_temp_c):
            raise ValueError("true_temp_c must be finite")
        t = min(max(true_temp_c, TEMP_MIN_C), TEMP_MAX_C)
        if self.accuracy_band_c > 0:
            band = self.accuracy_band_c
            if not (FINE_BAND_LOW_C <= t <= FINE_BAND_HIGH_C):
                band *= COARSE_BAND_FACTOR
            t = t + self._rng.uniform(-band, band)
            t = min(max(t, TEMP_MIN_C), TEMP_MAX_C)
        raw = int(t * 16.0)
        raw &= ~((1 << (12 - self.resolution_bits)) - 1)
        celsius = raw / 16.0
        return TemperatureReading(raw16=raw, celsius=celsius, alarm=self.check_alarm(celsius))


@dataclass(frozen=True)
class PulseAdcModel:
    """The microcontroller's ADC: 10 bits over a 3.3 V reference by default."""

    vref_v: float = 3.3
    bits: int = 10

    def __post_init__(self):
        if not (self.vref_v > 0):
            raise ValueError("vref_v must be positive")
        if self.bits < 1:
            raise ValueError("bits must be >= 1")

    @property
    def levels(self) -> int:
        return 1 << self.bits

    def digitize(self, volts: float) -> int:
        """Voltage to ADC counts, clamped to the code range."""
        code = math.floor(volts / self.vref_v * self.levels)
        return min(max(code, 0), self.levels - 1)

    def undigitize(self, counts: int) -> float:
        """Mid-tread voltage reconstruction of one code."""
        if not (0 <= counts < self.levels):
            raise ValueError(f"counts must be in [0, {self.levels}), got {counts}")
        return (counts + 0.5) * self.vref_v / self.levels

    def quantize_trace(self, volts: np.ndarray) -> np.ndarray:
        """Digitize then reconstruct a whole trace (what the firmware sees)."""
        codes = np.clip(np.floor(np.asarray(volts) / self.vref_v * self.levels), 0, self.levels - 1)
        return (codes + 0.5) * self.vref_v / self.levels

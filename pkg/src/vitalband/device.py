"""The wearable's firmware as a deterministic state machine over a virtual clock.

Every cycle the device samples a PPG window through the ADC, converts the
body temperature, computes one vitals reading, and uplinks it. When the link
is down the reading is buffered and replayed oldest-first, with its original
timestamp, once a connection is re-established.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import requests

from .sensors import Ds18b20Model, PulseAdcModel, TEMP_MAX_C, TEMP_MIN_C
from .signal import (
    CalibrationRecord,
    FilterSpec,
    NoPulseError,
    PpgWaveform,
    apply_scale,
    estimate_bpm,
    run_pipeline,
    synthesize_ppg,
)

DEFAULT_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)
DEFAULT_CYCLE_INTERVAL_S = 1800.0
DEFAULT_PPG_WINDOW_S = 15.0
DEFAULT_BUFFER_CAPACITY = 64


def format_timestamp(dt: datetime) -> str:
    """ISO-8601 in UTC with a Z suffix."""
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_timestamp(text: str) -> datetime:
    """Parse ISO-8601, accepting a trailing Z; naive times are taken as UTC."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


class VirtualClock:
    """Injected, manually advanced time source; monotone by construction."""

    def __init__(self, start: datetime = DEFAULT_EPOCH):
        self._start = start
        self._elapsed = 0.0

    def seconds(self) -> float:
        return self._elapsed

    def now(self) -> datetime:
        return self._start + timedelta(seconds=self._elapsed)

    def advance(self, dt_s: float) -> None:
        if dt_s < 0:
            raise ValueError("cannot advance the clock backwards")
        self._elapsed += dt_s

    def advance_to(self, t_s: float) -> None:
        if t_s < self._elapsed:
            raise ValueError("cannot advance the clock backwards")
        self._elapsed = t_s


class DeviceMode(enum.Enum):
    IDLE = "idle"
    SAMPLING = "sampling"
    PROCESSING = "processing"
    UPLOADING = "uploading"
    BUFFERING = "buffering"


class UplinkStatus(enum.Enum):
    ACKED = "acked"
    REJECTED = "rejected"
    UNREACHABLE = "unreachable"


@dataclass(frozen=True)
class UplinkResult:
    status: UplinkStatus
    entry_id: int | None = None


@dataclass(frozen=True)
class VitalsReading:
    """One timestamped temperature/pulse pair; pulse_bpm None marks no-pulse."""

    taken_at: datetime
    temperature_c: float
    pulse_bpm: float | None

    def __post_init__(self):
        if not (TEMP_MIN_C <= self.temperature_c <= TEMP_MAX_C):
            raise ValueError(f"temperature_c out of range: {self.temperature_c}")
        if self.pulse_bpm is not None and self.pulse_bpm < 0:
            raise ValueError("pulse_bpm must be non-negative or None")


@dataclass
class DeviceConfig:
    cycle_interval_s: float = DEFAULT_CYCLE_INTERVAL_S
    ppg_window_s: float = DEFAULT_PPG_WINDOW_S
    sample_rate_hz: float = 50.0
    buffer_capacity: int = DEFAULT_BUFFER_CAPACITY
    scaling: CalibrationRecord = field(default_factory=CalibrationRecord.identity)
    channel_write_key: str = ""
    server_url: str = "http://127.0.0.1:8080"

    def __post_init__(self):
        if not (self.cycle_interval_s > 0 and self.ppg_window_s > 0):
            raise ValueError("cycle_interval_s and ppg_window_s must be positive")
        if not (self.ppg_window_s < self.cycle_interval_s):
            raise ValueError("ppg_window_s must be shorter than cycle_interval_s")
        if not (self.sample_rate_hz > 0):
            raise ValueError("sample_rate_hz must be positive")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")

    @classmethod
    def from_json(cls, path) -> "DeviceConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError("device config must be a JSON object")
        known = {
            "cycle_interval_s",
            "ppg_window_s",
            "sample_rate_hz",
            "buffer_capacity",
            "scaling",
            "channel_write_key",
            "server_url",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown device config keys: {sorted(unknown)}")
        if "scaling" in raw:
            raw = dict(raw)
            raw["scaling"] = CalibrationRecord(**raw["scaling"])
        return cls(**raw)


@dataclass
class DeviceState:
    """Firmware state: current mode, the store-and-forward buffer, counters."""

    mode: DeviceMode = DeviceMode.IDLE
    buffer: deque[VitalsReading] = field(default_factory=deque)
    dropped_count: int = 0
    produced_count: int = 0
    acked_count: int = 0
    rejected_count: int = 0
    last_cycle_modes: list[DeviceMode] = field(default_factory=list)


def enqueue(state: DeviceState, reading: VitalsReading, capacity: int) -> DeviceState:
    """Append a reading; a full buffer drops its oldest entry and counts it."""
    if len(state.buffer) >= capacity:
        state.buffer.popleft()
        state.dropped_count += 1
    state.buffer.append(reading)
    return state


def drain_buffer(state: DeviceState, transport) -> DeviceState:
    """Replay buffered readings oldest-first; stop at the first non-ack.

    A reading leaves the buffer only once the server acknowledged it, so a
    mid-drain failure loses nothing and preserves order.
    """
    while state.buffer:
        result = transport.send(state.buffer[0])
        if result.status is not UplinkStatus.ACKED:
            break
        state.buffer.popleft()
        state.acked_count += 1
    return state


@dataclass
class BodyModel:
    """Simulated patient: a steady temperature and a periodic pulse wave."""

    pulse_bpm: float = 77.0
    temperature_c: float = 36.6
    dc_offset_v: float = 1.65
    noise_rms_v: float = 0.01
    drift_v_per_s: float = 0.0
    seed: int = 0
    _captures: int = field(default=0, init=False, repr=False)

    def capture_ppg(self, duration_s: float, sample_rate_hz: float) -> PpgWaveform:
        # Distinct deterministic noise per capture, reproducible per seed.
        capture_seed = (self.seed * 1_000_003 + self._captures) & 0x7FFFFFFF
        self._captures += 1
        return synthesize_ppg(
            self.pulse_bpm,
            duration_s,
            sample_rate_hz,
            dc_offset_v=self.dc_offset_v,
            noise_rms_v=self.noise_rms_v,
            drift_v_per_s=self.drift_v_per_s,
            seed=capture_seed,
        )


class HttpTransport:
    """Channel-update client; scheduled outages make it report unreachable.

    Outages are [start_s, end_s) intervals of virtual time: inside one, no
    request is attempted at all (the radio is down).
    """

    def __init__(
        self,
        server_url: str,
        write_key: str,
        clock: VirtualClock,
        outages: list[tuple[float, float]] | None = None,
        timeout_s: float = 10.0,
    ):
        self._url = server_url.rstrip("/") + "/update"
        self._write_key = write_key
        self._clock = clock
        self._outages = [(float(a), float(b)) for a, b in (outages or [])]
        self._timeout = timeout_s
        self._session = requests.Session()

    def link_up(self) -> bool:
        t = self._clock.seconds()
        return not any(start <= t < end for start, end in self._outages)

    def send(self, reading: VitalsReading) -> UplinkResult:
        if not self.link_up():
            return UplinkResult(UplinkStatus.UNREACHABLE)
        data = {
            "api_key": self._write_key,
            "field1": repr(float(reading.temperature_c)),
            "created_at": format_timestamp(reading.taken_at),
        }
        if reading.pulse_bpm is not None:
            data["field2"] = repr(float(reading.pulse_bpm))
        try:
            resp = self._session.post(self._url, data=data, timeout=self._timeout)
        except requests.RequestException:
            return UplinkResult(UplinkStatus.UNREACHABLE)
        if resp.status_code == 200:
            try:
                entry_id = int(resp.text.strip())
            except ValueError:
                return UplinkResult(UplinkStatus.REJECTED)
            if entry_id > 0:
                return UplinkResult(UplinkStatus.ACKED, entry_id)
            return UplinkResult(UplinkStatus.REJECTED)
        if resp.status_code == 429:
            # Rate limiting clears on its own; treat like a down link and retry.
            return UplinkResult(UplinkStatus.UNREACHABLE)
        return UplinkResult(UplinkStatus.REJECTED)


class Device:
    """One simulated wearable: config, sensors, state machine, uplink."""

    def __init__(
        self,
        config: DeviceConfig,
        body: BodyModel,
        transport,
        clock: VirtualClock | None = None,
        thermometer: Ds18b20Model | None = None,
        adc: PulseAdcModel | None = None,
        filter_spec: FilterSpec | None = None,
        refractory_ms: float = 250.0,
    ):
        self.config = config
        self.body = body
        self.transport = transport
        self.clock = clock or VirtualClock()
        self.thermometer = thermometer or Ds18b20Model()
        self.adc = adc or PulseAdcModel()
        self.filter_spec = filter_spec or FilterSpec()
        self.refractory_ms = refractory_ms
        self.state = DeviceState()

    def run_cycle(self) -> VitalsReading:
        """One acquire/process/upload cycle; ends on the next cycle boundary."""
        cfg = self.config
        state = self.state
        cycle_start = self.clock.seconds()
        modes = [DeviceMode.SAMPLING]
        state.mode = DeviceMode.SAMPLING

        raw = self.body.capture_ppg(cfg.ppg_window_s, cfg.sample_rate_hz)
        seen = self.adc.quantize_trace(raw.samples)
        self.clock.advance(cfg.ppg_window_s)
        taken_at = self.clock.now()
        wave = PpgWaveform(seen, cfg.sample_rate_hz, taken_at)

        state.mode = DeviceMode.PROCESSING
        modes.append(DeviceMode.PROCESSING)
        temperature = self.thermometer.convert_t(self.body.temperature_c)
        self.clock.advance(self.thermometer.conversion_time_s)
        try:
            peaks = run_pipeline(wave, self.filter_spec, self.refractory_ms)
            bpm = apply_scale(estimate_bpm(peaks), cfg.scaling)
        except NoPulseError:
            bpm = None
        reading = VitalsReading(taken_at, temperature.celsius, bpm)
        state.produced_count += 1

        if self.transport.link_up():
            state.mode = DeviceMode.UPLOADING
            modes.append(DeviceMode.UPLOADING)
            drain_buffer(state, self.transport)
            if state.buffer:
                # Partial drain: keep the feed ordered by buffering this one too.
                enqueue(state, reading, cfg.buffer_capacity)
            else:
                result = self.transport.send(reading)
                if result.status is UplinkStatus.ACKED:
                    state.acked_count += 1
                elif result.status is UplinkStatus.UNREACHABLE:
                    enqueue(state, reading, cfg.buffer_capacity)
                else:
                    state.rejected_count += 1
        else:
            state.mode = DeviceMode.BUFFERING
            modes.append(DeviceMode.BUFFERING)
            enqueue(state, reading, cfg.buffer_capacity)

        state.mode = DeviceMode.IDLE
        modes.append(DeviceMode.IDLE)
        state.last_cycle_modes = modes
        self.clock.advance_to(cycle_start + cfg.cycle_interval_s)
        return reading

    def run(self, duration_s: float) -> list[VitalsReading]:
        """Run whole cycles until duration_s of virtual time is covered."""
        cycles = int(duration_s // self.config.cycle_interval_s + 1e-9)
        return [self.run_cycle() for _ in range(cycles)]

    def summary(self) -> dict:
        s = self.state
        return {
            "produced": s.produced_count,
            "acked": s.acked_count,
            "buffered": len(s.buffer),
            "dropped": s.dropped_count,
            "rejected": s.rejected_count,
        }


def load_outage_schedule(path) -> list[tuple[float, float]]:
    """Outage intervals from a JSON list of [start_s, end_s] pairs."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ValueError("outage schedule must be a JSON list of [start_s, end_s] pairs")
    schedule = []
    for item in raw:
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise ValueError(f"bad outage interval: {item!r}")
        start, end = float(item[0]), float(item[1])
        if not (start < end):
            raise ValueError(f"outage interval must have start < end: {item!r}")
        schedule.append((start, end))
    return schedule

"""Operator entry point.

Subcommands: serve (run the telemetry server), simulate (run a device against
a live server over virtual time), pipeline (offline analysis of a captured
waveform), calibrate (scaling factor from paired readings), export (feed to
CSV). Stdout carries machine-parseable JSON or CSV only; diagnostics go to
stderr. Exit codes: 0 success, 2 input error, 3 authorization/remote error.
"""

from __future__ import annotations

import argparse
import json
import sys

import requests

from . import cloud
from .device import (
    BodyModel,
    Device,
    DeviceConfig,
    HttpTransport,
    VirtualClock,
    load_outage_schedule,
    parse_timestamp,
)
from .signal import (
    CalibrationRecord,
    FilterSpec,
    NoPulseError,
    apply_scale,
    calibrate_scale,
    detect_peaks,
    estimate_bpm,
    read_waveform_csv,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_REMOTE = 3


def _fail_input(message: str) -> int:
    print(message, file=sys.stderr)
    return EXIT_INPUT


def _fail_remote(message: str) -> int:
    print(message, file=sys.stderr)
    return EXIT_REMOTE


def cmd_serve(args) -> int:
    service = cloud.TelemetryService(
        data_dir=args.data_dir,
        min_update_interval_s=args.min_update_interval_s,
        session_ttl_s=args.session_ttl_s,
        seed=args.seed,
        fsync=args.fsync,
    )
    if args.create_channel:
        fields = [f.strip() for f in args.fields.split(",") if f.strip()]
        try:
            channel = service.create_channel(args.create_channel, fields)
        except ValueError as exc:
            return _fail_input(f"cannot create channel: {exc}")
        print(
            json.dumps(
                {
                    "channel_id": channel.id,
                    "write_key": channel.write_key,
                    "read_key": channel.read_key,
                }
            )
        )
        sys.stdout.flush()
    if args.create_user:
        try:
            username, password = args.create_user.split(":", 1)
            service.create_user(username, password, [c.id for c in service._channels.values()])
        except ValueError as exc:
            return _fail_input(f"cannot create user: {exc}")
    server = cloud.TelemetryHTTPServer((args.host, args.port), service)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        config = DeviceConfig.from_json(args.config)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        return _fail_input(f"invalid device config: {exc}")
    if args.server_url:
        config.server_url = args.server_url
    outages: list[tuple[float, float]] = []
    if args.outage_schedule:
        try:
            outages = load_outage_schedule(args.outage_schedule)
        except (OSError, ValueError) as exc:
            return _fail_input(f"invalid outage schedule: {exc}")
    try:
        start = parse_timestamp(args.start_time)
    except ValueError as exc:
        return _fail_input(f"invalid start time: {exc}")
    clock = VirtualClock(start)
    body = BodyModel(pulse_bpm=args.body_bpm, temperature_c=args.body_temp_c, seed=args.seed)
    transport = HttpTransport(
        config.server_url, config.channel_write_key, clock, outages=outages
    )
    from .sensors import Ds18b20Model

    device = Device(
        config,
        body,
        transport,
        clock=clock,
        thermometer=Ds18b20Model(noise_seed=args.seed),
    )
    device.run(args.duration_s)
    print(json.dumps(device.summary()))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    try:
        waveform = read_waveform_csv(args.input)
    except OSError as exc:
        return _fail_input(f"cannot read capture: {exc}")
    except ValueError as exc:
        return _fail_input(str(exc))
    try:
        spec = FilterSpec(args.hp_cutoff_hz, args.lp_cutoff_hz, args.stages)
        spec.validate_for(waveform.sample_rate_hz)
    except ValueError as exc:
        return _fail_input(f"invalid filter: {exc}")
    from .signal import apply_bandpass

    peaks = detect_peaks(
        apply_bandpass(waveform, spec), args.refractory_ms, min_time_s=args.warmup_s
    )
    report: dict = {"peaks": len(peaks)}
    try:
        bpm = estimate_bpm(peaks)
    except NoPulseError:
        report["bpm"] = None
    else:
        report["bpm"] = bpm
        if args.scale is not None:
            record = CalibrationRecord(args.scale, 1.0, args.scale)
            report["scaled_bpm"] = apply_scale(bpm, record)
    print(json.dumps(report))
    return EXIT_OK


def _read_readings(path) -> list[float]:
    with open(path, "r", encoding="utf-8") as f:
        values = []
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric reading") from None
    return values


def cmd_calibrate(args) -> int:
    try:
        device = _read_readings(args.device_csv)
        reference = _read_readings(args.reference_csv)
        record = calibrate_scale(device, reference)
    except (OSError, ValueError) as exc:
        return _fail_input(str(exc))
    print(
        json.dumps(
            {
                "device_mean": record.device_mean,
                "reference_mean": record.reference_mean,
                "scaling_factor": record.scaling_factor,
            }
        )
    )
    return EXIT_OK


def cmd_export(args) -> int:
    url = args.server_url.rstrip("/") + f"/channels/{args.channel_id}/feeds.json"
    try:
        resp = requests.get(
            url, params={"results": args.results, "api_key": args.read_key}, timeout=10
        )
    except requests.RequestException as exc:
        return _fail_remote(f"server unreachable: {exc}")
    if resp.status_code != 200:
        return _fail_remote(f"server returned {resp.status_code}: {resp.text.strip()}")
    payload = resp.json()
    out = sys.stdout
    out.write("created_at,temperature_c,pulse_bpm\n")
    for row in payload["feeds"]:
        field1 = row.get("field1") or ""
        field2 = row.get("field2") or ""
        out.write(f"{row['created_at']},{field1},{field2}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitalband")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the telemetry server")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--data-dir", default=None)
    serve.add_argument("--min-update-interval-s", type=float, default=15.0)
    serve.add_argument("--session-ttl-s", type=float, default=3600.0)
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--fsync", action="store_true")
    serve.add_argument("--create-channel", metavar="NAME", default=None)
    serve.add_argument("--fields", default="temperature_c,pulse_bpm")
    serve.add_argument("--create-user", metavar="USER:PASS", default=None)
    serve.set_defaults(func=cmd_serve)

    simulate = sub.add_parser("simulate", help="run a simulated device against a server")
    simulate.add_argument("--config", required=True)
    simulate.add_argument("--duration-s", type=float, required=True)
    simulate.add_argument("--outage-schedule", default=None)
    simulate.add_argument("--server-url", default=None)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--body-bpm", type=float, default=77.0)
    simulate.add_argument("--body-temp-c", type=float, default=36.6)
    simulate.add_argument("--start-time", default="2020-01-01T00:00:00Z")
    simulate.set_defaults(func=cmd_simulate)

    pipeline = sub.add_parser("pipeline", help="analyze a captured waveform CSV")
    pipeline.add_argument("--input", required=True)
    pipeline.add_argument("--hp-cutoff-hz", type=float, default=0.8)
    pipeline.add_argument("--lp-cutoff-hz", type=float, default=3.5)
    pipeline.add_argument("--stages", type=int, default=2)
    pipeline.add_argument("--refractory-ms", type=float, default=250.0)
    pipeline.add_argument("--warmup-s", type=float, default=2.0)
    pipeline.add_argument("--scale", type=float, default=None)
    pipeline.set_defaults(func=cmd_pipeline)

    calibrate = sub.add_parser("calibrate", help="scaling factor from paired readings")
    calibrate.add_argument("device_csv")
    calibrate.add_argument("reference_csv")
    calibrate.set_defaults(func=cmd_calibrate)

    export = sub.add_parser("export", help="dump a channel feed as CSV")
    export.add_argument("--channel-id", type=int, required=True)
    export.add_argument("--results", type=int, default=100)
    export.add_argument("--read-key", default=None)
    export.add_argument("--server-url", required=True)
    export.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

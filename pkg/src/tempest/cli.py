"""``tempest`` command line.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .defense import Reference
from .ntp_codec import CodecError, Mode, NtpTimestamp, SntpPacket, decode
from .sim import InvalidScenario, ScenarioParseError, bundled_path, load_scenario, run, validate
from .sim.scenario import read_scenario_json

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("tempest")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve_scenario(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    if not path.suffix and os.sep not in arg:
        try:
            return bundled_path(arg)
        except FileNotFoundError:
            pass
    raise FileNotFoundError(f"scenario not found: {arg}")


def cmd_sim_run(args) -> int:
    try:
        scenario = load_scenario(_resolve_scenario(args.scenario))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioParseError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InvalidScenario as exc:
        for problem in exc.violations:
            print(f"invalid: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = run(scenario, seed=args.seed)
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        log.exception("simulation failed")
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = report.to_csv() if args.format == "csv" else report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
        crashed = ", ".join(report.crashed_nodes()) or "none"
        print(f"{scenario.name}: seed={report.seed} events={report.event_count} crashed={crashed} -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sim_validate(args) -> int:
    try:
        data = read_scenario_json(_resolve_scenario(args.scenario))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioParseError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    problems = validate(data)
    for problem in problems:
        print(f"invalid: {problem}", file=sys.stderr)
    if problems:
        return EXIT_VALIDATION
    print("ok")
    return EXIT_OK


def cmd_proxy(args) -> int:
    from .proxy import ProxyRuntimeConfig, parse_endpoint, serve

    try:
        config = ProxyRuntimeConfig(
            listen=parse_endpoint(args.listen, 2100),
            upstream=parse_endpoint(args.upstream, 123),
            threshold_s=args.threshold_s,
            log_path=args.log,
            stats_interval_s=args.stats_interval_s,
            reference=Reference(args.reference),
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        serve(config)
    except OSError as exc:
        print(f"error: cannot start proxy: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _read_frame(arg: str) -> bytes:
    path = Path(arg)
    if path.is_file():
        raw = path.read_bytes()
        try:
            return bytes.fromhex(raw.decode("ascii"))
        except (UnicodeDecodeError, ValueError):
            return raw
    return bytes.fromhex("".join(arg.split()))


def _ts_line(name: str, ts: NtpTimestamp) -> str:
    civil = ts.to_datetime().isoformat().replace("+00:00", "Z") if ts.raw else "unset"
    return f"{name:<14} 0x{ts.raw:016x}  {ts.seconds}.{ts.fraction:010d}/2^32  ({float(ts):.9f} s)  {civil}"


def describe(packet: SntpPacket) -> str:
    mode = packet.mode.name.lower() if isinstance(packet.mode, Mode) else str(packet.mode)
    lines = [
        f"LI={int(packet.leap_indicator)} VN={packet.version} Mode={mode}",
        f"stratum        {packet.stratum}",
        f"poll           {packet.poll_exponent} (2^{packet.poll_exponent} s)",
        f"precision      {packet.precision_exponent} (2^{packet.precision_exponent} s)",
        f"root_delay     0x{packet.root_delay:08x} ({float(packet.root_delay_s):.6f} s)",
        f"root_disp      0x{packet.root_dispersion:08x} ({float(packet.root_dispersion_s):.6f} s)",
        f"reference_id   {packet.reference_id.hex()} ({packet.reference_id.decode('latin-1')!r})",
        _ts_line("reference_ts", packet.reference_ts),
        _ts_line("originate_ts", packet.originate_ts),
        _ts_line("receive_ts", packet.receive_ts),
        _ts_line("transmit_ts", packet.transmit_ts),
    ]
    if packet.has_authenticator:
        lines.append(f"authenticator  {packet.authenticator.hex()} (not verified)")
    return "\n".join(lines)


def cmd_codec_inspect(args) -> int:
    try:
        frame = _read_frame(args.frame)
    except ValueError as exc:
        print(f"error: not hex: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        packet = decode(frame)
    except CodecError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(describe(packet))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempest", description="Time-sync attack simulator and NTP threshold filter.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("sim", help="run or validate scenarios")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True, parser_class=_Parser)
    p = sim_sub.add_parser("run", help="run a scenario file (or bundled scenario name)")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_sim_run)
    p = sim_sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_sim_validate)

    p = sub.add_parser("proxy", help="run the live NTP filtering proxy")
    p.add_argument("--listen", default="0.0.0.0:2100")
    p.add_argument("--upstream", required=True, help="host[:port] of the real NTP server")
    p.add_argument("--threshold-s", type=float, default=240.0)
    p.add_argument("--log", help="append decision lines to this file")
    p.add_argument("--stats-interval-s", type=float, default=60.0)
    p.add_argument("--reference", choices=[r.value for r in Reference], default=Reference.REQUESTER.value)
    p.set_defaults(func=cmd_proxy)

    codec = sub.add_parser("codec", help="packet tools")
    codec_sub = codec.add_subparsers(dest="codec_command", required=True, parser_class=_Parser)
    p = codec_sub.add_parser("inspect", help="dump the fields of an SNTP frame")
    p.add_argument("frame", help="hex string or path to a file with the frame")
    p.set_defaults(func=cmd_codec_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("TEMPEST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

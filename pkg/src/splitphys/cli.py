"""Command line entry point: ``splitphys server|relay|scenario|summary``."""

from __future__ import annotations

import argparse
import logging
import sys

from .protocol import codec
from .protocol.delta import DEFAULT_POS_EPS, DEFAULT_ROT_EPS


def _add_sync_flags(p: argparse.ArgumentParser):
    p.add_argument("--pos-eps", type=float, default=DEFAULT_POS_EPS, help="position threshold, m")
    p.add_argument("--rot-eps", type=float, default=DEFAULT_ROT_EPS, help="rotation threshold, rad")
    p.add_argument("--max-payload", type=int, default=codec.DEFAULT_MAX_PAYLOAD, help="grouped message cap, bytes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitphys", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("server", help="run a physics server on UDP")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=7777)
    p.add_argument("--dt", type=float, default=0.02, help="physics step, s")
    p.add_argument("--default-rate", type=float, default=12.0, help="Hz")
    p.add_argument("--critical-rate", type=float, default=48.0, help="Hz")
    _add_sync_flags(p)
    p.add_argument("--metrics", help="per-tick metrics CSV path")
    p.add_argument("--duration", type=float, help="stop after this many seconds")

    p = sub.add_parser("relay", help="run a transform relay on UDP")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=7778)
    p.add_argument("--rate", type=float, default=12.0, help="send rate, Hz")
    _add_sync_flags(p)
    p.add_argument("--metrics", help="per-second bandwidth CSV path")
    p.add_argument("--duration", type=float)

    p = sub.add_parser("scenario", help="run one benchmark scenario in virtual time")
    p.add_argument("name", choices=("multiobject", "softbody", "ccu", "relay", "latency"))
    p.add_argument("-n", type=int, help="objects, particles, users or relay objects")
    p.add_argument("--latency-ms", type=float, default=10.0)
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--loss", type=float, default=0.0)
    p.add_argument("--duration", type=float, help="simulated seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=float, default=1.0)
    p.add_argument("--join-rate", type=float, help="ccu: joins per second")
    p.add_argument("--motion", choices=("bounce", "fall"), help="multiobject: object motion")
    p.add_argument("--subscribers", type=int, help="relay: subscriber count")
    p.add_argument("--rate", type=float, help="relay: send rate, Hz")
    p.add_argument("--preset", default="desk", help="latency: reference, desk or fast")
    p.add_argument("--csv", help="write the report as CSV")

    p = sub.add_parser("summary", help="run the scenario set and print measured vs published figures")
    p.add_argument("--full", action="store_true", help="include the largest sizes and the 100-user session")
    p.add_argument("--csv", help="write the summary table as CSV")
    return ap


_DEFAULT_N = {"multiobject": 1000, "softbody": 500, "ccu": 100, "relay": 512}
_DEFAULT_DURATION = {"multiobject": 10.0, "softbody": 10.0, "ccu": 60.0, "relay": 10.0}


def run_scenario(args):
    from .bench import PRESETS, ScenarioConfig, latency_breakdown, run_ccu, run_multiobject, run_relay, run_softbody

    if args.name == "latency":
        if args.preset not in PRESETS:
            raise SystemExit(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
        return latency_breakdown(PRESETS[args.preset])
    opts = {}
    if args.join_rate is not None:
        opts["join_rate"] = args.join_rate
    if args.motion is not None:
        opts["motion"] = args.motion
    if args.subscribers is not None:
        opts["subscribers"] = args.subscribers
    if args.rate is not None:
        opts["rate"] = args.rate
    cfg = ScenarioConfig(args.name, args.n if args.n is not None else _DEFAULT_N[args.name],
                         args.latency_ms, args.jitter_ms, args.loss,
                         args.duration or _DEFAULT_DURATION[args.name], args.seed, args.warmup, opts)
    if not cfg.at_published_size():
        logging.getLogger(__name__).info("size %d is outside the published sizes", cfg.n)
    runner = {"multiobject": run_multiobject, "softbody": run_softbody, "ccu": run_ccu, "relay": run_relay}
    return runner[args.name](cfg)


def run_summary(full: bool = False) -> list:
    from .bench import PRESETS, ScenarioConfig, latency_breakdown, run_ccu, run_multiobject, run_relay, run_softbody
    from .bench import reference

    reports = []
    sizes = reference.MULTIOBJECT_SIZES if full else (500, 1000, 2000)
    for n in sizes:
        reports.append(run_multiobject(ScenarioConfig("multiobject", n, duration=5.0)))
    for n in reference.SOFTBODY_PARTICLES:
        reports.append(run_softbody(ScenarioConfig("softbody", n, duration=6.0)))
    for n in reference.RELAY_OBJECTS:
        reports.append(run_relay(ScenarioConfig("relay", n, duration=10.0)))
    users = 100 if full else 20
    reports.append(run_ccu(ScenarioConfig("ccu", users, duration=60.0 if full else 20.0,
                                          options={"join_rate": 2.5})))
    reports.append(latency_breakdown(PRESETS["reference"]))
    return reports


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "server":
        from .server import PhysServer, ServerConfig
        from .transport import UdpEndpoint

        cfg = ServerConfig(dt=args.dt, default_rate=args.default_rate, critical_rate=args.critical_rate,
                           pos_eps=args.pos_eps, rot_eps=args.rot_eps, max_payload=args.max_payload)
        ep = UdpEndpoint(args.host, args.port)
        print(f"physics server on {ep.address[0]}:{ep.address[1]}", flush=True)
        try:
            PhysServer(ep, config=cfg).serve(args.duration, args.metrics)
        finally:
            ep.close()
    elif args.command == "relay":
        from .relay import RelayConfig, RelayServer
        from .transport import UdpEndpoint

        cfg = RelayConfig(rate=args.rate, pos_eps=args.pos_eps, rot_eps=args.rot_eps, max_payload=args.max_payload)
        ep = UdpEndpoint(args.host, args.port)
        print(f"relay on {ep.address[0]}:{ep.address[1]}", flush=True)
        try:
            RelayServer(ep, cfg).serve(args.duration, args.metrics)
        finally:
            ep.close()
    elif args.command == "scenario":
        from .bench import format_summary, summary_rows, write_report_csv

        report = run_scenario(args)
        print(format_summary(summary_rows([report])))
        if args.csv:
            write_report_csv(report, args.csv)
    elif args.command == "summary":
        from .bench import format_summary, summary_rows, write_summary_csv

        rows = summary_rows(run_summary(args.full))
        print(format_summary(rows))
        if args.csv:
            write_summary_csv(rows, args.csv)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Operator entry points: serve a hub or meta-hub, run demo scenarios.

Exit codes: 0 ok, 1 config error, 2 runtime/bind error, 3 scenario failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, IoTHubError

SCENARIOS = ("shake_eval", "smart_city")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iothub", description="IoT hub, meta-hub and demo runner")
    sub = parser.add_subparsers(dest="command", required=True)

    hub = sub.add_parser("hub", help="hub service")
    hub_sub = hub.add_subparsers(dest="action", required=True)
    hub_serve = hub_sub.add_parser("serve", help="run the hub HTTP service")
    hub_serve.add_argument("--config", required=True, help="path to a hub config JSON file")

    metahub = sub.add_parser("metahub", help="meta-hub service")
    metahub_sub = metahub.add_subparsers(dest="action", required=True)
    metahub_serve = metahub_sub.add_parser("serve", help="run the meta-hub HTTP service")
    metahub_serve.add_argument("--config", required=True, help="path to a meta-hub config JSON file")

    demo = sub.add_parser("demo", help="run a headless demo scenario")
    demo.add_argument("scenario", help="shake_eval or smart_city")
    demo.add_argument("--out", required=True, help="output directory for report files")
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--rest-only", action="store_true", help="shake_eval: replace the trace with a rest-only stage")
    return parser


def cmd_hub_serve(config_path: str) -> int:
    from .httpd import make_server
    from .hub import HubApi, HubConfig, HubCore

    try:
        config = HubConfig.from_file(config_path)
    except ConfigError as err:
        print(f"config error: {err.message}", file=sys.stderr)
        return 1

    core = HubCore(config)
    try:
        server = make_server(HubApi(core), config.listen_port)
    except OSError as err:
        print(f"cannot bind port {config.listen_port}: {err}", file=sys.stderr)
        core.close()
        return 2

    try:
        core.register_with_metahubs()
    except IoTHubError as err:
        print(f"warning: meta-hub registration failed: {err.message}", file=sys.stderr)

    print(f"hub {config.hub_id} listening on :{config.listen_port}")
    print(f"owner token: {core.owner_token}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        core.close()
    return 0


def cmd_metahub_serve(config_path: str) -> int:
    from .httpd import make_server
    from .metahub import MetahubApi, MetahubConfig, MetahubCore
    from .model import TypeRegistry

    try:
        config = MetahubConfig.from_file(config_path)
    except ConfigError as err:
        print(f"config error: {err.message}", file=sys.stderr)
        return 1

    core = MetahubCore(registry=TypeRegistry(extra_classes=config.extra_classes))
    try:
        server = make_server(MetahubApi(core), config.listen_port)
    except OSError as err:
        print(f"cannot bind port {config.listen_port}: {err}", file=sys.stderr)
        return 2

    print(f"meta-hub {config.metahub_id} listening on :{config.listen_port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_demo(scenario: str, out_dir: str, seed: int, rest_only: bool = False) -> int:
    if scenario not in SCENARIOS:
        print(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}", file=sys.stderr)
        return 1

    from . import demo

    try:
        if scenario == "shake_eval":
            stages = demo.REST_ONLY_STAGES if rest_only else demo.SHAKE_STAGES
            report = demo.run_shake_eval(out_dir, seed, stages=stages)
            print(f"shake_eval seed={seed}: {len(report.toggles)} toggles across {len(report.stages)} stages -> {out_dir}")
        else:
            report = demo.run_smart_city(out_dir, seed)
            print(
                f"smart_city seed={seed}: {len(report.homes)} homes, {len(report.week_ends_ms)} weekly reports, "
                f"catalog size {report.catalog_size} -> {out_dir}"
            )
    except Exception as err:  # noqa: BLE001 - any scenario failure maps to exit 3
        print(f"scenario failed: {err}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "hub":
        return cmd_hub_serve(args.config)
    if args.command == "metahub":
        return cmd_metahub_serve(args.config)
    return cmd_demo(args.scenario, args.out, args.seed, rest_only=args.rest_only)


if __name__ == "__main__":
    sys.exit(main())

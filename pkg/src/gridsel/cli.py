"""``gridsel`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
import time

from . import __version__
from .broker import AccessError, BrokerRequest, select
from .catalog import CatalogError, CatalogStore, ReplicaLocation
from .classad import ClassAdError, is_number, parse_classad
from .history import HistoryStore, LoadGauge, TransferSample, append_log, predict, read_log
from .infosvc import ConfigError, ProtocolError, QueryRequest, QueryTimeout, load_config, query, serve
from .schema import format_number


def _cmd_serve(args) -> int:
    config = load_config(args.config)
    handle = serve(config, port=args.port)
    print(f"serving {config.hostname} on {handle.address}", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.wait(0.5):
            pass
    except KeyboardInterrupt:
        pass
    handle.stop()
    return 0


def _cmd_query(args) -> int:
    attrs = None if args.attributes in (None, "*") else tuple(args.attributes.split(","))
    text = query(args.address, QueryRequest(attrs, args.requester), args.timeout)
    sys.stdout.write(text)
    return 0 if text.endswith("OK\n") else 1


def _cmd_catalog(args) -> int:
    store = CatalogStore(args.catalog)
    if args.action == "add":
        store.register(args.logical, ReplicaLocation(args.hostname, args.address, args.path, args.protocol))
    elif args.action == "rm":
        matches = [loc for loc in store.lookup(args.logical)
                   if loc.hostname == args.hostname and loc.path == args.path]
        for loc in matches:
            store.unregister(args.logical, loc)
    else:
        names = [args.logical] if args.logical else store.logical_names()
        for name in names:
            for loc in store.lookup(name):
                print(f"{name}\t{loc.hostname}\t{loc.address}\t{loc.path}\t{loc.protocol}")
    return 0


def _cmd_history(args) -> int:
    if args.action == "record":
        ts = time.time() if args.timestamp is None else args.timestamp
        append_log(args.log, TransferSample(args.direction, args.peer, args.bytes, args.duration, ts))
        return 0
    store = HistoryStore(read_log(args.log))
    print("direction\tcount\tmin\tmean\tmax\tstddev\tpredicted")
    for direction in ("read", "write"):
        s = store.summarize(direction)
        guess = predict(store, args.peer, direction, LoadGauge(args.load))
        cells = [s.min, s.mean, s.max, s.stddev, guess]
        print("\t".join([direction, str(s.count)] + [format_number(c) if is_number(c) else "-" for c in cells]))
    if args.figure:
        from .plotting import plot_history

        plot_history(store, args.figure)
    return 0


def _cmd_select(args) -> int:
    with open(args.ad, encoding="utf-8") as fh:
        ad = parse_classad(fh.read())
    request = BrokerRequest(args.logical, ad, timeout=args.timeout)
    catalog = CatalogStore(args.catalog)
    status = 0
    try:
        selection = select(request, catalog, failover=not args.no_failover, access=not args.no_access)
    except AccessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    result = selection.result
    if args.json:
        json.dump(selection.to_dict(), sys.stdout, indent=2, default=str)
        sys.stdout.write("\n")
    else:
        print("position\thostname\tpath\taddress\tstatus\trank")
        for i, r in enumerate(result.ranked, 1):
            rank = format_number(r.match.rank) if is_number(r.match.rank) else "-"
            print(f"{i}\t{r.location.hostname}\t{r.location.path}\t{r.location.address}\tmatched\t{rank}")
        for e in result.excluded:
            print(f"-\t{e.location.hostname}\t{e.location.path}\t{e.location.address}\t{e.status}\t{e.reason}")
    if result.chosen is None:
        print("no matching replica", file=sys.stderr)
        status = 2
    if args.figure:
        from .plotting import plot_selection

        plot_selection(result, args.figure)
    return status


def _cmd_sim(args) -> int:
    from .sim import example_scenario, load_scenario, random_scenario, run

    if args.scenario:
        scenario = load_scenario(args.scenario)
    elif args.random is not None:
        scenario = random_scenario(args.random, args.nodes, args.requests)
    else:
        scenario = example_scenario()
    report = run(scenario, wire=args.wire, timeout=args.timeout)
    sys.stdout.write(report.to_tsv())
    if args.figure:
        from .plotting import plot_report

        plot_report(report, args.figure)
    return 1 if report.mismatches else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridsel", description="Decentralized replica selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run a storage node information service")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("query", help="send one query to an information service")
    p.add_argument("address", help="host:port")
    p.add_argument("attributes", nargs="?", help="comma-separated names or *")
    p.add_argument("--from", dest="requester")
    p.add_argument("--timeout", type=float, default=2.0)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("catalog", help="edit or list the replica catalog")
    p.add_argument("--catalog", required=True)
    csub = p.add_subparsers(dest="action", required=True)
    c = csub.add_parser("add")
    c.add_argument("logical")
    c.add_argument("hostname")
    c.add_argument("address", help="information service host:port")
    c.add_argument("path")
    c.add_argument("--protocol", default="")
    c = csub.add_parser("rm")
    c.add_argument("logical")
    c.add_argument("hostname")
    c.add_argument("path")
    c = csub.add_parser("ls")
    c.add_argument("logical", nargs="?")
    p.set_defaults(func=_cmd_catalog)

    p = sub.add_parser("history", help="record or summarize transfer history")
    p.add_argument("--log", required=True)
    hsub = p.add_subparsers(dest="action", required=True)
    h = hsub.add_parser("record")
    h.add_argument("direction", choices=("read", "write"))
    h.add_argument("peer")
    h.add_argument("bytes", type=int)
    h.add_argument("duration", type=float)
    h.add_argument("--timestamp", type=float)
    h = hsub.add_parser("show")
    h.add_argument("--peer")
    h.add_argument("--load", type=int, default=0)
    h.add_argument("--figure", help="write a bandwidth plot to this file")
    p.set_defaults(func=_cmd_history)

    p = sub.add_parser("select", help="select (and fetch) the best replica of a logical file")
    p.add_argument("logical")
    p.add_argument("--ad", required=True, help="request ad file")
    p.add_argument("--catalog", required=True)
    p.add_argument("--timeout", type=float, default=2.0)
    p.add_argument("--no-failover", action="store_true")
    p.add_argument("--no-access", action="store_true", help="stop after the match phase")
    p.add_argument("--json", action="store_true")
    p.add_argument("--figure", help="write a ranking plot to this file")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("sim", help="run a scenario and compare the broker with the oracle")
    p.add_argument("--scenario")
    p.add_argument("--random", type=int, metavar="SEED")
    p.add_argument("--nodes", type=int)
    p.add_argument("--requests", type=int)
    p.add_argument("--wire", action="store_true", help="use real TCP services")
    p.add_argument("--timeout", type=float, default=2.0)
    p.add_argument("--figure", help="write a timing plot to this file")
    p.set_defaults(func=_cmd_sim)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ClassAdError, CatalogError, ConfigError, ProtocolError, QueryTimeout, ValueError, OSError) as exc:
        print(f"gridsel: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

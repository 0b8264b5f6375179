"""Scenario harness: simulated storage nodes, selection workloads, oracle check.

A scenario describes storage nodes (capacity, policy, transfer history,
replicas, whether the node is down) and a list of requests.  :func:`run`
stands the nodes up, either in-process or as real TCP services, runs the
broker for every request and compares each choice with :func:`oracle`, a
brute-force reimplementation of matching and ranking that shares no code
with the broker's match phase.

Scenario files are INI-style::

    [scenario]
    seed = 7

    [node hugo.mcs.anl.gov]
    volume = /dev/sandbox
    totalSpace = 100G
    availableSpace = 50G
    requirements = other.reqdSpace < 10G
    samples =
        read comet.xyz.com 76800 1.0
    replicas =
        higgs.dat /dev/sandbox/higgs.dat

    [request comet]
    logical = higgs.dat
    expect = hugo.mcs.anl.gov
    ad =
        hostname = "comet.xyz.com";
        reqdSpace = 5G;
"""

from __future__ import annotations

import configparser
import random
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path

from .broker import BrokerRequest, select
from .catalog import CatalogStore, ReplicaLocation
from .classad import (
    AttrRef,
    ClassAd,
    MatchContext,
    evaluate,
    is_number,
    parse_classad,
    parse_quantity,
)
from .history import READ, WRITE, HistoryStore, LoadGauge, TransferSample
from .infosvc import AttributeProvider, LocalTransport, NodeConfig, NodeState, WireTransport, serve
from .schema import VolumeRecord, record_to_classad, validate

__all__ = [
    "NodeSpec",
    "RequestSpec",
    "Scenario",
    "ReportRow",
    "Report",
    "oracle",
    "run",
    "random_scenario",
    "parse_scenario",
    "load_scenario",
    "example_scenario",
]

INFO_PORT = 2135


@dataclass
class NodeSpec:
    hostname: str
    volume: str = "/data"
    total_space: int | float = 100 * 2**30
    available_space: int | float = 50 * 2**30
    disk_transfer_rate: int | float = 10 * 2**20
    drd_time: float = 0.008
    dwr_time: float = 0.009
    policy: str | None = None
    samples: list[TransferSample] = field(default_factory=list)
    load: int = 0
    down: bool = False
    replicas: list[tuple[str, str]] = field(default_factory=list)

    def config(self) -> NodeConfig:
        values = {
            "totalSpace": self.total_space,
            "availableSpace": self.available_space,
            "diskTransferRate": self.disk_transfer_rate,
            "drdTime": self.drd_time,
            "dwrTime": self.dwr_time,
        }
        if self.policy is not None:
            values["requirements"] = self.policy
        attributes = {(None, k): AttributeProvider.fixed(k, v) for k, v in values.items()}
        return NodeConfig(self.hostname, (self.volume,), attributes=attributes, load=self.load)

    def state(self) -> NodeState:
        return NodeState(self.config(), HistoryStore(self.samples), LoadGauge(self.load))

    def volume_record(self) -> VolumeRecord:
        return VolumeRecord(
            hostname=self.hostname,
            volume=self.volume,
            total_space=self.total_space,
            available_space=self.available_space,
            mount_point=self.volume,
            disk_transfer_rate=self.disk_transfer_rate,
            drd_time=self.drd_time,
            dwr_time=self.dwr_time,
            requirements=self.policy,
        )


@dataclass
class RequestSpec:
    name: str
    logical: str
    ad: ClassAd
    expect: str | None = None  # hostname, "none", or None for no expectation


@dataclass
class Scenario:
    seed: int = 0
    nodes: list[NodeSpec] = field(default_factory=list)
    requests: list[RequestSpec] = field(default_factory=list)

    def check(self) -> None:
        names = [n.hostname for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate node hostnames")
        for node in self.nodes:
            problems = validate(node.volume_record())
            if problems:
                raise ValueError(f"node {node.hostname}: " + "; ".join(map(str, problems)))


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def oracle(request: ClassAd, candidates: list[ClassAd], tiebreak: list | None = None) -> int | None:
    """Index of the candidate the request should select, or ``None``.

    Brute force: evaluate both requirement expressions for every candidate,
    keep those where both are exactly ``true``, order by descending numeric
    rank (anything else counts as 0), then hostname (case-insensitive), then
    volume, then ``tiebreak[i]``.
    """
    def requirement(ad: ClassAd, other: ClassAd):
        for name in ("requirement", "requirements"):
            if name in ad:
                return evaluate(ad[name], MatchContext(ad, other))
        return True

    def text(ad: ClassAd, name: str) -> str:
        value = evaluate(AttrRef(name), MatchContext(ad))
        return value if isinstance(value, str) else ""

    best_key, best = None, None
    for i, ad in enumerate(candidates):
        if requirement(request, ad) is not True or requirement(ad, request) is not True:
            continue
        rank = evaluate(request["rank"], MatchContext(request, ad)) if "rank" in request else 0
        if not is_number(rank):
            rank = 0
        key = (-rank, text(ad, "hostname").lower(), text(ad, "volume"), tiebreak[i] if tiebreak else i)
        if best_key is None or key < best_key:
            best_key, best = key, i
    return best


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class ReportRow:
    request: str
    logical: str
    chosen: str | None
    oracle: str | None
    expected: str | None
    timings: dict
    excluded: int = 0

    @property
    def agrees(self) -> bool:
        return self.chosen == self.oracle

    @property
    def meets_expectation(self) -> bool:
        if self.expected is None:
            return True
        if self.chosen is None:
            return self.expected == "none"
        return self.expected in (self.chosen, self.chosen.split(":", 1)[0])


@dataclass
class Report:
    seed: int
    rows: list[ReportRow]
    wire: bool = False
    elapsed: float = 0.0

    @property
    def mismatches(self) -> list[ReportRow]:
        return [r for r in self.rows if not r.agrees or not r.meets_expectation]

    def to_tsv(self) -> str:
        header = "request\tlogical\tchosen\toracle\texpected\tverdict\tsearch_s\tmatch_s\texcluded"
        lines = [header]
        for r in self.rows:
            verdict = "ok" if r.agrees and r.meets_expectation else "MISMATCH"
            lines.append("\t".join([
                r.request, r.logical, r.chosen or "-", r.oracle or "-", r.expected or "-", verdict,
                f"{r.timings.get('search', 0.0):.6f}", f"{r.timings.get('match', 0.0):.6f}", str(r.excluded),
            ]))
        return "\n".join(lines) + "\n"


def _dead_listener() -> socket.socket:
    """A socket that accepts connections into its backlog but never answers."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.bind(("127.0.0.1", 0))
    sock.listen(64)
    return sock


def _label(loc: ReplicaLocation) -> str:
    return f"{loc.hostname}:{loc.path}"


def run(scenario: Scenario, wire: bool = False, timeout: float = 2.0) -> Report:
    """Run every request of ``scenario`` through the broker and the oracle."""
    scenario.check()
    started = time.perf_counter()
    handles, dead = [], []
    addresses: dict[str, str] = {}
    states: dict[str, NodeState] = {}
    try:
        for node in scenario.nodes:
            if wire:
                if node.down:
                    sock = _dead_listener()
                    dead.append(sock)
                    addresses[node.hostname] = "127.0.0.1:%d" % sock.getsockname()[1]
                    continue
                handle = serve(node.state(), host="127.0.0.1", port=0)
                handles.append(handle)
                addresses[node.hostname] = handle.address
            else:
                addresses[node.hostname] = f"{node.hostname}:{INFO_PORT}"
                if not node.down:
                    states[addresses[node.hostname]] = node.state()
        transport = WireTransport() if wire else LocalTransport(states)

        catalog = CatalogStore()
        for node in scenario.nodes:
            for logical, path in node.replicas:
                catalog.register(logical, ReplicaLocation(node.hostname, addresses[node.hostname], path))

        rows = []
        for req in scenario.requests:
            request = BrokerRequest(req.logical, req.ad, timeout=timeout)
            selection = select(request, catalog, transport=transport, access=False)
            chosen = selection.result.chosen
            rows.append(ReportRow(
                req.name,
                req.logical,
                _label(chosen) if chosen else None,
                _oracle_choice(scenario, req, catalog),
                req.expect,
                dict(selection.result.timings),
                len(selection.result.excluded),
            ))
    finally:
        for handle in handles:
            handle.stop()
        for sock in dead:
            sock.close()
    return Report(scenario.seed, rows, wire, time.perf_counter() - started)


def _oracle_choice(scenario: Scenario, req: RequestSpec, catalog: CatalogStore) -> str | None:
    by_host = {n.hostname: n for n in scenario.nodes}
    requester = evaluate(AttrRef("hostname"), MatchContext(req.ad)) if "hostname" in req.ad else None
    requester = requester if isinstance(requester, str) else None
    ads, locations = [], []
    for loc in catalog.lookup(req.logical):
        node = by_host[loc.hostname]
        if node.down:
            continue
        history = HistoryStore(node.samples)
        ads.append(record_to_classad(
            node.volume_record(), history.bandwidth_record(), history.source_records(), requester
        ))
        locations.append(loc)
    tiebreak = [(loc.hostname.lower(), loc.path, loc.address) for loc in locations]
    index = oracle(req.ad, ads, tiebreak)
    return None if index is None else _label(locations[index])


# ---------------------------------------------------------------------------
# Scenario sources
# ---------------------------------------------------------------------------

_NODE_POLICIES = (
    None,
    "true",
    "other.reqdSpace < {space}G",
    "other.reqdSpace < {space}G && other.reqdRDBandwidth < {bw}K/Sec",
    "other.reqdSpace <= availableSpace",
    "other.reqdSpace * 2 < availableSpace || other.priority > 5",
    'other.owner == "atlas"',
    "MaxRDBandwidth > other.reqdRDBandwidth",
    "!(other.reqdSpace > {space}G) && diskTransferRate >= {bw}K",
)

_REQUIREMENTS = (
    None,
    "true",
    "other.availableSpace > reqdSpace",
    "other.availableSpace > reqdSpace && other.MaxRDBandwidth > reqdRDBandwidth",
    "other.diskTransferRate >= 1M || other.totalSpace > 500G",
    "other.lastRDBandwidth > 10K",
    "other.availableSpace - reqdSpace > other.totalSpace / 10",
)

_RANKS = (
    None,
    "0",
    "other.availableSpace",
    "other.MaxRDBandwidth",
    "other.AvgRDBandwidth / (1 + other.drdTime)",
    "other.availableSpace - reqdSpace",
    "other.totalSpace > 100G",
    "-other.drdTime",
    "other.diskTransferRate",
)

_PEERS = ("comet.xyz.com", "lhc.cern.ch", "tape.fnal.gov", "gridftp://sdsc.edu/scratch")


def _random_request_ad(rng: random.Random, requester: str) -> ClassAd:
    lines = [
        f'hostname = "{requester}";',
        f"reqdSpace = {rng.randint(1, 60)}G;",
        f"reqdRDBandwidth = {rng.randint(1, 120)}K/Sec;",
    ]
    if rng.random() < 0.5:
        lines.append(f"priority = {rng.randint(0, 10)};")
    if rng.random() < 0.3:
        lines.append(f'owner = "{rng.choice(["atlas", "cms"])}";')
    rank = rng.choice(_RANKS)
    if rank is not None:
        lines.append(f"rank = {rank};")
    requirement = rng.choice(_REQUIREMENTS)
    if requirement is not None:
        lines.append(f"requirement = {requirement};")
    return parse_classad("\n".join(lines))


def random_scenario(
    seed: int,
    n_nodes: int | None = None,
    n_requests: int | None = None,
    failure_rate: float = 0.1,
    n_files: int = 2,
) -> Scenario:
    """Deterministic random scenario for ``seed``."""
    rng = random.Random(seed)
    n_nodes = rng.randint(1, 20) if n_nodes is None else n_nodes
    n_requests = rng.randint(1, 3) if n_requests is None else n_requests
    nodes = []
    hosts = [f"node{i:02d}.site{rng.randint(0, 9)}.example.org" for i in range(n_nodes)]
    rng.shuffle(hosts)
    for host in hosts:
        total = rng.randint(1, 1024) * 2**30
        available = rng.randint(0, total // 2**20) * 2**20
        policy = rng.choice(_NODE_POLICIES)
        if policy is not None:
            policy = policy.format(space=rng.randint(1, 60), bw=rng.randint(1, 120))
        samples = [
            TransferSample(
                rng.choice((READ, READ, WRITE)),
                rng.choice(_PEERS),
                rng.randint(1, 200) * 1024,
                rng.choice((0.5, 1.0, 2.0, 4.0)),
                float(k),
            )
            for k in range(rng.randint(0, 5))
        ]
        volume = f"/vol{rng.randint(0, 2)}"
        files = rng.sample(range(n_files), rng.randint(1, n_files))
        nodes.append(NodeSpec(
            hostname=host,
            volume=volume,
            total_space=total,
            available_space=available,
            disk_transfer_rate=rng.choice((512, 1024, 4096, 10240)) * 1024,
            drd_time=rng.choice((0.004, 0.008, 0.012)),
            dwr_time=rng.choice((0.005, 0.009, 0.015)),
            policy=policy,
            samples=samples,
            load=rng.randint(0, 3),
            down=rng.random() < failure_rate,
            replicas=[(f"file{f}.dat", f"{volume}/file{f}.dat") for f in files],
        ))
    requests = [
        RequestSpec(f"r{k}", f"file{rng.randrange(n_files)}.dat",
                    _random_request_ad(rng, rng.choice(_PEERS[:3])))
        for k in range(n_requests)
    ]
    return Scenario(seed, nodes, requests)


_STORAGE_POLICY = "other.reqdSpace < 10G && other.reqdRDBandwidth < 75K/Sec"
_COMET_AD = """\
hostname = "comet.xyz.com";
reqdSpace = 5G;
reqdRDBandwidth = 50K/Sec;
rank = other.availableSpace;
requirement = other.availableSpace > 5G && other.MaxRDBandwidth > 50K/Sec;
"""


def example_scenario() -> Scenario:
    """One node publishing the sample storage ad and the sample application request.

    The node's read history (one 75K transfer in one second) gives it a
    maximum read bandwidth of 75K/Sec.
    """
    hugo = NodeSpec(
        hostname="hugo.mcs.anl.gov",
        volume="/dev/sandbox",
        total_space=100 * 2**30,
        available_space=50 * 2**30,
        policy=_STORAGE_POLICY,
        samples=[TransferSample(READ, "comet.xyz.com", 75 * 1024, 1.0, 0.0)],
        replicas=[("higgs.dat", "/dev/sandbox/higgs.dat")],
    )
    request = RequestSpec("comet", "higgs.dat", parse_classad(_COMET_AD), "hugo.mcs.anl.gov:/dev/sandbox/higgs.dat")
    return Scenario(0, [hugo], [request])


def _truthy(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_scenario(text: str) -> Scenario:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"scenario: {exc}") from None
    scenario = Scenario(seed=parser.getint("scenario", "seed", fallback=0))
    for section in parser.sections():
        kind, _, name = section.partition(" ")
        opts = {k.lower(): v.strip() for k, v in parser.items(section)}
        if kind == "scenario":
            continue
        if kind == "node":
            node = NodeSpec(hostname=name.strip())
            node.volume = opts.pop("volume", node.volume)
            for key, attr in (("totalspace", "total_space"), ("availablespace", "available_space"),
                              ("disktransferrate", "disk_transfer_rate"), ("drdtime", "drd_time"),
                              ("dwrtime", "dwr_time")):
                if key in opts:
                    setattr(node, attr, parse_quantity(opts.pop(key)))
            node.policy = opts.pop("requirements", None) or None
            node.load = int(opts.pop("load", 0))
            node.down = _truthy(opts.pop("down", "false"))
            for k, line in enumerate(opts.pop("samples", "").splitlines()):
                if line.strip():
                    parts = line.split()
                    ts = float(parts[4]) if len(parts) > 4 else float(k)
                    node.samples.append(TransferSample(parts[0], parts[1], int(parse_quantity(parts[2])), float(parts[3]), ts))
            for line in opts.pop("replicas", "").splitlines():
                if line.strip():
                    logical, path = line.split()
                    node.replicas.append((logical, path))
            if opts:
                raise ValueError(f"[{section}]: unknown keys {sorted(opts)}")
            scenario.nodes.append(node)
        elif kind == "request":
            if "logical" not in opts:
                raise ValueError(f"[{section}]: missing logical")
            ad = parse_classad(opts.pop("ad", ""))
            req = RequestSpec(name.strip(), opts.pop("logical"), ad, opts.pop("expect", None))
            if opts:
                raise ValueError(f"[{section}]: unknown keys {sorted(opts)}")
            scenario.requests.append(req)
        else:
            raise ValueError(f"unknown section [{section}]")
    scenario.check()
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))

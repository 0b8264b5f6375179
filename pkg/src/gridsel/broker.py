"""Client-side replica selection broker.

Each client runs its own broker; there is no central matchmaker.  A selection
runs three phases:

search
    Look up the logical file in the replica catalog and query the
    information service of every replica for the attributes the request
    refers to.
match
    Turn each answer into a capability ad, match it against the request ad
    and order the matches by the request's rank.
access
    Transfer the file from the best replica, falling back to the next ranked
    one on failure.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

from .catalog import CatalogStore, ReplicaLocation
from .classad import (
    UNDEFINED,
    AttrRef,
    ClassAd,
    ClassAdError,
    Error,
    MatchResult,
    evaluate,
    match_ads,
    rank_candidates,
    references,
)
from .history import READ, TransferSample
from .infosvc import ProtocolError, QueryRequest, QueryTimeout, WireTransport, parse_response
from .schema import (
    BandwidthRecord,
    LdifError,
    SourceBandwidthRecord,
    VolumeRecord,
    load_ldif,
    record_to_classad,
    validate,
    with_identity,
)

__all__ = [
    "OK",
    "TIMEOUT",
    "PROTOCOL_ERROR",
    "INVALID_RECORD",
    "BrokerRequest",
    "CandidateInfo",
    "RankedCandidate",
    "Exclusion",
    "SelectionResult",
    "TransferOutcome",
    "TransferError",
    "NoMatchError",
    "AccessError",
    "SimulatedTransfer",
    "attribute_projection",
    "search_phase",
    "match_phase",
    "access_phase",
    "select",
]

log = logging.getLogger(__name__)

OK = "ok"
TIMEOUT = "timeout"
PROTOCOL_ERROR = "protocol error"
INVALID_RECORD = "invalid record"
UNMATCHED = "unmatched"

DEFAULT_TIMEOUT = 2.0
DEFAULT_FANOUT = 16


def attribute_projection(ad: ClassAd) -> tuple[str, ...] | None:
    """Names of ``other.*`` attributes the ad's requirement and rank can read.

    References through the ad's own attributes are followed.  Returns
    ``None`` (meaning ``*``) when nothing is referenced.
    """
    wanted: dict[str, str] = {}
    seen: set[str] = set()
    stack = [e for e in (ad.requirement, ad.rank) if e is not None]
    while stack:
        for ref in sorted(references(stack.pop()), key=lambda r: (r.scope or "", r.key)):
            if ref.scope == "other":
                wanted.setdefault(ref.key, ref.name)
            elif ref.key not in seen and ref.key in ad:
                seen.add(ref.key)
                stack.append(ad[ref.key])
    if not wanted:
        return None
    return tuple(wanted[k] for k in sorted(wanted))


@dataclass(frozen=True)
class BrokerRequest:
    logical: str
    ad: ClassAd
    timeout: float = DEFAULT_TIMEOUT
    projection: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        if not isinstance(self.ad, ClassAd):
            raise TypeError("request ad must be a ClassAd")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.projection is None:
            object.__setattr__(self, "projection", attribute_projection(self.ad))

    @property
    def requester(self) -> str | None:
        if "hostname" not in self.ad:
            return None
        value = evaluate(AttrRef("hostname"), self.ad)
        return value if isinstance(value, str) and value and " " not in value else None

    def query(self) -> QueryRequest:
        return QueryRequest(self.projection, self.requester)


@dataclass(frozen=True)
class CandidateInfo:
    location: ReplicaLocation
    status: str
    reason: str = ""
    volume: VolumeRecord | None = None
    bandwidth: BandwidthRecord | None = None
    sources: tuple[SourceBandwidthRecord, ...] = ()
    ad: ClassAd | None = None


@dataclass(frozen=True)
class RankedCandidate:
    candidate: CandidateInfo
    match: MatchResult

    @property
    def location(self) -> ReplicaLocation:
        return self.candidate.location


@dataclass(frozen=True)
class Exclusion:
    location: ReplicaLocation
    status: str
    reason: str


def _value_json(value):
    if value is UNDEFINED:
        return "undefined"
    if isinstance(value, Error):
        return f"error: {value.message}"
    return value


def _location_json(loc: ReplicaLocation | None):
    if loc is None:
        return None
    return {"hostname": loc.hostname, "address": loc.address, "path": loc.path, "protocol": loc.protocol}


@dataclass(frozen=True)
class SelectionResult:
    chosen: ReplicaLocation | None
    ranked: tuple[RankedCandidate, ...]
    excluded: tuple[Exclusion, ...]
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "chosen": _location_json(self.chosen),
            "ranked": [
                {
                    "location": _location_json(r.location),
                    "rank": _value_json(r.match.rank),
                    "self_requirement": _value_json(r.match.self_requirement),
                    "other_requirement": _value_json(r.match.other_requirement),
                }
                for r in self.ranked
            ],
            "excluded": [
                {"location": _location_json(e.location), "status": e.status, "reason": e.reason}
                for e in self.excluded
            ],
            "timings": dict(self.timings),
        }


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def _holds(volume: str, path: str) -> bool:
    root = volume.rstrip("/")
    return path == volume or path.startswith(root + "/")


def _candidate_from_ldif(location: ReplicaLocation, body: str, partial: bool, requester) -> CandidateInfo:
    try:
        entries = load_ldif(body)
    except LdifError as exc:
        return CandidateInfo(location, PROTOCOL_ERROR, str(exc))
    volumes = []
    for record, dn in entries:
        if isinstance(record, VolumeRecord):
            record = with_identity(record, dn)
            if record.volume and _holds(record.volume, location.path):
                volumes.append((record, dn))
    if not volumes:
        return CandidateInfo(location, INVALID_RECORD, f"no published volume holds {location.path}")
    volume, vol_dn = max(volumes, key=lambda pair: len(pair[0].volume))
    bandwidth, bw_dn, sources = None, None, []
    for record, dn in entries:
        if isinstance(record, BandwidthRecord) and dn.parent == vol_dn:
            bandwidth, bw_dn = record, dn
    for record, dn in entries:
        if isinstance(record, SourceBandwidthRecord) and bw_dn is not None and dn.parent == bw_dn:
            if record.source_url is None:
                record = replace(record, source_url=dn.leaf)
            sources.append(record)
    for record in [volume, bandwidth, *sources]:
        if record is None:
            continue
        problems = validate(record, partial=partial)
        if problems:
            return CandidateInfo(location, INVALID_RECORD, "; ".join(map(str, problems)))
    try:
        ad = record_to_classad(volume, bandwidth, sources, requester)
    except ClassAdError as exc:
        return CandidateInfo(location, INVALID_RECORD, f"policy does not parse: {exc}")
    return CandidateInfo(location, OK, "", volume, bandwidth, tuple(sources), ad)


def _fetch(location: ReplicaLocation, request: BrokerRequest, transport) -> CandidateInfo:
    try:
        text = transport.query(location.address, request.query(), request.timeout)
    except QueryTimeout as exc:
        return CandidateInfo(location, TIMEOUT, str(exc))
    try:
        body = parse_response(text)
    except ProtocolError as exc:
        return CandidateInfo(location, PROTOCOL_ERROR, str(exc))
    return _candidate_from_ldif(location, body, request.projection is not None, request.requester)


def search_phase(
    request: BrokerRequest,
    catalog: CatalogStore,
    transport=None,
    fanout: int = DEFAULT_FANOUT,
) -> list[CandidateInfo]:
    """Query every replica of the requested file; one result per replica, in catalog order."""
    transport = transport or WireTransport()
    locations = catalog.lookup(request.logical)
    if not locations:
        return []
    workers = max(1, min(fanout, len(locations)))
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="search") as pool:
        return list(pool.map(lambda loc: _fetch(loc, request, transport), locations))


# ---------------------------------------------------------------------------
# Match
# ---------------------------------------------------------------------------


def _describe(value) -> str:
    return str(_value_json(value)).lower()


def match_phase(request: BrokerRequest, candidates: list[CandidateInfo]) -> SelectionResult:
    order = sorted(candidates, key=lambda c: (c.location.hostname.lower(), c.location.path, c.location.address))
    usable = [c for c in order if c.status == OK]
    by_ad = {id(c.ad): c for c in usable}
    ranked = tuple(
        RankedCandidate(by_ad[id(ad)], result)
        for ad, result in rank_candidates(request.ad, [c.ad for c in usable])
    )
    chosen_ids = {id(r.candidate) for r in ranked}
    excluded = []
    for c in order:
        if c.status != OK:
            excluded.append(Exclusion(c.location, c.status, c.reason))
        elif id(c) not in chosen_ids:
            m = match_ads(request.ad, c.ad)
            excluded.append(Exclusion(
                c.location,
                UNMATCHED,
                f"requirements not satisfied (request: {_describe(m.self_requirement)}, "
                f"replica: {_describe(m.other_requirement)})",
            ))
    chosen = ranked[0].location if ranked else None
    return SelectionResult(chosen, ranked, tuple(excluded))


# ---------------------------------------------------------------------------
# Access
# ---------------------------------------------------------------------------


class TransferError(Exception):
    pass


class NoMatchError(Exception):
    def __init__(self):
        super().__init__("no matching replica")


class AccessError(Exception):
    def __init__(self, causes: list[tuple[ReplicaLocation, str]]):
        self.causes = causes
        detail = "; ".join(f"{loc}: {why}" for loc, why in causes)
        super().__init__(f"all replicas failed: {detail}")


@dataclass(frozen=True)
class TransferOutcome:
    location: ReplicaLocation
    bytes: int
    duration: float
    attempts: tuple[tuple[ReplicaLocation, str], ...] = ()

    @property
    def bandwidth(self) -> float:
        return self.bytes / self.duration

    def to_sample(self, requester: str, timestamp: float | None = None) -> TransferSample:
        """The serving node's view of this transfer, for its history."""
        ts = time.time() if timestamp is None else timestamp
        return TransferSample(READ, requester, self.bytes, self.duration, ts)

    def to_dict(self) -> dict:
        return {
            "location": _location_json(self.location),
            "bytes": self.bytes,
            "duration": self.duration,
            "failed_attempts": [{"location": _location_json(l), "error": e} for l, e in self.attempts],
        }


Transfer = Callable[[ReplicaLocation, ClassAd], "tuple[int, float]"]


class SimulatedTransfer:
    """Stand-in for a real file transfer.

    Pretends to move ``size`` bytes at the replica's advertised read
    bandwidth (``MaxRDBandwidth``, falling back to ``diskTransferRate``).
    Locations in ``failing`` raise :class:`TransferError`.
    """

    def __init__(self, size: int = 1 << 20, failing=()):
        self.size = size
        self.failing = set(failing)
        self.calls: list[ReplicaLocation] = []

    def __call__(self, location: ReplicaLocation, ad: ClassAd | None) -> tuple[int, float]:
        self.calls.append(location)
        if location in self.failing or location.hostname in self.failing:
            raise TransferError(f"simulated failure at {location}")
        rate = None
        for name in ("MaxRDBandwidth", "diskTransferRate"):
            if ad is not None and name in ad:
                value = evaluate(AttrRef(name), ad)
                if isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0:
                    rate = value
                    break
        rate = rate or float(1 << 20)
        return self.size, self.size / rate


def access_phase(result: SelectionResult, transfer: Transfer | None = None, failover: bool = True) -> TransferOutcome:
    if result.chosen is None:
        raise NoMatchError()
    transfer = transfer or SimulatedTransfer()
    attempts = []
    for ranked in result.ranked if failover else result.ranked[:1]:
        try:
            nbytes, duration = transfer(ranked.location, ranked.candidate.ad)
        except Exception as exc:
            log.info("transfer from %s failed: %s", ranked.location, exc)
            attempts.append((ranked.location, str(exc) or type(exc).__name__))
            continue
        return TransferOutcome(ranked.location, nbytes, duration, tuple(attempts))
    raise AccessError(attempts)


@dataclass(frozen=True)
class Selection:
    result: SelectionResult
    outcome: TransferOutcome | None = None

    def to_dict(self) -> dict:
        data = self.result.to_dict()
        data["transfer"] = self.outcome.to_dict() if self.outcome else None
        return data


def select(
    request: BrokerRequest,
    catalog: CatalogStore,
    transfer: Transfer | None = None,
    transport=None,
    failover: bool = True,
    access: bool = True,
    fanout: int = DEFAULT_FANOUT,
) -> Selection:
    """Run search, match and (optionally) access for one request.

    A request with no matching replica yields a result with ``chosen=None``
    and no transfer; :class:`AccessError` propagates when every transfer fails.
    """
    t0 = time.perf_counter()
    candidates = search_phase(request, catalog, transport, fanout)
    t1 = time.perf_counter()
    result = match_phase(request, candidates)
    t2 = time.perf_counter()
    timings = {"search": t1 - t0, "match": t2 - t1}
    outcome = None
    if access and result.chosen is not None:
        outcome = access_phase(result, transfer, failover)
        timings["access"] = time.perf_counter() - t2
    result = SelectionResult(result.chosen, result.ranked, result.excluded, timings)
    return Selection(result, outcome)

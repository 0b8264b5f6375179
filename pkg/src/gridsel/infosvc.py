"""Per-node storage information service.

Each storage node runs one service that gathers its volume attributes
(static values from the config file, dynamic values from provider commands)
and its transfer history, and answers one-line queries with LDIF::

    QUERY availableSpace,MaxRDBandwidth FROM comet.xyz.com\\n

The response is zero or more LDIF entries followed by ``OK``, or a single
``ERR <reason>`` line.  One request per connection.
"""

from __future__ import annotations

import logging
import re
import shlex
import socket
import socketserver
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .classad import ClassAdError, is_number, parse_expression, parse_quantity, references
from .history import HistoryStore, LoadGauge, TransferSample, append_log, read_log
from .schema import (
    NUMBER,
    POLICY,
    VOLUME_CLASS,
    BandwidthRecord,
    DirectoryName,
    SourceBandwidthRecord,
    VolumeRecord,
    bandwidth_dn,
    format_entry,
    peer_host,
    source_dn,
    volume_dn,
)

__all__ = [
    "ConfigError",
    "ProtocolError",
    "QueryTimeout",
    "AttributeProvider",
    "ProviderCache",
    "NodeConfig",
    "NodeSnapshot",
    "NodeState",
    "QueryRequest",
    "collect",
    "handle_query",
    "parse_config",
    "load_config",
    "serve",
    "ServiceHandle",
    "query",
    "parse_response",
    "WireTransport",
    "LocalTransport",
]

log = logging.getLogger(__name__)

DEFAULT_STALENESS = 5.0
COMMAND_TIMEOUT = 10.0
MAX_REQUEST = 8192
MANDATORY = ("totalSpace", "availableSpace", "diskTransferRate", "drdTime", "dwrTime")


class ConfigError(ValueError):
    pass


class ProtocolError(Exception):
    pass


class QueryTimeout(Exception):
    """No usable answer within the time budget (includes refused connections)."""


# ---------------------------------------------------------------------------
# Attribute providers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttributeProvider:
    """Source of one attribute value.

    ``fixed`` values never refresh.  ``command`` runs an external program
    with no arguments and reads the first line it prints.  ``function`` calls
    a Python callable with no arguments (used for simulated nodes).
    """

    attribute: str
    kind: str
    source: object
    staleness: float = DEFAULT_STALENESS

    @classmethod
    def fixed(cls, attribute: str, value) -> "AttributeProvider":
        return cls(attribute, "fixed", value, float("inf"))

    @classmethod
    def command(cls, attribute: str, command: str, staleness: float = DEFAULT_STALENESS):
        return cls(attribute, "command", command, staleness)

    @classmethod
    def function(cls, attribute: str, fn: Callable[[], object], staleness: float = DEFAULT_STALENESS):
        return cls(attribute, "function", fn, staleness)

    def fetch(self):
        if self.kind == "fixed":
            return self.source
        if self.kind == "function":
            return self.source()
        proc = subprocess.run(
            shlex.split(self.source),
            capture_output=True,
            text=True,
            timeout=COMMAND_TIMEOUT,
            stdin=subprocess.DEVNULL,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"{self.source!r} exited with status {proc.returncode}")
        lines = [ln.strip() for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise RuntimeError(f"{self.source!r} printed nothing")
        return lines[0]


def coerce_value(attribute: str, raw):
    """Convert provider output to the attribute's semantic type."""
    attr = VOLUME_CLASS.attribute(attribute)
    if attr is None:
        raise ValueError(f"unknown volume attribute {attribute!r}")
    if attr.multiple:
        items = (raw,) if isinstance(raw, str) else tuple(raw)
        return tuple(str(i).strip() for i in items)
    if attr.type == NUMBER:
        if is_number(raw):
            return raw
        return parse_quantity(str(raw).strip())
    text = str(raw).strip()
    if not text:
        raise ValueError("empty value")
    if attr.type == POLICY:
        parse_expression(text)
    return text


@dataclass
class _CacheEntry:
    lock: threading.Lock = field(default_factory=threading.Lock)
    value: object = None
    fetched_at: float | None = None
    stale: bool = False


class ProviderCache:
    """Serves provider values, refreshing those older than their staleness budget.

    Refreshes of one attribute are serialized; a failed refresh keeps serving
    the previous value, flagged stale.
    """

    def __init__(self):
        self._entries: dict[object, _CacheEntry] = {}
        self._lock = threading.Lock()

    def _entry(self, key) -> _CacheEntry:
        with self._lock:
            return self._entries.setdefault(key, _CacheEntry())

    def get(self, key, provider: AttributeProvider, now: float):
        """Return ``(value, stale)``; value is ``None`` when never obtained."""
        entry = self._entry(key)
        if entry.fetched_at is not None and now - entry.fetched_at < provider.staleness:
            return entry.value, entry.stale
        with entry.lock:
            if entry.fetched_at is not None and now - entry.fetched_at < provider.staleness:
                return entry.value, entry.stale
            try:
                value = coerce_value(provider.attribute, provider.fetch())
            except Exception as exc:  # provider faults must not break queries
                log.warning("provider for %s failed: %s", provider.attribute, exc)
                entry.stale = entry.fetched_at is not None
                return entry.value, entry.stale
            entry.value, entry.fetched_at, entry.stale = value, now, False
            return value, False


# ---------------------------------------------------------------------------
# Node configuration
# ---------------------------------------------------------------------------


@dataclass
class NodeConfig:
    """Administrator configuration of one storage node.

    ``attributes`` maps ``(volume or None, attributeName)`` to a provider; a
    ``None`` volume applies to every volume without its own binding.
    """

    hostname: str
    volumes: tuple[str, ...] = ()
    host: str = "127.0.0.1"
    port: int = 0
    ou: str | None = None
    o: str | None = None
    attributes: dict = field(default_factory=dict)
    history_log: Path | None = None
    load: int = 0

    def provider(self, volume: str, attribute: str) -> AttributeProvider | None:
        return self.attributes.get((volume, attribute)) or self.attributes.get((None, attribute))

    def check(self) -> None:
        if not self.hostname:
            raise ConfigError("hostname is required")
        if not self.volumes:
            raise ConfigError("at least one volume is required")
        for volume in self.volumes:
            for name in MANDATORY:
                if self.provider(volume, name) is None:
                    raise ConfigError(f"volume {volume}: no value or provider for {name}")


_CONFIG_KEY_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)(?:\[(.+)\])?")


def parse_config(text: str, base_dir: Path | None = None) -> NodeConfig:
    """Parse the flat ``key = value`` node configuration.

    Volume attributes may be bound per volume as ``key[/mount/point]``.  A
    value of the form ``exec:<command>`` binds an external command provider.
    ``volume`` and ``filesystem`` may repeat.
    """
    settings: dict[str, str] = {}
    volumes: list[str] = []
    raw_attrs: dict[tuple[str | None, str], list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        m = _CONFIG_KEY_RE.fullmatch(key)
        if not sep or not m:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        name, scope = m.group(1), m.group(2)
        lname = name.lower()
        if lname == "volume" and scope is None:
            volumes.append(value)
            continue
        attr = VOLUME_CLASS.attribute(name)
        if attr is not None and lname not in ("hostname", "volume"):
            raw_attrs.setdefault((scope, attr.name), []).append(value)
            continue
        if scope is not None:
            raise ConfigError(f"line {lineno}: {name} cannot be set per volume")
        if lname in settings:
            raise ConfigError(f"line {lineno}: duplicate key {name}")
        settings[lname] = value

    staleness = float(settings.pop("staleness", DEFAULT_STALENESS))
    host, port = "127.0.0.1", 0
    if "listen" in settings:
        host, _, port_text = settings.pop("listen").rpartition(":")
        if not port_text.isdigit():
            raise ConfigError("listen must be host:port")
        port = int(port_text)
    history_log = settings.pop("history", None)
    if history_log is not None:
        history_log = Path(history_log)
        if base_dir is not None and not history_log.is_absolute():
            history_log = base_dir / history_log
    attributes = {}
    for (scope, name), values in raw_attrs.items():
        attr = VOLUME_CLASS.attribute(name)
        if len(values) > 1 and not attr.multiple:
            raise ConfigError(f"duplicate key {name}")
        if len(values) == 1 and values[0].startswith("exec:"):
            attributes[(scope, name)] = AttributeProvider.command(name, values[0][5:].strip(), staleness)
            continue
        try:
            value = coerce_value(name, values if attr.multiple else values[0])
        except (ValueError, ClassAdError) as exc:
            raise ConfigError(f"{name}: {exc}") from None
        attributes[(scope, name)] = AttributeProvider.fixed(name, value)
    config = NodeConfig(
        hostname=settings.pop("hostname", ""),
        volumes=tuple(volumes),
        host=host,
        port=port,
        ou=settings.pop("ou", None),
        o=settings.pop("o", None),
        attributes=attributes,
        history_log=history_log,
        load=int(settings.pop("load", 0)),
    )
    if settings:
        raise ConfigError(f"unknown keys: {', '.join(sorted(settings))}")
    config.check()
    return config


def load_config(path: str | Path) -> NodeConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeSnapshot:
    volumes: tuple[tuple[VolumeRecord, DirectoryName], ...]
    bandwidth: BandwidthRecord | None
    sources: tuple[SourceBandwidthRecord, ...]
    stale: frozenset = frozenset()

    def entries(self, requester: str | None = None):
        """LDIF entries in tree order: each volume, its bandwidth summary, its sources."""
        wanted = peer_host(requester) if requester else None
        for record, dn in self.volumes:
            yield record, dn
            if self.bandwidth is None:
                continue
            bw_dn = bandwidth_dn(dn)
            yield self.bandwidth, bw_dn
            for src in self.sources:
                if wanted is None or src.host == wanted:
                    yield src, source_dn(bw_dn, src.source_url)


_VOLUME_FIELDS = {a.name: a.field for a in VOLUME_CLASS.attributes}


def collect(
    config: NodeConfig,
    cache: ProviderCache,
    now: float | None = None,
    history: HistoryStore | None = None,
) -> NodeSnapshot:
    """Gather current records; attributes whose provider never succeeded are omitted."""
    now = time.monotonic() if now is None else now
    volumes = []
    stale = set()
    for volume in config.volumes:
        values = {"hostname": config.hostname, "volume": volume, "mount_point": volume}
        for attr in VOLUME_CLASS.attributes:
            provider = config.provider(volume, attr.name)
            if provider is None:
                continue
            value, is_stale = cache.get((volume, attr.name), provider, now)
            if is_stale:
                stale.add((volume, attr.name))
            if value is not None:
                values[attr.field] = value
        record = VolumeRecord(**values)
        volumes.append((record, volume_dn(config.hostname, volume, config.ou, config.o)))
    bandwidth = history.bandwidth_record() if history is not None else None
    sources = tuple(history.source_records()) if history is not None else ()
    return NodeSnapshot(tuple(volumes), bandwidth, sources, frozenset(stale))


class NodeState:
    """Live state behind one information service."""

    def __init__(self, config: NodeConfig, history: HistoryStore | None = None, load: LoadGauge | None = None):
        config.check()
        self.config = config
        self.cache = ProviderCache()
        if history is None:
            history = HistoryStore(read_log(config.history_log) if config.history_log else ())
        self.history = history
        self.load = load or LoadGauge(config.load)

    def snapshot(self, now: float | None = None) -> NodeSnapshot:
        return collect(self.config, self.cache, now, self.history)

    def record_transfer(self, sample: TransferSample) -> None:
        self.history.record(sample)
        if self.config.history_log is not None:
            append_log(self.config.history_log, sample)


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------

_ATTR_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class QueryRequest:
    """``attributes`` is ``None`` for ``*``."""

    attributes: tuple[str, ...] | None = None
    requester: str | None = None

    @classmethod
    def parse(cls, line: str) -> "QueryRequest":
        tokens = line.rstrip("\r\n").split(" ")
        if not tokens or tokens[0] != "QUERY":
            raise ProtocolError("unknown verb")
        if len(tokens) not in (2, 4) or (len(tokens) == 4 and tokens[2] != "FROM"):
            raise ProtocolError("malformed request")
        selector = tokens[1]
        requester = tokens[3] if len(tokens) == 4 else None
        if requester is not None and not requester:
            raise ProtocolError("malformed request")
        if selector == "*":
            return cls(None, requester)
        names = selector.split(",")
        if not all(_ATTR_RE.fullmatch(n) for n in names):
            raise ProtocolError("bad attribute name")
        return cls(tuple(names), requester)

    def format(self) -> str:
        selector = "*" if self.attributes is None else ",".join(self.attributes)
        tail = f" FROM {self.requester}" if self.requester else ""
        return f"QUERY {selector}{tail}\n"


def _policy_attributes(snapshot: NodeSnapshot) -> set[str]:
    """Names a filtered response always carries: each policy and what it reads locally."""
    names = {"requirements"}
    for record, _ in snapshot.volumes:
        if record.requirements:
            expr = parse_expression(record.requirements)
            names.update(ref.name.lower() for ref in references(expr) if ref.scope is None)
    return names


def render_response(snapshot: NodeSnapshot, request: QueryRequest) -> str:
    only = None
    if request.attributes is not None:
        only = {n.lower() for n in request.attributes} | _policy_attributes(snapshot)
    body = "".join(format_entry(rec, dn, only) for rec, dn in snapshot.entries(request.requester))
    return body + "OK\n"


def handle_query(line: str, state: NodeState, now: float | None = None) -> str:
    """Answer one request line; never raises."""
    try:
        request = QueryRequest.parse(line)
    except ProtocolError as exc:
        return f"ERR {exc}\n"
    try:
        return render_response(state.snapshot(now), request)
    except Exception as exc:
        log.exception("query failed")
        return f"ERR internal error: {exc}\n"


def parse_response(text: str) -> str:
    """Return the LDIF body of an ``OK`` response or raise :class:`ProtocolError`."""
    if text.startswith("ERR"):
        raise ProtocolError(text.strip())
    if text == "OK\n":
        return ""
    if not text.endswith("\nOK\n"):
        raise ProtocolError("response not terminated by OK")
    return text[:-3]


# ---------------------------------------------------------------------------
# Server
# ---------------------------------------------------------------------------


class _Handler(socketserver.StreamRequestHandler):
    timeout = 10.0

    def handle(self):
        try:
            line = self.rfile.readline(MAX_REQUEST)
        except OSError:
            return
        if not line.endswith(b"\n"):
            response = "ERR malformed request\n"
        else:
            try:
                text = line.decode("utf-8")
            except UnicodeDecodeError:
                response = "ERR malformed request\n"
            else:
                response = handle_query(text, self.server.state)
        try:
            self.wfile.write(response.encode("utf-8"))
        except OSError:
            pass


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True
    request_queue_size = 64

    def __init__(self, address, state: NodeState):
        self.state = state
        super().__init__(address, _Handler)


class ServiceHandle:
    """A running information service; ``stop()`` waits for in-flight requests."""

    def __init__(self, server: _Server):
        self._server = server
        # short poll so stop() returns promptly
        self._thread = threading.Thread(target=server.serve_forever, args=(0.05,), name="infosvc", daemon=True)
        self._thread.start()

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    @property
    def state(self) -> NodeState:
        return self._server.state

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(config: NodeConfig | NodeState, host: str | None = None, port: int | None = None) -> ServiceHandle:
    state = config if isinstance(config, NodeState) else NodeState(config)
    address = (host or state.config.host, state.config.port if port is None else port)
    return ServiceHandle(_Server(address, state))


# ---------------------------------------------------------------------------
# Client side
# ---------------------------------------------------------------------------


def _split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host, int(port)


def query(address: str, request: QueryRequest | str, timeout: float = 2.0) -> str:
    """Send one request and return the raw response text.

    Raises :class:`QueryTimeout` if no complete response arrives within
    ``timeout`` seconds or the node cannot be reached.
    """
    line = request.format() if isinstance(request, QueryRequest) else request
    deadline = time.monotonic() + timeout
    chunks = []
    try:
        with socket.create_connection(_split_address(address), timeout=timeout) as sock:
            sock.sendall(line.encode("utf-8"))
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise socket.timeout()
                sock.settimeout(remaining)
                chunk = sock.recv(65536)
                if not chunk:
                    break
                chunks.append(chunk)
    except socket.timeout:
        raise QueryTimeout(f"{address}: no response within {timeout:g}s") from None
    except OSError as exc:
        raise QueryTimeout(f"{address}: {exc.strerror or exc}") from None
    return b"".join(chunks).decode("utf-8")


class WireTransport:
    """Queries nodes over TCP."""

    def query(self, address: str, request: QueryRequest, timeout: float) -> str:
        return query(address, request, timeout)


class LocalTransport:
    """In-process transport: calls ``handle_query`` on registered node states.

    Addresses listed in ``down`` behave like nodes that never answer.
    """

    def __init__(self, nodes: dict[str, NodeState] | None = None, down: Iterable[str] = ()):
        self.nodes = dict(nodes or {})
        self.down = set(down)

    def query(self, address: str, request: QueryRequest, timeout: float) -> str:
        if address in self.down or address not in self.nodes:
            raise QueryTimeout(f"{address}: no response within {timeout:g}s")
        return handle_query(request.format(), self.nodes[address])

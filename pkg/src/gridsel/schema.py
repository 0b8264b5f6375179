"""Storage metadata records and their LDIF publication format.

Three object classes describe a storage node: a server volume (capacity,
mount point, device characteristics, usage policy), a transfer-bandwidth
summary placed under the volume, and per-source bandwidth entries placed
under the summary::

    gss=/dev/sandbox,gss=hugo.mcs.anl.gov,ou=MCS,o=ANL
      gss=TransferBandwidth,...
        gss=comet.xyz.com,gss=TransferBandwidth,...

The LDIF profile is deliberately small: no base64 values, no line folding,
no change records.  Attribute names are case-insensitive on input and
lowercase on output.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import ClassVar, Iterable, Union
from urllib.parse import urlsplit

from .classad import (
    INT_MAX,
    INT_MIN,
    ClassAd,
    ClassAdError,
    Literal,
    is_number,
    parse_expression,
)

__all__ = [
    "LdifError",
    "Violation",
    "VolumeRecord",
    "BandwidthRecord",
    "SourceBandwidthRecord",
    "DirectoryName",
    "ObjectClass",
    "OBJECT_CLASSES",
    "validate",
    "to_ldif",
    "from_ldif",
    "dump_ldif",
    "load_ldif",
    "format_entry",
    "format_number",
    "parse_number",
    "record_to_classad",
    "peer_host",
    "volume_dn",
    "bandwidth_dn",
    "source_dn",
]


class LdifError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    attribute: str
    reason: str

    def __str__(self) -> str:
        return f"{self.attribute}: {self.reason}"


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VolumeRecord:
    hostname: str | None = None
    volume: str | None = None
    total_space: int | float | None = None
    available_space: int | float | None = None
    mount_point: str | None = None
    disk_transfer_rate: int | float | None = None
    drd_time: int | float | None = None
    dwr_time: int | float | None = None
    requirements: str | None = None
    filesystem: tuple[str, ...] = ()
    extras: dict = field(default_factory=dict)

    kind: ClassVar[str] = "volume"


@dataclass(frozen=True)
class BandwidthRecord:
    max_rd_bandwidth: int | float | None = None
    min_rd_bandwidth: int | float | None = None
    avg_rd_bandwidth: int | float | None = None
    max_wr_bandwidth: int | float | None = None
    min_wr_bandwidth: int | float | None = None
    avg_wr_bandwidth: int | float | None = None
    # Not in the published class, which ends in an ellipsis; carried as extension slots.
    stddev_rd_bandwidth: int | float | None = None
    stddev_wr_bandwidth: int | float | None = None
    extras: dict = field(default_factory=dict)

    kind: ClassVar[str] = "bandwidth"


@dataclass(frozen=True)
class SourceBandwidthRecord:
    source_url: str | None = None
    last_rd_bandwidth: int | float | None = None
    last_rd_url: str | None = None
    last_wr_bandwidth: int | float | None = None
    last_wr_url: str | None = None
    extras: dict = field(default_factory=dict)

    kind: ClassVar[str] = "source"

    @property
    def host(self) -> str:
        return peer_host(self.source_url or "")


Record = Union[VolumeRecord, BandwidthRecord, SourceBandwidthRecord]

TEXT, NUMBER, POLICY = "text", "number", "policy"


@dataclass(frozen=True)
class Attribute:
    name: str  # published spelling
    field: str
    type: str
    required: bool = False
    multiple: bool = False


@dataclass(frozen=True)
class ObjectClass:
    name: str
    record_type: type
    attributes: tuple[Attribute, ...]
    superclasses: tuple[str, ...] = ()

    @property
    def objectclasses(self) -> tuple[str, ...]:
        return ("top", self.name) + self.superclasses

    def attribute(self, name: str) -> Attribute | None:
        return self._by_name.get(name.lower())

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {a.name.lower(): a for a in self.attributes})


VOLUME_CLASS = ObjectClass(
    "GridStorageServerVolume",
    VolumeRecord,
    (
        Attribute("hostname", "hostname", TEXT, True),
        Attribute("volume", "volume", TEXT, True),
        Attribute("totalSpace", "total_space", NUMBER, True),
        Attribute("availableSpace", "available_space", NUMBER, True),
        Attribute("mountPoint", "mount_point", TEXT, True),
        Attribute("diskTransferRate", "disk_transfer_rate", NUMBER, True),
        Attribute("drdTime", "drd_time", NUMBER, True),
        Attribute("dwrTime", "dwr_time", NUMBER, True),
        Attribute("requirements", "requirements", POLICY),
        Attribute("filesystem", "filesystem", TEXT, multiple=True),
    ),
    ("GridPhysicalResource",),
)

BANDWIDTH_CLASS = ObjectClass(
    "GridStorageTransferBandwidth",
    BandwidthRecord,
    (
        Attribute("MaxRDBandwidth", "max_rd_bandwidth", NUMBER),
        Attribute("MinRDBandwidth", "min_rd_bandwidth", NUMBER),
        Attribute("AvgRDBandwidth", "avg_rd_bandwidth", NUMBER),
        Attribute("MaxWRBandwidth", "max_wr_bandwidth", NUMBER),
        Attribute("MinWRBandwidth", "min_wr_bandwidth", NUMBER),
        Attribute("AvgWRBandwidth", "avg_wr_bandwidth", NUMBER),
        Attribute("StdDevRDBandwidth", "stddev_rd_bandwidth", NUMBER),
        Attribute("StdDevWRBandwidth", "stddev_wr_bandwidth", NUMBER),
    ),
    ("GridStorageServerVolume", "GridPhysicalResource"),
)

SOURCE_CLASS = ObjectClass(
    "GridStorageSourceTransferBandwidth",
    SourceBandwidthRecord,
    (
        Attribute("sourceUrl", "source_url", TEXT, True),
        Attribute("lastRDBandwidth", "last_rd_bandwidth", NUMBER),
        Attribute("lastRDurl", "last_rd_url", TEXT),
        Attribute("lastWRBandwidth", "last_wr_bandwidth", NUMBER),
        Attribute("lastWRurl", "last_wr_url", TEXT),
    ),
    ("GridStorageTransferBandwidth", "GridStorageServerVolume", "GridPhysicalResource"),
)

OBJECT_CLASSES = {c.record_type.kind: c for c in (VOLUME_CLASS, BANDWIDTH_CLASS, SOURCE_CLASS)}
_CLASS_BY_NAME = {c.name.lower(): c for c in OBJECT_CLASSES.values()}

# (max, min, avg, stddev) per direction
_BANDWIDTH_GROUPS = {
    "RD": ("max_rd_bandwidth", "min_rd_bandwidth", "avg_rd_bandwidth", "stddev_rd_bandwidth"),
    "WR": ("max_wr_bandwidth", "min_wr_bandwidth", "avg_wr_bandwidth", "stddev_wr_bandwidth"),
}
_SOURCE_PAIRS = (("last_rd_bandwidth", "last_rd_url"), ("last_wr_bandwidth", "last_wr_url"))


def object_class(record_or_kind) -> ObjectClass:
    if isinstance(record_or_kind, str):
        try:
            return OBJECT_CLASSES[record_or_kind]
        except KeyError:
            raise ValueError(f"unknown schema kind {record_or_kind!r}") from None
    return OBJECT_CLASSES[record_or_kind.kind]


def peer_host(peer: str) -> str:
    """Hostname of a peer given either as a bare host or a transfer URL."""
    if "://" in peer:
        host = urlsplit(peer).hostname
        return (host or "").lower()
    return peer.lower()


# ---------------------------------------------------------------------------
# Directory names
# ---------------------------------------------------------------------------

_DN_SPECIAL = set(',=+\\"<>;')
DN_KEYS = ("gss", "ou", "o")


def _escape_dn_value(value: str) -> str:
    out = "".join("\\" + c if c in _DN_SPECIAL else c for c in value)
    if out.startswith((" ", "#")):
        out = "\\" + out
    if out.endswith(" ") and not out.endswith("\\ "):
        out = out[:-1] + "\\ "
    return out


def _split_unescaped(text: str, sep: str, maxsplit: int = -1) -> list[str]:
    parts, buf, i = [], [], 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            buf.append(text[i:i + 2])
            i += 2
            continue
        if c == sep and maxsplit != 0:
            parts.append("".join(buf))
            buf = []
            maxsplit -= 1
        else:
            buf.append(c)
        i += 1
    parts.append("".join(buf))
    return parts


def _unescape_dn_value(value: str) -> str:
    return re.sub(r"\\(.)", r"\1", value)


@dataclass(frozen=True)
class DirectoryName:
    """Leaf-first sequence of ``(key, value)`` pairs, keys in ``gss``/``ou``/``o``."""

    rdns: tuple[tuple[str, str], ...]

    def __post_init__(self):
        rdns = tuple((k.lower(), v) for k, v in self.rdns)
        if not rdns:
            raise ValueError("empty directory name")
        for key, value in rdns:
            if key not in DN_KEYS:
                raise ValueError(f"directory name key {key!r} not in {DN_KEYS}")
            if not value or "\n" in value or "\r" in value:
                raise ValueError(f"invalid directory name value {value!r}")
        object.__setattr__(self, "rdns", rdns)

    def __str__(self) -> str:
        return ",".join(f"{k}={_escape_dn_value(v)}" for k, v in self.rdns)

    @classmethod
    def parse(cls, text: str) -> "DirectoryName":
        rdns = []
        for part in _split_unescaped(text, ","):
            kv = _split_unescaped(part, "=", 1)
            if len(kv) != 2:
                raise LdifError(f"malformed directory name component {part!r}")
            rdns.append((kv[0].strip(), _unescape_dn_value(kv[1])))
        try:
            return cls(tuple(rdns))
        except ValueError as exc:
            raise LdifError(str(exc)) from None

    def child(self, key: str, value: str) -> "DirectoryName":
        return DirectoryName(((key, value),) + self.rdns)

    @property
    def parent(self) -> "DirectoryName | None":
        return DirectoryName(self.rdns[1:]) if len(self.rdns) > 1 else None

    @property
    def leaf(self) -> str:
        return self.rdns[0][1]


BANDWIDTH_RDN = "TransferBandwidth"


def volume_dn(hostname: str, volume: str, ou: str | None = None, o: str | None = None) -> DirectoryName:
    rdns = [("gss", volume), ("gss", hostname)]
    if ou:
        rdns.append(("ou", ou))
    if o:
        rdns.append(("o", o))
    return DirectoryName(tuple(rdns))


def bandwidth_dn(volume: DirectoryName) -> DirectoryName:
    return volume.child("gss", BANDWIDTH_RDN)


def source_dn(bandwidth: DirectoryName, source: str) -> DirectoryName:
    return bandwidth.child("gss", source)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _text_problem(value) -> str | None:
    if not isinstance(value, str):
        return "expected text"
    if not value:
        return "empty text"
    if any(c in value for c in "\r\n\0"):
        return "text must be a single line"
    if value != value.strip():
        return "text has surrounding whitespace"
    if value[0] in ":<":
        return "text may not start with ':' or '<'"
    return None


def _number_problem(value) -> str | None:
    if not is_number(value):
        return "expected a number"
    if not math.isfinite(value):
        return "number is not finite"
    return None


def validate(record: Record, kind: str | None = None, partial: bool = False) -> list[Violation]:
    """Return the schema violations of ``record`` (empty when valid).

    With ``partial=True`` absent attributes are not reported, which is how
    attribute-filtered query responses are checked.
    """
    cls = object_class(kind or record)
    if not isinstance(record, cls.record_type):
        return [Violation("objectclass", f"record is not a {cls.name}")]
    out: list[Violation] = []
    for attr in cls.attributes:
        value = getattr(record, attr.field)
        if attr.multiple:
            if not isinstance(value, tuple):
                out.append(Violation(attr.name, "expected a list of values"))
                continue
            for item in value:
                problem = _text_problem(item)
                if problem:
                    out.append(Violation(attr.name, problem))
            continue
        if value is None:
            if attr.required and not partial:
                out.append(Violation(attr.name, "mandatory attribute missing"))
            continue
        if attr.type == NUMBER:
            problem = _number_problem(value)
        else:
            problem = _text_problem(value)
            if problem is None and attr.type == POLICY:
                try:
                    parse_expression(value)
                except ClassAdError as exc:
                    problem = f"policy does not parse: {exc}"
        if problem:
            out.append(Violation(attr.name, problem))
    for name, values in record.extras.items():
        if not _EXTRA_NAME_RE.fullmatch(name):
            out.append(Violation(name, "invalid attribute name"))
        for item in values:
            problem = _text_problem(item)
            if problem:
                out.append(Violation(name, problem))
    if not out:
        out.extend(_invariant_violations(record, partial))
    return out


def _invariant_violations(record: Record, partial: bool) -> list[Violation]:
    out = []
    if isinstance(record, VolumeRecord):
        r = record
        for attr, value in (("totalSpace", r.total_space), ("availableSpace", r.available_space)):
            if value is not None and value < 0:
                out.append(Violation(attr, "must be nonnegative"))
        if r.total_space is not None and r.available_space is not None:
            if r.available_space > r.total_space:
                out.append(Violation("availableSpace", "exceeds totalSpace"))
        if r.disk_transfer_rate is not None and r.disk_transfer_rate <= 0:
            out.append(Violation("diskTransferRate", "must be positive"))
        for attr, value in (("drdTime", r.drd_time), ("dwrTime", r.dwr_time)):
            if value is not None and value < 0:
                out.append(Violation(attr, "must be nonnegative"))
    elif isinstance(record, BandwidthRecord):
        present_groups = 0
        for direction, names in _BANDWIDTH_GROUPS.items():
            hi, lo, avg, sd = (getattr(record, n) for n in names)
            core = (hi, lo, avg)
            if all(v is None for v in core):
                if sd is not None and not partial:
                    out.append(Violation(f"StdDev{direction}Bandwidth", "present without statistics"))
                continue
            present_groups += 1
            if any(v is None for v in core):
                if not partial:
                    out.append(Violation(f"Avg{direction}Bandwidth", "statistics group incomplete"))
                continue
            if min(core + ((sd,) if sd is not None else ())) < 0:
                out.append(Violation(f"Min{direction}Bandwidth", "must be nonnegative"))
            if not lo <= avg <= hi:
                out.append(Violation(f"Avg{direction}Bandwidth", "violates Min <= Avg <= Max"))
        if present_groups == 0 and not partial:
            out.append(Violation("MaxRDBandwidth", "no bandwidth statistics present"))
    else:
        pairs = 0
        for bw_field, url_field in _SOURCE_PAIRS:
            bw, url = getattr(record, bw_field), getattr(record, url_field)
            bw_name = _field_name(SOURCE_CLASS, bw_field)
            if bw is not None:
                pairs += 1
                if bw < 0:
                    out.append(Violation(bw_name, "must be nonnegative"))
            if not partial and (bw is None) != (url is None):
                out.append(Violation(_field_name(SOURCE_CLASS, url_field), f"must accompany {bw_name}"))
        if pairs == 0 and not partial:
            out.append(Violation("lastRDBandwidth", "no per-source bandwidth present"))
    return out


def _field_name(cls: ObjectClass, field_name: str) -> str:
    return next(a.name for a in cls.attributes if a.field == field_name)


# ---------------------------------------------------------------------------
# LDIF
# ---------------------------------------------------------------------------

_EXTRA_NAME_RE = re.compile(r"[a-z][a-z0-9_-]*")
_INT_RE = re.compile(r"-?\d+")


def format_number(value: int | float) -> str:
    """Shortest decimal text that parses back to exactly ``value``."""
    if isinstance(value, float) and value.is_integer() and abs(value) < 2**53:
        value = int(value)
    return str(value) if isinstance(value, int) else repr(value)


def parse_number(text: str) -> int | float:
    if _INT_RE.fullmatch(text):
        return int(text)
    try:
        value = float(text)
    except ValueError:
        raise LdifError(f"unparseable numeric {text!r}") from None
    if not math.isfinite(value) or text.strip() != text:
        raise LdifError(f"unparseable numeric {text!r}")
    return value


def format_entry(record: Record, dn: DirectoryName, only: Iterable[str] | None = None) -> str:
    """Render one entry without validating it.

    ``only`` restricts the attribute lines to the given (case-insensitive)
    names; dn and objectclass lines are always written.
    """
    cls = object_class(record)
    wanted = None if only is None else {n.lower() for n in only}
    lines = [f"dn: {dn}"]
    lines.extend(f"objectclass: {name}" for name in cls.objectclasses)
    for attr in cls.attributes:
        name = attr.name.lower()
        if wanted is not None and name not in wanted:
            continue
        value = getattr(record, attr.field)
        values = value if attr.multiple else (() if value is None else (value,))
        for v in values:
            lines.append(f"{name}: {format_number(v) if attr.type == NUMBER else v}")
    for name in sorted(record.extras):
        if wanted is not None and name not in wanted:
            continue
        lines.extend(f"{name}: {v}" for v in record.extras[name])
    return "\n".join(lines) + "\n\n"


def to_ldif(record: Record, dn: DirectoryName) -> str:
    violations = validate(record)
    if violations:
        raise LdifError("invalid record: " + "; ".join(map(str, violations)))
    return format_entry(record, dn)


def dump_ldif(entries: Iterable[tuple[Record, DirectoryName]]) -> str:
    return "".join(to_ldif(record, dn) for record, dn in entries)


def _parse_entry(lines: list[tuple[int, str]]) -> tuple[Record, DirectoryName]:
    lineno, first = lines[0]
    if not first.lower().startswith("dn:"):
        raise LdifError(f"missing dn (line {lineno})")
    dn = DirectoryName.parse(first[3:].removeprefix(" "))
    attrs: list[tuple[int, str, str]] = []
    classes: list[str] = []
    for lineno, line in lines[1:]:
        name, sep, value = line.partition(":")
        if not sep or not _EXTRA_NAME_RE.fullmatch(name.lower()):
            raise LdifError(f"malformed attribute line {lineno}: {line!r}")
        value = value.removeprefix(" ")
        if name.lower() == "objectclass":
            classes.append(value.lower())
        else:
            attrs.append((lineno, name.lower(), value))
    cls = next((_CLASS_BY_NAME[c] for c in classes if c in _CLASS_BY_NAME), None)
    if cls is None:
        raise LdifError(f"entry {dn} has no known objectclass")
    values: dict[str, object] = {}
    multi: dict[str, list[str]] = {}
    extras: dict[str, list[str]] = {}
    for lineno, name, raw in attrs:
        attr = cls.attribute(name)
        if attr is None:
            extras.setdefault(name, []).append(raw)
        elif attr.multiple:
            multi.setdefault(attr.field, []).append(raw)
        elif attr.field in values:
            raise LdifError(f"duplicate attribute {name!r} at line {lineno}")
        elif attr.type == NUMBER:
            try:
                values[attr.field] = parse_number(raw)
            except LdifError as exc:
                raise LdifError(f"{exc} at line {lineno}") from None
        else:
            values[attr.field] = raw
    for fname, items in multi.items():
        values[fname] = tuple(items)
    record = cls.record_type(**values, extras={k: tuple(v) for k, v in extras.items()})
    return record, dn


def load_ldif(text: str) -> list[tuple[Record, DirectoryName]]:
    """Parse every entry in ``text`` (entries separated by blank lines)."""
    entries, current = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#") or (not entries and not current and line.lower().startswith("version:")):
            continue
        if line.strip() == "":
            if current:
                entries.append(_parse_entry(current))
                current = []
            continue
        current.append((lineno, line))
    if current:
        entries.append(_parse_entry(current))
    return entries


def from_ldif(text: str) -> tuple[Record, DirectoryName]:
    entries = load_ldif(text)
    if not entries:
        raise LdifError("missing dn")
    if len(entries) > 1:
        raise LdifError(f"expected one entry, found {len(entries)}")
    return entries[0]


# ---------------------------------------------------------------------------
# Conversion to ClassAds
# ---------------------------------------------------------------------------


def _number_literal(value: int | float) -> Literal:
    if isinstance(value, float) and value.is_integer() and INT_MIN <= value <= INT_MAX:
        return Literal(int(value))
    return Literal(value)


def _scalar_items(record: Record) -> list[tuple[str, Literal]]:
    cls = object_class(record)
    items = []
    for attr in cls.attributes:
        value = getattr(record, attr.field)
        if attr.multiple or attr.type == POLICY or value is None:
            continue
        items.append((attr.name, _number_literal(value) if attr.type == NUMBER else Literal(value)))
    return items


def record_to_classad(
    volume: VolumeRecord,
    bandwidth: BandwidthRecord | None = None,
    sources: Iterable[SourceBandwidthRecord] = (),
    requester: str | None = None,
) -> ClassAd:
    """Flatten a node's records into one capability ad.

    The volume's ``requirements`` text becomes the ad's ``requirement``.
    Per-source entries appear as ``lastRDBandwidth_from_<i>`` etc.; the entry
    for ``requester`` (a hostname) is also exposed without suffix.
    """
    items = _scalar_items(volume)
    if volume.requirements is not None:
        items.append(("requirement", parse_expression(volume.requirements)))
    if bandwidth is not None:
        items.extend(_scalar_items(bandwidth))
    wanted = peer_host(requester) if requester else None
    for index, src in enumerate(sources):
        src_items = dict(_scalar_items(src))
        for name in ("sourceUrl", "lastRDBandwidth", "lastWRBandwidth"):
            if name in src_items:
                items.append((f"{name}_from_{index}", src_items[name]))
        if wanted is not None and src.host == wanted:
            items.extend((n, v) for n, v in src_items.items() if n != "sourceUrl")
    return ClassAd(items)


def with_identity(record: VolumeRecord, dn: DirectoryName) -> VolumeRecord:
    """Fill hostname/volume from the entry's dn when a filtered response omitted them."""
    rdns = [v for k, v in dn.rdns if k == "gss"]
    changes = {}
    if record.volume is None and rdns:
        changes["volume"] = rdns[0]
    if record.hostname is None and len(rdns) > 1:
        changes["hostname"] = rdns[1]
    return replace(record, **changes) if changes else record


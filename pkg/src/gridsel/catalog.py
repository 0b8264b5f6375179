"""Replica catalog: logical file name -> physical replica locations.

Persisted as a UTF-8 text file, one replica per line, sorted::

    logical<TAB>hostname<TAB>addr:port<TAB>path<TAB>protocol
"""

from __future__ import annotations

import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ReplicaLocation", "CatalogStore", "CatalogError", "parse_address"]


class CatalogError(ValueError):
    pass


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise CatalogError(f"invalid address {address!r}, expected host:port")
    return host, int(port)


def _check_field(name: str, value: str) -> None:
    if not isinstance(value, str) or any(c in value for c in "\t\r\n"):
        raise CatalogError(f"{name} may not contain tabs or newlines: {value!r}")


@dataclass(frozen=True, order=True)
class ReplicaLocation:
    hostname: str
    address: str
    path: str
    protocol: str = ""

    def __post_init__(self):
        if not self.hostname:
            raise CatalogError("replica hostname is empty")
        if not self.path.startswith("/"):
            raise CatalogError(f"replica path must be absolute: {self.path!r}")
        parse_address(self.address)
        for name in ("hostname", "address", "path", "protocol"):
            _check_field(name, getattr(self, name))

    @property
    def key(self) -> tuple[str, str]:
        return (self.hostname, self.path)

    def __str__(self) -> str:
        return f"{self.hostname}:{self.path}"


class CatalogStore:
    """Thread-safe catalog with optional file persistence.

    The in-memory state is an immutable snapshot swapped under the write
    lock, so readers never observe a partial update.  Every mutation is
    written to disk (atomically, via rename) before it becomes visible.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[ReplicaLocation, ...]] = {}
        if self.path is not None and self.path.exists():
            self._entries = self._load(self.path)

    @staticmethod
    def _load(path: Path) -> dict[str, tuple[ReplicaLocation, ...]]:
        entries: dict[str, dict[tuple[str, str], ReplicaLocation]] = {}
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 5:
                    raise CatalogError(f"{path}:{lineno}: expected 5 tab-separated fields")
                logical, hostname, address, rpath, protocol = parts
                try:
                    loc = ReplicaLocation(hostname, address, rpath, protocol)
                except CatalogError as exc:
                    raise CatalogError(f"{path}:{lineno}: {exc}") from None
                entries.setdefault(logical, {}).setdefault(loc.key, loc)
        return {k: tuple(sorted(v.values())) for k, v in entries.items()}

    def _save(self, entries: dict[str, tuple[ReplicaLocation, ...]]) -> None:
        if self.path is None:
            return
        lines = sorted(
            f"{logical}\t{loc.hostname}\t{loc.address}\t{loc.path}\t{loc.protocol}\n"
            for logical, locs in entries.items()
            for loc in locs
        )
        directory = self.path.parent
        fd, tmp = tempfile.mkstemp(prefix=".catalog-", dir=directory)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.writelines(lines)
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @staticmethod
    def _check_logical(logical: str) -> None:
        if not logical:
            raise CatalogError("logical file name is empty")
        _check_field("logical name", logical)

    def register(self, logical: str, location: ReplicaLocation) -> "CatalogStore":
        """Add a replica; a no-op if (logical, hostname, path) is already present."""
        self._check_logical(logical)
        with self._lock:
            current = self._entries.get(logical, ())
            if any(loc.key == location.key for loc in current):
                return self
            entries = dict(self._entries)
            entries[logical] = tuple(sorted(current + (location,)))
            self._save(entries)
            self._entries = entries
        return self

    def unregister(self, logical: str, location: ReplicaLocation) -> "CatalogStore":
        with self._lock:
            current = self._entries.get(logical, ())
            remaining = tuple(loc for loc in current if loc.key != location.key)
            if len(remaining) == len(current):
                return self
            entries = dict(self._entries)
            if remaining:
                entries[logical] = remaining
            else:
                del entries[logical]
            self._save(entries)
            self._entries = entries
        return self

    def lookup(self, logical: str) -> list[ReplicaLocation]:
        """Replicas of ``logical`` ordered by (hostname, path); ``[]`` if unknown."""
        return sorted(self._entries.get(logical, ()), key=lambda loc: loc.key)

    def logical_names(self) -> list[str]:
        return sorted(self._entries)

    def snapshot(self) -> dict[str, frozenset[ReplicaLocation]]:
        return {k: frozenset(v) for k, v in self._entries.items()}

    def __contains__(self, logical: str) -> bool:
        return logical in self._entries

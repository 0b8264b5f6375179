"""Transfer history: observed bandwidth samples, summaries and prediction.

A storage node records every transfer it serves.  From the retained samples
it publishes max/min/mean/stddev bandwidth per direction, the most recent
transfer per peer, and a load-adjusted bandwidth estimate.
"""

from __future__ import annotations

import math
import statistics
import threading
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .classad import UNDEFINED
from .schema import BandwidthRecord, SourceBandwidthRecord, peer_host

__all__ = [
    "READ",
    "WRITE",
    "TransferSample",
    "BandwidthSummary",
    "DirectionSummary",
    "LoadGauge",
    "HistoryStore",
    "predict",
    "read_log",
    "append_log",
    "format_log_line",
    "parse_log_line",
]

READ, WRITE = "read", "write"
DIRECTIONS = (READ, WRITE)
DEFAULT_RETENTION = 10_000


@dataclass(frozen=True)
class TransferSample:
    """One completed transfer, seen from the serving node.

    ``direction`` is ``"read"`` when the node sent data to ``peer``.
    """

    direction: str
    peer: str
    bytes: int
    duration: float
    timestamp: float

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be read or write, not {self.direction!r}")
        if not self.peer or any(c in self.peer for c in "\t\r\n"):
            raise ValueError(f"invalid peer {self.peer!r}")
        if isinstance(self.bytes, bool) or not isinstance(self.bytes, int) or self.bytes < 0:
            raise ValueError(f"bytes must be a nonnegative integer, not {self.bytes!r}")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"duration must be positive, not {self.duration!r}")
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")

    @property
    def bandwidth(self) -> float:
        return self.bytes / self.duration

    @property
    def host(self) -> str:
        return peer_host(self.peer)

    def _recency(self):
        return (self.timestamp, self.bytes, self.duration, self.peer)


@dataclass(frozen=True)
class DirectionSummary:
    count: int = 0
    max: float | None = None
    min: float | None = None
    mean: float | None = None
    stddev: float | None = None


def _summarize(values: list[float]) -> DirectionSummary:
    if not values:
        return DirectionSummary()
    lo, hi = min(values), max(values)
    # The exact mean lies in [lo, hi]; clamp away the last-ulp rounding.
    mean = min(max(statistics.fmean(values), lo), hi)
    return DirectionSummary(len(values), hi, lo, mean, statistics.pstdev(values))


@dataclass(frozen=True)
class BandwidthSummary:
    read: DirectionSummary
    write: DirectionSummary

    def __getitem__(self, direction: str) -> DirectionSummary:
        return self.read if direction == READ else self.write


class LoadGauge:
    """Count of transfers currently in progress."""

    def __init__(self, active: int = 0):
        if active < 0:
            raise ValueError("active transfer count cannot be negative")
        self._active = active
        self._lock = threading.Lock()

    @property
    def active(self) -> int:
        return self._active

    def begin(self) -> None:
        with self._lock:
            self._active += 1

    def end(self) -> None:
        with self._lock:
            if self._active == 0:
                raise RuntimeError("unbalanced LoadGauge.end()")
            self._active -= 1

    @contextmanager
    def track(self):
        self.begin()
        try:
            yield self
        finally:
            self.end()


class HistoryStore:
    """Bounded per-direction sample buffers plus per-peer latest transfers.

    Writers are serialized; readers work from a snapshot taken under the lock.
    """

    def __init__(self, samples: Iterable[TransferSample] = (), retention: int = DEFAULT_RETENTION):
        self._lock = threading.Lock()
        self._samples = {d: deque(maxlen=retention) for d in DIRECTIONS}
        self._last: dict[tuple[str, str], TransferSample] = {}
        for sample in samples:
            self.record(sample)

    def record(self, sample: TransferSample) -> None:
        if not isinstance(sample, TransferSample):
            raise TypeError("expected a TransferSample")
        key = (sample.host, sample.direction)
        with self._lock:
            self._samples[sample.direction].append(sample)
            current = self._last.get(key)
            if current is None or sample._recency() > current._recency():
                self._last[key] = sample

    def samples(self, direction: str | None = None) -> list[TransferSample]:
        with self._lock:
            if direction is not None:
                return list(self._samples[direction])
            return [s for d in DIRECTIONS for s in self._samples[d]]

    def last(self, peer: str, direction: str) -> TransferSample | None:
        with self._lock:
            return self._last.get((peer_host(peer), direction))

    def peers(self) -> list[str]:
        with self._lock:
            return sorted({host for host, _ in self._last})

    def __len__(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._samples.values())

    def summarize(self, direction: str | None = None) -> BandwidthSummary | DirectionSummary:
        """Exact statistics over retained samples, for one or both directions."""
        if direction is not None:
            return _summarize([s.bandwidth for s in self.samples(direction)])
        return BandwidthSummary(self.summarize(READ), self.summarize(WRITE))

    def mean_bandwidth(self, direction: str, peer: str | None = None) -> float | None:
        samples = self.samples(direction)
        if peer is not None:
            host = peer_host(peer)
            samples = [s for s in samples if s.host == host]
        return _summarize([s.bandwidth for s in samples]).mean

    def bandwidth_record(self) -> BandwidthRecord | None:
        """Export summaries; a direction with no samples is omitted, ``None`` if both are."""
        summary = self.summarize()
        if summary.read.count == 0 and summary.write.count == 0:
            return None
        values = {}
        for direction, tag in ((READ, "rd"), (WRITE, "wr")):
            s = summary[direction]
            if s.count:
                values.update({
                    f"max_{tag}_bandwidth": s.max,
                    f"min_{tag}_bandwidth": s.min,
                    f"avg_{tag}_bandwidth": s.mean,
                    f"stddev_{tag}_bandwidth": s.stddev,
                })
        return BandwidthRecord(**values)

    def source_records(self) -> list[SourceBandwidthRecord]:
        """One record per peer with its most recent read/write transfer."""
        out = []
        for host in self.peers():
            rd, wr = self.last(host, READ), self.last(host, WRITE)
            out.append(SourceBandwidthRecord(
                source_url=host,
                last_rd_bandwidth=rd.bandwidth if rd else None,
                last_rd_url=rd.peer if rd else None,
                last_wr_bandwidth=wr.bandwidth if wr else None,
                last_wr_url=wr.peer if wr else None,
            ))
        return out


def predict(store: HistoryStore, peer: str | None, direction: str, load: LoadGauge | int = 0):
    """Expected bandwidth to ``peer``: historical mean divided by ``1 + load``.

    Uses the per-peer mean when that peer has samples, else the mean over all
    peers.  Returns ``UNDEFINED`` when there is no history at all.
    """
    active = load.active if isinstance(load, LoadGauge) else load
    if active < 0:
        raise ValueError("load cannot be negative")
    base = store.mean_bandwidth(direction, peer) if peer else None
    if base is None:
        base = store.mean_bandwidth(direction)
    if base is None:
        return UNDEFINED
    return base / (1 + active)


# ---------------------------------------------------------------------------
# Sample log: timestamp \t direction \t peer \t bytes \t duration
# ---------------------------------------------------------------------------


def format_log_line(sample: TransferSample) -> str:
    return f"{sample.timestamp!r}\t{sample.direction}\t{sample.peer}\t{sample.bytes}\t{sample.duration!r}\n"


def parse_log_line(line: str) -> TransferSample:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 5:
        raise ValueError(f"expected 5 tab-separated fields, got {len(parts)}")
    timestamp, direction, peer, nbytes, duration = parts
    return TransferSample(direction, peer, int(nbytes), float(duration), float(timestamp))


def read_log(path: str | Path) -> list[TransferSample]:
    path = Path(path)
    if not path.exists():
        return []
    samples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                samples.append(parse_log_line(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return samples


def append_log(path: str | Path, sample: TransferSample) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(format_log_line(sample))

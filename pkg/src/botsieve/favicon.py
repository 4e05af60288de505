"""Favicon-retrieval ledger.

Clients that fetch the favicon are rendering pages like a browser, so a
favicon request marks its (anonymized IP, UTC day) as likely human. When
the favicon URL rotates daily (``/favicon.ico?v=YYYY-MM-DD``), only the
current day's URL counts; stale versions come from cache revalidation
and are tallied separately.

Ledgers built on disjoint shards merge by OR-ing the flags and summing
the counters, so ingestion order and sharding never change the result.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Optional
from urllib.parse import parse_qs

from .errors import PreconditionError
from .log_ingest import IPAddress, LogRecord

SELECTORS = ("total-ips", "favicon-ips", "marker-post-ips")
LEDGER_HEADER = ["day", "ip", "requests", "favicon_seen", "marker_post"]


@dataclass(frozen=True)
class FaviconMatcher:
    path_prefix: str = "/favicon.ico"
    # Query parameter carrying the rotation date; None disables rotation enforcement.
    rotation_param: Optional[str] = None

    def classify(self, record: LogRecord) -> Optional[str]:
        """``fresh``, ``stale`` or None (not a favicon fetch)."""
        if record.method not in ("GET", "HEAD") or record.status >= 500:
            return None
        if not record.path.startswith(self.path_prefix):
            return None
        if self.rotation_param is None:
            return "fresh"
        values = parse_qs(record.query, keep_blank_values=True).get(self.rotation_param, [])
        return "fresh" if record.day.isoformat() in values else "stale"


@dataclass(frozen=True)
class MarkerEndpoint:
    """An authenticated action whose success proxies for a logged-in human."""

    path_prefix: str = "/course/"
    method: str = "POST"
    statuses: frozenset = frozenset({200})

    def matches(self, record: LogRecord) -> bool:
        return (record.method == self.method and record.path.startswith(self.path_prefix)
                and record.status in self.statuses)


@dataclass
class DayEntry:
    favicon_seen: bool = False
    request_count: int = 0
    post_to_marker: bool = False
    stale_favicon: int = 0

    def merge(self, other: "DayEntry") -> None:
        self.favicon_seen |= other.favicon_seen
        self.post_to_marker |= other.post_to_marker
        self.request_count += other.request_count
        self.stale_favicon += other.stale_favicon


@dataclass
class FaviconLedger:
    matcher: FaviconMatcher = field(default_factory=FaviconMatcher)
    marker: Optional[MarkerEndpoint] = None
    entries: dict = field(default_factory=dict)

    def ingest(self, record: LogRecord) -> "FaviconLedger":
        if not record.anonymized:
            raise PreconditionError("favicon ledger only accepts anonymized records")
        key = (record.client_ip, record.day)
        entry = self.entries.get(key)
        if entry is None:
            entry = self.entries[key] = DayEntry()
        entry.request_count += 1
        kind = self.matcher.classify(record)
        if kind == "fresh":
            entry.favicon_seen = True
        elif kind == "stale":
            entry.stale_favicon += 1
        if self.marker is not None and self.marker.matches(record):
            entry.post_to_marker = True
        return self

    def ingest_all(self, records: Iterable[LogRecord]) -> "FaviconLedger":
        for record in records:
            self.ingest(record)
        return self

    def merge(self, other: "FaviconLedger") -> "FaviconLedger":
        """Pointwise merge of ``other`` into a new ledger."""
        merged = FaviconLedger(self.matcher, self.marker, {})
        for source in (self, other):
            for key, entry in source.entries.items():
                target = merged.entries.setdefault(key, DayEntry())
                target.merge(entry)
        return merged

    def likely_non_bot(self, ip: IPAddress, day: date) -> str:
        entry = self.entries.get((ip, day))
        return "likely-non-bot" if entry is not None and entry.favicon_seen else "unknown"

    def daily_series(self, selector: str) -> list[tuple[date, int]]:
        """Distinct IPs per UTC day matching ``selector``, zero-filled across the ledger's day range."""
        if selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if not self.entries:
            return []
        counts: dict[date, int] = {}
        for (_ip, day), entry in self.entries.items():
            hit = (selector == "total-ips"
                   or (selector == "favicon-ips" and entry.favicon_seen)
                   or (selector == "marker-post-ips" and entry.post_to_marker))
            counts[day] = counts.get(day, 0) + (1 if hit else 0)
        first, last = min(counts), max(counts)
        return [(first + timedelta(days=i), counts.get(first + timedelta(days=i), 0))
                for i in range((last - first).days + 1)]

    def stale_favicon_requests(self) -> int:
        return sum(e.stale_favicon for e in self.entries.values())

    def export(self, sink) -> int:
        writer = csv.writer(sink, lineterminator="\r\n")
        writer.writerow(LEDGER_HEADER)
        rows = sorted(self.entries.items(), key=lambda kv: (kv[0][1], kv[0][0].version, kv[0][0]))
        for (ip, day), e in rows:
            writer.writerow([day.isoformat(), str(ip), e.request_count,
                             int(e.favicon_seen), int(e.post_to_marker)])
        return len(rows)


def ingest(ledger: FaviconLedger, record: LogRecord) -> FaviconLedger:
    return ledger.ingest(record)


def likely_non_bot(ledger: FaviconLedger, ip: IPAddress, day: date) -> str:
    return ledger.likely_non_bot(ip, day)


def daily_series(ledger: FaviconLedger, selector: str) -> list[tuple[date, int]]:
    return ledger.daily_series(selector)

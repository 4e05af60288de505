"""Batch stages behind the command-line front end.

Every stage reads and writes plain files in an output directory. Work is
split into chunks that worker threads process independently; results are
consumed in submission order (or merged with order-independent
operations), so the thread count never changes a byte of output.
"""

from __future__ import annotations

import csv
import ipaddress
import json
import logging
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta
from itertools import islice
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from . import refdata
from .detection import MODES, DetectionConfig, Detector, Reason, Verdict, write_verdicts
from .errors import ConfigError, DegenerateInput, FormatError, ParseError
from .evaluation import (ConfusionMatrix, LabelledRequest, confusion, half_up, import_external_verdicts,
                         reason_overlap, top_user_agents, verdict_memberships, version_histogram)
from .evaluation import reports
from .evaluation.stats import compare_series
from .favicon import DayEntry, FaviconLedger, FaviconMatcher, MarkerEndpoint
from .ip_anon import Anonymizer
from .log_ingest import (CSV_HEADER, IPAddress, LogRecord, NormalizedWriter, ParseOptions,
                         iter_normalized, iter_raw_lines, open_log, parse_line, record_to_row)

log = logging.getLogger("botsieve")

CHUNK = 20_000
LABEL_COLUMNS = ("truth", "source")
SAMPLE_LIMIT = 10


def _chunks(items: Iterable, size: int) -> Iterator[list]:
    it = iter(items)
    while True:
        chunk = list(islice(it, size))
        if not chunk:
            return
        yield chunk


def ordered_map(fn: Callable, items: Iterable, threads: int) -> Iterator:
    """``map`` over a thread pool, yielding in input order with a bounded backlog."""
    if threads <= 1:
        yield from map(fn, items)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending: deque = deque()
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= 2 * threads:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def _open_text(path: Path, mode: str = "r"):
    return open(path, mode, encoding="utf-8", newline="")


# --- ingest -------------------------------------------------------------------

@dataclass
class IngestSummary:
    inputs: list = field(default_factory=list)
    lines: int = 0
    records: int = 0
    errors: Counter = field(default_factory=Counter)
    samples: list = field(default_factory=list)

    @property
    def error_count(self) -> int:
        return sum(self.errors.values())

    def to_json(self) -> str:
        # Samples carry position and kind only: messages may quote raw addresses.
        doc = {
            "inputs": self.inputs,
            "lines": self.lines,
            "records": self.records,
            "parse_errors": {
                "count": self.error_count,
                "by_kind": dict(sorted(self.errors.items())),
                "samples": self.samples,
            },
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _parse_chunk(args) -> tuple[list, list]:
    lines, options = args
    records, errors = [], []
    for raw in lines:
        try:
            records.append(parse_line(raw, options))
        except ParseError as exc:
            errors.append((raw.line_number, exc.kind))
    return records, errors


class _BatchAnonymizer:
    """Anonymizes the distinct new addresses of each chunk in one vectorized call."""

    def __init__(self, anonymizer: Anonymizer):
        self._anon = anonymizer
        self._cache: dict[IPAddress, IPAddress] = {}

    def map(self, ips: Iterable[IPAddress]) -> dict[IPAddress, IPAddress]:
        fresh = {ip for ip in ips if ip not in self._cache}
        v4 = sorted(ip for ip in fresh if ip.version == 4)
        v6 = sorted(ip for ip in fresh if ip.version == 6)
        if v4:
            out = self._anon.anonymize_v4_many(np.array([int(ip) for ip in v4], dtype=np.uint32))
            self._cache.update(zip(v4, (ipaddress.IPv4Address(int(x)) for x in out)))
        if v6:
            out = self._anon.anonymize_v6_many([ip.packed for ip in v6])
            self._cache.update(zip(v6, (ipaddress.IPv6Address(b) for b in out)))
        return self._cache


def ingest(inputs: Sequence[tuple[Path, str]], anonymizer: Anonymizer, out_dir: Path,
           options: ParseOptions = ParseOptions(), threads: int = 1,
           known_bot_ips: Optional[refdata.KnownBotIPs] = None) -> IngestSummary:
    """Parse, anonymize and normalize ``inputs`` into ``out_dir/normalized.csv``.

    Parse errors are tallied, never fatal. With ``known_bot_ips`` the raw
    addresses are checked against the list before anonymization and the
    outcome is written keyed by anonymized address.
    """
    for _, fmt in inputs:
        options.check(fmt)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = IngestSummary()
    batch = _BatchAnonymizer(anonymizer)
    ip_flags: dict[IPAddress, bool] = {}
    with open(out_dir / "normalized.csv", "wb") as fh:
        writer = NormalizedWriter(fh)
        for path, fmt in inputs:
            entry = {"path": str(path), "format": fmt, "lines": 0, "records": 0, "errors": 0}
            with open_log(path) as stream:
                work = ((chunk, options) for chunk in _chunks(iter_raw_lines(stream, fmt), CHUNK))
                for records, errors in ordered_map(_parse_chunk, work, threads):
                    mapping = batch.map(r.client_ip for r in records)
                    for record in records:
                        anon_ip = mapping[record.client_ip]
                        if known_bot_ips is not None and anon_ip not in ip_flags:
                            ip_flags[anon_ip] = refdata.is_known_bot_ip(record.client_ip, known_bot_ips)
                        writer.write(LogRecord(record.timestamp, anon_ip, record.method, record.path,
                                               record.query, record.status, record.user_agent,
                                               record.referer, anonymized=True))
                    for line_number, kind in errors:
                        summary.errors[kind] += 1
                        if len(summary.samples) < SAMPLE_LIMIT:
                            summary.samples.append({"input": str(path), "line": line_number, "kind": kind})
                    entry["records"] += len(records)
                    entry["errors"] += len(errors)
                    entry["lines"] += len(records) + len(errors)
            summary.inputs.append(entry)
            summary.lines += entry["lines"]
            summary.records += entry["records"]
        writer.close()
    (out_dir / "ingest_summary.json").write_text(summary.to_json(), encoding="utf-8")
    if known_bot_ips is not None:
        with _open_text(out_dir / "known_bot_ips.csv", "w") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["key", "is_bot"])
            for ip in sorted(ip_flags, key=lambda a: (a.version, a)):
                w.writerow([str(ip), "true" if ip_flags[ip] else "false"])
    return summary


# --- detection configuration ---------------------------------------------------

@dataclass(frozen=True)
class DetectionOptions:
    mode: str = "full"
    reference_date: Optional[date] = None
    window_days: int = 730
    bot_list: Optional[Path] = None
    bot_list_format: str = "robots-json"
    release_db: Optional[Path] = None
    frozen_tokens: Optional[Path] = None
    bot_patterns: tuple = ()

    def build(self, fallback_reference: Optional[date]) -> tuple[DetectionConfig, str]:
        """The detection config plus a note on where the reference date came from."""
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.window_days <= 0:
            raise ConfigError("window must be a positive number of days")
        if self.reference_date is not None:
            ref, note = self.reference_date, "given"
        elif fallback_reference is not None:
            ref, note = fallback_reference, "derived from the latest timestamp"
            log.info("reference date %s derived from the latest timestamp in the data", ref)
        else:
            raise ConfigError("no reference date given and the input has no records to derive one from")
        overrides = {"deprecation_window": timedelta(days=self.window_days)}
        if self.bot_list is not None:
            overrides["bot_list"] = refdata.load_bot_list(self.bot_list, self.bot_list_format)
        if self.release_db is not None:
            overrides["release_db"] = refdata.load_release_db(self.release_db)
        if self.frozen_tokens is not None:
            overrides["frozen_tokens"] = refdata.load_frozen_tokens(self.frozen_tokens)
        if self.bot_patterns:
            overrides["regex_set"] = refdata.compile_bot_regex(self.bot_patterns)
        return DetectionConfig.default(ref, self.mode, **overrides), note


# --- classify -------------------------------------------------------------------

def scan_normalized(path: Path) -> tuple[Counter, Optional[date]]:
    """Request count per UA and the latest UTC day in a normalized CSV."""
    counts: Counter = Counter()
    latest = None
    with open(path, "rb") as fh:
        for record in iter_normalized(fh):
            counts[record.user_agent] += 1
            if latest is None or record.timestamp > latest:
                latest = record.timestamp
    return counts, latest.date() if latest else None


def classify_uas(uas: Iterable[str], config: DetectionConfig, threads: int = 1) -> list[Verdict]:
    """Verdicts for the distinct ``uas``, sorted by UA string."""
    detector = Detector(config)
    ordered = sorted(set(uas))
    verdicts: list[Verdict] = []
    for part in ordered_map(lambda chunk: [detector(ua) for ua in chunk], _chunks(ordered, 2000), threads):
        verdicts.extend(part)
    return verdicts


def classify_summary(verdicts: Sequence[Verdict], counts: Counter, config: DetectionConfig,
                     mode: str, ref_note: str) -> str:
    total = sum(counts.values())
    bot_requests = sum(counts[v.ua] for v in verdicts if v.is_bot)
    lines = [
        f"reference date: {config.reference_date.isoformat()} ({ref_note})",
        f"mode: {mode}",
        f"deprecation window: {config.deprecation_window.days} days",
        f"unique user agents: {len(verdicts)}",
        f"requests: {total}",
        f"bot user agents: {sum(v.is_bot for v in verdicts)}",
        f"bot requests: {bot_requests}",
        f"bot share (request-weighted): {half_up(100.0 * bot_requests / total, 2) if total else 'n/a'}%",
        "",
        "reason,user_agents,requests",
    ]
    for reason in Reason:
        hits = [v for v in verdicts if reason in v.reasons]
        lines.append(f"{reason.value},{len(hits)},{sum(counts[v.ua] for v in hits)}")
    return "\n".join(lines) + "\n"


def classify(normalized: Path, out_dir: Path, options: DetectionOptions, threads: int = 1) -> list[Verdict]:
    counts, latest = scan_normalized(normalized)
    config, note = options.build(latest)
    verdicts = classify_uas(counts, config, threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _open_text(out_dir / "verdicts.csv", "w") as fh:
        write_verdicts(verdicts, fh)
    (out_dir / "classify_summary.txt").write_text(
        classify_summary(verdicts, counts, config, options.mode, note), encoding="utf-8")
    return verdicts


def read_verdicts(path: Path) -> list[Verdict]:
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_agent", "is_bot", "reasons", "matched_bot_name"]:
            raise ParseError("schema-mismatch", f"unexpected verdict header {header!r}", 1)
        out = []
        for row in reader:
            ua, is_bot, reasons, name = row
            try:
                parsed = frozenset(Reason(r) for r in reasons.split("|") if r)
            except ValueError:
                raise ParseError("malformed-line", f"unknown reason in {reasons!r}", reader.line_num) from None
            out.append(Verdict(ua, is_bot == "true", parsed, name or None))
        return out


# --- favicon --------------------------------------------------------------------

def _ledger_part(args) -> FaviconLedger:
    records, matcher, marker = args
    return FaviconLedger(matcher, marker).ingest_all(records)


def build_ledger(records: Iterable[LogRecord], matcher: FaviconMatcher, marker: Optional[MarkerEndpoint],
                 threads: int = 1) -> FaviconLedger:
    """Shard ``records`` into chunks, build one ledger per chunk and merge them."""
    merged = FaviconLedger(matcher, marker)
    work = ((chunk, matcher, marker) for chunk in _chunks(records, CHUNK))
    for part in ordered_map(_ledger_part, work, threads):
        for key, entry in part.entries.items():
            merged.entries.setdefault(key, DayEntry()).merge(entry)
    return merged


def favicon_stats_text(ledger: FaviconLedger) -> str:
    fav = [n for _, n in ledger.daily_series("favicon-ips")]
    post = [n for _, n in ledger.daily_series("marker-post-ips")]
    lines = ["comparison: favicon-ips vs marker-post-ips (paired by day)", f"days: {len(fav)}"]
    try:
        s = compare_series(fav, post)
    except DegenerateInput as exc:
        lines.append(f"statistics unavailable: {exc}")
    else:
        lines += [
            f"t = {s.t_statistic:.6f}",
            f"df = {s.degrees_of_freedom}",
            f"p = {s.p_value:.6f}",
            f"cohens_d = {s.cohens_d:.6f}",
            f"pearson_r = {s.pearson_r:.6f}",
            f"pearson_p = {s.pearson_p:.6g}",
        ]
    lines.append(f"stale favicon requests: {ledger.stale_favicon_requests()}")
    return "\n".join(lines) + "\n"


def favicon(normalized: Path, out_dir: Path, matcher: FaviconMatcher, marker: Optional[MarkerEndpoint],
            threads: int = 1) -> FaviconLedger:
    with open(normalized, "rb") as fh:
        ledger = build_ledger(iter_normalized(fh), matcher, marker, threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _open_text(out_dir / "favicon_ledger.csv", "w") as fh:
        ledger.export(fh)
    series = {s: ledger.daily_series(s) for s in ("total-ips", "favicon-ips", "marker-post-ips")}
    with _open_text(out_dir / "fig2_daily.csv", "w") as fh:
        reports.write_daily(series, fh)
    (out_dir / "fig2_stats.txt").write_text(favicon_stats_text(ledger), encoding="utf-8")
    return ledger


# --- labels and evaluation ---------------------------------------------------------

def write_labels(labelled: Iterable[LabelledRequest], sink) -> int:
    """Labelled requests as the normalized CSV plus ``truth,source`` columns."""
    w = csv.writer(sink, lineterminator="\r\n")
    w.writerow(CSV_HEADER + list(LABEL_COLUMNS))
    n = 0
    for item in labelled:
        if not item.record.anonymized:
            raise ValueError("labels must reference anonymized records")
        w.writerow(record_to_row(item.record) + [item.truth, item.source])
        n += 1
    return n


def read_labels(path: Path) -> list[LabelledRequest]:
    out = []
    with open(path, "rb") as fh:
        for record, (truth, source) in iter_normalized(fh, LABEL_COLUMNS):
            if truth not in ("bot", "human"):
                raise FormatError(f"truth must be 'bot' or 'human', got {truth!r}", len(out))
            out.append(LabelledRequest(record, truth, source))
    return out


def evaluate(labels: Path, out_dir: Path, options: DetectionOptions,
             externals: Sequence[tuple[str, Path]] = (), matcher: FaviconMatcher = FaviconMatcher(),
             verdicts_path: Optional[Path] = None, threads: int = 1) -> list[tuple[str, ConfusionMatrix]]:
    """Row-normalized confusion matrices for our rules and each imported method.

    ``user-agent`` is the rule cascade alone; ``user-agent+favicon`` also
    clears any request whose (IP, day) fetched the favicon.
    """
    labelled = read_labels(labels)
    if verdicts_path is not None:
        verdicts = {v.ua: v for v in read_verdicts(verdicts_path)}
    else:
        latest = max((lr.record.timestamp for lr in labelled), default=None)
        config, _ = options.build(latest.date() if latest else None)
        verdicts = {v.ua: v for v in classify_uas((lr.record.user_agent for lr in labelled), config, threads)}
    ledger = build_ledger((lr.record for lr in labelled), matcher, None, threads)

    def combined(record: LogRecord) -> Optional[bool]:
        v = verdicts.get(record.user_agent)
        if v is None:
            return None
        return v.is_bot and ledger.likely_non_bot(record.client_ip, record.day) == "unknown"

    rows = [("user-agent", confusion(verdicts, labelled)),
            ("user-agent+favicon", confusion(combined, labelled))]
    seen = {name for name, _ in rows}
    for name, path in externals:
        if name in seen:
            raise ConfigError(f"duplicate method name {name!r}")
        seen.add(name)
        rows.append((name, confusion(import_external_verdicts(path), labelled)))
    out_dir.mkdir(parents=True, exist_ok=True)
    with _open_text(out_dir / "confusion.csv", "w") as fh:
        reports.write_confusion(rows, fh)
    (out_dir / "comparison.txt").write_text(reports.render_confusion(rows), encoding="utf-8")
    return rows


# --- reports ---------------------------------------------------------------------

def report(normalized: Path, out_dir: Path, options: DetectionOptions, top_n: int = 10,
           overlap_lists: Sequence[tuple[str, Path]] = (), verdicts_path: Optional[Path] = None,
           threads: int = 1) -> list[str]:
    """Top-UA table, version histograms and rule-overlap tables. Returns the files written."""
    with open(normalized, "rb") as fh:
        records = list(iter_normalized(fh))
    counts = Counter(r.user_agent for r in records)
    if verdicts_path is not None:
        verdicts = read_verdicts(verdicts_path)
    else:
        latest = max((r.timestamp for r in records), default=None)
        config, _ = options.build(latest.date() if latest else None)
        verdicts = classify_uas(counts, config, threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    rows = top_user_agents(records, top_n)
    with _open_text(out_dir / "table1_top_ua.csv", "w") as fh:
        reports.write_top_table(rows, fh)
    (out_dir / "table1_top_ua.txt").write_text(reports.render_top_table(rows) if rows else "", encoding="utf-8")
    written += ["table1_top_ua.csv", "table1_top_ua.txt"]

    for name, family in (("fig3_android.csv", "Android"), ("fig4_chrome.csv", "Chrome-merged"),
                         ("fig4_firefox.csv", "Firefox")):
        with _open_text(out_dir / name, "w") as fh:
            reports.write_histogram(version_histogram(records, family, "unique-uas"),
                                    version_histogram(records, family, "requests"), fh)
        written.append(name)

    memberships = verdict_memberships(verdicts)
    for name, path in overlap_lists:
        if name in memberships:
            raise ConfigError(f"overlap source name {name!r} clashes with a rule name")
        flagged = import_external_verdicts(path)
        memberships[name] = {ua for ua in counts if flagged.get(ua)}
    for name, weights in (("upset_unweighted.csv", None), ("upset_weighted.csv", counts)):
        with _open_text(out_dir / name, "w") as fh:
            reports.write_overlap(reason_overlap(memberships, weights), fh)
        written.append(name)
    return written

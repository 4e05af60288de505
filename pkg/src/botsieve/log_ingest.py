"""Access-log parsing and the normalized CSV format.

Four on-disk formats are understood: Caddy's structured JSON access log,
the Combined Log Format written by Apache httpd and NGINX, and HAProxy's
HTTP log format (with the User-Agent taken from a captured-header slot).
Every line becomes a :class:`LogRecord`; records are written to and read
back from a fixed CSV schema once their client IP has been anonymized.
"""

from __future__ import annotations

import csv
import gzip
import io
import ipaddress
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import IO, Iterable, Iterator, Optional, Union
from urllib.parse import quote, unquote, urlsplit

from .errors import ConfigError, ParseError, PreconditionError

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]

SOURCE_FORMATS = ("caddy-json", "apache-combined", "nginx-combined", "haproxy-http")

CSV_HEADER = ["timestamp", "ip", "method", "path", "query", "status", "user_agent", "referer"]

_MONTH_NAMES = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
_MONTHS = {m: i for i, m in enumerate(_MONTH_NAMES, 1)}


@dataclass(frozen=True)
class RawLine:
    source_format: str
    line_number: int
    text: bytes


@dataclass(frozen=True)
class LogRecord:
    """One normalized HTTP request.

    ``anonymized`` is the provenance flag: it is False for records fresh
    out of :func:`parse_line` and True once the client IP went through
    Crypto-PAn (or the record was read back from a normalized CSV).
    """

    timestamp: datetime
    client_ip: IPAddress
    method: str
    path: str
    query: str
    status: int
    user_agent: str
    referer: Optional[str] = None
    anonymized: bool = field(default=False, compare=True)

    @property
    def day(self):
        return self.timestamp.date()


@dataclass(frozen=True)
class ParseOptions:
    """Per-format parser settings.

    HAProxy does not log the User-Agent unless the operator captures it,
    so the capture slot holding it must be declared up front.
    """

    haproxy_ua_slot: Optional[int] = None
    haproxy_referer_slot: Optional[int] = None
    # HAProxy accept dates carry no offset; they are interpreted in this zone.
    haproxy_utc_offset: timedelta = timedelta(0)

    def check(self, source_format: str) -> None:
        if source_format not in SOURCE_FORMATS:
            raise ConfigError(f"unsupported log format {source_format!r}; "
                              f"expected one of {', '.join(SOURCE_FORMATS)}")
        if source_format == "haproxy-http" and self.haproxy_ua_slot is None:
            raise ConfigError("haproxy-http input requires the captured-header slot "
                              "holding the User-Agent (haproxy_ua_slot)")


DEFAULT_OPTIONS = ParseOptions()


# --- shared helpers ---------------------------------------------------------

def _clean(text: str) -> str:
    # NUL cannot travel through the csv module.
    return text.replace("\x00", "�") if "\x00" in text else text


def _parse_ip(text: str, line_number: int) -> IPAddress:
    try:
        return ipaddress.ip_address(text)
    except ValueError:
        raise ParseError("malformed-line", f"bad client address {text[:60]!r}", line_number) from None


def _split_target(target: str) -> tuple[str, str]:
    path, sep, query = target.partition("?")
    return _clean(unquote(path)), _clean(query)


def split_request_line(request: str) -> tuple[str, str, str]:
    """Split ``"%r"`` into (method, path, query).

    Anything that is not ``METHOD TARGET PROTOCOL`` with an origin-form,
    asterisk-form or absolute-form target is kept verbatim as the path
    with method ``-``.
    """
    parts = request.split(" ")
    if len(parts) == 3 and parts[0] and parts[2].startswith("HTTP/"):
        method, target, _ = parts
        if target.startswith("/"):
            path, query = _split_target(target)
            return _clean(method), path, query
        if target == "*":
            return _clean(method), "*", ""
        if "://" in target:
            try:
                url = urlsplit(target)
            except ValueError:
                url = None
            if url is not None and url.scheme and url.netloc:
                return _clean(method), _clean(unquote(url.path or "/")), _clean(url.query)
    return "-", _clean(request), ""


def _status(text: str, line_number: int) -> int:
    try:
        status = int(text)
    except (TypeError, ValueError):
        raise ParseError("malformed-line", f"bad status {text!r}", line_number) from None
    if not 100 <= status <= 599:
        raise ParseError("malformed-line", f"status {status} out of range", line_number)
    return status


def _clf_time(text: str, line_number: int, offset: Optional[timedelta] = None) -> datetime:
    # 10/Oct/2024:13:55:36 +0200   (HAProxy: 10/Oct/2024:13:55:36.123, no zone)
    try:
        day, mon, rest = text.split("/", 2)
        year, hh, mm, ss = rest[:4], rest[5:7], rest[8:10], rest[11:13]
        if rest[4] != ":" or rest[7] != ":" or rest[10] != ":":
            raise ValueError
        tail = rest[13:]
        micro = 0
        if tail.startswith("."):
            frac, _, tail = tail[1:].partition(" ")
            if not frac.isdigit():
                raise ValueError
            micro = int(frac[:6].ljust(6, "0"))
            tail = " " + tail if tail else ""
        if offset is None:
            zone = tail.strip()
            if len(zone) != 5 or zone[0] not in "+-" or not zone[1:].isdigit():
                raise ValueError
            sign = 1 if zone[0] == "+" else -1
            offset = sign * timedelta(hours=int(zone[1:3]), minutes=int(zone[3:5]))
        elif tail.strip():
            raise ValueError
        local = datetime(int(year), _MONTHS[mon], int(day), int(hh), int(mm), int(ss), micro)
        return (local - offset).replace(tzinfo=timezone.utc)
    except (ValueError, KeyError, IndexError, OverflowError):
        raise ParseError("malformed-line", f"bad timestamp {text[:40]!r}", line_number) from None


# --- Combined Log Format (Apache httpd, NGINX) ------------------------------

_QUOTED = rb'"((?:[^"\\]|\\.)*)"'
_CLF_RE = re.compile(
    rb"^(\S+) (\S+) (\S+) \[([^\]]+)\] " + _QUOTED + rb" (\S+) (\S+) "
    + _QUOTED + rb" " + _QUOTED + rb"(?:\s.*)?$",
    re.DOTALL,
)
_ESCAPE_RE = re.compile(rb"\\(x[0-9A-Fa-f]{2}|.)", re.DOTALL)
_SIMPLE_ESCAPES = {b"n": b"\n", b"t": b"\t", b"r": b"\r", b"v": b"\v", b"b": b"\b", b"f": b"\f"}


def _unescape_clf(raw: bytes) -> str:
    def sub(m: re.Match) -> bytes:
        esc = m.group(1)
        if esc[:1] == b"x" and len(esc) == 3:
            return bytes([int(esc[1:], 16)])
        return _SIMPLE_ESCAPES.get(esc, esc)

    if b"\\" in raw:
        raw = _ESCAPE_RE.sub(sub, raw)
    return _clean(raw.decode("utf-8", errors="replace"))


def _parse_clf(raw: RawLine) -> LogRecord:
    m = _CLF_RE.match(raw.text)
    if m is None:
        raise ParseError("malformed-line", "does not match the Combined Log Format", raw.line_number)
    host, _ident, _user, ts, request, status, _size, referer, ua = m.groups()
    method, path, query = split_request_line(_unescape_clf(request))
    ref = _unescape_clf(referer)
    agent = _unescape_clf(ua)
    return LogRecord(
        timestamp=_clf_time(ts.decode("ascii", errors="replace"), raw.line_number),
        client_ip=_parse_ip(host.decode("ascii", errors="replace"), raw.line_number),
        method=method,
        path=path,
        query=query,
        status=_status(status.decode("ascii", errors="replace"), raw.line_number),
        user_agent="" if agent == "-" else agent,
        referer=None if ref in ("-", "") else ref,
    )


# --- Caddy JSON ---------------------------------------------------------------

def _header(headers: dict, name: str) -> Optional[str]:
    value = headers.get(name)
    if value is None:
        lowered = name.lower()
        for key, candidate in headers.items():
            if isinstance(key, str) and key.lower() == lowered:
                value = candidate
                break
    if isinstance(value, list):
        value = value[0] if value else None
    return value if isinstance(value, str) else None


def _strip_port(addr: str) -> str:
    if addr.startswith("["):
        return addr[1:addr.find("]")] if "]" in addr else addr
    if addr.count(":") == 1:
        return addr.split(":", 1)[0]
    return addr


def _caddy_time(ts, line_number: int) -> datetime:
    if isinstance(ts, bool):
        raise ParseError("malformed-line", "bad ts", line_number)
    if isinstance(ts, (int, float)):
        try:
            whole = int(ts)
            micro = int(round((ts - whole) * 1_000_000))
            return datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(seconds=whole, microseconds=micro)
        except (OverflowError, ValueError):
            raise ParseError("malformed-line", "ts out of range", line_number) from None
    if isinstance(ts, str):
        try:
            parsed = datetime.fromisoformat(ts[:-1] + "+00:00" if ts.endswith("Z") else ts)
        except ValueError:
            raise ParseError("malformed-line", f"bad ts {ts[:40]!r}", line_number) from None
        if parsed.tzinfo is None:
            parsed = parsed.replace(tzinfo=timezone.utc)
        return parsed.astimezone(timezone.utc)
    raise ParseError("malformed-line", "missing ts", line_number)


def _parse_caddy(raw: RawLine) -> LogRecord:
    n = raw.line_number
    try:
        obj = json.loads(raw.text)
    except (ValueError, RecursionError):
        raise ParseError("malformed-line", "not a JSON object", n) from None
    if not isinstance(obj, dict) or not isinstance(obj.get("request"), dict):
        raise ParseError("malformed-line", "missing request object", n)
    req = obj["request"]
    remote = req.get("remote_ip") or req.get("remote_addr")
    if not isinstance(remote, str):
        raise ParseError("malformed-line", "missing remote address", n)
    remote = remote if req.get("remote_ip") else _strip_port(remote)
    method, uri = req.get("method"), req.get("uri")
    if not isinstance(method, str) or not isinstance(uri, str):
        raise ParseError("malformed-line", "missing method or uri", n)
    headers = req.get("headers") if isinstance(req.get("headers"), dict) else {}
    if uri.startswith("/"):
        path, query = _split_target(uri)
    elif uri == "*":
        path, query = "*", ""
    else:
        method, path, query = "-", uri, ""
    ua = _header(headers, "User-Agent") or ""
    referer = _header(headers, "Referer")
    status = obj.get("status")
    if isinstance(status, bool) or not isinstance(status, int):
        raise ParseError("malformed-line", "missing status", n)
    return LogRecord(
        timestamp=_caddy_time(obj.get("ts"), n),
        client_ip=_parse_ip(remote, n),
        method=_clean(method),
        path=_clean(path),
        query=_clean(query),
        status=_status(status, n),
        user_agent=_clean(ua),
        referer=_clean(referer) if referer else None,
    )


# --- HAProxy HTTP log ------------------------------------------------------

_HAPROXY_RE = re.compile(
    rb"(?:^|\s)(\S+):(\d+) \[([^\]]+)\] \S+ \S+ \S+ (-?\d+) \S+ \S+ \S+ \S+ \S+ \S+"
    rb"((?: \{[^}]*\})*) \"(.*)\"?\s*$",
    re.DOTALL,
)
_HAPROXY_ESCAPE = re.compile(rb"#([0-9A-Fa-f]{2})")


def _haproxy_unescape(raw: bytes) -> str:
    if b"#" in raw:
        raw = _HAPROXY_ESCAPE.sub(lambda m: bytes([int(m.group(1), 16)]), raw)
    return _clean(raw.decode("utf-8", errors="replace"))


def _parse_haproxy(raw: RawLine, options: ParseOptions) -> LogRecord:
    n = raw.line_number
    m = _HAPROXY_RE.search(raw.text)
    if m is None:
        raise ParseError("malformed-line", "does not match the HAProxy HTTP log format", n)
    host, _port, accept, status, captures, request = m.groups()
    if request.endswith(b'"'):
        request = request[:-1]
    blocks = re.findall(rb"\{([^}]*)\}", captures)
    if not blocks:
        raise ParseError("missing-ua-capture", "no captured request headers", n)
    slots = blocks[0].split(b"|")
    if options.haproxy_ua_slot >= len(slots):
        raise ParseError("missing-ua-capture",
                         f"captured-header slot {options.haproxy_ua_slot} absent", n)
    ua = _haproxy_unescape(slots[options.haproxy_ua_slot])
    referer = None
    if options.haproxy_referer_slot is not None and options.haproxy_referer_slot < len(slots):
        referer = _haproxy_unescape(slots[options.haproxy_referer_slot]) or None
    host_text = host.decode("ascii", errors="replace")
    if host_text.startswith("[") and host_text.endswith("]"):
        host_text = host_text[1:-1]
    method, path, query = split_request_line(_haproxy_unescape(request))
    return LogRecord(
        timestamp=_clf_time(accept.decode("ascii", errors="replace"), n, offset=options.haproxy_utc_offset),
        client_ip=_parse_ip(host_text, n),
        method=method,
        path=path,
        query=query,
        status=_status(status.decode("ascii"), n),
        user_agent="" if ua == "-" else ua,
        referer=None if referer in (None, "-") else referer,
    )


def parse_line(raw: RawLine, options: ParseOptions = DEFAULT_OPTIONS) -> LogRecord:
    """Parse one raw access-log line into a (non-anonymized) :class:`LogRecord`.

    Raises :class:`ParseError` for lines that do not fit the format's
    grammar; a configuration problem (e.g. HAProxy without a declared UA
    slot) raises :class:`ConfigError` instead.
    """
    options.check(raw.source_format)
    if not raw.text.strip():
        raise ParseError("malformed-line", "empty line", raw.line_number)
    if raw.source_format == "caddy-json":
        return _parse_caddy(raw)
    if raw.source_format == "haproxy-http":
        return _parse_haproxy(raw, options)
    return _parse_clf(raw)


def open_log(path) -> IO[bytes]:
    """Open a log file for binary reading, transparently gunzipping."""
    fh = open(path, "rb")
    if fh.peek(2)[:2] == b"\x1f\x8b":
        return gzip.GzipFile(fileobj=fh)
    return fh


def iter_raw_lines(stream: IO[bytes], source_format: str) -> Iterator[RawLine]:
    for number, line in enumerate(stream, 1):
        yield RawLine(source_format, number, line.rstrip(b"\r\n"))


# --- rendering back to the source grammars --------------------------------

_PATH_SAFE = "/*:@!$&'()+,;=-._~"


def _request_target(record: LogRecord) -> str:
    if record.path == "*":
        return "*"
    return quote(record.path, safe=_PATH_SAFE) + (f"?{record.query}" if record.query else "")


def _request_line(record: LogRecord) -> str:
    # A malformed request line was kept verbatim in ``path``.
    if record.method == "-" and not record.path.startswith("/"):
        return record.path
    return f"{record.method} {_request_target(record)} HTTP/1.1"


def _escape_clf(text: str) -> str:
    out = []
    for byte in text.encode("utf-8"):
        if byte in (0x22, 0x5C):
            out.append("\\" + chr(byte))
        elif byte < 0x20 or byte >= 0x7F:
            out.append(f"\\x{byte:02x}")
        else:
            out.append(chr(byte))
    return "".join(out)


def _clf_date(ts: datetime) -> str:
    # strftime("%Y") does not zero-pad years below 1000 on every platform.
    return f"{ts.day:02d}/{_MONTH_NAMES[ts.month - 1]}/{ts.year:04d}:{ts:%H:%M:%S}"


def format_combined(record: LogRecord) -> str:
    """One Combined Log Format line for ``record`` (timestamp rendered in UTC)."""
    ts = _clf_date(record.timestamp.astimezone(timezone.utc)) + " +0000"
    ua = _escape_clf(record.user_agent) if record.user_agent else "-"
    ref = _escape_clf(record.referer) if record.referer else "-"
    return (f'{record.client_ip} - - [{ts}] "{_escape_clf(_request_line(record))}" '
            f'{record.status} - "{ref}" "{ua}"')


def format_caddy(record: LogRecord) -> str:
    """A Caddy JSON access-log object carrying the fields of ``record``."""
    if record.method == "-" and not record.path.startswith("/") and record.path != "*":
        uri = record.path
    else:
        uri = _request_target(record)
    headers = {}
    if record.user_agent:
        headers["User-Agent"] = [record.user_agent]
    if record.referer:
        headers["Referer"] = [record.referer]
    return json.dumps({
        "level": "info",
        "ts": record.timestamp.timestamp(),
        "logger": "http.log.access",
        "msg": "handled request",
        "request": {"remote_ip": str(record.client_ip), "remote_port": "0", "proto": "HTTP/1.1",
                    "method": record.method, "host": "localhost", "uri": uri, "headers": headers},
        "status": record.status,
    }, ensure_ascii=False)


def _escape_haproxy(text: str, specials: bytes) -> str:
    return "".join(f"#{b:02X}" if b < 0x20 or b >= 0x7F or b in specials else chr(b)
                   for b in text.encode("utf-8"))


def format_haproxy(record: LogRecord, ua_slot: int = 0, referer_slot: Optional[int] = None) -> str:
    """An HAProxy HTTP log line; headers go into the given capture slots."""
    ts = record.timestamp.astimezone(timezone.utc)
    accept = _clf_date(ts) + f".{ts.microsecond // 1000:03d}"
    slots = [""] * (max(ua_slot, referer_slot or 0) + 1)
    slots[ua_slot] = _escape_haproxy(record.user_agent, b'"#{|}')
    if referer_slot is not None and record.referer:
        slots[referer_slot] = _escape_haproxy(record.referer, b'"#{|}')
    host = f"[{record.client_ip}]" if record.client_ip.version == 6 else str(record.client_ip)
    request = _escape_haproxy(_request_line(record), b'"#')
    return (f"{host}:40000 [{accept}] fe be/srv 0/0/0/1/1 {record.status} 100 - - ---- "
            f'1/1/0/0/0 0/0 {{{"|".join(slots)}}} "{request}"')


# --- normalized CSV -------------------------------------------------------

def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    text = f"{ts.year:04d}-{ts:%m-%dT%H:%M:%S}"
    return text + (f".{ts.microsecond:06d}Z" if ts.microsecond else "Z")


def parse_timestamp(text: str) -> datetime:
    if not text.endswith("Z"):
        raise ValueError(f"timestamp without Z suffix: {text!r}")
    return datetime.fromisoformat(text[:-1]).replace(tzinfo=timezone.utc)


def record_to_row(record: LogRecord) -> list[str]:
    return [
        format_timestamp(record.timestamp),
        str(record.client_ip),
        record.method,
        record.path,
        record.query,
        str(record.status),
        record.user_agent,
        record.referer or "",
    ]


def row_to_record(row: list[str], line_number: int) -> LogRecord:
    if len(row) != len(CSV_HEADER):
        raise ParseError("malformed-line", f"expected {len(CSV_HEADER)} fields, got {len(row)}", line_number)
    ts, ip, method, path, query, status, ua, referer = row
    try:
        timestamp = parse_timestamp(ts)
    except ValueError:
        raise ParseError("malformed-line", f"bad timestamp {ts!r}", line_number) from None
    return LogRecord(timestamp, _parse_ip(ip, line_number), method, path, query,
                     _status(status, line_number), ua, referer or None, anonymized=True)


def _text_sink(sink) -> tuple[IO[str], bool]:
    if isinstance(sink, io.TextIOBase):
        return sink, False
    return io.TextIOWrapper(sink, encoding="utf-8", newline=""), True


class NormalizedWriter:
    """Incremental writer for the normalized CSV (header written on creation)."""

    def __init__(self, sink):
        self._text, self._owned = _text_sink(sink)
        self._writer = csv.writer(self._text, lineterminator="\r\n")
        self._writer.writerow(CSV_HEADER)
        self.count = 0

    def write(self, record: LogRecord) -> None:
        if not record.anonymized:
            raise PreconditionError("refusing to write a record whose client IP is not anonymized")
        self._writer.writerow(record_to_row(record))
        self.count += 1

    def close(self) -> None:
        self._text.flush()
        if self._owned:
            self._text.detach()


def write_normalized(records: Iterable[LogRecord], sink) -> int:
    """Write records to ``sink`` (binary or text) and return the row count.

    Every record must already be anonymized; nothing is written otherwise.
    """
    records = list(records)
    if any(not r.anonymized for r in records):
        raise PreconditionError("refusing to write records whose client IP is not anonymized")
    writer = NormalizedWriter(sink)
    for record in records:
        writer.write(record)
    writer.close()
    return writer.count


def iter_normalized(source, extra_columns: tuple[str, ...] = ()) -> Iterator[LogRecord] | Iterator[tuple]:
    """Stream records from a normalized CSV.

    With ``extra_columns`` the header must be the normalized header
    followed by exactly those columns, and ``(record, extras)`` pairs are
    yielded instead.
    """
    text, owned = (source, False) if isinstance(source, io.TextIOBase) else (
        io.TextIOWrapper(source, encoding="utf-8", errors="replace", newline=""), True)
    expected = CSV_HEADER + list(extra_columns)
    try:
        reader = csv.reader(text)
        header = next(reader, None)
        if header != expected:
            raise ParseError("schema-mismatch", f"expected header {','.join(expected)}, got "
                             f"{','.join(header) if header else '(nothing)'}", 1)
        width = len(CSV_HEADER)
        for row in reader:
            number = reader.line_num
            if extra_columns:
                if len(row) != len(expected):
                    raise ParseError("malformed-line", f"expected {len(expected)} fields", number)
                yield row_to_record(row[:width], number), tuple(row[width:])
            else:
                yield row_to_record(row, number)
    finally:
        if owned:
            text.detach()


def read_normalized(source) -> list[LogRecord]:
    """Read a whole normalized CSV back into records (inverse of :func:`write_normalized`)."""
    return list(iter_normalized(source))
